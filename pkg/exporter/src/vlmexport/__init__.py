"""Dense feature and text-embedding exporter for the alignment engine."""

from .encoder import DenseFeatureEncoder
from .export import ItemResult, export_bank, export_features
from .formats import ExportError, write_bank_file, write_feature_file
from .jobs import DEFAULT_TEMPLATE, ExportJob, load_job

__all__ = [
    "DEFAULT_TEMPLATE",
    "DenseFeatureEncoder",
    "ExportError",
    "ExportJob",
    "ItemResult",
    "export_bank",
    "export_features",
    "load_job",
    "write_bank_file",
    "write_feature_file",
]
