"""Run export jobs: one feature file per image plus one embedding bank."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from PIL import Image

from .encoder import DenseFeatureEncoder
from .formats import write_bank_file, write_feature_file
from .jobs import ExportJob


@dataclass(frozen=True)
class ItemResult:
    source: str
    output: str | None
    error: str | None

    @property
    def ok(self) -> bool:
        return self.error is None


def export_bank(job: ExportJob, encoder: DenseFeatureEncoder) -> Path:
    """Encode every filled prompt and write the bank; returns the file path."""
    embeddings = encoder.text_embeddings(job.prompts())
    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "bank.ebk"
    names = [name for name, _ in job.categories]
    kinds = [kind for _, kind in job.categories]
    write_bank_file(path, names, kinds, embeddings)
    return path


def export_features(job: ExportJob, encoder: DenseFeatureEncoder) -> list[ItemResult]:
    """Write one feature file per decodable image.

    Failures (unreadable file, bad size) are recorded per item and do not
    stop the rest of the job.
    """
    out_dir = Path(job.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for source in job.images:
        target = out_dir / (Path(source).stem + ".dfm")
        try:
            with Image.open(source) as image:
                pixels = encoder.preprocess(image, job.image_size)
            features = encoder.dense_feature_map(pixels)
            write_feature_file(target, features)
        except Exception as err:  # keep going; report per item
            results.append(ItemResult(source=str(source), output=None, error=str(err)))
        else:
            results.append(ItemResult(source=str(source), output=str(target), error=None))
    return results
