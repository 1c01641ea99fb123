"""Unbiased region-language alignment engine.

Trains a per-location student head against a frozen teacher embedding
space through retrieval, region denoising, and decoupled KL distillation,
and evaluates region classification (boxes and thing/stuff masks) with
Top-1/Top-5 macro accuracy and confusion matrices.
"""

from .alignment import (
    AlignedPair,
    LossReport,
    decoupled_support,
    image_loss,
    kl_loss,
    loss_gradient,
    pair_distributions,
)
from .errors import (
    BankError,
    ConfigError,
    DivergedError,
    EngineError,
    FormatError,
    GeometryError,
    ShapeError,
    SupportError,
    ZeroNormError,
)
from .evalkit import (
    AccuracyTable,
    ConfusionMatrix,
    EvalRecord,
    RecordKind,
    accuracy_table,
    classify_record,
    confusion,
    mean_accuracy,
)
from .featmap import (
    FeatureMap,
    GridShape,
    RegionSpec,
    partition_regions,
    pool_mask,
    pool_region,
    region_pool_weights,
    sample_grid,
)
from .retrieval import (
    EmbeddingBank,
    Kind,
    RegionAssignment,
    RetrievalConfig,
    bank_cosines,
    class_probs,
    cosine,
    retrieve,
)
from .student import (
    OptimizerState,
    StudentHead,
    TrainConfig,
    TrainLogEntry,
    adamw_step,
    image_loss_and_grads,
    lr_at,
    student_forward,
    train,
)
from .synth import (
    SyntheticWorld,
    WorldConfig,
    WorldImage,
    coupled_baseline_support,
    gen_world,
)

__all__ = [name for name in dir() if not name.startswith("_")]
