"""Region classification evaluation: Top-k mean accuracy and confusion matrices.

Annotated regions come in three kinds: pooled boxes (Boxes), foreground
masks (Masks-T), and background masks (Masks-S). Accuracy is macro: each
category's hit rate is computed first, then averaged unweighted over the
categories that actually appear for that kind. Rankings sort raw cosines
(temperature-invariant) with ties broken toward the lower category index.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .featmap import FeatureMap, RegionSpec, pool_mask, pool_region
from .retrieval import EmbeddingBank, Kind, bank_cosines

MASK_WEIGHT_FLOOR = 1e-6


class RecordKind(enum.IntEnum):
    BOX = 0
    MASK_THING = 1
    MASK_STUFF = 2


@dataclass(frozen=True)
class EvalRecord:
    """One annotated region: geometry, ground-truth category, and kind.

    ``image_index`` selects the feature map the record belongs to when a
    batch of maps is evaluated together.
    """

    kind: RecordKind
    gt_category: int
    box: RegionSpec | None = None
    mask: np.ndarray | None = None
    image_index: int = 0

    def __post_init__(self):
        if self.kind == RecordKind.BOX:
            if self.box is None:
                raise ConfigError("BOX record needs box geometry")
        elif self.mask is None:
            raise ConfigError("mask record needs a coverage mask")

    def check_kind(self, bank: EmbeddingBank) -> None:
        gt_kind = bank.kinds[self.gt_category]
        if self.kind == RecordKind.MASK_THING and gt_kind != Kind.THING:
            raise ConfigError(
                f"MASK_THING record labeled '{bank.names[self.gt_category]}' (a stuff category)"
            )
        if self.kind == RecordKind.MASK_STUFF and gt_kind != Kind.STUFF:
            raise ConfigError(
                f"MASK_STUFF record labeled '{bank.names[self.gt_category]}' (a thing category)"
            )


@dataclass(frozen=True)
class KindAccuracy:
    """Macro accuracy of one record kind at one k."""

    mean_accuracy: float
    per_category: dict[int, float]
    counts: dict[int, int]


@dataclass(frozen=True)
class KindSummary:
    top1: float
    top5: float
    per_category_top1: dict[int, float]
    per_category_top5: dict[int, float]
    counts: dict[int, int]


@dataclass(frozen=True)
class AccuracyTable:
    """Per-kind Top-1/Top-5 macro accuracies; kinds with no records are absent."""

    kinds: dict[RecordKind, KindSummary] = field(default_factory=dict)


@dataclass(frozen=True)
class ConfusionMatrix:
    """D x D counts; rows are ground truth, columns are Top-1 predictions."""

    counts: np.ndarray
    names: tuple[str, ...]


def classify_record(
    fmap: FeatureMap, record: EvalRecord, bank: EmbeddingBank, tau: float
) -> np.ndarray:
    """All D category indices ranked best-first for one record.

    Boxes pool via RoIAlign, masks via coverage-weighted averaging with
    weights below 1e-6 zeroed. ``tau`` only scales the softmax, so the
    ranking is the cosine ranking.
    """
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if record.kind == RecordKind.BOX:
        feat = pool_region(fmap, record.box)
    else:
        weights = np.asarray(record.mask, dtype=np.float64).copy()
        weights[weights < MASK_WEIGHT_FLOOR] = 0.0
        feat = pool_mask(fmap, weights)
    cos = bank_cosines(feat, bank)
    return np.argsort(-cos, kind="stable")


def _rank_all(records, maps, bank, tau):
    ranked = []
    for record in records:
        if not 0 <= record.gt_category < len(bank):
            raise ConfigError(
                f"record ground truth {record.gt_category} outside bank of size {len(bank)}"
            )
        record.check_kind(bank)
        if not 0 <= record.image_index < len(maps):
            raise ShapeError(
                f"record image index {record.image_index} outside {len(maps)} maps"
            )
        ranked.append(classify_record(maps[record.image_index], record, bank, tau))
    return ranked


def _accuracy_at(records, ranked, k: int) -> dict[RecordKind, KindAccuracy]:
    hits: dict[RecordKind, dict[int, int]] = {}
    counts: dict[RecordKind, dict[int, int]] = {}
    for record, rank in zip(records, ranked):
        kind_hits = hits.setdefault(record.kind, {})
        kind_counts = counts.setdefault(record.kind, {})
        kind_counts[record.gt_category] = kind_counts.get(record.gt_category, 0) + 1
        if record.gt_category in rank[:k]:
            kind_hits[record.gt_category] = kind_hits.get(record.gt_category, 0) + 1
    out = {}
    for kind, kind_counts in counts.items():
        per_cat = {
            cat: hits[kind].get(cat, 0) / n for cat, n in sorted(kind_counts.items())
        }
        out[kind] = KindAccuracy(
            mean_accuracy=sum(per_cat.values()) / len(per_cat),
            per_category=per_cat,
            counts=dict(sorted(kind_counts.items())),
        )
    return out


def mean_accuracy(
    records, maps, bank: EmbeddingBank, tau: float, k: int
) -> dict[RecordKind, KindAccuracy]:
    """Macro Top-k accuracy per record kind.

    Per-category accuracy is hits@k over that category's records; the kind
    mean averages those unweighted over categories with at least one record.
    Kinds with no records are simply absent from the result.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    ranked = _rank_all(records, maps, bank, tau)
    return _accuracy_at(records, ranked, k)


def accuracy_table(records, maps, bank: EmbeddingBank, tau: float) -> AccuracyTable:
    """Top-1 and Top-5 macro accuracies for every kind present."""
    ranked = _rank_all(records, maps, bank, tau)
    at1 = _accuracy_at(records, ranked, 1)
    at5 = _accuracy_at(records, ranked, 5)
    kinds = {}
    for kind in at1:
        kinds[kind] = KindSummary(
            top1=at1[kind].mean_accuracy,
            top5=at5[kind].mean_accuracy,
            per_category_top1=at1[kind].per_category,
            per_category_top5=at5[kind].per_category,
            counts=at1[kind].counts,
        )
    return AccuracyTable(kinds=kinds)


def confusion(records, maps, bank: EmbeddingBank, tau: float) -> ConfusionMatrix:
    """Count Top-1 predictions against ground truth over all records."""
    ranked = _rank_all(records, maps, bank, tau)
    counts = np.zeros((len(bank), len(bank)), dtype=np.int64)
    for record, rank in zip(records, ranked):
        counts[record.gt_category, rank[0]] += 1
    return ConfusionMatrix(counts=counts, names=bank.names)
