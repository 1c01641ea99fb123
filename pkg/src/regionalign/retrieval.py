"""Frozen-teacher category retrieval for unlabeled regions.

Each region feature is scored against the text-embedding bank by cosine
similarity, sharpened by a temperature softmax, assigned its argmax
category, and kept only when the matching probability clears the denoising
threshold. All probability arithmetic runs at double precision; the default
temperature of 0.01 makes the softmax extremely peaked.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import BankError, ConfigError, SupportError, ZeroNormError
from .featmap import RegionSpec

NORM_EPS = 1e-8


class Kind(enum.IntEnum):
    """Category kind: foreground object (THING) or background region (STUFF)."""

    THING = 0
    STUFF = 1


@dataclass(frozen=True)
class EmbeddingBank:
    """Category names, thing/stuff partition, and one text embedding per category.

    Embeddings are kept exactly as given (cosine handles normalization), so a
    bank read from disk stays byte-faithful to its source.
    """

    names: tuple[str, ...]
    kinds: tuple[Kind, ...]
    embeddings: np.ndarray  # (D, C)

    def __post_init__(self):
        emb = np.asarray(self.embeddings)
        names = tuple(self.names)
        kinds = tuple(Kind(k) for k in self.kinds)
        if emb.ndim != 2:
            raise BankError(f"embeddings must be D x C, got shape {emb.shape}")
        d = emb.shape[0]
        if d < 2:
            raise BankError(f"bank needs at least 2 categories, got {d}")
        if len(names) != d or len(kinds) != d:
            raise BankError(
                f"bank sizes disagree: {len(names)} names, {len(kinds)} kinds, {d} embeddings"
            )
        if len(set(names)) != d:
            raise BankError("bank category names must be unique")
        if not np.all(np.isfinite(emb)):
            raise BankError("bank embeddings contain non-finite values")
        norms = np.linalg.norm(emb.astype(np.float64), axis=1)
        if np.any(norms <= NORM_EPS):
            bad = int(np.argmin(norms))
            raise BankError(f"embedding for category '{names[bad]}' has near-zero norm")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "embeddings", emb)

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def channels(self) -> int:
        return self.embeddings.shape[1]

    @cached_property
    def unit_embeddings(self) -> np.ndarray:
        emb = self.embeddings.astype(np.float64, copy=False)
        return emb / np.linalg.norm(emb, axis=1, keepdims=True)

    @cached_property
    def thing_indices(self) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.kinds) if k == Kind.THING], dtype=np.intp)

    @cached_property
    def stuff_indices(self) -> np.ndarray:
        return np.array([i for i, k in enumerate(self.kinds) if k == Kind.STUFF], dtype=np.intp)

    def same_categories(self, other: "EmbeddingBank") -> bool:
        return self.names == other.names and self.kinds == other.kinds


@dataclass(frozen=True)
class RetrievalConfig:
    """Temperature for the matching softmax and the denoising threshold."""

    tau: float = 0.01
    theta: float = 0.3

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must be in [0, 1], got {self.theta}")


@dataclass(frozen=True)
class RegionAssignment:
    """Retrieval result for one region: assigned category and kept/discarded flag."""

    region_index: int
    region: RegionSpec | None
    category_index: int
    teacher_max_prob: float
    kept: bool


def cosine(f: np.ndarray, t: np.ndarray) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1] against rounding."""
    f = np.asarray(f, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    nf = float(np.linalg.norm(f))
    nt = float(np.linalg.norm(t))
    if nf <= NORM_EPS or nt <= NORM_EPS:
        raise ZeroNormError(f"cosine undefined for near-zero norm ({nf:.3g}, {nt:.3g})")
    return float(np.clip(float(f @ t) / (nf * nt), -1.0, 1.0))


def bank_cosines(f: np.ndarray, bank: EmbeddingBank) -> np.ndarray:
    """Cosine of a feature against every bank category, as a length-D array."""
    f = np.asarray(f, dtype=np.float64)
    nf = float(np.linalg.norm(f))
    if nf <= NORM_EPS:
        raise ZeroNormError(f"feature has near-zero norm {nf:.3g}")
    return np.clip(bank.unit_embeddings @ (f / nf), -1.0, 1.0)


def class_probs(
    f: np.ndarray,
    bank: EmbeddingBank,
    tau: float,
    support: np.ndarray | None = None,
) -> np.ndarray:
    """Temperature softmax over cosines, restricted to ``support``.

    Returns a length-D vector; entries outside the support are exactly 0 and
    the support entries sum to 1. ``support=None`` means all D categories.
    The softmax subtracts the max logit before exponentiating for stability.
    """
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    cos = bank_cosines(f, bank)
    if support is None:
        support = np.arange(len(bank), dtype=np.intp)
    else:
        support = np.asarray(support, dtype=np.intp)
        if support.size == 0:
            raise SupportError("category support set is empty")
    logits = cos[support] / tau
    logits -= logits.max()
    exp = np.exp(logits)
    probs = np.zeros(len(bank), dtype=np.float64)
    probs[support] = exp / exp.sum()
    return probs


def retrieve(
    region_features,
    bank: EmbeddingBank,
    cfg: RetrievalConfig,
    regions: list[RegionSpec] | None = None,
) -> list[RegionAssignment]:
    """Assign each region its argmax category and apply the denoising threshold.

    Argmax ties break to the lowest category index. A region is kept iff its
    matching probability is >= theta ("falls below" discards strictly).
    ``regions`` optionally attaches geometry to the assignments.
    """
    if regions is not None and len(regions) != len(region_features):
        raise ConfigError(
            f"{len(regions)} regions for {len(region_features)} feature vectors"
        )
    out = []
    for k, feat in enumerate(region_features):
        try:
            probs = class_probs(feat, bank, cfg.tau)
        except ZeroNormError as err:
            raise ZeroNormError(f"region {k}: {err}") from err
        c = int(np.argmax(probs))
        max_prob = float(probs[c])
        out.append(
            RegionAssignment(
                region_index=k,
                region=None if regions is None else regions[k],
                category_index=c,
                teacher_max_prob=max_prob,
                kept=max_prob >= cfg.theta,
            )
        )
    return out
