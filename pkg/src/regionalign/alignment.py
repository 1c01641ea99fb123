"""Decoupled teacher/student distributions, the KL objective, and its gradient.

A region assigned a STUFF category contrasts against the full category set;
a region assigned a THING category contrasts against THING categories only,
with every STUFF entry exactly zero in both distributions. The per-image
loss is the mean KL divergence over regions that survived denoising.

The printed case labels of the training objective disagree with the
distribution definitions they reference; the implemented pairing follows
the distribution definitions and the ablation semantics (foreground regions
never contrast against background categories), which is the only reading
consistent with the reported best configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import BankError, ZeroNormError
from .retrieval import (
    NORM_EPS,
    EmbeddingBank,
    Kind,
    RegionAssignment,
    class_probs,
)

LOG_FLOOR = 1e-12

SupportFn = Callable[[int, EmbeddingBank], np.ndarray]


def decoupled_support(c_k: int, bank: EmbeddingBank) -> np.ndarray:
    """Contrast set for a region assigned category ``c_k``.

    STUFF regions contrast against all categories; THING regions contrast
    against THING categories only.
    """
    if not 0 <= c_k < len(bank):
        raise BankError(f"category index {c_k} out of range for bank of size {len(bank)}")
    if bank.kinds[c_k] == Kind.STUFF:
        return np.arange(len(bank), dtype=np.intp)
    return bank.thing_indices


@dataclass(frozen=True)
class AlignedPair:
    """Teacher and student distributions over one region's shared support."""

    category_index: int
    support: np.ndarray
    teacher_dist: np.ndarray  # length D, zero outside support
    student_dist: np.ndarray  # length D, zero outside support
    assignment: RegionAssignment | None = None

    @property
    def region_index(self) -> int | None:
        return None if self.assignment is None else self.assignment.region_index


@dataclass(frozen=True)
class LossReport:
    """Per-region KL values and their mean over kept regions."""

    per_region_losses: tuple[tuple[int, float], ...]
    image_loss: float
    kept_count: int
    discarded_count: int

    @property
    def is_empty(self) -> bool:
        return self.kept_count == 0


def pair_distributions(
    teacher_feat: np.ndarray,
    student_feat: np.ndarray,
    c_k: int,
    bank_teacher: EmbeddingBank,
    bank_student: EmbeddingBank,
    tau: float,
    support_fn: SupportFn = decoupled_support,
    assignment: RegionAssignment | None = None,
) -> AlignedPair:
    """Teacher and student restricted softmax distributions for one region.

    Both banks must hold the same categories in the same order (their
    embeddings may differ). The support comes from ``support_fn``; pass the
    coupled baseline's support function to reproduce the non-decoupled run.
    """
    if not bank_teacher.same_categories(bank_student):
        raise BankError("teacher and student banks must share categories, kinds, and order")
    support = support_fn(c_k, bank_teacher)
    teacher_dist = class_probs(teacher_feat, bank_teacher, tau, support)
    student_dist = class_probs(student_feat, bank_student, tau, support)
    return AlignedPair(
        category_index=c_k,
        support=support,
        teacher_dist=teacher_dist,
        student_dist=student_dist,
        assignment=assignment,
    )


def kl_loss(pair: AlignedPair) -> float:
    """KL(teacher || student) over the pair's support.

    0 * log(0 / .) terms contribute 0; the student probability is floored at
    1e-12 inside the log so the loss stays finite under the very peaked
    softmaxes a temperature of 0.01 produces.
    """
    p = pair.teacher_dist[pair.support]
    q = pair.student_dist[pair.support]
    active = p > 0.0
    if not np.any(active):
        return 0.0
    p = p[active]
    q = np.maximum(q[active], LOG_FLOOR)
    value = float(np.sum(p * (np.log(p) - np.log(q))))
    return max(value, 0.0)


def image_loss(pairs, discarded_count: int = 0) -> LossReport:
    """Mean KL over the kept regions of one image.

    An empty pair list yields image_loss 0 with kept_count 0 (the flagged
    empty-batch state). Losses are summed in region order so the reduction
    is reproducible.
    """
    per_region = []
    for i, pair in enumerate(pairs):
        index = pair.region_index if pair.region_index is not None else i
        per_region.append((index, kl_loss(pair)))
    if per_region:
        mean = sum(loss for _, loss in per_region) / len(per_region)
    else:
        mean = 0.0
    return LossReport(
        per_region_losses=tuple(per_region),
        image_loss=mean,
        kept_count=len(per_region),
        discarded_count=discarded_count,
    )


def loss_gradient(
    pair: AlignedPair,
    student_feat: np.ndarray,
    bank_student: EmbeddingBank,
    tau: float,
) -> np.ndarray:
    """Exact gradient of kl_loss w.r.t. the student region feature.

    Chain rule: dKL/dlogit_j = q_j - p_j on the support, logits are
    cos(f, t_j) / tau, and the cosine's normalization Jacobian maps back to
    the feature. The result is orthogonal to the feature itself, since the
    loss is invariant to positive rescaling of f.
    """
    f = np.asarray(student_feat, dtype=np.float64)
    nf = float(np.linalg.norm(f))
    if nf <= NORM_EPS:
        raise ZeroNormError(f"student feature has near-zero norm {nf:.3g}")
    f_hat = f / nf
    support = pair.support
    t_hat = bank_student.unit_embeddings[support]
    cos = np.clip(t_hat @ f_hat, -1.0, 1.0)
    dlogit = (pair.student_dist[support] - pair.teacher_dist[support]) / tau
    # dcos_j/df = (t_hat_j - cos_j * f_hat) / ||f||
    return (dlogit[:, None] * (t_hat - cos[:, None] * f_hat[None, :])).sum(axis=0) / nf
