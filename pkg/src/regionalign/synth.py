"""Synthetic worlds with a controllable foreground bias.

Each world holds a bank of mutually orthogonal category directions and a
set of images partitioned into rectangular segments of thing and stuff
categories. Base features are clean (category direction plus noise); the
teacher's stuff features are contaminated toward a co-occurring thing
direction by ``bias_beta``, reproducing the failure mode where background
regions classify as co-occurring foreground classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .evalkit import EvalRecord, RecordKind
from .featmap import FeatureMap, RegionSpec
from .retrieval import EmbeddingBank, Kind


def coupled_baseline_support(c_k: int, bank: EmbeddingBank) -> np.ndarray:
    """Non-decoupled baseline: every region contrasts against all categories."""
    return np.arange(len(bank), dtype=np.intp)


@dataclass(frozen=True)
class WorldConfig:
    """Knobs of the generated world; bias_beta = 0 is an unbiased teacher."""

    n_thing: int
    n_stuff: int
    channels: int
    map_height: int = 16
    map_width: int = 16
    n_train: int = 32
    n_eval: int = 8
    noise_sigma: float = 0.05
    bias_beta: float = 0.0
    cooccurrence: tuple[tuple[int, ...], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_thing < 1 or self.n_stuff < 1:
            raise ConfigError("need at least one thing and one stuff category")
        if not 0.0 <= self.bias_beta < 1.0:
            raise ConfigError(f"bias_beta must lie in [0, 1), got {self.bias_beta}")
        if self.channels < self.n_thing + self.n_stuff:
            raise ConfigError(
                f"{self.channels} channels cannot hold {self.n_thing + self.n_stuff} "
                "orthogonal category directions"
            )
        if self.map_height < 2 or self.map_width < 2:
            raise ConfigError("maps must be at least 2 x 2")
        if self.n_train < 1 or self.n_eval < 0:
            raise ConfigError("n_train must be >= 1 and n_eval >= 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.cooccurrence is not None:
            if len(self.cooccurrence) != self.n_stuff:
                raise ConfigError("cooccurrence needs one thing list per stuff category")
            for partners in self.cooccurrence:
                if len(partners) == 0:
                    raise ConfigError("every stuff category needs a co-occurring thing")
                for t in partners:
                    if not 0 <= t < self.n_thing:
                        raise ConfigError(f"co-occurring thing index {t} out of range")


@dataclass(frozen=True)
class WorldImage:
    """Label grid, clean base map, biased teacher map, and eval annotations."""

    labels: np.ndarray  # (H, W) category indices
    base: FeatureMap
    teacher: FeatureMap
    records: tuple[EvalRecord, ...]


@dataclass(frozen=True)
class SyntheticWorld:
    bank: EmbeddingBank
    train_images: tuple[WorldImage, ...]
    eval_images: tuple[WorldImage, ...]

    def training_pairs(self) -> list[tuple[FeatureMap, FeatureMap]]:
        return [(img.base, img.teacher) for img in self.train_images]

    def eval_records(self) -> list[EvalRecord]:
        return [r for img in self.eval_images for r in img.records]


def _segment_bounds(size: int, parts: int) -> list[tuple[int, int]]:
    cuts = np.linspace(0, size, parts + 1).round().astype(int)
    return [(int(cuts[i]), int(cuts[i + 1])) for i in range(parts)]


def _make_image(
    cfg: WorldConfig,
    embeddings: np.ndarray,
    rng: np.random.Generator,
    image_index: int,
) -> WorldImage:
    d_total = cfg.n_thing + cfg.n_stuff
    cooc = cfg.cooccurrence or tuple(
        (s % cfg.n_thing,) for s in range(cfg.n_stuff)
    )

    rows = int(rng.integers(2, 4))
    cols = int(rng.integers(2, 4))
    cells = [
        (r0, r1, c0, c1)
        for r0, r1 in _segment_bounds(cfg.map_height, rows)
        for c0, c1 in _segment_bounds(cfg.map_width, cols)
    ]
    categories = rng.integers(0, d_total, size=len(cells))
    # guarantee both kinds appear
    thing_slot, stuff_slot = rng.choice(len(cells), size=2, replace=False)
    categories[thing_slot] = rng.integers(0, cfg.n_thing)
    categories[stuff_slot] = cfg.n_thing + rng.integers(0, cfg.n_stuff)

    labels = np.zeros((cfg.map_height, cfg.map_width), dtype=np.int64)
    teacher_dirs = np.zeros((len(cells), cfg.channels))
    for idx, ((r0, r1, c0, c1), cat) in enumerate(zip(cells, categories)):
        labels[r0:r1, c0:c1] = cat
        if cat >= cfg.n_thing:  # stuff: lean toward one co-occurring thing
            partners = cooc[cat - cfg.n_thing]
            partner = int(partners[rng.integers(0, len(partners))])
            mixed = (1.0 - cfg.bias_beta) * embeddings[cat] + cfg.bias_beta * embeddings[partner]
            teacher_dirs[idx] = mixed / np.linalg.norm(mixed)
        else:
            teacher_dirs[idx] = embeddings[cat]

    shape = (cfg.map_height, cfg.map_width, cfg.channels)
    base = embeddings[labels] + cfg.noise_sigma * rng.standard_normal(shape)
    teacher = np.zeros(shape)
    for idx, (r0, r1, c0, c1) in enumerate(cells):
        teacher[r0:r1, c0:c1] = teacher_dirs[idx]
    teacher += cfg.noise_sigma * rng.standard_normal(shape)

    records = []
    for (r0, r1, c0, c1), cat in zip(cells, categories):
        box = RegionSpec(float(c0), float(r0), float(c1), float(r1))
        records.append(
            EvalRecord(RecordKind.BOX, int(cat), box=box, image_index=image_index)
        )
        mask = np.zeros((cfg.map_height, cfg.map_width), dtype=np.float32)
        mask[r0:r1, c0:c1] = 1.0
        mask_kind = (
            RecordKind.MASK_THING if cat < cfg.n_thing else RecordKind.MASK_STUFF
        )
        records.append(
            EvalRecord(mask_kind, int(cat), mask=mask, image_index=image_index)
        )
    return WorldImage(
        labels=labels,
        base=FeatureMap(base),
        teacher=FeatureMap(teacher),
        records=tuple(records),
    )


def gen_world(cfg: WorldConfig) -> SyntheticWorld:
    """Generate a reproducible world; identical configs yield identical worlds."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(1 + cfg.n_train + cfg.n_eval)
    bank_rng = np.random.default_rng(seeds[0])

    d_total = cfg.n_thing + cfg.n_stuff
    gauss = bank_rng.standard_normal((cfg.channels, d_total))
    q, _ = np.linalg.qr(gauss)
    embeddings = q.T  # orthonormal rows, pairwise cosine exactly 0

    names = tuple(f"thing_{i:02d}" for i in range(cfg.n_thing)) + tuple(
        f"stuff_{i:02d}" for i in range(cfg.n_stuff)
    )
    kinds = (Kind.THING,) * cfg.n_thing + (Kind.STUFF,) * cfg.n_stuff
    bank = EmbeddingBank(names=names, kinds=kinds, embeddings=embeddings)

    train_images = tuple(
        _make_image(cfg, embeddings, np.random.default_rng(seeds[1 + i]), i)
        for i in range(cfg.n_train)
    )
    eval_images = tuple(
        _make_image(cfg, embeddings, np.random.default_rng(seeds[1 + cfg.n_train + i]), i)
        for i in range(cfg.n_eval)
    )
    return SyntheticWorld(bank=bank, train_images=train_images, eval_images=eval_images)
