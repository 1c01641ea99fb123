"""Dense feature maps, random grid partitioning, and RoIAlign pooling.

A feature map is an H x W grid of C-dimensional vectors. Regions are
real-valued rectangles in feature-map units; pooling reduces a region to a
single C-vector by averaging bilinearly interpolated sample points
(RoIAlign with a 1x1 output). Location (r, c) has its center at
(c + 0.5, r + 0.5), and interpolation clamps to edge locations rather than
zero-padding, so regions touching the border stay uncorrupted.

Pooling is linear in the map for fixed geometry: ``region_pool_weights``
exposes the per-location weights, so the backward pass through pooling is
the exact transpose of the forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GeometryError, ShapeError


@dataclass(frozen=True)
class FeatureMap:
    """Immutable H x W x C grid of feature vectors."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeError(f"feature map must be H x W x C, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"feature map dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ShapeError("feature map contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class RegionSpec:
    """Axis-aligned rectangle in feature-map units with strictly positive area."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise GeometryError(
                f"region must have positive area, got ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    def validate_inside(self, height: int, width: int) -> None:
        if self.x0 < 0 or self.y0 < 0 or self.x1 > width or self.y1 > height:
            raise GeometryError(
                f"region ({self.x0}, {self.y0}, {self.x1}, {self.y1}) exceeds "
                f"{height} x {width} map"
            )


@dataclass(frozen=True)
class GridShape:
    """Rows x cols of the random partitioning grid; both at least 2."""

    m: int
    n: int

    def __post_init__(self):
        if self.m < 2 or self.n < 2:
            raise ConfigError(f"grid must be at least 2 x 2, got {self.m} x {self.n}")


def sample_grid(rng: np.random.Generator, max_grid: int) -> GridShape:
    """Draw grid rows and cols independently and uniformly from {2, ..., max_grid}."""
    if max_grid < 2:
        raise ConfigError(f"max_grid must be >= 2, got {max_grid}")
    m = int(rng.integers(2, max_grid + 1))
    n = int(rng.integers(2, max_grid + 1))
    return GridShape(m, n)


def partition_regions(map_shape: tuple[int, int], grid: GridShape) -> list[RegionSpec]:
    """Tile an H x W map into m x n rectangular cells, emitted row-major.

    Cell boundaries are real-valued (j * W / n etc.), so the cells tile the
    map exactly even when the grid does not divide the map evenly.
    """
    height, width = map_shape
    if height < 1 or width < 1:
        raise ConfigError(f"map shape must be positive, got {map_shape}")
    regions = []
    for i in range(grid.m):
        y0 = i * height / grid.m
        y1 = (i + 1) * height / grid.m
        for j in range(grid.n):
            regions.append(RegionSpec(j * width / grid.n, y0, (j + 1) * width / grid.n, y1))
    return regions


def _axis_weights(coord: float, size: int) -> tuple[tuple[int, float], ...]:
    # coord is in location units (0.0 = center of first row/col); clamp to edges
    if coord <= 0.0 or size == 1:
        return ((0, 1.0),)
    if coord >= size - 1:
        return ((size - 1, 1.0),)
    lo = int(coord)
    frac = coord - lo
    return ((lo, 1.0 - frac), (lo + 1, frac))


def region_pool_weights(
    height: int, width: int, region: RegionSpec, samples_per_axis: int = 2
) -> np.ndarray:
    """Per-location weights w such that pooling equals sum_rc w[r, c] * map[r, c].

    The weights are the average of the bilinear stencils of the
    samples_per_axis**2 uniform sample points inside the region, and they sum
    to 1. The same matrix, transposed, scatters a pooled-vector gradient back
    to map locations.
    """
    if samples_per_axis < 1:
        raise ConfigError(f"samples_per_axis must be >= 1, got {samples_per_axis}")
    region.validate_inside(height, width)
    s = samples_per_axis
    span_x = region.x1 - region.x0
    span_y = region.y1 - region.y0
    weights = np.zeros((height, width), dtype=np.float64)
    for sy in range(s):
        y = region.y0 + (sy + 0.5) * span_y / s - 0.5
        wy = _axis_weights(y, height)
        for sx in range(s):
            x = region.x0 + (sx + 0.5) * span_x / s - 0.5
            wx = _axis_weights(x, width)
            for r, fy in wy:
                for c, fx in wx:
                    weights[r, c] += fy * fx
    weights /= s * s
    return weights


def apply_pool_weights(weights: np.ndarray, data: np.ndarray) -> np.ndarray:
    """Contract (H, W) weights with an (H, W, C) map to one C-vector.

    Every pooling path funnels through this one contraction so that equal
    inputs yield bit-identical pooled vectors regardless of caller.
    """
    flat = data.reshape(-1, data.shape[2]).astype(np.float64, copy=False)
    return weights.reshape(-1) @ flat


def pool_region(fmap: FeatureMap, region: RegionSpec, samples_per_axis: int = 2) -> np.ndarray:
    """RoIAlign-average the region to one C-vector (float64)."""
    weights = region_pool_weights(fmap.height, fmap.width, region, samples_per_axis)
    return apply_pool_weights(weights, fmap.data)


def pool_mask(fmap: FeatureMap, mask: np.ndarray) -> np.ndarray:
    """Coverage-weighted mean of location vectors (float64).

    ``mask`` holds per-location weights in [0, 1] with shape H x W; at least
    one weight must be positive.
    """
    weights = np.asarray(mask, dtype=np.float64)
    if weights.shape != (fmap.height, fmap.width):
        raise ShapeError(
            f"mask shape {weights.shape} does not match map {fmap.height} x {fmap.width}"
        )
    total = weights.sum()
    if total <= 0.0:
        raise GeometryError("mask has no positive coverage")
    return apply_pool_weights(weights, fmap.data) / total
