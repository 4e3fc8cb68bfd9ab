"""Surface parameter fitting from depth samples inside annotated regions.

Inverse depth of a plane is linear in pixel coordinates, so fitting is a
3x3 linear least squares in (u, v, 1/Z); RANSAC around it rejects depth
samples from clutter and occluders, which is how instance-level ground
truth is built from human-annotated region polygons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, EmptyRegion, NoConsensus
from .geometry import (
    DepthMap,
    RawSurfaceParams,
    SurfaceParams,
    normalize,
    polygon_is_simple,
)

CONDITION_LIMIT = 1e10
DEFAULT_RANSAC_ITERS = 500
DEFAULT_INLIER_TOL = 1e-3   # 1/m; about 1 cm depth error at 3 m
DEFAULT_CONSENSUS_FLOOR = 0.5


@dataclass(frozen=True)
class RegionAnnotation:
    """Polygon over one surface's visible pixels."""

    region_id: int
    polygon: tuple[tuple[float, float], ...]  # (u, v) vertices
    semantic: str = "wall"

    def __post_init__(self):
        if len(self.polygon) < 3:
            raise ValueError("region polygon needs at least 3 vertices")
        if not polygon_is_simple(self.polygon):
            raise ValueError("region polygon self-intersects")


@dataclass(frozen=True)
class FitResult:
    params: SurfaceParams
    inlier_count: int
    inlier_ratio: float
    rms_residual: float  # inverse-depth units (1/m)

    def __post_init__(self):
        if not 0.0 <= self.inlier_ratio <= 1.0:
            raise ValueError("inlier ratio out of [0, 1]")
        if self.rms_residual < 0:
            raise ValueError("rms residual must be non-negative")


def _as_samples(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("samples must be an (N, 3) array of (u, v, Z)")
    if not np.all(np.isfinite(arr)):
        raise ValueError("samples must be finite")
    if not np.all(arr[:, 2] > 0):
        raise ValueError("sample depths must be positive")
    return arr


def _raw_lsq(arr: np.ndarray) -> np.ndarray:
    """Normal-equation solve of (u, v, 1) . x = 1/Z; returns raw (3,)."""
    a = np.column_stack([arr[:, 0], arr[:, 1], np.ones(len(arr))])
    b = 1.0 / arr[:, 2]
    ata = a.T @ a
    if np.linalg.cond(ata) > CONDITION_LIMIT:
        raise DegenerateConfiguration(
            "sample pixels are (nearly) collinear; surface is undetermined")
    return np.linalg.solve(ata, a.T @ b)


def _residuals(raw: np.ndarray, arr: np.ndarray) -> np.ndarray:
    return np.abs(arr[:, 0] * raw[0] + arr[:, 1] * raw[1] + raw[2]
                  - 1.0 / arr[:, 2])


def lsq_fit(samples) -> SurfaceParams:
    """Closed-form least squares of the inverse-depth plane, normalized.

    Raises DegenerateConfiguration when the 3x3 normal-equation system is
    singular beyond condition number 1e10 (collinear samples).
    """
    arr = _as_samples(samples)
    if len(arr) < 3:
        raise DegenerateConfiguration("need at least 3 samples")
    return normalize(RawSurfaceParams(*_raw_lsq(arr)))


def ransac_fit(samples, iters: int = DEFAULT_RANSAC_ITERS,
               inlier_tol: float = DEFAULT_INLIER_TOL, seed: int = 0, *,
               consensus_floor: float = DEFAULT_CONSENSUS_FLOOR) -> FitResult:
    """3-point hypothesize-and-verify on the inverse-depth model.

    The consensus set of the best hypothesis is refit with lsq_fit.
    Deterministic per seed.  Raises NoConsensus when the best inlier
    ratio stays below consensus_floor.
    """
    arr = _as_samples(samples)
    n = len(arr)
    if n < 3:
        raise DegenerateConfiguration("need at least 3 samples")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not inlier_tol > 0:
        raise ValueError("inlier_tol must be positive")

    rng = np.random.default_rng(seed)
    b = 1.0 / arr[:, 2]
    best_count = -1
    best_mask = None
    for _ in range(iters):
        pick = rng.choice(n, size=3, replace=False)
        a3 = np.column_stack([arr[pick, 0], arr[pick, 1], np.ones(3)])
        try:
            raw = np.linalg.solve(a3, b[pick])
        except np.linalg.LinAlgError:
            continue
        resid = _residuals(raw, arr)
        mask = resid <= inlier_tol
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask

    if best_mask is None or best_count < consensus_floor * n or best_count < 3:
        ratio = max(best_count, 0) / n
        raise NoConsensus(
            f"best inlier ratio {ratio:.3f} below floor {consensus_floor}")

    raw = _raw_lsq(arr[best_mask])
    resid = _residuals(raw, arr)
    inliers = resid <= inlier_tol
    rms = float(np.sqrt(np.mean(resid[best_mask] ** 2)))
    return FitResult(
        params=normalize(RawSurfaceParams(*raw)),
        inlier_count=int(inliers.sum()),
        inlier_ratio=float(inliers.sum()) / n,
        rms_residual=rms,
    )


def rasterize_polygon(polygon, width: int, height: int) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the polygon."""
    poly = np.asarray(polygon, dtype=np.float64)
    uu, vv = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    inside = np.zeros((height, width), dtype=bool)
    n = len(poly)
    for i in range(n):
        u1, v1 = poly[i]
        u2, v2 = poly[(i + 1) % n]
        cond = (v1 > vv) != (v2 > vv)
        with np.errstate(divide="ignore", invalid="ignore"):
            uint = u1 + (vv - v1) * (u2 - u1) / (v2 - v1)
        inside ^= cond & (uu < uint)
    return inside


def fit_annotated(depth: DepthMap, annotations, *,
                  iters: int = DEFAULT_RANSAC_ITERS,
                  inlier_tol: float = DEFAULT_INLIER_TOL, seed: int = 0,
                  consensus_floor: float = DEFAULT_CONSENSUS_FLOOR) -> list[FitResult]:
    """RANSAC-fit every annotated region of a depth map.

    Results come back in region-id order.  Raises EmptyRegion when a
    polygon covers fewer than 3 valid depth pixels (surfaces fully
    hidden behind objects cannot be recovered).
    """
    uu, vv = np.meshgrid(np.arange(depth.width, dtype=np.float64),
                         np.arange(depth.height, dtype=np.float64))
    results = []
    for k, ann in enumerate(sorted(annotations, key=lambda a: a.region_id)):
        mask = rasterize_polygon(ann.polygon, depth.width, depth.height)
        mask &= depth.mask
        if mask.sum() < 3:
            raise EmptyRegion(
                f"region {ann.region_id} covers {int(mask.sum())} valid pixels")
        samples = np.column_stack([uu[mask], vv[mask], depth.values[mask]])
        results.append(ransac_fit(samples, iters, inlier_tol, seed + k,
                                  consensus_floor=consensus_floor))
    return results
