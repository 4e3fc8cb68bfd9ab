"""Intrinsics-free surface parameterization of planar depth maps.

A 3D plane aX + bY + cZ + d = 0 observed by a pinhole camera has an
inverse depth that is affine in pixel coordinates:

    1/Z = p_hat * u + q_hat * v + r_hat

so the plane's depth map is fully described by (p_hat, q_hat, r_hat)
without knowing the intrinsics.  Because global scene scale is ambiguous
the triplet is normalized to a unit direction (p, q, r) plus a positive
scale factor s = ||(p_hat, q_hat, r_hat)||, giving

    Z = 1 / ((p*u + q*v + r) * s).

Pixel convention used everywhere in this package: u is the column index
and v the row index, both zero-based at the top-left pixel center, in
raw pixels of the raster at hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePlane, DegenerateSurface

# Raw parameter vectors shorter than this encode "no surface".
DEGENERACY_EPS = 1e-12


@dataclass(frozen=True)
class RawSurfaceParams:
    """Unnormalized (p_hat, q_hat, r_hat) of the inverse-depth plane."""

    p_hat: float
    q_hat: float
    r_hat: float

    def __post_init__(self):
        vec = (self.p_hat, self.q_hat, self.r_hat)
        if not all(math.isfinite(c) for c in vec):
            raise DegenerateSurface(f"non-finite raw surface params {vec}")
        if math.sqrt(sum(c * c for c in vec)) < DEGENERACY_EPS:
            raise DegenerateSurface("raw surface params are all zero")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_hat, self.q_hat, self.r_hat], dtype=np.float64)


@dataclass(frozen=True)
class SurfaceParams:
    """Normalized surface parameters: unit (p, q, r) and scale s > 0."""

    p: float
    q: float
    r: float
    s: float

    def __post_init__(self):
        n = self.p * self.p + self.q * self.q + self.r * self.r
        if abs(n - 1.0) > 1e-9:
            raise DegenerateSurface(f"(p, q, r) not unit length: |.|^2 = {n}")
        if not (self.s > 0.0 and math.isfinite(self.s)):
            raise DegenerateSurface(f"scale factor must be positive, got {self.s}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.q, self.r, self.s], dtype=np.float64)

    def raw(self) -> RawSurfaceParams:
        """Undo the normalization: (p*s, q*s, r*s)."""
        return RawSurfaceParams(self.p * self.s, self.q * self.s, self.r * self.s)


@dataclass(frozen=True)
class PlaneEq3D:
    """Plane aX + bY + cZ + d = 0 with unit normal, in camera coordinates."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        n = self.a * self.a + self.b * self.b + self.c * self.c
        if abs(n - 1.0) > 1e-9:
            raise DegeneratePlane(f"(a, b, c) not unit length: |.|^2 = {n}")
        if abs(self.d) < DEGENERACY_EPS:
            raise DegeneratePlane("plane passes through the camera center (d = 0)")

    def normal(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c], dtype=np.float64)

    def flipped(self) -> "PlaneEq3D":
        """Same point set, jointly negated representation."""
        return PlaneEq3D(-self.a, -self.b, -self.c, -self.d)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: u = fx*X/Z + u0, v = fy*Y/Z + v0."""

    fx: float
    fy: float
    u0: float
    v0: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive: {self.fx}, {self.fy}")
        if not (0 <= self.u0 < self.width and 0 <= self.v0 < self.height):
            raise ValueError("principal point outside the raster")


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DepthMap:
    """Metric depth raster (meters, float64) with a per-pixel validity mask."""

    values: np.ndarray  # (H, W) float64
    mask: np.ndarray    # (H, W) bool

    def __post_init__(self):
        values = _readonly(np.asarray(self.values, dtype=np.float64))
        mask = _readonly(np.asarray(self.mask, dtype=bool))
        if values.ndim != 2 or mask.shape != values.shape:
            raise ValueError("depth values and mask must be matching 2-D arrays")
        valid = values[mask]
        if valid.size and not (np.all(np.isfinite(valid)) and np.all(valid > 0)):
            raise ValueError("valid depth entries must be finite and positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ParamMap:
    """Per-pixel (p, q, r, s) raster, the stand-in for a network output.

    Maps produced from ground truth satisfy the SurfaceParams invariants
    at every valid pixel; predicted/optimized maps are allowed to drift
    off that manifold, so construction only checks finiteness.
    """

    values: np.ndarray  # (H, W, 4) float64
    mask: np.ndarray    # (H, W) bool

    def __post_init__(self):
        values = _readonly(np.asarray(self.values, dtype=np.float64))
        mask = _readonly(np.asarray(self.mask, dtype=bool))
        if values.ndim != 3 or values.shape[2] != 4 or mask.shape != values.shape[:2]:
            raise ValueError("param values must be (H, W, 4) with (H, W) mask")
        if mask.any() and not np.all(np.isfinite(values[mask])):
            raise ValueError("valid param entries must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def is_normalized(self, tol: float = 1e-9) -> bool:
        """True if every valid pixel has unit (p, q, r) and s > 0."""
        if not self.mask.any():
            return True
        v = self.values[self.mask]
        norms = np.linalg.norm(v[:, :3], axis=1)
        return bool(np.all(np.abs(norms - 1.0) <= tol) and np.all(v[:, 3] > 0))

    def at(self, row: int, col: int) -> SurfaceParams:
        p, q, r, s = self.values[row, col]
        return SurfaceParams(p, q, r, s)


def segments_properly_intersect(p1, p2, p3, p4) -> bool:
    """True if open segments (p1, p2) and (p3, p4) cross each other."""
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def polygon_is_simple(vertices) -> bool:
    """True if no two non-adjacent polygon edges cross."""
    poly = np.asarray(vertices, dtype=np.float64)
    n = len(poly)
    for i in range(n):
        a1, a2 = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if segments_properly_intersect(a1, a2, poly[j], poly[(j + 1) % n]):
                return False
    return True


# Label value for pixels not assigned to any surface instance.
SENTINEL = -1


@dataclass(frozen=True)
class SegmentationMap:
    """Integer surface labels per pixel; SENTINEL marks unassigned pixels."""

    labels: np.ndarray  # (H, W) int32

    def __post_init__(self):
        labels = _readonly(np.asarray(self.labels, dtype=np.int32))
        if labels.ndim != 2:
            raise ValueError("segmentation labels must be a 2-D array")
        if labels.size and labels.min() < SENTINEL:
            raise ValueError(f"labels must be >= {SENTINEL}")
        object.__setattr__(self, "labels", labels)

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def assigned(self) -> np.ndarray:
        return self.labels != SENTINEL


# ----------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------

def normalize(raw: RawSurfaceParams) -> SurfaceParams:
    """Split raw params into a unit direction and positive scale.

    s = ||(p_hat, q_hat, r_hat)|| and (p, q, r) = (p_hat, q_hat, r_hat)/s,
    so s carries the (positive) magnitude and all signs stay on (p, q, r).
    """
    vec = raw.as_array()
    s = float(np.linalg.norm(vec))
    if s < DEGENERACY_EPS:
        raise DegenerateSurface("cannot normalize all-zero surface params")
    p, q, r = vec / s
    return SurfaceParams(float(p), float(q), float(r), s)


def normalize_array(raw: np.ndarray) -> np.ndarray:
    """Vectorized normalize: (..., 3) raw -> (..., 4) normalized params.

    Rows with vanishing norm come back as NaN; callers mask them out.
    """
    raw = np.asarray(raw, dtype=np.float64)
    s = np.linalg.norm(raw, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(s >= DEGENERACY_EPS, raw / s, np.nan)
    return np.concatenate([unit, np.where(s >= DEGENERACY_EPS, s, np.nan)], axis=-1)


def inverse_depth_at(params: SurfaceParams, u, v):
    """(p*u + q*v + r) * s, the signed inverse depth."""
    return (params.p * np.asarray(u, dtype=np.float64)
            + params.q * np.asarray(v, dtype=np.float64)
            + params.r) * params.s


def depth_at(params: SurfaceParams, u, v):
    """Signed depth Z = 1 / ((p*u + q*v + r) * s) at pixel (u, v).

    A non-positive inverse depth means the surface is behind the camera
    or at the horizon at this pixel; the signed/infinite value is
    returned as-is and callers decide how to treat it.
    """
    inv = inverse_depth_at(params, u, v)
    with np.errstate(divide="ignore"):
        if np.ndim(inv):
            return 1.0 / inv
        return math.inf if inv == 0 else float(1.0 / inv)


def pixel_grid(width: int, height: int):
    """(u, v) coordinate rasters for zero-based pixel centers."""
    u = np.arange(width, dtype=np.float64)
    v = np.arange(height, dtype=np.float64)
    return np.meshgrid(u, v)


def render_depth(params: SurfaceParams, width: int, height: int) -> DepthMap:
    """Evaluate the surface's depth over a raster.

    Pixels with non-positive inverse depth are marked invalid.
    """
    if width < 1 or height < 1:
        raise ValueError("raster dimensions must be >= 1")
    uu, vv = pixel_grid(width, height)
    inv = inverse_depth_at(params, uu, vv)
    mask = inv > 0
    values = np.full((height, width), np.nan)
    values[mask] = 1.0 / inv[mask]
    return DepthMap(values, mask)


def _masked_derivative(f: np.ndarray, mask: np.ndarray, axis: int):
    """Per-pixel derivative of f along axis, honoring the validity mask.

    Central differences where both neighbors are valid, one-sided next to
    borders and invalid pixels.  Both stencils are exact for an affine f,
    which is what makes plane recovery exact.  Returns (deriv, ok) where
    ok is False wherever no valid neighbor exists along the axis.
    """
    fwd_val = np.roll(f, -1, axis=axis)
    bwd_val = np.roll(f, 1, axis=axis)
    fwd_ok = np.roll(mask, -1, axis=axis)
    bwd_ok = np.roll(mask, 1, axis=axis)
    # roll wraps around; the wrapped entries are not real neighbors
    edge_lo = [slice(None)] * f.ndim
    edge_hi = [slice(None)] * f.ndim
    edge_lo[axis] = 0
    edge_hi[axis] = -1
    bwd_ok[tuple(edge_lo)] = False
    fwd_ok[tuple(edge_hi)] = False

    deriv = np.zeros_like(f)
    central = mask & fwd_ok & bwd_ok
    forward = mask & fwd_ok & ~bwd_ok
    backward = mask & ~fwd_ok & bwd_ok
    deriv[central] = (fwd_val[central] - bwd_val[central]) * 0.5
    deriv[forward] = fwd_val[forward] - f[forward]
    deriv[backward] = f[backward] - bwd_val[backward]
    ok = central | forward | backward
    return deriv, ok


def params_from_depth(gt: DepthMap) -> ParamMap:
    """Per-pixel target surface parameters from a ground-truth depth map.

    p_hat = d(1/Z)/du, q_hat = d(1/Z)/dv (finite differences),
    r_hat = 1/Z - p_hat*u - q_hat*v, then normalized.  Pixels whose
    derivatives cannot be formed are masked invalid.
    """
    inv = np.zeros_like(gt.values)
    inv[gt.mask] = 1.0 / gt.values[gt.mask]
    p_hat, ok_u = _masked_derivative(inv, gt.mask, axis=1)
    q_hat, ok_v = _masked_derivative(inv, gt.mask, axis=0)
    ok = gt.mask & ok_u & ok_v

    uu, vv = pixel_grid(gt.width, gt.height)
    r_hat = inv - p_hat * uu - q_hat * vv
    raw = np.stack([p_hat, q_hat, r_hat], axis=-1)
    params = normalize_array(raw)
    ok &= np.all(np.isfinite(params), axis=-1)
    params[~ok] = 0.0
    return ParamMap(params, ok)


def plane_to_surface(plane: PlaneEq3D, cam: CameraIntrinsics) -> SurfaceParams:
    """Convert a 3D plane equation into normalized surface parameters.

    From the perspective projection,
    1/Z = -a/(fx*d) * u - b/(fy*d) * v + (a*u0/fx + b*v0/fy - c)/d.
    """
    p_hat = -plane.a / (cam.fx * plane.d)
    q_hat = -plane.b / (cam.fy * plane.d)
    r_hat = (plane.a * cam.u0 / cam.fx + plane.b * cam.v0 / cam.fy - plane.c) / plane.d
    return normalize(RawSurfaceParams(p_hat, q_hat, r_hat))


def surface_to_plane(params: SurfaceParams, cam: CameraIntrinsics) -> PlaneEq3D:
    """Invert plane_to_surface.

    The surface parameters are invariant under jointly negating
    (a, b, c, d), so the plane is only determined up to that flip; the
    representative with d < 0 is returned (a fronto-parallel wall Z = Z0
    then comes out as (0, 0, 1, -Z0)).
    """
    raw = params.raw()
    m = np.array([
        -raw.p_hat * cam.fx,
        -raw.q_hat * cam.fy,
        -(raw.p_hat * cam.u0 + raw.q_hat * cam.v0 + raw.r_hat),
    ])
    norm = float(np.linalg.norm(m))
    if norm < DEGENERACY_EPS:
        raise DegeneratePlane("surface parameters give a vanishing plane normal")
    d = -1.0 / norm
    a, b, c = -m / norm
    return PlaneEq3D(float(a), float(b), float(c), d)


def backproject(depth: DepthMap, cam: CameraIntrinsics) -> np.ndarray:
    """Lift valid depth pixels to camera-frame 3D points, (N, 3).

    X = (u - u0) * Z / fx,  Y = (v - v0) * Z / fy.  Points come out in
    row-major pixel order; invalid pixels are omitted.
    """
    uu, vv = pixel_grid(depth.width, depth.height)
    z = depth.values[depth.mask]
    u = uu[depth.mask]
    v = vv[depth.mask]
    x = (u - cam.u0) * z / cam.fx
    y = (v - cam.v0) * z / cam.fy
    return np.stack([x, y, z], axis=-1)
