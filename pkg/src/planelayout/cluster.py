"""Mean-shift grouping of pixel-level surface parameters into instances.

Well-trained parameter maps are near piecewise-constant, so a flat-kernel
mean shift in the 4-D (p, q, r, s) space finds one mode per surface
without knowing the surface count up front.  Clusters holding less than
a configurable fraction of the valid pixels are dropped and their pixels
marked unassigned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoInstances
from .geometry import SENTINEL, ParamMap, SegmentationMap, SurfaceParams

MEAN_SHIFT_TOL = 1e-5
MEAN_SHIFT_MAX_ITER = 100
DEFAULT_BANDWIDTH = 0.3     # between the training margins delta_v and delta_d
DEFAULT_MIN_FRACTION = 0.01
DEFAULT_MAX_SEEDS = 2000    # mean shift is O(N^2); cap the seed count


@dataclass(frozen=True)
class ClusterInstance:
    label: int
    params: SurfaceParams
    pixel_count: int


@dataclass(frozen=True)
class ClusterSet:
    instances: tuple[ClusterInstance, ...]
    clustered_seg: SegmentationMap

    def param_list(self) -> list[SurfaceParams]:
        return [inst.params for inst in self.instances]


def mean_shift(points, bandwidth: float, *, max_iter: int = MEAN_SHIFT_MAX_ITER,
               tol: float = MEAN_SHIFT_TOL):
    """Flat-kernel mean shift; returns [(mode, member_indices), ...].

    Every input point is iterated to convergence (shift norm < tol or
    max_iter reached), converged positions within bandwidth/2 are merged,
    and each point is assigned to the nearest surviving mode.  All
    tie-breaking is content-based, so the result is invariant to the
    ordering of the input points.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = pts.shape[0]
    if n < 1:
        raise ValueError("mean_shift needs at least one point")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")

    x = pts.copy()
    active = np.ones(n, dtype=bool)
    bw2 = bandwidth * bandwidth

    def sq_dists(queries):
        # exact subtract form (the |q|^2 + |p|^2 - 2qp identity cancels
        # catastrophically at small bandwidths), chunked to bound the
        # (m, n, d) broadcast intermediate
        out = np.empty((len(queries), n))
        step = max(1, int(2e6 // max(n, 1)))
        for lo in range(0, len(queries), step):
            block = queries[lo:lo + step]
            out[lo:lo + step] = ((block[:, None, :] - pts[None, :, :]) ** 2
                                 ).sum(axis=2)
        return out

    for _ in range(max_iter):
        if not active.any():
            break
        inside = sq_dists(x[active]) <= bw2
        counts = inside.sum(axis=1)
        new = (inside @ pts) / counts[:, None]
        shift = np.linalg.norm(new - x[active], axis=1)
        x[active] = new
        still = np.zeros(n, dtype=bool)
        still[np.flatnonzero(active)[shift >= tol]] = True
        active = still

    # density at convergence, used to pick the representative of merged modes
    density = (sq_dists(x) <= bw2).sum(axis=1)

    order = np.lexsort(tuple(x[:, k] for k in range(x.shape[1] - 1, -1, -1)))
    order = order[np.argsort(-density[order], kind="stable")]

    centers: list[np.ndarray] = []
    merge_r2 = (bandwidth / 2.0) ** 2
    for idx in order:
        mode = x[idx]
        if not any(((mode - c) ** 2).sum() <= merge_r2 for c in centers):
            centers.append(mode.copy())
    centers_arr = np.stack(centers)

    d2c = ((pts[:, None, :] - centers_arr[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2c, axis=1)
    groups = [(centers_arr[k], np.flatnonzero(assign == k))
              for k in range(len(centers))]
    groups = [g for g in groups if g[1].size > 0]
    groups.sort(key=lambda g: (-g[1].size, tuple(g[0])))
    return groups


def cluster_param_map(pm: ParamMap, bandwidth: float = DEFAULT_BANDWIDTH,
                      min_fraction: float = DEFAULT_MIN_FRACTION, *,
                      seed: int = 0, max_seeds: int = DEFAULT_MAX_SEEDS) -> ClusterSet:
    """Group a ParamMap's valid pixels into surface instances.

    Mean shift runs on at most max_seeds uniformly-subsampled pixels;
    every valid pixel is then assigned to the nearest surviving mode.
    Clusters below min_fraction of the valid pixels are abandoned and
    their pixels set to the sentinel label.  Instance parameters are the
    mean of the member pixels' parameters, rescaled so (p, q, r) is unit
    length again (s absorbs the norm, which leaves the encoded depth map
    unchanged).
    """
    if not 0 <= min_fraction < 1:
        raise ValueError("min_fraction must be in [0, 1)")
    valid_idx = np.flatnonzero(pm.mask.ravel())
    n_valid = valid_idx.size
    if n_valid < 1:
        raise NoInstances("param map has no valid pixels")
    pts = pm.values.reshape(-1, 4)[valid_idx]

    if n_valid > max_seeds:
        rng = np.random.default_rng(seed)
        sub = np.sort(rng.choice(n_valid, size=max_seeds, replace=False))
        seed_pts = pts[sub]
    else:
        seed_pts = pts

    groups = mean_shift(seed_pts, bandwidth)
    centers = np.stack([mode for mode, _ in groups])

    d2c = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2c, axis=1)
    counts = np.bincount(assign, minlength=len(centers))

    min_count = min_fraction * n_valid
    instances: list[ClusterInstance] = []
    labels_flat = np.full(pm.width * pm.height, SENTINEL, dtype=np.int32)
    kept = []
    for k in np.argsort(-counts, kind="stable"):
        if counts[k] == 0 or counts[k] < min_count:
            continue
        mean = pts[assign == k].mean(axis=0)
        norm = float(np.linalg.norm(mean[:3]))
        s = float(mean[3] * norm)
        if norm < 1e-12 or s <= 0:
            continue  # antipodal or inverted cluster; cannot represent a surface
        p, q, r = mean[:3] / norm
        kept.append((k, SurfaceParams(float(p), float(q), float(r), s)))
    if not kept:
        raise NoInstances(
            f"no cluster reached {min_fraction:.2%} of {n_valid} valid pixels")

    for new_label, (k, params) in enumerate(kept):
        members = valid_idx[assign == k]
        labels_flat[members] = new_label
        instances.append(ClusterInstance(new_label, params, int(counts[k])))

    seg = SegmentationMap(labels_flat.reshape(pm.height, pm.width))
    return ClusterSet(tuple(instances), seg)
