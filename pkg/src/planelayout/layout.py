"""Layout assembly from instance-level surface parameters.

The per-pixel depth of every instance is compared in inverse-depth space
(negative values mean "behind the camera" and are excluded), the nearest
surface wins each pixel, occlusions that the nearest-surface rule cannot
express are fixed by walking per-pixel depth layers against the
clustered segmentation, and corners fall out of the pairwise equality
lines of the instance inverse depths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .cluster import ClusterSet, cluster_param_map
from .errors import IllConditionedCorner
from .geometry import (
    SENTINEL,
    CameraIntrinsics,
    DepthMap,
    ParamMap,
    SegmentationMap,
    SurfaceParams,
    backproject,
    pixel_grid,
)

CORNER_DET_EPS = 1e-12
JUNCTION_RADIUS_PX = 2.0
EDGE_NAMES = ("left", "right", "top", "bottom")

_EIGHT_CONN = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class Corner:
    """Layout corner: image position, depth, and the surfaces meeting there.

    Interior corners join three surfaces; boundary corners join two
    surfaces on an image edge (edge is None for interior corners).
    """

    u: float
    v: float
    z: float
    surfaces: tuple[int, ...]
    edge: Optional[str] = None

    @property
    def interior(self) -> bool:
        return self.edge is None


@dataclass(frozen=True)
class LayoutResult:
    seg: SegmentationMap
    depth: DepthMap
    instances: tuple[SurfaceParams, ...]
    corners_2d: tuple[Corner, ...]
    corners_3d: Optional[np.ndarray] = None  # (N, 3), same order as corners_2d
    boundaries: dict = field(default_factory=dict)  # (a, b) -> (K, 2) polyline
    corner_issues: tuple = ()
    clusters: Optional[ClusterSet] = None


def _raw_coeffs(instances) -> np.ndarray:
    """(C, 3) array of unnormalized inverse-depth coefficients."""
    return np.array([[sp.p * sp.s, sp.q * sp.s, sp.r * sp.s] for sp in instances])


def _inverse_depth_stack(instances, width: int, height: int) -> np.ndarray:
    uu, vv = pixel_grid(width, height)
    raw = _raw_coeffs(instances)
    return (raw[:, 0, None, None] * uu[None]
            + raw[:, 1, None, None] * vv[None]
            + raw[:, 2, None, None])


def stitch_min_depth(instances, width: int, height: int):
    """Nearest-surface layout: per pixel, the instance with maximal 1/Z.

    Pixels where every instance has non-positive inverse depth get the
    sentinel label and an invalid depth.  Ties go to the lowest id.
    """
    if len(instances) < 1:
        raise ValueError("stitch_min_depth needs at least one instance")
    inv = _inverse_depth_stack(instances, width, height)
    best = np.argmax(inv, axis=0)
    best_inv = np.take_along_axis(inv, best[None], axis=0)[0]
    valid = best_inv > 0
    labels = np.where(valid, best, SENTINEL).astype(np.int32)
    values = np.full((height, width), np.nan)
    values[valid] = 1.0 / best_inv[valid]
    return SegmentationMap(labels), DepthMap(values, valid)


def restitch_by_labels(instances, seg: SegmentationMap) -> DepthMap:
    """Depth map induced by an explicit per-pixel labeling."""
    inv = _inverse_depth_stack(instances, seg.width, seg.height)
    labels = np.where(seg.assigned(), seg.labels, 0)
    chosen = np.take_along_axis(inv, labels[None].astype(np.intp), axis=0)[0]
    valid = seg.assigned() & (chosen > 0)
    values = np.full(seg.labels.shape, np.nan)
    values[valid] = 1.0 / chosen[valid]
    return DepthMap(values, valid)


def _label_regions(labels: np.ndarray):
    """Connected components (8-connectivity) of equal label, excluding sentinel."""
    regions = []
    for lab in np.unique(labels):
        if lab == SENTINEL:
            continue
        comp, n = ndimage.label(labels == lab, structure=_EIGHT_CONN)
        for k in range(1, n + 1):
            regions.append((int(lab), comp == k))
    return regions


def resolve_layers(instances, clustered_seg: SegmentationMap,
                   width: int, height: int) -> SegmentationMap:
    """Walk per-pixel depth layers until consistent with the clustering.

    Surfaces are sorted per pixel by descending inverse depth; layer one
    (the nearest surface) seeds the segmentation.  Any connected region
    whose label disagrees with the dominant clustered label inside it is
    pushed to the next layer, repeatedly, which recovers occluded
    surfaces the nearest-surface rule mislabels in non-cuboid rooms.
    Pixels that exhaust their layers fall back to layer one.
    """
    n_inst = len(instances)
    inv = _inverse_depth_stack(instances, width, height)
    order = np.argsort(-inv, axis=0, kind="stable")
    n_pos = (inv > 0).sum(axis=0)

    def labels_at(layer_idx):
        lab = np.take_along_axis(order, layer_idx[None], axis=0)[0]
        return np.where(n_pos > 0, lab, SENTINEL).astype(np.int32)

    layer_idx = np.zeros((height, width), dtype=np.intp)
    layer_one = labels_at(layer_idx)
    current = layer_one.copy()
    frozen = n_pos == 0
    clustered = clustered_seg.labels

    for _ in range(n_inst):
        changed = False
        for cur_lab, region in _label_regions(current):
            evidence = clustered[region]
            evidence = evidence[evidence != SENTINEL]
            if evidence.size == 0:
                continue  # no clustering evidence; nearest-region fallback
            dominant = int(np.bincount(evidence).argmax())
            if dominant == cur_lab:
                continue
            advance = region & ~frozen
            if not advance.any():
                continue
            layer_idx[advance] += 1
            exhausted = advance & (layer_idx >= n_pos)
            if exhausted.any():
                layer_idx[exhausted] = 0
                frozen |= exhausted
            changed = True
        if not changed:
            break
        current = labels_at(layer_idx)
    return SegmentationMap(current)


# ----------------------------------------------------------------------
# corners
# ----------------------------------------------------------------------

def _adjacent_pairs(labels: np.ndarray) -> set[tuple[int, int]]:
    """Unordered label pairs that touch under 8-connectivity."""
    views = [
        (labels[:, :-1], labels[:, 1:]),
        (labels[:-1, :], labels[1:, :]),
        (labels[:-1, :-1], labels[1:, 1:]),
        (labels[:-1, 1:], labels[1:, :-1]),
    ]
    pairs = set()
    for a, b in views:
        diff = (a != b) & (a != SENTINEL) & (b != SENTINEL)
        for x, y in zip(a[diff].ravel(), b[diff].ravel()):
            pairs.add((min(int(x), int(y)), max(int(x), int(y))))
    return pairs


def _interior_junctions(labels: np.ndarray):
    """(u, v, labels) of 2x2 blocks holding >= 3 distinct non-sentinel labels."""
    blocks = np.stack([labels[:-1, :-1], labels[:-1, 1:],
                       labels[1:, :-1], labels[1:, 1:]], axis=-1)
    srt = np.sort(blocks, axis=-1)
    distinct = 1 + (np.diff(srt, axis=-1) != 0).sum(axis=-1)
    distinct -= (srt == SENTINEL).any(axis=-1)  # sentinel never counts
    out = []
    for i, j in zip(*np.nonzero(distinct >= 3)):
        labs = frozenset(int(x) for x in blocks[i, j] if x != SENTINEL)
        out.append((j + 0.5, i + 0.5, labs))
    return out


def _edge_junctions(labels: np.ndarray):
    """(edge, u, v, pair) where two labels meet along an image border."""
    h, w = labels.shape
    out = []
    scans = [
        ("left", labels[:, 0], lambda i: (0.0, i + 0.5)),
        ("right", labels[:, w - 1], lambda i: (float(w - 1), i + 0.5)),
        ("top", labels[0, :], lambda i: (i + 0.5, 0.0)),
        ("bottom", labels[h - 1, :], lambda i: (i + 0.5, float(h - 1))),
    ]
    for name, line, pos in scans:
        for i in range(len(line) - 1):
            a, b = int(line[i]), int(line[i + 1])
            if a != b and a != SENTINEL and b != SENTINEL:
                u, v = pos(i)
                out.append((name, u, v, frozenset((a, b))))
    return out


def _shared_inverse_depth(raw: np.ndarray, surfaces, u: float, v: float) -> float:
    vals = [raw[s, 0] * u + raw[s, 1] * v + raw[s, 2] for s in surfaces]
    return float(np.mean(vals))


def extract_corners(instances, seg: SegmentationMap, *,
                    junction_radius: float = JUNCTION_RADIUS_PX):
    """Corners of a stitched layout, from the instance equations.

    A corner is the meeting point of three surfaces (2x2 linear system of
    the pairwise inverse-depth equality lines) or of two surfaces and an
    image edge.  Candidates must land inside the raster, have positive
    depth, and sit within junction_radius pixels of a matching label
    junction in seg.  Near-parallel systems are skipped and returned as
    IllConditionedCorner issues rather than raised.
    """
    labels = seg.labels
    h, w = labels.shape
    raw = _raw_coeffs(instances)
    pairs = _adjacent_pairs(labels)
    interior_j = _interior_junctions(labels)
    edge_j = _edge_junctions(labels)

    corners: list[Corner] = []
    issues: list[IllConditionedCorner] = []

    # triples of mutually adjacent surfaces
    triples = set()
    labs = sorted({lab for pair in pairs for lab in pair})
    for i, a in enumerate(labs):
        for b in labs[i + 1:]:
            if (a, b) not in pairs:
                continue
            for c in labs:
                if c <= b:
                    continue
                if (a, c) in pairs and (b, c) in pairs:
                    triples.add((a, b, c))
    for a, b, c in sorted(triples):
        lab_ab = raw[a] - raw[b]
        lab_ac = raw[a] - raw[c]
        mat = np.array([[lab_ab[0], lab_ab[1]], [lab_ac[0], lab_ac[1]]])
        det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
        if abs(det) < CORNER_DET_EPS:
            issues.append(IllConditionedCorner(
                f"near-parallel boundaries for surfaces {(a, b, c)}"))
            continue
        rhs = np.array([-lab_ab[2], -lab_ac[2]])
        u, v = np.linalg.solve(mat, rhs)
        if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
            continue
        inv = _shared_inverse_depth(raw, (a, b, c), u, v)
        if not inv > CORNER_DET_EPS:
            issues.append(IllConditionedCorner(
                f"corner of {(a, b, c)} at non-positive depth"))
            continue
        near = any(
            {a, b, c} <= jl and math.hypot(u - ju, v - jv) <= junction_radius
            for ju, jv, jl in interior_j)
        if near:
            corners.append(Corner(float(u), float(v), 1.0 / inv, (a, b, c)))

    # pairs meeting an image edge
    for a, b in sorted(pairs):
        line = raw[a] - raw[b]  # line[0]*u + line[1]*v + line[2] = 0
        candidates = []
        if abs(line[1]) > CORNER_DET_EPS:
            candidates.append(("left", 0.0, -(line[2]) / line[1]))
            candidates.append(("right", float(w - 1),
                               -(line[2] + line[0] * (w - 1)) / line[1]))
        if abs(line[0]) > CORNER_DET_EPS:
            candidates.append(("top", -(line[2]) / line[0], 0.0))
            candidates.append(("bottom",
                               -(line[2] + line[1] * (h - 1)) / line[0], float(h - 1)))
        if not candidates and abs(line[2]) < CORNER_DET_EPS:
            issues.append(IllConditionedCorner(
                f"coincident inverse depths for pair {(a, b)}"))
            continue
        for edge, u, v in candidates:
            if edge in ("left", "right"):
                v = float(v)
                if not 0 <= v <= h - 1:
                    continue
            else:
                u = float(u)
                if not 0 <= u <= w - 1:
                    continue
            inv = _shared_inverse_depth(raw, (a, b), u, v)
            if not inv > CORNER_DET_EPS:
                issues.append(IllConditionedCorner(
                    f"edge corner of {(a, b)} at non-positive depth"))
                continue
            near = any(
                je == edge and {a, b} == jl
                and math.hypot(u - ju, v - jv) <= junction_radius
                for je, ju, jv, jl in edge_j)
            if near:
                corners.append(Corner(float(u), float(v), 1.0 / inv, (a, b), edge))

    corners.sort(key=_clockwise_key(w, h))
    return tuple(corners), tuple(issues)


def _clockwise_key(width: int, height: int):
    cu, cv = (width - 1) / 2.0, (height - 1) / 2.0

    def key(c: Corner):
        # v points down in image coordinates, so increasing atan2 angle
        # sweeps clockwise on screen
        return (math.atan2(c.v - cv, c.u - cu), c.u, c.v, c.z)

    return key


def surface_boundaries(corners) -> dict:
    """Straight boundary polylines per adjacent surface pair.

    Each pair's corners are ordered along the boundary line; pairs seen
    at fewer than two corners are omitted.
    """
    by_pair: dict[tuple[int, int], list[Corner]] = {}
    for c in corners:
        ids = sorted(c.surfaces)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                by_pair.setdefault((a, b), []).append(c)
    out = {}
    for pair, pts in by_pair.items():
        if len(pts) < 2:
            continue
        arr = np.array([[c.u, c.v] for c in pts])
        direction = arr.max(axis=0) - arr.min(axis=0)
        t = arr @ direction
        out[pair] = arr[np.argsort(t, kind="stable")]
    return out


def layout_point_cloud(result: LayoutResult, cam: CameraIntrinsics):
    """Backproject the stitched depth; returns (points (N, 3), labels (N,))."""
    points = backproject(result.depth, cam)
    labels = result.seg.labels[result.depth.mask]
    return points, labels


def corners_to_3d(corners, cam: CameraIntrinsics) -> np.ndarray:
    """(u, v, Z) corners to camera-frame (X, Y, Z)."""
    out = np.zeros((len(corners), 3))
    for i, c in enumerate(corners):
        out[i] = ((c.u - cam.u0) * c.z / cam.fx,
                  (c.v - cam.v0) * c.z / cam.fy,
                  c.z)
    return out


def full_pipeline(pm: ParamMap, *, cam: Optional[CameraIntrinsics] = None,
                  bandwidth: float = 0.3, min_fraction: float = 0.01,
                  seed: int = 0) -> LayoutResult:
    """ParamMap to layout: cluster, stitch, resolve layers, extract corners."""
    clusters = cluster_param_map(pm, bandwidth, min_fraction, seed=seed)
    instances = tuple(clusters.param_list())
    seg = resolve_layers(instances, clusters.clustered_seg, pm.width, pm.height)
    depth = restitch_by_labels(instances, seg)
    corners, issues = extract_corners(instances, seg)
    corners_3d = corners_to_3d(corners, cam) if cam is not None else None
    return LayoutResult(
        seg=seg,
        depth=depth,
        instances=instances,
        corners_2d=corners,
        corners_3d=corners_3d,
        boundaries=surface_boundaries(corners),
        corner_issues=issues,
        clusters=clusters,
    )
