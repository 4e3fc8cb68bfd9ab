"""Synthetic rooms with exact layout ground truth.

Cuboid rooms are boxes around the camera; their visible layout equals
the nearest surface per pixel, so segmentation, depth, and corners all
follow analytically from the plane set.  Non-cuboid rooms are prisms
over a polygon footprint, where the nearest-surface rule breaks down and
the stored segmentation comes from exact ray-cast visibility instead.

Every generator is deterministic per seed and returns a SceneSpec that
downstream tests treat as the oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidFootprint
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    ParamMap,
    PlaneEq3D,
    SegmentationMap,
    SurfaceParams,
    pixel_grid,
    plane_to_surface,
    polygon_is_simple,
    segments_properly_intersect,
)
from .layout import Corner, _clockwise_key, _edge_junctions, _interior_junctions

FLOOR, CEILING, WALL = "floor", "ceiling", "wall"
CORNER_MATCH_TOL = 1e-9


@dataclass(frozen=True)
class SceneSurface:
    label: int
    plane: PlaneEq3D
    semantic: str
    # walls of prism rooms carry their footprint edge so visibility can be
    # re-rendered even when two walls share one plane
    edge: Optional[tuple[tuple[float, float], tuple[float, float]]] = None


@dataclass(frozen=True)
class SceneSpec:
    """Ground-truth description of one synthetic room."""

    cam: CameraIntrinsics
    surfaces: tuple[SceneSurface, ...]
    layout_type: str  # "cuboid" | "non-cuboid"
    gt_corners_2d: tuple[Corner, ...]
    noise_sigma: float = 0.0
    clutter: float = 0.0
    # prism geometry, needed to re-render exact visibility (non-cuboid only)
    footprint: Optional[tuple[tuple[float, float], ...]] = None
    floor_y: Optional[float] = None
    ceil_y: Optional[float] = None
    seed: int = 0

    def instance_params(self) -> list[SurfaceParams]:
        return [plane_to_surface(s.plane, self.cam) for s in self.surfaces]


@dataclass(frozen=True)
class RenderedScene:
    depth: DepthMap           # layout depth (planes only)
    seg: SegmentationMap
    params: ParamMap
    original_depth: DepthMap  # layout depth + clutter occluders + noise
    clutter_mask: np.ndarray


# ----------------------------------------------------------------------
# cuboid rooms
# ----------------------------------------------------------------------

def _rot_x(deg: float) -> np.ndarray:
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _box_planes(front, back, left, right, floor, ceil, yaw_deg, tilt_deg):
    """Six inward-facing planes of a box around the camera."""
    yaw = math.radians(yaw_deg)
    planes = []
    semantics = []
    # outward wall directions at yaw + k*90deg; distance to each wall
    for k, dist in enumerate((front, right, back, left)):
        ang = yaw + k * math.pi / 2.0
        w = np.array([math.sin(ang), 0.0, math.cos(ang)])
        planes.append((-w, dist))
        semantics.append(WALL)
    planes.append((np.array([0.0, -1.0, 0.0]), floor))   # floor below camera
    semantics.append(FLOOR)
    planes.append((np.array([0.0, 1.0, 0.0]), ceil))     # ceiling above
    semantics.append(CEILING)

    rot = _rot_x(tilt_deg)
    out = []
    for (n, d), sem in zip(planes, semantics):
        n = rot @ n
        out.append((PlaneEq3D(float(n[0]), float(n[1]), float(n[2]), float(d)), sem))
    return out


def _argmax_segmentation(params_list, width, height):
    uu, vv = pixel_grid(width, height)
    raw = np.array([[sp.p * sp.s, sp.q * sp.s, sp.r * sp.s] for sp in params_list])
    inv = (raw[:, 0, None, None] * uu[None] + raw[:, 1, None, None] * vv[None]
           + raw[:, 2, None, None])
    best = np.argmax(inv, axis=0)
    best_inv = np.take_along_axis(inv, best[None], axis=0)[0]
    return best, best_inv


def _corners_min_depth(params_list, width, height):
    """Analytic layout corners of a nearest-surface (cuboid) arrangement.

    Candidate points come from pairwise inverse-depth equality lines; a
    candidate survives if it lies inside the raster, in front of the
    camera, and its surfaces are jointly the nearest there.
    """
    raw = np.array([[sp.p * sp.s, sp.q * sp.s, sp.r * sp.s] for sp in params_list])
    n = len(params_list)

    def inv_all(u, v):
        return raw[:, 0] * u + raw[:, 1] * v + raw[:, 2]

    def is_front_and_nearest(surfs, u, v):
        vals = inv_all(u, v)
        shared = float(np.mean(vals[list(surfs)]))
        tol = CORNER_MATCH_TOL * max(1.0, abs(vals.max()))
        return (shared > tol and shared >= vals.max() - tol
                and np.ptp(vals[list(surfs)]) <= tol), shared

    interior: list[Corner] = []
    for a in range(n):
        for b in range(a + 1, n):
            for c in range(b + 1, n):
                lab = raw[a] - raw[b]
                lac = raw[a] - raw[c]
                det = lab[0] * lac[1] - lab[1] * lac[0]
                if abs(det) < 1e-12:
                    continue
                u = (-lab[2] * lac[1] + lac[2] * lab[1]) / det
                v = (-lac[2] * lab[0] + lab[2] * lac[0]) / det
                if not (0 <= u <= width - 1 and 0 <= v <= height - 1):
                    continue
                ok, shared = is_front_and_nearest((a, b, c), u, v)
                if ok:
                    interior.append(Corner(float(u), float(v), 1.0 / shared, (a, b, c)))

    boundary: list[Corner] = []
    edges_uv = [("left", 0.0, None), ("right", float(width - 1), None),
                ("top", None, 0.0), ("bottom", None, float(height - 1))]
    for a in range(n):
        for b in range(a + 1, n):
            line = raw[a] - raw[b]
            for edge, u_fix, v_fix in edges_uv:
                if u_fix is not None:
                    if abs(line[1]) < 1e-12:
                        continue
                    u = u_fix
                    v = -(line[2] + line[0] * u) / line[1]
                    if not 0 <= v <= height - 1:
                        continue
                else:
                    if abs(line[0]) < 1e-12:
                        continue
                    v = v_fix
                    u = -(line[2] + line[1] * v) / line[0]
                    if not 0 <= u <= width - 1:
                        continue
                if any(math.hypot(u - c.u, v - c.v) < 1e-6 for c in interior):
                    continue  # triple corner sitting exactly on the border
                ok, shared = is_front_and_nearest((a, b), u, v)
                if ok:
                    boundary.append(Corner(float(u), float(v), 1.0 / shared,
                                           (a, b), edge))

    corners = interior + boundary
    corners.sort(key=_clockwise_key(width, height))
    return tuple(corners)


def cuboid_scene(cam: CameraIntrinsics, *, front, back, left, right,
                 floor, ceil, yaw_deg=0.0, tilt_deg=0.0,
                 noise_sigma=0.0, clutter=0.0, seed=0) -> SceneSpec:
    """Box room from explicit camera-to-surface distances (all positive)."""
    for name, val in (("front", front), ("back", back), ("left", left),
                      ("right", right), ("floor", floor), ("ceil", ceil)):
        if not val > 0:
            raise ValueError(f"distance {name} must be positive, got {val}")
    candidates = _box_planes(front, back, left, right, floor, ceil,
                             yaw_deg, tilt_deg)
    params_all = [plane_to_surface(p, cam) for p, _ in candidates]
    seg_all, best_inv = _argmax_segmentation(params_all, cam.width, cam.height)
    if not (best_inv > 0).all():
        raise ValueError("camera is not inside the box")

    visible = sorted(int(x) for x in np.unique(seg_all))
    # stable ordering: floor, ceiling, then walls front/right/back/left
    prio = {FLOOR: 0, CEILING: 1, WALL: 2}
    visible.sort(key=lambda i: (prio[candidates[i][1]], i))
    surfaces = tuple(
        SceneSurface(new, candidates[old][0], candidates[old][1])
        for new, old in enumerate(visible))
    params = [params_all[old] for old in visible]
    corners = _corners_min_depth(params, cam.width, cam.height)
    return SceneSpec(cam=cam, surfaces=surfaces, layout_type="cuboid",
                     gt_corners_2d=corners, noise_sigma=noise_sigma,
                     clutter=clutter, seed=seed)


def _corners_raster_detectable(spec: SceneSpec, seg: SegmentationMap) -> bool:
    """True if every ground-truth corner shows up as a label junction."""
    interior = _interior_junctions(seg.labels)
    edge = _edge_junctions(seg.labels)
    for c in spec.gt_corners_2d:
        if c.interior:
            ok = any(set(c.surfaces) <= jl
                     and math.hypot(c.u - ju, c.v - jv) <= 2.0
                     for ju, jv, jl in interior)
        else:
            ok = any(je == c.edge and set(c.surfaces) == jl
                     and math.hypot(c.u - ju, c.v - jv) <= 2.0
                     for je, ju, jv, jl in edge)
        if not ok:
            return False
    return True


def generate_cuboid(seed: int, cam: CameraIntrinsics, *, tilt_deg=0.0,
                    noise_sigma=0.0, clutter=0.0, min_coverage=0.02,
                    min_separation=0.4, max_attempts=500) -> SceneSpec:
    """Random box room around the camera, deterministic per seed.

    The six camera-to-surface distances are chosen so the surfaces'
    scale factors land on staggered targets: the (p, q, r, s) space
    compresses slope differences at small rasters, and surfaces with
    near-equal scale would be indistinguishable to clustering.  Rooms
    are resampled until every visible surface covers min_coverage of
    the raster, instance parameters are pairwise min_separation apart,
    and every analytic corner is detectable as a label junction at the
    camera's raster resolution.
    """
    rng = np.random.default_rng(seed)
    n_pix = cam.width * cam.height
    for _ in range(max_attempts):
        yaw = rng.uniform(-25.0, 25.0)
        probe = _box_planes(1, 1, 1, 1, 1, 1, yaw, tilt_deg)
        kappa = np.array([plane_to_surface(p, cam).s for p, _ in probe])
        targets = 0.3 + 0.45 * np.arange(6) + rng.uniform(-0.05, 0.05, 6)
        targets = targets[rng.permutation(6)]
        dists = np.clip(kappa / targets, 0.35, 6.0)
        try:
            spec = cuboid_scene(
                cam, front=dists[0], right=dists[1], back=dists[2],
                left=dists[3], floor=dists[4], ceil=dists[5],
                yaw_deg=yaw, tilt_deg=tilt_deg,
                noise_sigma=noise_sigma, clutter=clutter, seed=seed)
        except ValueError:
            continue
        if len(spec.surfaces) < 2:
            continue
        params = spec.instance_params()
        seg, _ = _argmax_segmentation(params, cam.width, cam.height)
        counts = np.bincount(seg.ravel(), minlength=len(params))
        if counts.min() < min_coverage * n_pix:
            continue
        vecs = np.array([p.as_array() for p in params])
        d = np.linalg.norm(vecs[:, None, :] - vecs[None, :, :], axis=-1)
        if (d + np.eye(len(params)) * 1e9).min() < min_separation:
            continue
        if not _corners_raster_detectable(spec, SegmentationMap(seg)):
            continue
        return spec
    raise RuntimeError(f"no acceptable cuboid scene within {max_attempts} attempts")


# ----------------------------------------------------------------------
# prism (non-cuboid) rooms
# ----------------------------------------------------------------------

def _signed_area(poly: np.ndarray) -> float:
    x, z = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z))


def _validate_footprint(poly: np.ndarray):
    if len(poly) < 3:
        raise InvalidFootprint("footprint needs at least 3 vertices")
    if not polygon_is_simple(poly):
        raise InvalidFootprint("footprint edges intersect")


def _points_in_polygon(px, pz, poly: np.ndarray):
    inside = np.zeros(np.shape(px), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, z1 = poly[i]
        x2, z2 = poly[(i + 1) % n]
        cond = (z1 > pz) != (z2 > pz)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (pz - z1) * (x2 - x1) / (z2 - z1)
        inside ^= cond & (px < xint)
    return inside


def _vertex_plan_visible(poly: np.ndarray, j: int) -> bool:
    """Is vertex j of the footprint visible from the camera at the origin?"""
    origin = np.zeros(2)
    target = poly[j]
    n = len(poly)
    for i in range(n):
        if i == j or (i + 1) % n == j:
            continue  # edges incident to the vertex never block it
        if segments_properly_intersect(origin, target, poly[i], poly[(i + 1) % n]):
            return False
    return True


def _cast_prism(poly: np.ndarray, floor: float, ceil: float,
                cam: CameraIntrinsics, wall_planes):
    """Exact visibility of a prism room: (winner index, hit depth) rasters.

    Surface indexing matches the candidate list: 0 floor, 1 ceiling,
    then one wall per footprint edge.
    """
    uu, vv = pixel_grid(cam.width, cam.height)
    dx = (uu - cam.u0) / cam.fx
    dy = (vv - cam.v0) / cam.fy
    n_edges = len(poly)
    t_all = np.full((2 + n_edges, cam.height, cam.width), np.inf)

    with np.errstate(divide="ignore", invalid="ignore"):
        t = floor / dy
        hit = (dy > 0) & _points_in_polygon(t * dx, t * 1.0, poly)
        t_all[0] = np.where(hit, t, np.inf)
        t = -ceil / dy
        hit = (dy < 0) & _points_in_polygon(t * dx, t * 1.0, poly)
        t_all[1] = np.where(hit, t, np.inf)

        for i in range(n_edges):
            nx, nz, off = wall_planes[i]
            denom = nx * dx + nz
            t = off / denom
            qx = t * dx
            qz = t
            ax, az = poly[i]
            bx, bz = poly[(i + 1) % n_edges]
            ex, ez = bx - ax, bz - az
            ee = ex * ex + ez * ez
            sparam = ((qx - ax) * ex + (qz - az) * ez) / ee
            y = t * dy
            hit = ((t > 0) & (sparam >= -1e-12) & (sparam <= 1 + 1e-12)
                   & (y >= -ceil - 1e-9) & (y <= floor + 1e-9))
            t_all[2 + i] = np.where(hit, t, np.inf)

    winner = np.argmin(t_all, axis=0)
    depth = np.take_along_axis(t_all, winner[None], axis=0)[0]
    return winner, depth


def scene_from_footprint(cam: CameraIntrinsics, footprint, floor: float,
                         ceil: float, *, noise_sigma=0.0, clutter=0.0,
                         seed=0) -> SceneSpec:
    """Prism room over a simple polygon footprint, camera at the plan origin.

    The footprint lives in plan coordinates (x, z); it is validated for
    simplicity, oriented counter-clockwise, and must strictly contain
    the origin.  The stored segmentation semantics follow exact
    geometric visibility, not the nearest-surface rule.
    """
    poly = np.asarray([(float(x), float(z)) for x, z in footprint])
    _validate_footprint(poly)
    if _signed_area(poly) < 0:
        poly = poly[::-1].copy()
    if not bool(_points_in_polygon(np.array(0.0), np.array(0.0), poly)):
        raise ValueError("camera (plan origin) must lie inside the footprint")
    if not (floor > 0 and ceil > 0):
        raise ValueError("floor and ceiling distances must be positive")

    n_edges = len(poly)
    wall_planes = []
    for i in range(n_edges):
        a, b = poly[i], poly[(i + 1) % n_edges]
        e = b - a
        nvec = np.array([-e[1], e[0]])
        nvec = nvec / np.linalg.norm(nvec)
        off = float(nvec @ a)
        if abs(off) < 1e-9:
            raise ValueError(f"camera lies on the plane of wall {i}")
        wall_planes.append((float(nvec[0]), float(nvec[1]), off))

    winner, depth = _cast_prism(poly, floor, ceil, cam, wall_planes)
    if not np.isfinite(depth).all():
        raise ValueError("prism room is not watertight around the camera")

    visible = sorted(int(x) for x in np.unique(winner))
    surfaces = []
    relabel = {}
    for new, old in enumerate(visible):
        relabel[old] = new
        edge = None
        if old == 0:
            plane, sem = PlaneEq3D(0.0, -1.0, 0.0, float(floor)), FLOOR
        elif old == 1:
            plane, sem = PlaneEq3D(0.0, 1.0, 0.0, float(ceil)), CEILING
        else:
            nx, nz, off = wall_planes[old - 2]
            plane, sem = PlaneEq3D(nx, 0.0, nz, -off), WALL
            a, b = poly[old - 2], poly[(old - 1) % n_edges]
            edge = ((float(a[0]), float(a[1])), (float(b[0]), float(b[1])))
        surfaces.append(SceneSurface(new, plane, sem, edge))

    corners = _corners_prism(cam, poly, floor, ceil, relabel, wall_planes)
    return SceneSpec(cam=cam, surfaces=tuple(surfaces), layout_type="non-cuboid",
                     gt_corners_2d=corners, noise_sigma=noise_sigma,
                     clutter=clutter,
                     footprint=tuple((float(x), float(z)) for x, z in poly),
                     floor_y=float(floor), ceil_y=float(ceil), seed=seed)


def _corners_prism(cam, poly, floor, ceil, relabel, wall_planes):
    """Visible wall-wall-floor / wall-wall-ceiling junctions of the prism."""
    n_edges = len(poly)
    corners = []
    for j in range(n_edges):
        x, z = poly[j]
        if z <= 1e-6 or not _vertex_plan_visible(poly, j):
            continue
        wall_a = 2 + (j - 1) % n_edges
        wall_b = 2 + j
        if wall_a not in relabel or wall_b not in relabel:
            continue
        u = cam.fx * x / z + cam.u0
        for horiz_old, y in ((0, floor), (1, -ceil)):
            if horiz_old not in relabel:
                continue
            v = cam.fy * y / z + cam.v0
            if 0 <= u <= cam.width - 1 and 0 <= v <= cam.height - 1:
                surfs = tuple(sorted((relabel[wall_a], relabel[wall_b],
                                      relabel[horiz_old])))
                corners.append(Corner(float(u), float(v), float(z), surfs))
    corners.sort(key=_clockwise_key(cam.width, cam.height))
    return tuple(corners)


def _step_footprint(rng, n_walls: int):
    """Rectangle with inward steps (and one chamfer when n is odd)."""
    left = rng.uniform(1.5, 3.0)
    right = rng.uniform(1.5, 3.0)
    back = rng.uniform(1.0, 2.5)
    n_steps = (n_walls - 4) // 2
    chamfer = (n_walls - 4) % 2 == 1
    # pairwise-distinct front depths: coplanar front segments would give
    # duplicate wall planes
    levels = np.linspace(1.8, 5.0, n_steps + 1)
    levels += rng.uniform(-0.3, 0.3, size=levels.shape) * (3.2 / max(1, n_steps))
    rng.shuffle(levels)

    pts = [(-left, -back), (right, -back)]
    # front boundary walked right to left, stepping between depth levels
    xs = np.sort(rng.uniform(-left + 0.6, right - 0.6, size=n_steps))[::-1]
    pts.append((right, float(levels[0])))
    for i, x in enumerate(xs):
        pts.append((float(x), float(levels[i])))
        pts.append((float(x), float(levels[i + 1])))
    pts.append((-left, float(levels[-1])))
    if chamfer:
        # replace the back-left corner with a short diagonal edge
        cut = rng.uniform(0.3, 0.7)
        pts[0] = (-left + cut, -back)
        pts.append((-left, -back + cut))
    return pts


def _arrowhead_pentagon(rng):
    """Quad with one reflex vertex pushed toward the camera (plan view)."""
    left = rng.uniform(1.5, 3.0)
    right = rng.uniform(1.5, 3.0)
    back = rng.uniform(1.0, 2.5)
    far = rng.uniform(3.5, 5.0)
    apex_x = rng.uniform(-0.4, 0.4) * min(left, right)
    apex_z = rng.uniform(1.5, far - 1.2)
    return [(-left, -back), (right, -back), (right, far),
            (apex_x, apex_z), (-left, far)]


def _convex_footprint(rng, n_walls: int):
    for _ in range(200):
        ang = (np.arange(n_walls) + rng.uniform(0.15, 0.85, n_walls)) \
            * 2 * math.pi / n_walls
        rad = rng.uniform(2.0, 5.0, n_walls)
        pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        e = np.roll(pts, -1, axis=0) - pts
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] \
            - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if (cross > 1e-6).all():
            return [tuple(p) for p in pts]
    raise RuntimeError("failed to sample a convex footprint")


def occlusion_step_scene(seed: int, cam: CameraIntrinsics, *,
                         noise_sigma=0.0, clutter=0.0) -> SceneSpec:
    """Stepped room where a nearer wall plane crosses an occluded wall.

    The camera sits on the deep side of a single step in the front wall,
    so the near segment's plane extension is in front of the far wall
    over the far wall's visible pixels: the nearest-surface rule
    provably mislabels there while layer-wise resolution against the
    true visibility segmentation recovers it exactly.  Deterministic per
    seed.
    """
    rng = np.random.default_rng(seed)
    left = rng.uniform(1.6, 2.6)
    right = rng.uniform(1.6, 2.6)
    back = rng.uniform(1.0, 2.0)
    near = rng.uniform(2.2, 3.0)
    far = near + rng.uniform(1.2, 2.2)
    xs = rng.uniform(0.4, min(1.3, right - 0.5))
    pts = [(-left, -back), (right, -back), (right, near),
           (xs, near), (xs, far), (-left, far)]
    return scene_from_footprint(cam, pts, rng.uniform(1.0, 1.4),
                                rng.uniform(0.8, 1.2),
                                noise_sigma=noise_sigma, clutter=clutter,
                                seed=seed)


def generate_noncuboid(seed: int, cam: CameraIntrinsics, n_walls: int, *,
                       noise_sigma=0.0, clutter=0.0,
                       max_attempts=200) -> SceneSpec:
    """Random prism room, deterministic per seed.

    n_walls <= 4 gives convex footprints (nearest-surface rule exact);
    n_walls == 5 gives a quad with one reflex vertex; n_walls >= 6 gives
    stepped rectangles, the classic arrangement where a nearer wall's
    plane extends across an occluded one.
    """
    if n_walls < 3:
        raise ValueError("a prism room needs at least 3 walls")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        if n_walls <= 4:
            pts = _convex_footprint(rng, n_walls)
        elif n_walls == 5:
            pts = _arrowhead_pentagon(rng)
        else:
            pts = _step_footprint(rng, n_walls)
        try:
            spec = scene_from_footprint(
                cam, pts, rng.uniform(1.0, 1.8), rng.uniform(0.8, 1.6),
                noise_sigma=noise_sigma, clutter=clutter, seed=seed)
        except (ValueError, InvalidFootprint):
            continue
        if len(spec.surfaces) >= 2:
            return spec
    raise RuntimeError(f"no acceptable prism scene within {max_attempts} attempts")


# ----------------------------------------------------------------------
# rendering
# ----------------------------------------------------------------------

def render_scene(spec: SceneSpec) -> RenderedScene:
    """Rasterize a scene: layout depth, segmentation, parameter map, and
    the "original depth" variant with clutter occluders and sensor noise.
    """
    cam = spec.cam
    params = spec.instance_params()
    if spec.layout_type == "cuboid":
        seg, best_inv = _argmax_segmentation(params, cam.width, cam.height)
        if not (best_inv > 0).all():
            raise ValueError("cuboid scene does not cover the raster")
    else:
        seg, _ = _cast_stored(spec, np.asarray(spec.footprint))

    # depth/params from the winning surface's exact plane parameters
    uu, vv = pixel_grid(cam.width, cam.height)
    raw = np.array([[sp.p * sp.s, sp.q * sp.s, sp.r * sp.s] for sp in params])
    vals = np.array([sp.as_array() for sp in params])
    inv = np.take_along_axis(
        raw[:, 0, None, None] * uu[None] + raw[:, 1, None, None] * vv[None]
        + raw[:, 2, None, None],
        seg[None].astype(np.intp), axis=0)[0]
    if not (inv > 0).all():
        raise ValueError("visible surface with non-positive inverse depth")
    depth_values = 1.0 / inv
    mask = np.ones_like(depth_values, dtype=bool)
    pm = ParamMap(vals[seg], mask)
    depth = DepthMap(depth_values, mask)

    original, clutter_mask = _original_depth(spec, depth_values)
    return RenderedScene(depth=depth, seg=SegmentationMap(seg.astype(np.int32)),
                         params=pm, original_depth=original,
                         clutter_mask=clutter_mask)


def _cast_stored(spec: SceneSpec, poly: np.ndarray):
    """Ray-cast visibility over the stored (visible) surfaces only."""
    cam = spec.cam
    uu, vv = pixel_grid(cam.width, cam.height)
    dx = (uu - cam.u0) / cam.fx
    dy = (vv - cam.v0) / cam.fy
    t_all = np.full((len(spec.surfaces), cam.height, cam.width), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for i, s in enumerate(spec.surfaces):
            if s.semantic == FLOOR:
                t = spec.floor_y / dy
                hit = (dy > 0) & _points_in_polygon(t * dx, t * 1.0, poly)
            elif s.semantic == CEILING:
                t = -spec.ceil_y / dy
                hit = (dy < 0) & _points_in_polygon(t * dx, t * 1.0, poly)
            else:
                nx, nz, off = s.plane.a, s.plane.c, -s.plane.d
                t = off / (nx * dx + nz)
                qx, qz = t * dx, t
                (ax, az), (bx, bz) = s.edge
                ex, ez = bx - ax, bz - az
                sparam = ((qx - ax) * ex + (qz - az) * ez) / (ex * ex + ez * ez)
                y = t * dy
                hit = ((t > 0) & (sparam >= -1e-12) & (sparam <= 1 + 1e-12)
                       & (y >= -spec.ceil_y - 1e-9) & (y <= spec.floor_y + 1e-9))
            t_all[i] = np.where(hit & (t > 0), t, np.inf)
    winner = np.argmin(t_all, axis=0)
    if not np.isfinite(np.take_along_axis(t_all, winner[None], axis=0)).all():
        raise ValueError("stored surfaces do not cover the raster")
    return winner, t_all


def _original_depth(spec: SceneSpec, layout_depth: np.ndarray):
    """Layout depth plus fronto-parallel clutter rectangles and noise."""
    h, w = layout_depth.shape
    values = layout_depth.copy()
    clutter_mask = np.zeros((h, w), dtype=bool)
    rng = np.random.default_rng([spec.seed & 0x7FFFFFFF, 0xC1])

    if spec.clutter > 0:
        target = spec.clutter * h * w
        for _ in range(100):
            if clutter_mask.sum() >= target:
                break
            cw = int(rng.integers(max(2, w // 10), max(3, w // 4)))
            ch = int(rng.integers(max(2, h // 10), max(3, h // 4)))
            c0 = int(rng.integers(0, w - cw))
            r0 = int(rng.integers(0, h - ch))
            window = values[r0:r0 + ch, c0:c0 + cw]
            # strictly nearer than everything it covers
            z = float(window.min() * rng.uniform(0.35, 0.8))
            window[:] = z
            clutter_mask[r0:r0 + ch, c0:c0 + cw] = True

    if spec.noise_sigma > 0:
        values = values + rng.normal(0.0, spec.noise_sigma, size=values.shape)
        values = np.maximum(values, 1e-3)

    return DepthMap(values, np.ones_like(values, dtype=bool)), clutter_mask
