"""Dataset records and raster file formats.

A record is a directory holding the fields of one annotated scene:
color image (optional), layout depth, layout segmentation, original
depth (with objects), region annotations, camera intrinsics, per-surface
parameters, corner list, and optional surface normals.

Formats: depth rasters are stored both as lossless float64 .npy (NaN
marks invalid pixels) and as 16-bit PNG in millimeters (the only lossy
path, for interoperability; depths beyond 65.535 m clip there);
segmentations as 8-bit PNG (sentinel maps to 255); parameter maps as
float64 .npy; metadata as sorted JSON.  All writes go through a temp
file and rename, and every numeric field round-trips bit-exactly
through write + read.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from PIL import Image

from .errors import CorruptRaster, IntrinsicsMismatch, MissingField
from .fit import RegionAnnotation
from .geometry import (
    SENTINEL,
    CameraIntrinsics,
    DepthMap,
    ParamMap,
    SegmentationMap,
)
from .layout import Corner
from .synth import SceneSpec, RenderedScene

SEG_PNG_SENTINEL = 255
DEPTH_PNG_SCALE = 1000.0  # millimeters

# flat-shading palette for label colorings and PLY export
LABEL_PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
], dtype=np.uint8)


@dataclass(frozen=True)
class SurfaceInfo:
    label: int
    semantic: str
    plane: tuple  # (a, b, c, d)
    params: tuple  # (p, q, r, s)


@dataclass(frozen=True)
class DatasetRecord:
    cam: CameraIntrinsics
    layout_depth: DepthMap
    seg: SegmentationMap
    original_depth: DepthMap
    params: ParamMap
    surfaces: tuple[SurfaceInfo, ...]
    corners: tuple[Corner, ...]
    layout_type: str = "cuboid"
    seed: int = 0
    noise_sigma: float = 0.0
    clutter: float = 0.0
    annotations: tuple[RegionAnnotation, ...] = ()
    normals: Optional[np.ndarray] = None     # (H, W, 3) float64
    color: Optional[np.ndarray] = None       # (H, W, 3) uint8


def record_from_scene(spec: SceneSpec, rendered: RenderedScene) -> DatasetRecord:
    """Package a synthetic scene as a dataset record.

    The color image is a flat shading of the layout labels (the engine
    never consumes color) and the normals raster holds each pixel's
    surface normal.
    """
    surfaces = []
    params = spec.instance_params()
    for s, sp in zip(spec.surfaces, params):
        surfaces.append(SurfaceInfo(
            label=s.label, semantic=s.semantic,
            plane=(s.plane.a, s.plane.b, s.plane.c, s.plane.d),
            params=(sp.p, sp.q, sp.r, sp.s)))
    normals = np.zeros(rendered.seg.labels.shape + (3,))
    for s in spec.surfaces:
        normals[rendered.seg.labels == s.label] = (s.plane.a, s.plane.b,
                                                   s.plane.c)
    color = LABEL_PALETTE[rendered.seg.labels % len(LABEL_PALETTE)]
    # polygon annotations of the visible regions, for the fitting path:
    # a rectangle inscribed in each region
    annotations = []
    for s in spec.surfaces:
        rect = _inscribed_rectangle(rendered.seg.labels == s.label)
        if rect is not None:
            annotations.append(RegionAnnotation(s.label, rect, s.semantic))
    return DatasetRecord(
        cam=spec.cam, layout_depth=rendered.depth, seg=rendered.seg,
        original_depth=rendered.original_depth, params=rendered.params,
        surfaces=tuple(surfaces), corners=spec.gt_corners_2d,
        layout_type=spec.layout_type, seed=spec.seed,
        noise_sigma=spec.noise_sigma, clutter=spec.clutter,
        annotations=tuple(annotations), normals=normals, color=color)


def _inscribed_rectangle(mask: np.ndarray):
    from scipy import ndimage

    if mask.sum() < 9:
        return None
    dist = ndimage.distance_transform_cdt(mask, metric="chessboard")
    r, c = np.unravel_index(np.argmax(dist), dist.shape)
    h = int(dist[r, c]) - 1
    if h < 1:
        return None
    return ((float(c - h) - 0.2, float(r - h) - 0.2),
            (float(c + h) + 0.2, float(r - h) - 0.2),
            (float(c + h) + 0.2, float(r + h) + 0.2),
            (float(c - h) - 0.2, float(r + h) + 0.2))


# ----------------------------------------------------------------------
# atomic low-level writers
# ----------------------------------------------------------------------

def _atomic_write(path: str, write_fn):
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            write_fn(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_npy(path: str, arr: np.ndarray):
    _atomic_write(path, lambda f: np.save(f, arr))


def save_png(path: str, img: Image.Image):
    _atomic_write(path, lambda f: img.save(f, format="PNG"))


def depth_to_png16(depth: DepthMap) -> Image.Image:
    mm = np.zeros(depth.values.shape, dtype=np.uint16)
    vals = np.clip(np.round(depth.values[depth.mask] * DEPTH_PNG_SCALE),
                   0, 65535)
    mm[depth.mask] = vals.astype(np.uint16)
    return Image.fromarray(mm)  # uint16 -> mode I;16


def png16_to_depth(path: str) -> DepthMap:
    arr = np.asarray(_open_image(path), dtype=np.float64)
    mask = arr > 0
    values = np.where(mask, arr / DEPTH_PNG_SCALE, np.nan)
    return DepthMap(values, mask)


def _open_image(path: str) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except Exception as exc:
        raise CorruptRaster(f"cannot decode {path}: {exc}") from exc


def depth_to_npy(depth: DepthMap) -> np.ndarray:
    return np.where(depth.mask, depth.values, np.nan)


def npy_to_depth(arr: np.ndarray) -> DepthMap:
    mask = np.isfinite(arr)
    return DepthMap(np.where(mask, arr, np.nan), mask)


def seg_to_png(seg: SegmentationMap) -> Image.Image:
    if seg.labels.max(initial=0) >= SEG_PNG_SENTINEL:
        raise ValueError("too many labels for 8-bit segmentation storage")
    arr = np.where(seg.labels == SENTINEL, SEG_PNG_SENTINEL,
                   seg.labels).astype(np.uint8)
    return Image.fromarray(arr, mode="L")


def png_to_seg(path: str) -> SegmentationMap:
    arr = np.asarray(_open_image(path), dtype=np.int32)
    return SegmentationMap(np.where(arr == SEG_PNG_SENTINEL, SENTINEL, arr))


def params_to_npy(pm: ParamMap) -> np.ndarray:
    out = pm.values.copy()
    out[~pm.mask] = np.nan
    return out


def npy_to_params(arr: np.ndarray) -> ParamMap:
    mask = np.isfinite(arr).all(axis=-1)
    out = arr.copy()
    out[~mask] = 0.0
    return ParamMap(out, mask)


# ----------------------------------------------------------------------
# records
# ----------------------------------------------------------------------

_F = {
    "meta": "meta.json",
    "layout_depth": "layout_depth.npy",
    "layout_depth_png": "layout_depth.png",
    "seg": "seg.png",
    "original_depth": "original_depth.npy",
    "original_depth_png": "original_depth.png",
    "params": "params.npy",
    "annotations": "annotations.json",
    "normals": "normals.npy",
    "color": "color.png",
}


def write_record(record: DatasetRecord, path: str):
    """Write a record directory; every numeric field is bit-exact on read."""
    os.makedirs(path, exist_ok=True)
    meta = {
        "intrinsics": {"fx": record.cam.fx, "fy": record.cam.fy,
                       "u0": record.cam.u0, "v0": record.cam.v0,
                       "width": record.cam.width, "height": record.cam.height},
        "layout_type": record.layout_type,
        "seed": record.seed,
        "noise_sigma": record.noise_sigma,
        "clutter": record.clutter,
        "surfaces": [{"label": s.label, "semantic": s.semantic,
                      "plane": list(s.plane), "params": list(s.params)}
                     for s in record.surfaces],
        "corners": [{"u": c.u, "v": c.v, "z": c.z,
                     "surfaces": list(c.surfaces), "edge": c.edge}
                    for c in record.corners],
    }
    _atomic_write(os.path.join(path, _F["meta"]),
                  lambda f: f.write(json.dumps(meta, sort_keys=True,
                                               indent=1).encode()))
    save_npy(os.path.join(path, _F["layout_depth"]),
             depth_to_npy(record.layout_depth))
    save_png(os.path.join(path, _F["layout_depth_png"]),
             depth_to_png16(record.layout_depth))
    save_png(os.path.join(path, _F["seg"]), seg_to_png(record.seg))
    save_npy(os.path.join(path, _F["original_depth"]),
             depth_to_npy(record.original_depth))
    save_png(os.path.join(path, _F["original_depth_png"]),
             depth_to_png16(record.original_depth))
    save_npy(os.path.join(path, _F["params"]), params_to_npy(record.params))
    ann = {"regions": [{"id": a.region_id, "semantic": a.semantic,
                        "polygon": [list(p) for p in a.polygon]}
                       for a in record.annotations]}
    _atomic_write(os.path.join(path, _F["annotations"]),
                  lambda f: f.write(json.dumps(ann, sort_keys=True,
                                               indent=1).encode()))
    if record.normals is not None:
        save_npy(os.path.join(path, _F["normals"]), record.normals)
    if record.color is not None:
        save_png(os.path.join(path, _F["color"]),
                 Image.fromarray(record.color, mode="RGB"))


def _require(path: str, field_name: str) -> str:
    if not os.path.exists(path):
        raise MissingField(field_name, path)
    return path


def read_record(path: str) -> DatasetRecord:
    """Read a record directory written by write_record.

    Depth comes from the lossless .npy; the 16-bit PNG variant is used
    only if the .npy is absent (quantized to millimeters).
    """
    with open(_require(os.path.join(path, _F["meta"]), "meta")) as f:
        meta = json.load(f)
    cam = CameraIntrinsics(**meta["intrinsics"])

    def load_depth(stem, field_name):
        npy = os.path.join(path, _F[stem])
        if os.path.exists(npy):
            return npy_to_depth(_load_npy(npy))
        return png16_to_depth(_require(os.path.join(path, _F[stem + "_png"]),
                                       field_name))

    layout_depth = load_depth("layout_depth", "layout_depth")
    original_depth = load_depth("original_depth", "original_depth")
    seg = png_to_seg(_require(os.path.join(path, _F["seg"]), "seg"))
    params = npy_to_params(
        _load_npy(_require(os.path.join(path, _F["params"]), "params")))

    for raster, name in ((layout_depth.values, "layout_depth"),
                         (original_depth.values, "original_depth"),
                         (seg.labels, "seg"), (params.values[..., 0], "params")):
        if raster.shape != (cam.height, cam.width):
            raise IntrinsicsMismatch(
                f"{name} is {raster.shape}, intrinsics declare "
                f"{(cam.height, cam.width)}")

    surfaces = tuple(
        SurfaceInfo(s["label"], s["semantic"], tuple(s["plane"]),
                    tuple(s["params"]))
        for s in meta["surfaces"])
    corners = tuple(
        Corner(c["u"], c["v"], c["z"], tuple(c["surfaces"]), c["edge"])
        for c in meta["corners"])

    annotations = ()
    ann_path = os.path.join(path, _F["annotations"])
    if os.path.exists(ann_path):
        with open(ann_path) as f:
            ann = json.load(f)
        annotations = tuple(
            RegionAnnotation(r["id"], tuple(tuple(p) for p in r["polygon"]),
                             r["semantic"])
            for r in ann["regions"])

    normals = None
    if os.path.exists(os.path.join(path, _F["normals"])):
        normals = _load_npy(os.path.join(path, _F["normals"]))
    color = None
    if os.path.exists(os.path.join(path, _F["color"])):
        color = np.asarray(_open_image(os.path.join(path, _F["color"])))

    return DatasetRecord(
        cam=cam, layout_depth=layout_depth, seg=seg,
        original_depth=original_depth, params=params, surfaces=surfaces,
        corners=corners, layout_type=meta["layout_type"], seed=meta["seed"],
        noise_sigma=meta["noise_sigma"], clutter=meta["clutter"],
        annotations=annotations, normals=normals, color=color)


def _load_npy(path: str) -> np.ndarray:
    try:
        return np.load(path)
    except Exception as exc:
        raise CorruptRaster(f"cannot decode {path}: {exc}") from exc


# ----------------------------------------------------------------------
# resampling
# ----------------------------------------------------------------------

def resample(raster, size, kind: Optional[str] = None):
    """Resize a raster to (width, height).

    Segmentations use nearest neighbor (labels are never invented);
    depth maps and parameter maps use mask-aware bilinear weights, and
    parameter channels are rescaled back to unit (p, q, r) afterwards.
    """
    width, height = size
    if width < 1 or height < 1:
        raise ValueError("target size must be positive")
    if isinstance(raster, SegmentationMap):
        if kind not in (None, "nearest"):
            raise ValueError("segmentation must use nearest resampling")
        return SegmentationMap(_nearest(raster.labels, width, height))
    if isinstance(raster, DepthMap):
        if kind == "nearest":
            vals = _nearest(np.where(raster.mask, raster.values, np.nan),
                            width, height)
            mask = np.isfinite(vals)
            return DepthMap(vals, mask)
        vals, mask = _bilinear(raster.values[..., None], raster.mask,
                               width, height)
        return DepthMap(np.where(mask, vals[..., 0], np.nan), mask)
    if isinstance(raster, ParamMap):
        if kind == "nearest":
            vals = _nearest(params_to_npy(raster), width, height)
            return npy_to_params(vals)
        vals, mask = _bilinear(raster.values, raster.mask, width, height)
        norm = np.linalg.norm(vals[..., :3], axis=-1)
        ok = mask & (norm > 1e-12) & (vals[..., 3] * norm > 0)
        out = np.zeros_like(vals)
        out[ok, :3] = vals[ok, :3] / norm[ok, None]
        out[ok, 3] = vals[ok, 3] * norm[ok]
        return ParamMap(out, ok)
    raise TypeError(f"cannot resample {type(raster).__name__}")


def _src_coords(n_dst: int, n_src: int) -> np.ndarray:
    return (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5


def _nearest(arr: np.ndarray, width: int, height: int) -> np.ndarray:
    su = np.clip(np.round(_src_coords(width, arr.shape[1])), 0,
                 arr.shape[1] - 1).astype(np.intp)
    sv = np.clip(np.round(_src_coords(height, arr.shape[0])), 0,
                 arr.shape[0] - 1).astype(np.intp)
    return arr[np.ix_(sv, su)]


def _bilinear(values: np.ndarray, mask: np.ndarray, width: int, height: int):
    src_h, src_w = mask.shape
    su = _src_coords(width, src_w)
    sv = _src_coords(height, src_h)
    u0 = np.clip(np.floor(su), 0, src_w - 1).astype(np.intp)
    v0 = np.clip(np.floor(sv), 0, src_h - 1).astype(np.intp)
    u1 = np.minimum(u0 + 1, src_w - 1)
    v1 = np.minimum(v0 + 1, src_h - 1)
    fu = np.clip(su - u0, 0.0, 1.0)
    fv = np.clip(sv - v0, 0.0, 1.0)

    acc = np.zeros((height, width, values.shape[-1]))
    wacc = np.zeros((height, width))
    vals = np.where(mask[..., None], values, 0.0)
    for vi, wv in ((v0, 1.0 - fv), (v1, fv)):
        for ui, wu in ((u0, 1.0 - fu), (u1, fu)):
            w = wv[:, None] * wu[None, :] * mask[np.ix_(vi, ui)]
            acc += w[..., None] * vals[np.ix_(vi, ui)]
            wacc += w
    ok = wacc > 1e-12
    acc[ok] /= wacc[ok][..., None]
    return acc, ok


# ----------------------------------------------------------------------
# PLY export
# ----------------------------------------------------------------------

def write_ply(path: str, points: np.ndarray, labels=None):
    """ASCII PLY: one vertex per point, colored by label palette."""
    points = np.asarray(points, dtype=np.float64)
    if labels is None:
        colors = np.full((len(points), 3), 200, dtype=np.uint8)
    else:
        colors = LABEL_PALETTE[np.asarray(labels) % len(LABEL_PALETTE)]
    lines = [
        "ply", "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    for (x, y, z), (r, g, b) in zip(points, colors):
        lines.append(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}")
    _atomic_write(path, lambda f: f.write(("\n".join(lines) + "\n").encode()))
