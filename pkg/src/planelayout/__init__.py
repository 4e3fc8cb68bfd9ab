"""Room-layout engine on intrinsics-free planar depth parameterizations."""

from .cluster import ClusterInstance, ClusterSet, cluster_param_map, mean_shift
from .config import PipelineConfig, load_config
from .fit import FitResult, RegionAnnotation, fit_annotated, lsq_fit, ransac_fit
from .geometry import (
    SENTINEL,
    CameraIntrinsics,
    DepthMap,
    ParamMap,
    PlaneEq3D,
    RawSurfaceParams,
    SegmentationMap,
    SurfaceParams,
    backproject,
    depth_at,
    normalize,
    params_from_depth,
    plane_to_surface,
    render_depth,
    surface_to_plane,
)
from .layout import (
    Corner,
    LayoutResult,
    extract_corners,
    full_pipeline,
    layout_point_cloud,
    resolve_layers,
    stitch_min_depth,
)
from .losses import (
    LossBreakdown,
    LossConfig,
    SceneTruth,
    loss_depth_2d,
    loss_depth_supervised,
    loss_discriminative,
    loss_param_l1,
    loss_stretch,
    loss_total_2d,
    loss_total_3d,
    optimize_param_map,
)
from .metrics import (
    MetricReport,
    aggregate_reports,
    corner_error_2d,
    corner_error_3d,
    depth_metrics,
    evaluate_layout,
    pixel_error,
)
from .synth import (
    RenderedScene,
    SceneSpec,
    SceneSurface,
    cuboid_scene,
    generate_cuboid,
    generate_noncuboid,
    occlusion_step_scene,
    render_scene,
    scene_from_footprint,
)

__version__ = "0.1.0"
