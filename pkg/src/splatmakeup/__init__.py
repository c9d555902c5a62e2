"""Coarse-to-fine makeup transfer for mesh-rigged 3D Gaussian head avatars.

The pipeline: bind Gaussian kernels to a deforming triangle mesh, render
by alpha-compositing, bake multi-view guidance images into one global UV
texture for view-consistent supervision, then optimize per-kernel color
and opacity under masked makeup/restriction losses — coarse stage against
texture queries, refinement stage against a guidance provider.
"""

from .avatar import (
    AvatarModel,
    GaussianKernels,
    MeshPose,
    TriangleFrame,
    TriangleMesh,
    WorldGaussians,
    bind_kernels,
    compute_triangle_frame,
    pose_kernels,
    triangle_frames,
)
from .camera import Camera, camera_ring, look_at
from .guidance import (
    FileGuidanceProvider,
    GuidanceRequest,
    GuidanceSample,
    MaskSpec,
    ProceduralMakeupSpec,
    ProceduralProvider,
    RegionOverlay,
    make_mask,
    provide_procedural,
    refine,
)
from .meshraster import GBuffer, rasterize_mesh
from .metrics import (
    EvalReport,
    evaluate,
    identity_drift,
    masked_psnr_ssim,
    uv_consistency,
)
from .splat import (
    Splat2D,
    build_scene,
    composite,
    composite_backward,
    project_gaussian,
    project_gaussians,
    render,
    render_backward,
)
from .synth import (
    init_kernels,
    make_head_mesh,
    make_poses,
    synth_cameras,
    synth_head,
)
from .training import (
    AdamState,
    LossBreakdown,
    TrainConfig,
    adam_step,
    makeup_loss,
    restriction_loss,
    run_coarse,
    run_per_view_guidance,
    run_refine,
    total_loss,
)
from .uvbake import BakeConfig, UvTexture, bake, query, textured_mesh_render

__version__ = "0.1.0"
