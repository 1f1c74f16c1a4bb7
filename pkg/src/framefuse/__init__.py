"""High-speed video synthesis from asynchronously firing camera arrays.

A camera array whose lenses fire staggered in time captures more
moments than any single lens. This package re-renders every non-reference
frame into the reference viewpoint at its own timestamp: optical flow
correspondences are validated patch-wise, frames are cut into
motion-aware superpixels whose unreliable regions borrow guidance from
reliable neighbors, each region is warped by a local content-preserving
mesh, and the warped layers are fused by a per-pixel sample-selection
MRF with Poisson filling for the leftovers.
"""

from .config import PipelineConfig, apply_ablation, apply_overrides, load_config
from .errors import (
    ConfigError,
    FlowFileError,
    FramefuseError,
    HoleFillError,
    LabelingError,
    ManifestError,
    MissingFlowError,
    NoGoodRegionsError,
    RankDeficientWarpError,
    SegmentationError,
    WarpError,
)
from .flow import (
    FlowBundle,
    estimate_flow,
    patch_distance,
    read_flow,
    validate_flow,
    write_flow,
)
from .images import bilinear_sample, load_image, save_image, to_luma
from .metrics import evaluate, track_trajectory
from .pipeline import (
    collect_bundle,
    evaluate_directories,
    run_ablation_suite,
    run_pipeline,
    synthesize_task,
)
from .render import (
    LABEL_TABLE,
    blend,
    data_cost,
    init_labels,
    inpaint_holes,
    optimize_labels,
    pixel_costs,
    smoothness_cost,
    valid_labels,
)
from .sequence import (
    CaptureFrame,
    SynthesisTask,
    assign_roles,
    build_tasks,
    load_sequence,
    write_manifest,
)
from .superpixel import Region, SuperpixelMap, classify, merge_bad, segment
from .synthetic import SceneSpec, analytic_flow, generate_synthetic, render_view
from .warp import (
    MeshGrid,
    WarpControls,
    WarpedLayer,
    build_mesh,
    inverse_bilinear,
    rasterize,
    solve_warp,
    target_position,
    warp_task,
)

__version__ = "0.1.0"
