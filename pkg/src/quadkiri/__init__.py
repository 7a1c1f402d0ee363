"""Inverse design of compact reconfigurable parallelogram quad kirigami.

Decode ratio fields into compatible cut layouts, simulate deployed
silhouettes, score them with similarity-aligned IoU, solve inverse problems
with derivative-free baselines, preference-align a sampling policy with
group-relative weighting, and export cutter-ready DXF layouts.
"""

__version__ = "0.1.0"

from .geometry import (
    BoundaryAnchors,
    FeasibilityConfig,
    FeasibilityReport,
    GridShape,
    Layout,
    RatioField,
    VoidQuad,
    check_feasible,
    checkerboard_angles,
    default_anchors,
    march_decode,
    rotate,
)
from .raster import (
    Frame,
    RasterConfig,
    SilhouetteMask,
    mask_iou,
    rasterize_polygon,
    rasterize_quad,
    read_pgm,
    simulate,
    write_pgm,
)
from .metrics import (
    AlignConfig,
    EvalResult,
    MetricError,
    RewardConfig,
    is_success,
    reward,
    siou,
    total_variation,
)
from .dataset import (
    GenConfig,
    GenerationStallError,
    SplitManifest,
    VerificationError,
    generate_split,
    load_field,
    save_field,
    sobol_stream,
    verify_dataset,
    z_to_ratio,
)
from .solvers import (
    BestOfK,
    InverseObjective,
    SolverRun,
    StopRule,
    best_of_k,
    cma_lambda,
    grid_sweep_bench,
    solve_cmaes,
    solve_powell,
    solve_pso,
    solve_random_restart,
    solve_target,
)
from .genmodel import (
    Condition,
    FlowPath,
    GrpoEnv,
    GrpoGroup,
    MeanFieldPolicy,
    cfm_sample_loss,
    euler_integrate,
    grpo_advantages,
    grpo_rollout,
    grpo_update,
    grpo_weights,
    make_flow_path,
    ot_coupling,
    run_grpo_training,
)
from .dxf import ConnectorConfig, CutPlan, DxfParseError, UnsupportedEntityError, plan_cuts, read_dxf, write_dxf
from .targets import BUILTIN_TARGETS, builtin_target, render_target
