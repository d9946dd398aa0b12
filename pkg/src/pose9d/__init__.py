"""Category-level 9-DoF pose toolkit.

Pose geometry, symmetry-aware bipartite matching, exact oriented-box 3D IoU,
mAP evaluation, loss and head math, and a JSONL scene format.
"""

from .errors import (
    BehindCamera,
    DegenerateInput,
    DimensionMismatch,
    EmptyAssignment,
    EmptyGroundTruth,
    GradientSingularity,
    InfeasibleMatrix,
    InvariantError,
    NonPositiveDepth,
    OutOfFrame,
    Pose9DError,
    RecordError,
    ScaleClamped,
    SchemaError,
    TooLarge,
)
from .geometry import (
    NO_SYMMETRY,
    BBox2D,
    CameraIntrinsics,
    Pose9D,
    SymmetrySpec,
    axis_angle_to_matrix,
    backproject,
    cuboid_corners,
    geodesic_distance,
    is_rotation,
    matrix_to_rot6d,
    project_cuboid_to_bbox,
    project_point,
    random_rotation,
    recover_center,
    rot6d_to_matrix,
    symmetry_aware_rot_distance,
)
from .iou3d import (
    ConvexPolytope,
    clip_polytope,
    intersection_volume,
    iou_3d,
    iou_3d_monte_carlo,
    iou_3d_symmetric,
    pairwise_iou,
    polytope_volume,
)
from .matching import (
    Assignment,
    CostWeights,
    MatchCandidate,
    MatchTarget,
    brute_force_assignment,
    build_cost_matrix,
    generalized_iou,
    match,
    pairwise_cost,
    solve_assignment,
)
from .metrics import EvalConfig, EvalResult, average_precision, evaluate_scene_set, pose_errors
from .losses import (
    LossBreakdown,
    LossWeights,
    focal_loss,
    geodesic_loss,
    giou_loss,
    l1_loss,
    l2_loss,
    total_loss,
)
from .heads import (
    MlpWeights,
    RawHeadOutput,
    assemble_pose,
    conditioned_forward,
    mlp_forward,
    select_classwise,
)
from .scene_io import (
    GtInstance,
    NoiseProfile,
    PredInstance,
    SceneRecord,
    derive_boxes,
    generate_synthetic,
    load_scenes,
    parse_scenes,
    save_scenes,
)
from .config import RunConfig, load_config

__version__ = "0.1.0"
