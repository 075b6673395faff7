"""Non-uniform scaling formation control with distributed agent joining."""

from .constraints import (
    Triplet,
    TripletWeights,
    constraint_residual,
    constraint_weights,
    genericity_check,
    resolve_dependent,
    rotated_offset,
)
from .control import Gains, ManeuverSchedule, Phase, SimState, follower_control, leader_control, reference, step, tracking_error
from .errors import *  # noqa: F401,F403
from .formation import (
    ManeuverParams,
    NominalFormation,
    Rotation,
    ShapeSpaceBasis,
    apply_maneuver,
    distance_to_shape_space,
    scaling_transform,
    shape_space_basis,
)
from .laplacian import (
    BlockLaplacian,
    DesignWeight,
    SpectralReport,
    TripletStamp,
    build_incremental,
    follower_equilibrium,
    join_update,
    laplacian_apply,
    pad,
    triplet_stamp,
    validate_spectral,
)
from .protocol import AgentState, Bus, assemble_global, discover_candidates, execute_join, select_pair

__version__ = "0.1.0"
