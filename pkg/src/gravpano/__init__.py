"""Gravity-prior minimal solvers for panorama stitching with unknown focal length and radial distortion."""

from .errors import (
    DegenerateError,
    GravpanoError,
    InfeasibleConfigError,
    InvalidInputError,
    NoModelError,
    NoNullspaceError,
    NotDivisibleError,
    OutOfRangeError,
    ParseError,
    SingularConfigurationError,
)
from .geometry import (
    Correspondence,
    DistortedPoint,
    GravityPrior,
    StitchModel,
    compose_model,
    gravity_alignment,
    transfer_error,
)
from .robust import RansacConfig, RansacResult, iteration_budget, ransac, refine_nonminimal
from .solvers import (
    HomographyModel,
    SolverCandidateSet,
    SolverId,
    solve,
    solve_aligned,
    solve_h1f,
    solve_h2f1f2,
    solve_h2lambda,
    solve_h3l1l2,
    solve_h4dlt,
)

__version__ = "0.1.0"

__all__ = [
    "Correspondence",
    "DegenerateError",
    "DistortedPoint",
    "GravityPrior",
    "GravpanoError",
    "HomographyModel",
    "InfeasibleConfigError",
    "InvalidInputError",
    "NoModelError",
    "NoNullspaceError",
    "NotDivisibleError",
    "OutOfRangeError",
    "ParseError",
    "RansacConfig",
    "RansacResult",
    "SingularConfigurationError",
    "SolverCandidateSet",
    "SolverId",
    "StitchModel",
    "compose_model",
    "gravity_alignment",
    "iteration_budget",
    "ransac",
    "refine_nonminimal",
    "solve",
    "solve_aligned",
    "solve_h1f",
    "solve_h2f1f2",
    "solve_h2lambda",
    "solve_h3l1l2",
    "solve_h4dlt",
    "transfer_error",
]
