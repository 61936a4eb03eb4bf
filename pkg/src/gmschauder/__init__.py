"""Multi-resolution Schauder bases of multidimensional Gauss-Markov processes."""

__version__ = "0.1.0"

from .basis import BasisElement, BridgeMoments, DualFunctional, SchauderBasis, apply_dual, bridge_moments, build_element
from .errors import (
    ArgumentOrderError,
    DegeneracyError,
    GMSError,
    InputError,
    ModelEvaluationError,
    NotDifferentiableError,
    PairingError,
    PartitionError,
    RangeError,
    UnsupportedModelError,
)
from .fpt import FptQuery, FptResult, bridge_crossing_probability, first_passage
from .girsanov import (
    LiftMatrices,
    ModelPair,
    determinant_limit,
    kernel_matrix,
    lift_matrix,
    reduce_common_diffusion,
    rn_derivative,
    trace_defect,
)
from .interp import InterpolationProblem, basis_via_bvp, dirichlet_energy, optimal_interpolant, solve_mu_bvp
from .model import FlowCache, ProcessModel, Specialization
from .partition import PartitionKind, Support, SupportTree
from .transforms import (
    CoefficientField,
    PathBatch,
    SamplePath,
    apply_D,
    apply_K,
    assemble_delta_matrix,
    assemble_psi_matrix,
    coefficients,
    construct,
    grid_covariance,
    integration_by_parts_defect,
    refine,
    sample,
    sample_paths,
)
