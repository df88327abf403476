"""Volume-preserving homeomorphisms approximating prescribed derivatives in
the ``L^p`` quasi-norm (``0 < p < 1``), with numerical verification."""

from .errors import (BudgetError, DegeneracyError, DomainError, EvaluationError, HypothesisError,
                     InfeasibleError, VPHomeoError)
from .homeo1d import (PairCandidate1D, PiecewiseSmoothHomeo1D, StaircaseParams, StepFunction1D,
                      approximate_pair, blend_constant, feasible_pair, from_callables,
                      identity_homeo, make_ramp, make_staircase, make_step_homeo,
                      staircase_sequence, tensor_staircase, transfer_compose)
from .kernel import (BoxDomain, Exponent, Interval, LpResult, SampledMap,
                     check_quasinorm_inequalities, fd_jacobian, lp_norm_1d, lp_norm_nd,
                     sample_map, smooth_step, sup_distance)
from .packing import Ball, BallPacking, vitali_pack
from .pipeline import (RotationField, build_cell_diffeo, dyadic_rotation_sample,
                       theorem_b_sequence, transfer_by_homeo)
from .twist import (LocalizedRotation, TwistProfile, check_sod, localization_error,
                    localization_error_bound, localized_rotation, plane_rotation, random_sod,
                    sod_block_decompose, twist_map)
from .verify import (convergence_table_1d, fit_error_constant, inequality_audit, run_acceptance,
                     volume_census)

__version__ = "0.1.0"
