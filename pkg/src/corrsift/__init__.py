"""Selective inference for variable groups found by thresholding correlations."""
from .cca import CcaDecomposition, cca_decompose, perturbed_covariance, wilks_statistic
from .errors import (CorrsiftError, DegenerateRegionError, DegenerateVariableError,
                     DimensionError, EmptyRegionError, InsufficientAcceptanceError,
                     InsufficientObservationsError, SelectionMismatchError,
                     SingularMatrixError)
from .harness import (PowerRecord, SimConfig, effect_size, generate_sigma,
                      population_threshold, run_power_experiment, run_type1_experiment)
from .linalg import (CorrelationMatrix, CovarianceMatrix, DataMatrix,
                     correlation_from_covariance, log_determinant, sample_covariance,
                     sym_inv_sqrt, sym_sqrt)
from .nulldist import (NullSpec, RngStream, beta_cdf, classical_p_value,
                       null_log_density_unnormalized, sample_null_canonical_correlations)
from .polytope import PolytopeH, build_constraints, enumerate_vertices, triangulate
from .pvalue import (closed_form_selective_p, g_u, integrate_selective_p, mc_selective_p,
                     selective_p_value)
from .results import Diagnostics, Method, PValueResult
from .selection import Partition, group_complement, select_components

__version__ = "0.1.0"
