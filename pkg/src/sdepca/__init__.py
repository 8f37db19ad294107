"""Euler-Maruyama schemes, moment estimates and stability certificates for
SDEs with piecewise constant arguments."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .certificates import (CertificateParams, Certificate, ConstantTable, Threshold,
                           chain_certificates, check_certificate, constant_table,
                           solve_threshold)
from .errors import (DivergedError, DomainError, InsufficientDataError, MonotonicityError,
                     NoCertificateError, SdepcaError, ShapeError,
                     UnrepresentableCertificateError, UnsupportedError, ValidationError)
from .integrators import Trajectory, em_sde_path, em_sdepca_path, gbm_exact_path
from .lyapunov import LyapunovReport, assumption_margin, generator_value, lyapunov_decay_bound
from .model import (GridSpec, SystemSpec, eval_coefficients, lipschitz_bound,
                    make_linear_system, make_scalar_linear, make_scalar_system)
from .moments import (DecayFit, MomentSeries, em_linear_second_moment, estimate_pth_moment,
                      fit_decay_rate, sdepca_exact_second_moment)
from .paths import IncrementPlan, aggregate_increments, generate_increments

__all__ = [
    "BACKEND", "Certificate", "CertificateParams", "ConstantTable", "DecayFit",
    "DivergedError", "DomainError", "GridSpec", "IncrementPlan", "InsufficientDataError",
    "LyapunovReport", "MomentSeries", "MonotonicityError", "NoCertificateError", "SdepcaError",
    "ShapeError", "SystemSpec", "Threshold", "Trajectory", "UnrepresentableCertificateError",
    "UnsupportedError", "ValidationError", "aggregate_increments", "assumption_margin",
    "chain_certificates", "check_certificate", "constant_table", "em_linear_second_moment",
    "em_sde_path", "em_sdepca_path", "estimate_pth_moment", "eval_coefficients",
    "fit_decay_rate", "gbm_exact_path", "generate_increments", "generator_value",
    "lipschitz_bound", "lyapunov_decay_bound", "make_linear_system", "make_scalar_linear",
    "make_scalar_system", "sdepca_exact_second_moment", "solve_threshold",
]
