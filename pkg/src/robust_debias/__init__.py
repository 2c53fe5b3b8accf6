"""Penalized robust M-estimation with debiased inference for single coefficients."""
from .dof import (TraceReport, compute_trace, finite_difference_trace, huber_enet_trace,
                  hutchinson_trace, vnm_cross_check)
from .estimator import RobustDebiasedRegressor
from .exceptions import (AssumptionViolated, BoundViolated, DegenerateTrace, KinkProximity,
                         MaxIterExceeded, NonFiniteEvaluation, NonFiniteInput, RobustDebiasError,
                         SingularActiveGram, TooFewSamples, ZeroPsi)
from .inference import (PrecisionInfo, confidence_interval, debias, infer, normal_quantile,
                        pivot_oracle, variance_hat)
from .losses import RobustLoss, check_assumption_rho, make_loss
from .penalties import Penalty, elastic_net, make_penalty, ridge
from .solver import FitResult, SolverOptions, fit, kkt_residual, stability_check

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolated", "BoundViolated", "DegenerateTrace", "FitResult", "KinkProximity",
    "MaxIterExceeded", "NonFiniteEvaluation", "NonFiniteInput", "Penalty", "PrecisionInfo",
    "RobustDebiasError", "RobustDebiasedRegressor", "RobustLoss", "SingularActiveGram",
    "SolverOptions", "TooFewSamples", "TraceReport", "ZeroPsi", "check_assumption_rho",
    "compute_trace", "confidence_interval", "debias", "elastic_net", "finite_difference_trace",
    "fit", "huber_enet_trace", "hutchinson_trace", "infer", "kkt_residual", "make_loss",
    "make_penalty", "normal_quantile", "pivot_oracle", "ridge", "stability_check",
    "variance_hat", "vnm_cross_check",
]
