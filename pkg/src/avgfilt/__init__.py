"""Iterate-averaged 3DVAR and Kalman filtering for linear statistical inverse problems."""
from .errors import ConfigError, NumericalError
from .model import (
    DenseOperator,
    EigenSequence,
    NoiseStream,
    ProblemSpec,
    SobolevICParams,
    build_diffusion_spectrum,
    build_sobolev_ic,
    draw_observation,
    scalar_problem,
    weighted_norm_sq,
)
from .spectral import RegFilterParams, eval_q, eval_r, q_bound, r_bound

__version__ = "0.1.0"
