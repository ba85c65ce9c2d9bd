from .heads import (
    METHODS,
    DDPMHead,
    FMHead,
    GenerativeHead,
    SGMHead,
    SIHead,
    ddpm_loss,
    ddpm_sample,
    fm_loss,
    fm_sample,
    importance_times,
    make_head,
    sgm_loss,
    sgm_sample,
    si_loss,
    si_sample_backward,
    si_sample_forward,
)
from .estimator import GenerativeModel
from .solvers import PathNoise, SolverConfig, euler_maruyama

__all__ = [
    "METHODS",
    "DDPMHead",
    "FMHead",
    "GenerativeHead",
    "GenerativeModel",
    "PathNoise",
    "SGMHead",
    "SIHead",
    "SolverConfig",
    "ddpm_loss",
    "ddpm_sample",
    "euler_maruyama",
    "fm_loss",
    "fm_sample",
    "importance_times",
    "make_head",
    "sgm_loss",
    "sgm_sample",
    "si_loss",
    "si_sample_backward",
    "si_sample_forward",
]
