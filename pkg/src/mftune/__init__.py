"""Multi-fidelity GP-UCB impedance tuning.

The cost kernel is compiled with Cython when available; ``BACKEND`` names
the implementation chosen at import (``"cython"`` or ``"python"``).
"""

from ._backend import BACKEND
from .bayesopt import DesignGrid, Formulation, ModelConfig, UcbConfig, run_formulation
from .bounds import bound_report, conditional_cov_bound, info_gain_bound, regret_bound
from .errors import MFTuneError
from .experiment import ExperimentConfig, run_campaign
from .gp import Dataset, gp_fit, gp_predict
from .kernels import KernelSpec, kernel_matrix
from .mfgp import Ar1Model, ar1_predict

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Ar1Model",
    "Dataset",
    "DesignGrid",
    "ExperimentConfig",
    "Formulation",
    "KernelSpec",
    "MFTuneError",
    "ModelConfig",
    "UcbConfig",
    "ar1_predict",
    "bound_report",
    "conditional_cov_bound",
    "gp_fit",
    "gp_predict",
    "info_gain_bound",
    "kernel_matrix",
    "regret_bound",
    "run_campaign",
    "run_formulation",
]
