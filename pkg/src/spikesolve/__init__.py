"""Off-the-grid sparse spike deconvolution with Sliding Frank-Wolfe.

Positive spike trains are recovered from blurred, noisy samples by minimising
a data term (least squares or Kullback-Leibler) plus the total-variation norm
of a measure. Lambda can be fixed or picked by a decreasing homotopy.
"""

from .certificate import (
    Certificate,
    SearchConfig,
    build_certificate,
    certificate_argmax,
    certificate_eval,
    certificate_eval_grad,
    check_optimality,
)
from .errors import (
    ConfigError,
    DataIOError,
    NumericalError,
    SpikesolveError,
)
from .fidelity import FidelityKind, FidelityModel, fidelity_gradient, fidelity_value, residual_sigma
from .forward import (
    ForwardModel,
    GaussianPSF,
    GridField,
    adjoint_gradient,
    adjoint_value,
    apply_forward,
    calibrate_sigma_from_fwhm,
)
from .geometry import DiracMeasure, Domain, Grid, tv_norm
from .homotopy import (
    HomotopyConfig,
    HomotopyResult,
    estimate_background,
    estimate_sigma_target,
    homotopy_solve,
    poisson_discrepancy_target,
    ring_mask,
)
from .metrics import jaccard, match_spikes, metrics_report
from .sfw import SFWConfig, SolveResult, boosted_sfw_solve, sfw_solve
from .simulation import ScenarioConfig, paper_scenario, simulate

__version__ = "0.1.0"

__all__ = [
    "Certificate",
    "ConfigError",
    "DataIOError",
    "DiracMeasure",
    "Domain",
    "FidelityKind",
    "FidelityModel",
    "ForwardModel",
    "GaussianPSF",
    "Grid",
    "GridField",
    "HomotopyConfig",
    "HomotopyResult",
    "NumericalError",
    "SFWConfig",
    "ScenarioConfig",
    "SearchConfig",
    "SolveResult",
    "SpikesolveError",
    "adjoint_gradient",
    "adjoint_value",
    "apply_forward",
    "boosted_sfw_solve",
    "build_certificate",
    "calibrate_sigma_from_fwhm",
    "certificate_argmax",
    "certificate_eval",
    "certificate_eval_grad",
    "check_optimality",
    "estimate_background",
    "estimate_sigma_target",
    "fidelity_gradient",
    "fidelity_value",
    "homotopy_solve",
    "jaccard",
    "match_spikes",
    "metrics_report",
    "paper_scenario",
    "poisson_discrepancy_target",
    "residual_sigma",
    "ring_mask",
    "sfw_solve",
    "simulate",
    "tv_norm",
]
