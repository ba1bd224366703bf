"""Stochastic-gradient MCMC samplers for multi-modal targets.

Modules:

* :mod:`sgmcmc.targets` energy functions, gradients and noise models
* :mod:`sgmcmc.kernels` Langevin and SGD exploration kernels
* :mod:`sgmcmc.replica` replica exchange with bias-corrected swaps and variance reduction
* :mod:`sgmcmc.schedule` swap schedules, round-trip analysis and ladder adaptation
* :mod:`sgmcmc.contour` contour samplers (CSGLD, ICSGLD, AWSGLD)
* :mod:`sgmcmc.analysis` diagnostics and CSV output
* :mod:`sgmcmc.experiments` and :mod:`sgmcmc.cli` experiment pipelines and the command line
"""

__version__ = "0.1.0"

from . import analysis, contour, kernels, replica, schedule, targets  # noqa: E402

__all__ = ["__version__", "analysis", "contour", "kernels", "replica", "schedule", "targets"]
