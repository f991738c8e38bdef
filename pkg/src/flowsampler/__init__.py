"""Gradient-flow samplers: particle dynamics, Gaussian moment flows and diagnostics."""

from . import diagnostics, fisher_rao_grid, gaussian_flows, particle_flows, targets
from .errors import FlowSamplerError

__all__ = [
    "FlowSamplerError",
    "diagnostics",
    "fisher_rao_grid",
    "gaussian_flows",
    "particle_flows",
    "targets",
]
__version__ = "0.1.0"
