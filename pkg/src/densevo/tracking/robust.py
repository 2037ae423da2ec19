"""Geman-McClure robust kernel and the weights derived from it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError


@dataclass(frozen=True)
class RobustKernel:
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise InvalidInputError(f"kernel sigma must be finite and positive, got {self.sigma}")


def geman_mcclure(x, kernel: RobustKernel):
    """rho(x) = x^2 / (x^2 + sigma^2); works on scalars and arrays."""
    x2 = np.square(x)
    out = x2 / (x2 + kernel.sigma ** 2)
    return float(out) if np.ndim(out) == 0 else out


def prediction_weight(x, kernel: RobustKernel):
    """w(x) = 1 - rho(x), maximal (1) at zero distance."""
    s2 = kernel.sigma ** 2
    out = s2 / (np.square(x) + s2)
    return float(out) if np.ndim(out) == 0 else out


def irls_weight(x, kernel: RobustKernel):
    """Reweighting factor for Gauss-Newton on sum rho(|r|).

    Proportional to d rho / d(|r|^2), scaled by sigma^2 so that the weight is
    1 at zero residual: sigma^4 / (|r|^2 + sigma^2)^2.
    """
    s2 = kernel.sigma ** 2
    out = (s2 / (np.square(x) + s2)) ** 2
    return float(out) if np.ndim(out) == 0 else out
