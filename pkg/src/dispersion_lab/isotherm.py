"""Langmuir isotherm f(u) = alpha u / (1 + beta u), its derivative and primitive.

For u < 0 the isotherm is extended linearly (f = alpha u), which keeps f
increasing, C^1 at the origin and of linear growth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoefficientError


@dataclass(frozen=True)
class IsothermModel:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise CoefficientError("alpha must be positive")
        if self.beta < 0:
            raise CoefficientError("beta must be non-negative")

    def f(self, u):
        u = np.asarray(u, dtype=float)
        up = np.maximum(u, 0.0)
        return np.where(u >= 0, self.alpha * up / (1.0 + self.beta * up), self.alpha * u)

    def fprime(self, u):
        u = np.asarray(u, dtype=float)
        up = np.maximum(u, 0.0)
        return np.where(u >= 0, self.alpha / (1.0 + self.beta * up) ** 2, self.alpha)

    def F(self, u):
        """Primitive with F(0) = 0."""
        u = np.asarray(u, dtype=float)
        up = np.maximum(u, 0.0)
        if self.beta == 0:
            pos = 0.5 * self.alpha * up * up
        else:
            bu = self.beta * up
            # u - log1p(bu)/beta loses digits for small bu; use the series there
            small = bu < 1e-4
            series = up * up * (0.5 - bu / 3.0 + bu * bu / 4.0)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                direct = (up - np.log1p(bu) / self.beta) / self.beta
            pos = self.alpha * np.where(small, series, direct)
        return np.where(u >= 0, pos, 0.5 * self.alpha * u * u)

    def saturation(self) -> float:
        return np.inf if self.beta == 0 else self.alpha / self.beta


def isotherm_eval(model: IsothermModel, u):
    """Return (f, f', F) at ``u``; scalars in, floats out."""
    out = model.f(u), model.fprime(u), model.F(u)
    if np.ndim(u) == 0:
        return tuple(float(v) for v in out)
    return out
