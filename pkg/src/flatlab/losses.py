"""Closed-form toy losses with exact gradients.

These serve as optimizer test-beds and landscape oracles: every loss is
defined on all of R^d (d is 1 or 2) and ships its analytic gradient, so
trajectories and surfaces computed through the library can be checked
against brute-force evaluations of the same formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


def _as_theta(theta, dim: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(theta, dtype=np.float64))
    if arr.shape != (dim,):
        raise ValueError(f"expected a point in R^{dim}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Quadratic:
    """L(theta) = 1/2 * sum_i curvature_i * theta_i^2, minimum at the origin."""

    curvature: tuple[float, ...] = (1.0,)

    @property
    def dim(self) -> int:
        return len(self.curvature)

    def value(self, theta) -> float:
        t = _as_theta(theta, self.dim)
        c = np.asarray(self.curvature)
        return float(0.5 * np.sum(c * t * t))

    def gradient(self, theta) -> np.ndarray:
        t = _as_theta(theta, self.dim)
        return np.asarray(self.curvature) * t


@dataclass(frozen=True)
class AsymmetricValley1D:
    """Piecewise quadratic valley with a steep and a shallow side.

    L(theta) = c_sharp * theta^2 for theta < 0 and c_flat * theta^2 for
    theta >= 0, joined continuously (with continuous first derivative) at
    the minimum theta = 0.
    """

    c_sharp: float = 50.0
    c_flat: float = 0.5
    dim: int = field(default=1, init=False)

    def value(self, theta) -> float:
        t = float(_as_theta(theta, 1)[0])
        c = self.c_sharp if t < 0 else self.c_flat
        return c * t * t

    def gradient(self, theta) -> np.ndarray:
        t = float(_as_theta(theta, 1)[0])
        c = self.c_sharp if t < 0 else self.c_flat
        return np.array([2.0 * c * t])


@dataclass(frozen=True)
class SharpFlatBimodal1D:
    """Two inverted Gaussian wells of equal depth but very different width.

    The narrow well sits at ``sharp_center`` and the wide one at
    ``flat_center``. With the defaults the curvatures at the well bottoms
    are depth/sigma^2 = 100 and 1, and a perturbation of radius 0.2 spans
    the narrow well (4 sigma) while staying well inside the wide one.
    """

    depth: float = 0.25
    sharp_center: float = -1.0
    flat_center: float = 1.0
    sigma_sharp: float = 0.05
    sigma_flat: float = 0.5
    dim: int = field(default=1, init=False)

    def _wells(self, t: float) -> tuple[float, float]:
        zs = (t - self.sharp_center) / self.sigma_sharp
        zf = (t - self.flat_center) / self.sigma_flat
        ws = math.exp(-0.5 * zs * zs) if abs(zs) < 38.0 else 0.0
        wf = math.exp(-0.5 * zf * zf) if abs(zf) < 38.0 else 0.0
        return ws, wf

    def value(self, theta) -> float:
        t = float(_as_theta(theta, 1)[0])
        ws, wf = self._wells(t)
        return float(-self.depth * (ws + wf))

    def gradient(self, theta) -> np.ndarray:
        t = float(_as_theta(theta, 1)[0])
        ws, wf = self._wells(t)
        gs = self.depth * (t - self.sharp_center) / self.sigma_sharp**2 * ws
        gf = self.depth * (t - self.flat_center) / self.sigma_flat**2 * wf
        return np.array([gs + gf])

    def nearest_well(self, theta) -> str:
        """Classify a point by the closer well center: 'sharp' or 'flat'."""
        t = float(_as_theta(theta, 1)[0])
        return "sharp" if abs(t - self.sharp_center) <= abs(t - self.flat_center) else "flat"


@dataclass(frozen=True)
class Rosenbrock2D:
    """L(x, y) = (a - x)^2 + b (y - x^2)^2 with the global minimum at (a, a^2)."""

    a: float = 1.0
    b: float = 100.0
    dim: int = field(default=2, init=False)

    def value(self, theta) -> float:
        x, y = _as_theta(theta, 2)
        return float((self.a - x) ** 2 + self.b * (y - x * x) ** 2)

    def gradient(self, theta) -> np.ndarray:
        x, y = _as_theta(theta, 2)
        dx = -2.0 * (self.a - x) - 4.0 * self.b * x * (y - x * x)
        dy = 2.0 * self.b * (y - x * x)
        return np.array([dx, dy])


_REGISTRY = {
    "quadratic": Quadratic,
    "asymmetric-valley-1d": AsymmetricValley1D,
    "sharp-flat-bimodal-1d": SharpFlatBimodal1D,
    "rosenbrock-2d": Rosenbrock2D,
}


def make_loss(kind: str, **kwargs):
    """Build a registered analytic loss by id."""
    try:
        cls = _REGISTRY[kind]
    except KeyError:
        raise ConfigError(f"unknown analytic loss {kind!r}; known: {sorted(_REGISTRY)}") from None
    return cls(**kwargs)


def analytic_eval(loss, theta) -> tuple[float, np.ndarray]:
    """Evaluate an analytic loss and its exact gradient at ``theta``."""
    return loss.value(theta), loss.gradient(theta)
