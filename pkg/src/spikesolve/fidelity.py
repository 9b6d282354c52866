"""Data-fit terms: least squares and the (extended) Kullback-Leibler divergence."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import xlogy

from .errors import ConfigError, GridMismatch, NonPositivePrediction
from .forward import GridField


class FidelityKind(str, Enum):
    L2 = "l2"
    KL = "kl"


@dataclass(frozen=True, eq=False)
class FidelityModel:
    """A data term ``f(w)`` tied to an observation ``y``.

    Observations with zeros are accepted for KL; zero samples contribute
    ``w_j`` only (the ``0 log 0 = 0`` convention).
    """

    kind: FidelityKind
    observation: GridField

    def __post_init__(self):
        object.__setattr__(self, "kind", FidelityKind(self.kind))
        if self.kind is FidelityKind.KL and np.any(self.observation.values < 0):
            raise ConfigError("KL fidelity needs a non-negative observation")

    @property
    def y(self) -> np.ndarray:
        return self.observation.values

    @property
    def grid(self):
        return self.observation.grid

    def _w(self, w) -> np.ndarray:
        if isinstance(w, GridField):
            if w.grid.shape != self.grid.shape:
                raise GridMismatch(f"prediction on {w.grid.shape}, data on {self.grid.shape}")
            return w.values
        arr = np.asarray(w, dtype=float)
        if arr.size != self.grid.size:
            raise GridMismatch(f"{arr.size} predicted values for {self.grid.size} samples")
        return arr.reshape(self.grid.shape)

    def value(self, w) -> float:
        w = self._w(w)
        y = self.y
        if self.kind is FidelityKind.L2:
            r = w - y
            return 0.5 * float(np.sum(r * r))
        if np.any(w <= 0):
            return math.inf
        return float(np.sum(w - y + xlogy(y, y) - xlogy(y, w)))

    def gradient(self, w) -> np.ndarray:
        w = self._w(w)
        if self.kind is FidelityKind.L2:
            return w - self.y
        if np.any(w <= 0):
            raise NonPositivePrediction("KL gradient requires a strictly positive prediction")
        return 1.0 - self.y / w


def fidelity_value(fid: FidelityModel, w) -> float:
    return fid.value(w)


def fidelity_gradient(fid: FidelityModel, w) -> GridField:
    return GridField(fid.grid, fid.gradient(w))


def residual_sigma(fid: FidelityModel, w) -> float:
    """Residual distance logged by the homotopy loop; equal to the fidelity value."""
    return fid.value(w)


def kl_scalar(t: float, lam: float, s: float) -> float:
    """One-sample KL term ``(s - t + t log t - t log s) / lam``, ``+inf`` for ``s <= 0``."""
    if s <= 0:
        return math.inf
    if t == 0:
        return s / lam
    # t log(s/t) through log1p keeps precision when s is close to t
    return (s - t - t * math.log1p((s - t) / t)) / lam


def kl_scalar_conjugate(t: float, lam: float, s_star: float) -> float:
    """Convex conjugate of :func:`kl_scalar` in its last argument."""
    if s_star >= 1.0 / lam:
        return math.inf
    return -(t / lam) * math.log1p(-lam * s_star)
