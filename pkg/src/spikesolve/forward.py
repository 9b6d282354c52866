"""Gaussian-PSF forward operator, its adjoint, and their spatial derivatives.

All grid sums use unit quadrature weights, so inner products are plain sums
over pixels/voxels. The Gaussian is separable, which every routine below
exploits: per-axis 1D kernels are built for the spike positions and then
contracted against the grid field one axis at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionMismatch, NonPositiveInput
from .geometry import DiracMeasure, Grid

_LETTERS = "abc"


@dataclass(frozen=True)
class GaussianPSF:
    sigma: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if s.ndim != 1 or s.size not in (1, 2, 3):
            raise DimensionMismatch("sigma must be a vector of length 1, 2 or 3")
        if not np.all(s > 0):
            raise NonPositiveInput("PSF widths must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    @property
    def dim(self) -> int:
        return self.sigma.size

    @property
    def peak(self) -> float:
        return float(np.prod(1.0 / (math.sqrt(2 * math.pi) * self.sigma)))


def psf_value(psf: GaussianPSF, offset) -> np.ndarray | float:
    """Evaluate the normalised Gaussian at ``offset`` (shape ``(..., dim)``)."""
    off = np.asarray(offset, dtype=float)
    if off.shape[-1:] != (psf.dim,) and not (psf.dim == 1 and off.ndim == 0):
        raise DimensionMismatch(f"offset {off.shape} incompatible with {psf.dim}D PSF")
    if off.ndim == 0:
        off = off.reshape(1)
    z = off / psf.sigma
    val = psf.peak * np.exp(-0.5 * np.sum(z * z, axis=-1))
    return float(val) if np.ndim(val) == 0 else val


def calibrate_sigma_from_fwhm(
    wavelength_nm: float, numerical_aperture: float, z_factor: float = 2.0
) -> np.ndarray:
    """Lateral/axial PSF widths (nm) from the diffraction-limited FWHM.

    FWHM = 0.61 * wavelength / NA and FWHM = 2.355 * sigma; the axial width
    is ``z_factor`` times the lateral one.
    """
    if min(wavelength_nm, numerical_aperture, z_factor) <= 0:
        raise NonPositiveInput("wavelength, NA and z_factor must be positive")
    sx = 0.61 * wavelength_nm / (numerical_aperture * 2.355)
    return np.array([sx, sx, z_factor * sx])


@dataclass(frozen=True)
class GridField:
    """Real values on every sample of a grid, stored with ``grid.shape``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size != self.grid.size:
            raise DimensionMismatch(f"{v.size} values for a grid of {self.grid.size} samples")
        v = v.reshape(self.grid.shape).copy()
        if not np.all(np.isfinite(v)):
            raise DimensionMismatch("grid field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def inner(self, other) -> float:
        return float(np.sum(self.values * _values(other, self.grid)))


def _values(field, grid: Grid) -> np.ndarray:
    if isinstance(field, GridField):
        if field.grid.shape != grid.shape:
            raise DimensionMismatch(f"field on {field.grid.shape} used with grid {grid.shape}")
        return field.values
    arr = np.asarray(field, dtype=float)
    if arr.size != grid.size:
        raise DimensionMismatch(f"{arr.size} values for a grid of {grid.size} samples")
    return arr.reshape(grid.shape)


def _axis_kernels(axes, sigma, x: np.ndarray, cutoff: float | None):
    """Per-axis normalised 1D Gaussians and their x-derivatives.

    Returns lists ``K[k]`` and ``D[k]`` of shape ``(N, n_k)`` with
    ``K[k][i, j] = g_k(s_j - x_ik)`` and ``D[k] = dK/dx_ik``.
    """
    Ks, Ds = [], []
    for k, s in enumerate(axes):
        diff = s[None, :] - x[:, k][:, None]
        z = diff / sigma[k]
        K = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * sigma[k])
        if cutoff is not None:
            K[np.abs(z) > cutoff] = 0.0
        Ks.append(K)
        Ds.append(K * diff / sigma[k] ** 2)
    return Ks, Ds


def _contract(field: np.ndarray, factors) -> np.ndarray:
    """``out[i] = sum_j field[j] * prod_k factors[k][i, j_k]``."""
    d = len(factors)
    letters = _LETTERS[:d]
    expr = letters + "," + ",".join("i" + c for c in letters) + "->i"
    return np.einsum(expr, field, *factors)


def _synthesise(amplitudes: np.ndarray, factors) -> np.ndarray:
    d = len(factors)
    letters = _LETTERS[:d]
    expr = "i," + ",".join("i" + c for c in letters) + "->" + letters
    return np.einsum(expr, amplitudes, *factors)


@dataclass(frozen=True, eq=False)
class ForwardModel:
    """Sampling of ``sum_i a_i psf(. - x_i) + b`` on ``grid``.

    ``background`` is either a scalar or an array with the grid's shape.
    ``cutoff`` (in PSF widths) truncates the kernel; ``None`` keeps it exact.
    """

    psf: GaussianPSF
    grid: Grid
    background: float | np.ndarray = 0.0
    cutoff: float | None = None

    def __post_init__(self):
        if self.psf.dim != self.grid.dim:
            raise DimensionMismatch(f"{self.psf.dim}D PSF on a {self.grid.dim}D grid")
        b = self.background
        if isinstance(b, GridField):
            b = b.values
        if np.ndim(b) == 0:
            b = float(b)
            if b < 0:
                raise NonPositiveInput("background must be non-negative")
        else:
            b = np.asarray(b, dtype=float).reshape(self.grid.shape).copy()
            if np.any(b < 0):
                raise NonPositiveInput("background must be non-negative")
            b.setflags(write=False)
        object.__setattr__(self, "background", b)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def domain(self):
        return self.grid.domain

    @property
    def min_background(self) -> float:
        return float(np.min(self.background))

    @cached_property
    def background_array(self) -> np.ndarray:
        out = np.broadcast_to(np.asarray(self.background, dtype=float), self.grid.shape).copy()
        out.setflags(write=False)
        return out

    @cached_property
    def _axes(self):
        return self.grid.axes

    def with_background(self, background) -> "ForwardModel":
        return ForwardModel(self.psf, self.grid, background, self.cutoff)

    def kernels(self, positions: np.ndarray):
        x = np.asarray(positions, dtype=float).reshape(-1, self.dim)
        return _axis_kernels(self._axes, self.psf.sigma, x, self.cutoff)

    def synthesise(self, positions, amplitudes) -> np.ndarray:
        """``Phi mu`` (no background) as an array with the grid's shape."""
        amplitudes = np.asarray(amplitudes, dtype=float).ravel()
        if amplitudes.size == 0:
            return np.zeros(self.grid.shape)
        Ks, _ = self.kernels(positions)
        return _synthesise(amplitudes, Ks)

    def kernel_matrix(self, positions) -> np.ndarray:
        """Dense ``(grid.size, N)`` matrix whose columns are sampled PSFs."""
        x = np.asarray(positions, dtype=float).reshape(-1, self.dim)
        if x.shape[0] == 0:
            return np.zeros((self.grid.size, 0))
        Ks, _ = self.kernels(x)
        cols = Ks[0]
        for K in Ks[1:]:
            cols = (cols[:, :, None] * K[:, None, :]).reshape(cols.shape[0], -1)
        return cols.T.copy()

    def adjoint(self, p, positions) -> np.ndarray:
        """``Phi^* p`` evaluated at each row of ``positions``."""
        pv = _values(p, self.grid)
        x = np.asarray(positions, dtype=float).reshape(-1, self.dim)
        if x.shape[0] == 0:
            return np.zeros(0)
        Ks, _ = self.kernels(x)
        return _contract(pv, Ks)

    def adjoint_and_gradient(self, p, positions):
        """Values ``(N,)`` and x-gradients ``(N, dim)`` of ``Phi^* p``."""
        pv = _values(p, self.grid)
        x = np.asarray(positions, dtype=float).reshape(-1, self.dim)
        if x.shape[0] == 0:
            return np.zeros(0), np.zeros((0, self.dim))
        Ks, Ds = self.kernels(x)
        val = _contract(pv, Ks)
        grad = np.empty_like(x)
        for k in range(self.dim):
            factors = list(Ks)
            factors[k] = Ds[k]
            grad[:, k] = _contract(pv, factors)
        return val, grad

    def adjoint_on_grid(self, p, search: Grid) -> np.ndarray:
        """``Phi^* p`` on every sample of ``search`` (same domain dim), shaped like it."""
        if search.dim != self.dim:
            raise DimensionMismatch("search grid dimension differs from the model's")
        out = _values(p, self.grid)
        for k, pts in enumerate(search.axes):
            K = _axis_kernels([self._axes[k]], self.psf.sigma[k : k + 1], pts[:, None], self.cutoff)[0][0]
            # K: (m_k, n_k); contract axis k of out, keep the new axis in place
            out = np.moveaxis(np.tensordot(K, out, axes=([1], [k])), 0, k)
        return out


def apply_forward(model: ForwardModel, mu: DiracMeasure) -> GridField:
    """Sample ``Phi mu + b`` on the model grid."""
    if len(mu) and mu.dim != model.dim:
        raise DimensionMismatch(f"{mu.dim}D measure with a {model.dim}D model")
    return GridField(model.grid, model.synthesise(mu.positions, mu.amplitudes) + model.background_array)


def adjoint_value(model: ForwardModel, p, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != model.dim:
        raise DimensionMismatch(f"point of dim {x.size} for a {model.dim}D model")
    return float(model.adjoint(p, x)[0])


def adjoint_gradient(model: ForwardModel, p, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != model.dim:
        raise DimensionMismatch(f"point of dim {x.size} for a {model.dim}D model")
    return model.adjoint_and_gradient(p, x)[1][0]


def forward_jacobian_products(model: ForwardModel, mu: DiracMeasure, g):
    """Gradient of ``<g, Phi mu>`` with respect to amplitudes and positions."""
    if len(mu) and mu.dim != model.dim:
        raise DimensionMismatch(f"{mu.dim}D measure with a {model.dim}D model")
    val, grad = model.adjoint_and_gradient(g, mu.positions)
    return val, mu.amplitudes[:, None] * grad
