"""Dual certificates: construction, evaluation, global maximisation, optimality checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import ConfigError, NonPositivePrediction, PositionOutOfDomain
from .fidelity import FidelityKind, FidelityModel
from .forward import ForwardModel, GridField, apply_forward
from .geometry import DiracMeasure, Grid, project_into_domain


@dataclass(frozen=True)
class SearchConfig:
    """Coarse-grid-plus-ascent settings for locating the certificate maximum."""

    refine_factor: int = 4
    top_k: int = 5
    max_steps: int = 200
    step_tol: float = 1e-10
    armijo_c: float = 1e-4

    def __post_init__(self):
        if self.refine_factor < 1 or self.top_k < 1 or self.max_steps < 0:
            raise ConfigError("refine_factor, top_k must be >= 1 and max_steps >= 0")


@dataclass(frozen=True, eq=False)
class Certificate:
    """``eta(x) = (1/lam) Phi^* p(x)``, clipped at zero when ``positive_part``.

    ``p`` is minus the fidelity gradient at the current prediction.
    """

    lam: float
    p: GridField
    model: ForwardModel
    positive_part: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")

    def with_lambda(self, lam: float) -> "Certificate":
        return Certificate(lam, self.p, self.model, self.positive_part)

    def unscaled(self, x) -> np.ndarray:
        """``Phi^* p`` at the rows of ``x`` (no 1/lam, no clipping)."""
        return self.model.adjoint(self.p, x)

    def objective(self, raw: np.ndarray) -> np.ndarray:
        """Quantity maximised by the search: ``max(raw, 0)`` or ``|raw|``."""
        return np.maximum(raw, 0.0) if self.positive_part else np.abs(raw)


def build_certificate(
    fid: FidelityModel,
    model: ForwardModel,
    mu: DiracMeasure,
    lam: float,
    alpha: int = 1,
) -> Certificate:
    w = apply_forward(model, mu)
    return certificate_from_prediction(fid, model, w.values, lam, alpha)


def certificate_from_prediction(fid, model, w: np.ndarray, lam: float, alpha: int) -> Certificate:
    if fid.kind is FidelityKind.KL and np.any(w <= 0):
        raise NonPositivePrediction("KL certificate needs Phi mu + b > 0")
    p = -fid.gradient(w)
    return Certificate(float(lam), GridField(model.grid, p), model, bool(alpha))


def _check_inside(cert: Certificate, x: np.ndarray) -> None:
    if not cert.model.domain.contains(x, atol=1e-12 * cert.model.domain.diameter):
        raise PositionOutOfDomain(f"{x.tolist()} lies outside the domain")


def certificate_eval(cert: Certificate, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_inside(cert, x)
    raw = cert.unscaled(x)[0] / cert.lam
    return float(max(raw, 0.0)) if cert.positive_part else float(raw)


def certificate_eval_grad(cert: Certificate, x) -> np.ndarray:
    """x-gradient of :func:`certificate_eval`; zero where the positive part clips."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_inside(cert, x)
    val, grad = cert.model.adjoint_and_gradient(cert.p, x)
    if cert.positive_part and val[0] <= 0:
        return np.zeros_like(x)
    return grad[0] / cert.lam


def search_grid(model: ForwardModel, search: SearchConfig) -> Grid:
    return model.grid.refined(search.refine_factor)


def _ascend(cert: Certificate, x0: np.ndarray, h0: float, search: SearchConfig):
    """Projected, sigma-preconditioned gradient ascent on the search objective."""
    model = cert.model
    dom = model.domain
    sig2 = model.psf.sigma**2
    tol = search.step_tol * float(np.min(dom.widths))
    x, h = x0, h0
    val, grad = model.adjoint_and_gradient(cert.p, x)
    sign = 1.0 if val[0] >= 0 else -1.0
    g = sign * grad[0]
    t = None
    for _ in range(search.max_steps):
        d = sig2 * g
        dnorm = float(np.max(np.abs(d) / model.psf.sigma))
        if dnorm == 0.0:
            break
        if t is None:
            t = 0.25 / dnorm
        accepted = False
        while True:
            x_new = project_into_domain(x + t * d, dom)
            step = x_new - x
            if float(np.max(np.abs(step))) < tol:
                break
            v_new, gr_new = model.adjoint_and_gradient(cert.p, x_new)
            h_new = float(cert.objective(v_new)[0])
            if h_new >= h + search.armijo_c * float(g @ step) and h_new > h:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        x, h = x_new, h_new
        sign = 1.0 if v_new[0] >= 0 else -1.0
        g = sign * gr_new[0]
        t *= 2.0
    return x, h


def _unscaled_argmax(cert: Certificate, search: SearchConfig):
    """Maximiser of the unscaled search objective and its value."""
    model = cert.model
    sgrid = search_grid(model, search)
    raw = model.adjoint_on_grid(cert.p, sgrid)
    h = cert.objective(raw)
    flat = h.ravel()
    if not np.any(flat > 0):
        idx = 0
        return sgrid.points()[idx] if sgrid.size else None, 0.0
    peaks = (h == maximum_filter(h, size=3, mode="nearest")) & (h > 0)
    cand = np.flatnonzero(peaks.ravel())
    order = cand[np.argsort(-flat[cand], kind="stable")][: search.top_k]
    axes = sgrid.axes
    best_x, best_h = None, -np.inf
    for idx in order:
        multi = np.unravel_index(idx, sgrid.shape)
        x0 = np.array([axes[k][multi[k]] for k in range(sgrid.dim)])
        x, hv = _ascend(cert, x0, float(flat[idx]), search)
        if hv > best_h:
            best_x, best_h = x, hv
    return best_x, best_h


def certificate_argmax(cert: Certificate, search: SearchConfig | None = None):
    """Approximate global maximiser of ``|eta|`` (of ``eta`` when clipped).

    The search runs on the lambda-free field ``Phi^* p`` and the value is
    divided by lambda afterwards, so certificates differing only in lambda
    share the same maximiser exactly.
    """
    search = search or SearchConfig()
    x, h = _unscaled_argmax(cert, search)
    return x, h / cert.lam


@dataclass
class OptimalityReport:
    sup_norm: float
    argmax: np.ndarray
    support_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    is_optimal: bool = False


def check_optimality(
    cert: Certificate, mu: DiracMeasure, tol: float = 1e-2, search: SearchConfig | None = None
) -> OptimalityReport:
    x, sup = certificate_argmax(cert, search)
    if len(mu):
        raw = cert.unscaled(mu.positions) / cert.lam
        support = np.maximum(raw, 0.0) if cert.positive_part else raw
    else:
        support = np.zeros(0)
    return OptimalityReport(float(sup), x, support, bool(sup <= 1.0 + tol))
