"""Decreasing-lambda homotopy with warm starts, and the noise-level estimators
used to pick its stopping target."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .certificate import SearchConfig, build_certificate, certificate_argmax
from .errors import ConfigError, EmptyMask, ZeroCertificate
from .fidelity import FidelityKind, FidelityModel, residual_sigma
from .forward import ForwardModel, GridField, apply_forward
from .geometry import DiracMeasure, Grid, tv_norm
from .sfw import SFWConfig, boosted_sfw_solve, objective_monotone, sfw_solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HomotopyConfig:
    sigma_target: float
    c: float
    gamma: float = 0.9
    max_iters: int = 12
    inner: SFWConfig = field(default_factory=lambda: SFWConfig(lam=1.0, max_iters=1))
    init: DiracMeasure | None = None
    check_identities: bool = True

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if not self.c > 0:
            raise ConfigError("c must be positive")
        if not self.sigma_target > 0:
            raise ConfigError("sigma_target must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")


@dataclass
class HomotopyResult:
    measure: DiracMeasure
    lambda_trace: list[dict]
    met_target: bool
    lambda1: float
    initial_sup_eta: float = math.nan

    @property
    def n_iters(self) -> int:
        return len(self.lambda_trace)

    @property
    def final_lambda(self) -> float:
        return self.lambda_trace[-1]["lambda"] if self.lambda_trace else self.lambda1

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([row["sigma"] for row in self.lambda_trace])

    def to_json(self) -> dict:
        return {
            "lambda_trace": [
                {"t": row["t"], "lambda": row["lambda"], "sigma": row["sigma"]}
                for row in self.lambda_trace
            ],
            "met_target": bool(self.met_target),
            "n_spikes": len(self.measure),
        }


def initial_lambda(
    fid: FidelityModel,
    model: ForwardModel,
    init: DiracMeasure | None,
    gamma: float,
    alpha: int = 1,
    search: SearchConfig | None = None,
) -> float:
    """``gamma * ||eta(1, init)||_inf``."""
    if not 0 < gamma < 1:
        raise ConfigError("gamma must lie in (0, 1)")
    init = init if init is not None else DiracMeasure.empty(model.dim)
    cert = build_certificate(fid, model, init, 1.0, alpha)
    _, sup = certificate_argmax(cert, search)
    if not sup > 0:
        raise ZeroCertificate("the initial measure already explains the data")
    return gamma * sup


def update_lambda(lam_t: float, sup_eta_t: float, c: float) -> float:
    """``lam_{t+1} = lam_t * ||eta(lam_t, mu_t)||_inf / (c + 1)``."""
    return lam_t * sup_eta_t / (c + 1.0)


def homotopy_solve(fid: FidelityModel, model: ForwardModel, hcfg: HomotopyConfig) -> HomotopyResult:
    inner = hcfg.inner
    search = inner.search
    solve = boosted_sfw_solve if inner.boosted else sfw_solve
    mu = hcfg.init if hcfg.init is not None else DiracMeasure.empty(model.dim)
    lam = initial_lambda(fid, model, mu, hcfg.gamma, inner.alpha, search)
    lam1 = lam
    initial_sup = math.nan
    if hcfg.check_identities:
        cert = build_certificate(fid, model, mu, lam, inner.alpha)
        initial_sup = certificate_argmax(cert, search)[1]

    trace: list[dict] = []
    met = False
    for t in range(1, hcfg.max_iters + 1):
        res = solve(fid, model, inner.with_lambda(lam), mu)
        mu = res.measure
        sigma = residual_sigma(fid, apply_forward(model, mu))
        row = {
            "t": t,
            "lambda": lam,
            "sigma": sigma,
            "sup_eta": res.sup_eta,
            "inner_converged": bool(res.converged),
            "n_spikes": len(mu),
            "tv": tv_norm(mu),
            "objective": res.trace[-1]["objective"] if res.trace else math.nan,
            "inner_monotone": objective_monotone(res.objectives),
        }
        trace.append(row)
        log.debug("homotopy t=%d lambda=%.6g sigma=%.6g spikes=%d", t, lam, sigma, len(mu))
        if sigma < hcfg.sigma_target:
            met = True
            break
        if not res.sup_eta > 0:
            log.warning("certificate vanished at t=%d; stopping", t)
            break
        if t == hcfg.max_iters:
            break
        lam_next = update_lambda(lam, res.sup_eta, hcfg.c)
        if hcfg.check_identities:
            cert = build_certificate(fid, model, mu, lam_next, inner.alpha)
            row["post_update_sup_eta"] = certificate_argmax(cert, search)[1]
        lam = lam_next
    return HomotopyResult(mu, trace, met, lam1, initial_sup)


def sigma_descent_holds(result: HomotopyResult) -> bool | None:
    """Strict decrease of sigma_t when every inner solve met its optimality test.

    Returns ``None`` when some inner solve did not converge (no guarantee applies).
    """
    rows = result.lambda_trace
    if not all(r["inner_converged"] for r in rows):
        return None
    s = [r["sigma"] for r in rows]
    return all(b < a for a, b in zip(s, s[1:]))


# --------------------------------------------------------------------------
# estimators


def _mask_values(mask, grid: Grid) -> np.ndarray:
    m = np.asarray(mask.values if isinstance(mask, GridField) else mask).astype(bool)
    if m.size != grid.size:
        raise ConfigError(f"mask has {m.size} samples, grid has {grid.size}")
    m = m.reshape(grid.shape)
    if not m.any():
        raise EmptyMask("background mask selects no samples")
    return m


def ring_mask(grid: Grid, margin) -> np.ndarray:
    """Boolean mask of the outer ring: samples within ``margin`` (fraction of the
    axis width) of a boundary. A scalar margin applies to the lateral axes only
    (the first two); pass a per-axis sequence to control every axis."""
    if np.ndim(margin) == 0:
        margins = [float(margin) if k < 2 else 0.0 for k in range(grid.dim)]
    else:
        margins = [float(m) for m in margin]
        if len(margins) != grid.dim:
            raise ConfigError("one margin per axis required")
    mask = np.zeros(grid.shape, dtype=bool)
    for k, (ax, frac) in enumerate(zip(grid.axes, margins)):
        if frac <= 0:
            continue
        lo, hi = grid.domain.lower[k], grid.domain.upper[k]
        width = hi - lo
        edge = (ax < lo + frac * width) | (ax > hi - frac * width)
        shape = [1] * grid.dim
        shape[k] = -1
        mask |= edge.reshape(shape)
    return mask


def estimate_background(y, bg_mask) -> float:
    """Mean of the acquisition over the background samples."""
    grid = y.grid
    m = _mask_values(bg_mask, grid)
    return float(np.mean(y.values[m]))


def estimate_sigma_target(fid: FidelityModel, bg_mask, background: float) -> float:
    """Fidelity of the background-only prediction on the mask, rescaled to the
    whole grid by ``|grid| / |mask|``."""
    grid = fid.grid
    m = _mask_values(bg_mask, grid)
    if fid.kind is FidelityKind.KL and not background > 0:
        raise ConfigError("KL target estimate needs a positive background")
    y = fid.y[m]
    b = np.broadcast_to(np.asarray(background, dtype=float), grid.shape)[m]
    sub = FidelityModel(fid.kind, GridField(Grid.from_spacing([0.0], [1.0], (y.size,)), y))
    return sub.value(b) * grid.size / y.size


def poisson_discrepancy_target(grid: Grid) -> float:
    """Half the number of samples: expected KL of Poisson data at its mean."""
    return grid.size / 2.0
