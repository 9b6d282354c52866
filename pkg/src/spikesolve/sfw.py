"""Sliding Frank-Wolfe for ``min_mu f(Phi mu + b) + lam |mu| (+ mu >= 0)``.

Each outer iteration inserts the certificate maximiser as a new spike,
re-fits amplitudes on the enlarged support (convex), jointly slides
amplitudes and positions (non-convex, local), then prunes vanishing
spikes. The boosted variant skips most sliding steps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .certificate import SearchConfig, certificate_argmax, certificate_from_prediction
from .errors import ConfigError, NonPositivePrediction
from .fidelity import FidelityKind, FidelityModel
from .forward import ForwardModel, _contract, _synthesise
from .geometry import DiracMeasure, project_into_domain

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AmplitudeSolverConfig:
    max_iters: int = 500
    grad_tol: float = 1e-8


@dataclass(frozen=True)
class SlideSolverConfig:
    max_iters: int = 200
    grad_tol: float = 1e-8
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    method: str = "lbfgsb"  # or "pg"


@dataclass(frozen=True)
class SFWConfig:
    lam: float
    alpha: int = 1
    max_iters: int = 20
    optimality_tol: float = 1e-2
    amp_solver: AmplitudeSolverConfig = field(default_factory=AmplitudeSolverConfig)
    slide_solver: SlideSolverConfig = field(default_factory=SlideSolverConfig)
    prune_tol: float = 1e-6
    boosted: bool = False
    boost_trigger: float = 1.5
    search: SearchConfig = field(default_factory=SearchConfig)

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if self.alpha not in (0, 1):
            raise ConfigError("alpha must be 0 or 1")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.optimality_tol <= 0 or self.prune_tol < 0:
            raise ConfigError("tolerances must be positive")

    def with_lambda(self, lam: float) -> "SFWConfig":
        return replace(self, lam=lam)


@dataclass
class SolveResult:
    measure: DiracMeasure
    converged: bool
    trace: list[dict] = field(default_factory=list)
    iterations: int = 0
    n_slides: int = 0
    sup_eta: float = math.nan
    argmax: np.ndarray | None = None

    @property
    def objectives(self) -> np.ndarray:
        return np.array([row["objective"] for row in self.trace])

    def trace_json(self) -> dict:
        return {
            "iters": [
                {k: row[k] for k in ("k", "objective", "sup_eta", "n_spikes")} for row in self.trace
            ],
            "converged": bool(self.converged),
        }


# --------------------------------------------------------------------------
# objective pieces


def objective_monotone(objectives, rtol: float = 1e-9) -> bool:
    """True when a recorded ``T_lambda`` trace never increases (up to rounding)."""
    obj = np.asarray(objectives, dtype=float)
    return bool(np.all(np.diff(obj) <= rtol * np.maximum(1.0, np.abs(obj[:-1]))))


def _prediction(model: ForwardModel, a: np.ndarray, X: np.ndarray) -> np.ndarray:
    return model.synthesise(X, a) + model.background_array


def objective_value(fid: FidelityModel, model: ForwardModel, a, X, lam: float, alpha: int) -> float:
    """``T_lam(a, X) = f(Phi_X a + b) + lam ||a||_1 + alpha * indicator(a >= 0)``."""
    a = np.asarray(a, dtype=float)
    if alpha and np.any(a < 0):
        return math.inf
    X = np.asarray(X, dtype=float).reshape(a.size, model.dim)
    return fid.value(_prediction(model, a, X)) + lam * float(np.sum(np.abs(a)))


def sliding_objective(fid, model, a, X, lam: float, signs=None) -> float:
    """Smooth objective used while sliding: the l1 term is linear on a fixed orthant."""
    a = np.asarray(a, dtype=float)
    signs = np.ones_like(a) if signs is None else signs
    X = np.asarray(X, dtype=float).reshape(a.size, model.dim)
    return fid.value(_prediction(model, a, X)) + lam * float(signs @ a)


def sliding_gradient(fid, model, a, X, lam: float, signs=None):
    """Exact gradient of :func:`sliding_objective` w.r.t. amplitudes and positions."""
    a = np.asarray(a, dtype=float)
    signs = np.ones_like(a) if signs is None else signs
    X = np.asarray(X, dtype=float).reshape(a.size, model.dim)
    g = fid.gradient(_prediction(model, a, X))
    val, grad = model.adjoint_and_gradient(g, X)
    return val + lam * signs, a[:, None] * grad


# --------------------------------------------------------------------------
# amplitude step


def _power_iteration(G: np.ndarray, iters: int = 100) -> float:
    v = np.ones(G.shape[0]) / math.sqrt(G.shape[0])
    est = 0.0
    for _ in range(iters):
        w = G @ v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(nrm - est) <= 1e-12 * nrm:
            est = nrm
            break
        est = nrm
    return est


def _soft(v: np.ndarray, thr: float, alpha: int) -> np.ndarray:
    if alpha:
        return np.maximum(v - thr, 0.0)
    return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)


def _amp_l2(A, r0, lam, alpha, cfg, a0):
    """Monotone FISTA on ``0.5||A a - r0||^2 + lam ||a||_1`` with step ``1/L``."""
    G = A.T @ A
    c = A.T @ r0
    L = 1.01 * _power_iteration(G)
    if L == 0.0:
        return np.zeros_like(a0)

    def F(a):
        return 0.5 * float(a @ G @ a) - float(c @ a) + lam * float(np.sum(np.abs(a)))

    x = a0.copy()
    fx = F(x)
    z = x.copy()
    tk = 1.0
    for _ in range(cfg.max_iters):
        u = _soft(z - (G @ z - c) / L, lam / L, alpha)
        fu = F(u)
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
        x_new, fx_new = (u, fu) if fu <= fx else (x, fx)
        z = x_new + (tk / t_next) * (u - x_new) + ((tk - 1) / t_next) * (x_new - x)
        x, fx, tk = x_new, fx_new, t_next
        res = L * float(np.linalg.norm(x - _soft(x - (G @ x - c) / L, lam / L, alpha)))
        if res <= cfg.grad_tol:
            break
    return x


def _amp_kl(fid, A, b, lam, alpha, cfg, a0):
    """Projected (alpha=1) or proximal (alpha=0) gradient, Barzilai-Borwein
    trial steps and backtracking on the composite objective."""
    y = fid.y.ravel()

    def fval(a):
        w = A @ a + b
        if np.any(w <= 0):
            return math.inf, w
        return fid.value(w) + lam * float(np.sum(np.abs(a))), w

    def smooth_grad(w):
        return A.T @ (1.0 - y / w)

    a = a0.copy()
    F, w = fval(a)
    if not math.isfinite(F):
        raise NonPositivePrediction("KL amplitude step started from a non-positive prediction")
    g = smooth_grad(w)
    curv = np.einsum("ji,ji,j->i", A, A, y / (w * w))
    t = 1.0 / max(float(np.max(curv)), 1e-12)
    stall = 0
    for _ in range(cfg.max_iters):
        if float(np.linalg.norm(a - _soft(a - g, lam, alpha))) <= cfg.grad_tol:
            break
        while True:
            a_new = _soft(a - t * g, t * lam, alpha)
            d = a_new - a
            if not np.any(d):
                return a
            F_new, w_new = fval(a_new)
            if F_new <= F - (1e-4 / t) * float(d @ d):
                break
            t *= 0.5
            if t < 1e-300:
                return a
        g_new = smooth_grad(w_new)
        sy = float(d @ (g_new - g))
        stall = stall + 1 if F - F_new <= 1e-15 * abs(F) else 0
        a, F, w, g = a_new, F_new, w_new, g_new
        if stall >= 3:
            break
        t = float(d @ d) / sy if sy > 0 else 2.0 * t
    return a


def amplitude_step(
    fid: FidelityModel,
    model: ForwardModel,
    positions,
    lam: float,
    alpha: int,
    solver_cfg: AmplitudeSolverConfig | None = None,
    warm_start=None,
) -> np.ndarray:
    """Amplitudes minimising ``f(Phi_X a + b) + lam ||a||_1 (+ a >= 0)`` for fixed ``X``."""
    cfg = solver_cfg or AmplitudeSolverConfig()
    X = np.asarray(positions, dtype=float).reshape(-1, model.dim)
    n = X.shape[0]
    if n == 0:
        return np.zeros(0)
    a0 = np.zeros(n) if warm_start is None else np.array(warm_start, dtype=float)
    if alpha:
        a0 = np.maximum(a0, 0.0)
    A = model.kernel_matrix(X)
    b = model.background_array.ravel()
    if fid.kind is FidelityKind.L2:
        a = _amp_l2(A, fid.y.ravel() - b, lam, alpha, cfg, a0)
    else:
        a = _amp_kl(fid, A, b, lam, alpha, cfg, a0)
    # never return something worse than the warm start
    if objective_value(fid, model, a, X, lam, alpha) > objective_value(fid, model, a0, X, lam, alpha):
        return a0
    return a


# --------------------------------------------------------------------------
# sliding step


class _SlideEval:
    """Objective and gradient of the sliding problem sharing one kernel build."""

    def __init__(self, fid, model, lam, signs):
        self.fid, self.model, self.lam, self.signs = fid, model, lam, signs
        self.b = model.background_array

    def value(self, a, X):
        Ks, Ds = self.model.kernels(X)
        w = _synthesise(a, Ks) + self.b
        return self.fid.value(w) + self.lam * float(self.signs @ a), (Ks, Ds, w)

    def gradient(self, a, cache):
        Ks, Ds, w = cache
        g = self.fid.gradient(w)
        ga = _contract(g, Ks) + self.lam * self.signs
        gx = np.empty((a.size, len(Ks)))
        for k in range(len(Ks)):
            factors = list(Ks)
            factors[k] = Ds[k]
            gx[:, k] = a * _contract(g, factors)
        return ga, gx


def _slide(fid, model, a, X, lam, alpha, cfg: SlideSolverConfig):
    """Projected gradient with a per-spike diagonal preconditioner.

    Position steps are scaled by ``2 sigma^2 / a_i^2``, the ratio of the
    amplitude and position curvatures of a Gaussian bump, so one step length
    serves both blocks.
    """
    a = a.astype(float).copy()
    X = X.astype(float).copy()
    n = a.size
    if n == 0:
        return a, X
    signs = np.ones(n) if alpha else np.where(a < 0, -1.0, 1.0)
    dom = model.domain
    sigma = model.psf.sigma
    ev = _SlideEval(fid, model, lam, signs)

    F, cache = ev.value(a, X)
    ga, gx = ev.gradient(a, cache)
    Ks = cache[0]
    A = Ks[0]
    for K in Ks[1:]:
        A = (A[:, :, None] * K[:, None, :]).reshape(n, -1)
    if fid.kind is FidelityKind.KL:
        weight = fid.y.ravel() / (cache[2].ravel() ** 2)
    else:
        weight = 1.0
    t = 1.0 / max(float(np.max(np.sum(A * A * weight, axis=1))), 1e-300)
    scale_floor = 1e-3 * max(float(np.max(np.abs(a))), 1e-300)
    stall = 0
    for _ in range(cfg.max_iters):
        pos_scale = 2.0 * sigma**2 / np.maximum(a * a, scale_floor**2)[:, None]
        da, dx = -ga, -gx * pos_scale
        # cap trial moves at one PSF width
        move = float(np.max(np.abs(t * dx) / sigma))
        if move > 1.0:
            t /= move
        accepted = False
        while t > 1e-300:
            a_new = signs * np.maximum(signs * (a + t * da), 0.0)
            X_new = project_into_domain(X + t * dx, dom)
            sa, sx = a_new - a, X_new - X
            if not (np.any(sa) or np.any(sx)):
                break
            F_new, cache_new = ev.value(a_new, X_new)
            lin = float(ga @ sa) + float(np.sum(gx * sx))
            if F_new < F and F_new <= F + cfg.armijo_c * lin:
                accepted = True
                break
            t *= cfg.backtrack_factor
        if not accepted:
            break
        rel = (F - F_new) / max(abs(F), 1e-300)
        a, X, F = a_new, X_new, F_new
        ga, gx = ev.gradient(a, cache_new)
        if math.sqrt(float(sa @ sa) + float(np.sum((sx / sigma) ** 2))) <= cfg.grad_tol:
            break
        stall = stall + 1 if rel < 1e-15 else 0
        if stall >= 3:
            break
        t /= cfg.backtrack_factor
    return a, X


def _slide_lbfgsb(fid, model, a, X, lam, alpha, cfg: SlideSolverConfig):
    """Bound-constrained quasi-Newton alternative to :func:`_slide`."""
    from scipy.optimize import minimize

    a = a.astype(float).copy()
    X = X.astype(float).copy()
    n, d = X.shape
    if n == 0:
        return a, X
    signs = np.ones(n) if alpha else np.where(a < 0, -1.0, 1.0)
    sigma = model.psf.sigma
    dom = model.domain
    ev = _SlideEval(fid, model, lam, signs)

    def unpack(z):
        return z[:n], z[n:].reshape(n, d) * sigma

    def fun(z):
        aa, XX = unpack(z)
        F, cache = ev.value(aa, XX)
        if not math.isfinite(F):
            return 1e300, np.zeros_like(z)
        ga, gx = ev.gradient(aa, cache)
        return F, np.concatenate([ga, (gx * sigma).ravel()])

    bounds = [(0.0, None) if s_ > 0 else (None, 0.0) for s_ in signs]
    lo, hi = dom.lower / sigma, dom.upper / sigma
    bounds += [(lo[k], hi[k]) for _ in range(n) for k in range(d)]
    z0 = np.concatenate([a, (X / sigma).ravel()])
    F0 = fun(z0)[0]
    out = minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": cfg.max_iters, "gtol": cfg.grad_tol, "ftol": 1e-15})
    aa, XX = unpack(out.x)
    aa = signs * np.maximum(signs * aa, 0.0)
    XX = project_into_domain(XX, dom)
    if ev.value(aa, XX)[0] < F0:
        return aa, XX
    return a, X


def _slide_any(fid, model, a, X, lam, alpha, cfg: SlideSolverConfig):
    if cfg.method == "lbfgsb":
        return _slide_lbfgsb(fid, model, a, X, lam, alpha, cfg)
    return _slide(fid, model, a, X, lam, alpha, cfg)


def sliding_step(
    fid: FidelityModel,
    model: ForwardModel,
    mu: DiracMeasure,
    lam: float,
    alpha: int,
    solver_cfg: SlideSolverConfig | None = None,
) -> DiracMeasure:
    """Joint local descent on amplitudes and positions, never increasing the objective."""
    cfg = solver_cfg or SlideSolverConfig()
    if len(mu) == 0:
        return mu
    a, X = _slide_any(fid, model, mu.amplitudes, mu.positions, lam, alpha, cfg)
    return DiracMeasure(X, a)


# --------------------------------------------------------------------------
# outer loop


def _merge_duplicates(a: np.ndarray, X: np.ndarray):
    if a.size < 2:
        return a, X
    _, first, inverse = np.unique(X, axis=0, return_index=True, return_inverse=True)
    if first.size == a.size:
        return a, X
    order = np.sort(first)
    remap = {old: new for new, old in enumerate(order)}
    merged = np.zeros(order.size)
    inverse = np.asarray(inverse).ravel()
    for i, grp in enumerate(inverse):
        merged[remap[first[grp]]] += a[i]
    return merged, X[order]


def _prune(fid, model, a, X, lam, alpha, cfg: SFWConfig):
    a, X = _merge_duplicates(a, X)
    keep = np.abs(a) > cfg.prune_tol
    if np.all(keep):
        return a, X
    before = objective_value(fid, model, a, X, lam, alpha)
    a2, X2 = a[keep], X[keep]
    if objective_value(fid, model, a2, X2, lam, alpha) <= before:
        return a2, X2
    a2 = amplitude_step(fid, model, X2, lam, alpha, cfg.amp_solver, a2)
    if objective_value(fid, model, a2, X2, lam, alpha) <= before:
        return a2, X2
    return a, X


def _run(fid, model, config: SFWConfig, init: DiracMeasure | None, boosted: bool) -> SolveResult:
    lam, alpha = config.lam, config.alpha
    if fid.kind is FidelityKind.KL and not model.min_background > 0:
        raise ConfigError("KL fidelity needs a strictly positive background")
    if fid.grid.shape != model.grid.shape:
        raise ConfigError("observation and model grids differ")
    init = init if init is not None and len(init) else DiracMeasure.empty(model.dim)
    if alpha and np.any(init.amplitudes < 0):
        raise ConfigError("non-negative model initialised with negative amplitudes")
    a = init.amplitudes.copy()
    X = init.positions.reshape(-1, model.dim).copy()

    T = objective_value(fid, model, a, X, lam, alpha)
    trace: list[dict] = []
    n_slides = 0
    pending_slide = False
    converged = False
    iterations = 0
    x_star, v = None, math.nan

    def check(k):
        w = _prediction(model, a, X)
        cert = certificate_from_prediction(fid, model, w, lam, alpha)
        xs, val = certificate_argmax(cert, config.search)
        trace.append({"k": k, "objective": T, "sup_eta": float(val), "n_spikes": int(a.size)})
        return xs, float(val)

    for k in range(config.max_iters):
        x_star, v = check(k)
        if v <= 1.0 + config.optimality_tol:
            converged = True
            break
        iterations += 1
        X_half = np.vstack([X, x_star[None, :]])
        a_half = amplitude_step(fid, model, X_half, lam, alpha, config.amp_solver, np.append(a, 0.0))
        a, X = _merge_duplicates(a_half, X_half)
        if not boosted or v < config.boost_trigger:
            a, X = _slide_any(fid, model, a, X, lam, alpha, config.slide_solver)
            n_slides += 1
            pending_slide = False
        else:
            pending_slide = True
        a, X = _prune(fid, model, a, X, lam, alpha, config)
        T = objective_value(fid, model, a, X, lam, alpha)
    else:
        if boosted and pending_slide:
            a, X = _slide_any(fid, model, a, X, lam, alpha, config.slide_solver)
            n_slides += 1
            a, X = _prune(fid, model, a, X, lam, alpha, config)
            T = objective_value(fid, model, a, X, lam, alpha)
            pending_slide = False
        x_star, v = check(config.max_iters)
        converged = v <= 1.0 + config.optimality_tol

    if converged and boosted and pending_slide:
        a, X = _slide_any(fid, model, a, X, lam, alpha, config.slide_solver)
        n_slides += 1
        a, X = _prune(fid, model, a, X, lam, alpha, config)
        T = objective_value(fid, model, a, X, lam, alpha)
        x_star, v = check(iterations + 1)
        converged = v <= 1.0 + config.optimality_tol

    return SolveResult(
        measure=DiracMeasure(X, a),
        converged=converged,
        trace=trace,
        iterations=iterations,
        n_slides=n_slides,
        sup_eta=v,
        argmax=x_star,
    )


def sfw_solve(
    fid: FidelityModel, model: ForwardModel, config: SFWConfig, init: DiracMeasure | None = None
) -> SolveResult:
    return _run(fid, model, config, init, boosted=config.boosted)


def boosted_sfw_solve(
    fid: FidelityModel, model: ForwardModel, config: SFWConfig, init: DiracMeasure | None = None
) -> SolveResult:
    """SFW that slides only when the inserted spike's certificate value is below
    ``config.boost_trigger``, with one final slide before returning."""
    return _run(fid, model, config, init, boosted=True)
