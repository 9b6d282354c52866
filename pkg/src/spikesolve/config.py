"""Run configuration: JSON config files merged with command-line overrides,
and the helpers that turn a config into solver inputs."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .certificate import SearchConfig
from .errors import ConfigError, DataIOError
from .fidelity import FidelityKind, FidelityModel
from .forward import ForwardModel, GaussianPSF, GridField, apply_forward
from .geometry import DiracMeasure
from .homotopy import (
    HomotopyConfig,
    estimate_background,
    estimate_sigma_target,
    poisson_discrepancy_target,
    ring_mask,
)
from .io import read_field, read_mask
from .sfw import AmplitudeSolverConfig, SFWConfig, SlideSolverConfig
from .simulation import ScenarioConfig, paper_scenario, simulate

log = logging.getLogger(__name__)

COMMANDS = ("simulate", "solve", "homotopy", "metrics", "bench", "certdump")

# Homotopy constants per model when the config does not set them.
DEFAULT_C = {"kl": 40.0, "l2": 15.0}
ORACLE_FACTOR = 1.5
DEFAULT_RING = 0.2

_SFW_KEYS = {
    "max_iters", "optimality_tol", "prune_tol", "boosted", "boost_trigger",
    "slide_method", "slide_max_iters", "amp_max_iters", "refine_factor", "top_k",
}
_HOM_KEYS = {"c", "gamma", "max_iters", "inner_iters"}
_BENCH_KEYS = {"mode", "lambdas", "models", "delta", "workers"}


@dataclass
class RunConfig:
    command: str
    model: str = "kl"
    lam: float | None = None
    alpha: int | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    scenario: str | dict | None = None
    data: str | None = None
    sigma: list[float] | None = None
    background: float | None = None
    ground_truth: str | None = None
    spikes: str | None = None
    sigma_target: str = "auto"
    bg_ring: float | list[float] | None = None
    bg_mask: str | None = None
    delta: float | None = None
    out: str = "out"
    sfw: dict = field(default_factory=dict)
    homotopy: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.model not in ("l2", "kl"):
            raise ConfigError("model must be 'l2' or 'kl'")
        if self.alpha is not None and self.alpha not in (0, 1):
            raise ConfigError("alpha must be 0 or 1")
        if self.lam is not None and not self.lam > 0:
            raise ConfigError("lambda must be positive")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        self.seeds = [int(s) for s in self.seeds]
        for name, allowed in (("sfw", _SFW_KEYS), ("homotopy", _HOM_KEYS), ("bench", _BENCH_KEYS)):
            extra = set(getattr(self, name)) - allowed
            if extra:
                raise ConfigError(f"unknown {name} keys: {sorted(extra)}")
        if self.bg_ring is not None and self.bg_mask is not None:
            raise ConfigError("give either a background ring or a mask file, not both")

    @property
    def effective_alpha(self) -> int:
        """Positivity constraint: on for KL, off for L2 unless configured."""
        if self.alpha is not None:
            return self.alpha
        return 1 if self.model == "kl" else 0

    @property
    def seed(self) -> int:
        return self.seeds[0]


def parse_seeds(text: str) -> list[int]:
    """``"7"`` -> [7]; ``"0..19"`` -> [0, ..., 19] (inclusive); ``"1,4,9"`` -> list."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
            if hi < lo:
                raise ConfigError(f"empty seed range {text!r}")
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad seed spec {text!r}") from exc


def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataIOError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    if "seed" in raw:
        raw["seeds"] = [raw.pop("seed")]
    names = {f.name for f in fields(RunConfig)} - {"command"}
    extra = set(raw) - names
    if extra:
        raise ConfigError(f"{path}: unknown config keys {sorted(extra)}")
    return raw


def build_run_config(command: str, file_values: dict, overrides: dict) -> RunConfig:
    """File values first, then every override that is not ``None``."""
    merged = dict(file_values)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(command=command, **merged)


# --------------------------------------------------------------------------
# solver configs


def sfw_config(rc: RunConfig, lam: float) -> SFWConfig:
    o = rc.sfw
    search = SearchConfig(
        refine_factor=int(o.get("refine_factor", 4)), top_k=int(o.get("top_k", 5))
    )
    slide = SlideSolverConfig(
        max_iters=int(o.get("slide_max_iters", 200)), method=o.get("slide_method", "lbfgsb")
    )
    if slide.method not in ("lbfgsb", "pg"):
        raise ConfigError("slide_method must be 'lbfgsb' or 'pg'")
    return SFWConfig(
        lam=float(lam),
        alpha=rc.effective_alpha,
        max_iters=int(o.get("max_iters", 20)),
        optimality_tol=float(o.get("optimality_tol", 1e-2)),
        prune_tol=float(o.get("prune_tol", 1e-6)),
        boosted=bool(o.get("boosted", False)),
        boost_trigger=float(o.get("boost_trigger", 1.5)),
        amp_solver=AmplitudeSolverConfig(max_iters=int(o.get("amp_max_iters", 500))),
        slide_solver=slide,
        search=search,
    )


def homotopy_config(rc: RunConfig, sigma_target: float, init: DiracMeasure | None = None):
    o = rc.homotopy
    inner = replace(sfw_config(rc, 1.0), max_iters=int(o.get("inner_iters", 1)))
    return HomotopyConfig(
        sigma_target=float(sigma_target),
        c=float(o.get("c", DEFAULT_C[rc.model])),
        gamma=float(o.get("gamma", 0.9)),
        max_iters=int(o.get("max_iters", 12)),
        inner=inner,
        init=init,
    )


# --------------------------------------------------------------------------
# problem assembly


@dataclass
class Problem:
    y: GridField
    model: ForwardModel
    gt: DiracMeasure | None = None
    scenario: ScenarioConfig | None = None

    def fidelity(self, kind: str) -> FidelityModel:
        return FidelityModel(FidelityKind(kind), self.y)


def scenario_config(spec, seed: int) -> ScenarioConfig:
    if isinstance(spec, str):
        return paper_scenario(spec, seed)
    if isinstance(spec, dict):
        d = dict(spec)
        d["seed"] = int(seed)
        return ScenarioConfig.from_dict(d)
    raise ConfigError("scenario must be a name or an object")


def background_mask(rc: RunConfig, y: GridField) -> np.ndarray:
    if rc.bg_mask is not None:
        m = read_mask(rc.bg_mask)
        if m.shape != y.grid.shape:
            raise ConfigError(f"mask shape {m.shape} differs from data shape {y.grid.shape}")
        return m
    return ring_mask(y.grid, rc.bg_ring if rc.bg_ring is not None else DEFAULT_RING)


def load_problem(rc: RunConfig, seed: int | None = None) -> Problem:
    """Simulate the configured scenario, or read data from ``rc.data``."""
    seed = rc.seed if seed is None else seed
    if rc.data is None:
        if rc.scenario is None:
            raise ConfigError("either a scenario or a data file is required")
        cfg = scenario_config(rc.scenario, seed)
        gt, y, model = simulate(cfg)
        if rc.background is not None:
            model = model.with_background(rc.background)
        return Problem(y, model, gt, cfg)

    y = read_field(rc.data)
    if rc.sigma is None:
        raise ConfigError("reading data needs the PSF widths ('sigma') in the config")
    sigma = np.broadcast_to(np.asarray(rc.sigma, dtype=float), (y.grid.dim,))
    b = rc.background
    if b is None:
        b = estimate_background(y, background_mask(rc, y))
        log.info("estimated background %.6g", b)
    model = ForwardModel(GaussianPSF(sigma), y.grid, float(b))
    gt = DiracMeasure.load(rc.ground_truth) if rc.ground_truth else None
    return Problem(y, model, gt)


def require_positive_background(rc: RunConfig, model: ForwardModel) -> None:
    if rc.model == "kl" and not model.min_background > 0:
        raise ConfigError("KL fidelity needs a strictly positive background")


def resolve_sigma_target(rc: RunConfig, prob: Problem) -> tuple[float, str]:
    """Stopping level for the homotopy and the rule that produced it.

    ``auto`` uses the oracle ``1.5 * f(Phi mu_gt + b)`` when a ground truth is
    known, the background-mask estimator otherwise.
    """
    rule = rc.sigma_target
    fid = prob.fidelity(rc.model)
    if rule == "bertero":
        value = poisson_discrepancy_target(prob.y.grid)
        if rc.model != "kl":
            log.warning("the |grid|/2 discrepancy rule is derived for Poisson data")
    elif rule == "oracle" or (rule == "auto" and prob.gt is not None):
        if prob.gt is None:
            raise ConfigError("the oracle target needs a ground truth")
        value = ORACLE_FACTOR * fid.value(apply_forward(prob.model, prob.gt))
        rule = "oracle"
    elif rule == "auto":
        mask = background_mask(rc, prob.y)
        b = estimate_background(prob.y, mask)
        value = estimate_sigma_target(fid, mask, b)
        log.info("background estimate %.6g, sigma_target estimate %.6g", b, value)
        if rc.model == "l2":
            log.warning("the mask estimate of the L2 target is known to be rough")
        rule = "mask"
    else:
        try:
            value = float(rule)
        except ValueError as exc:
            raise ConfigError(f"bad sigma target {rule!r}") from exc
        rule = "value"
    if not (value > 0 and math.isfinite(value)):
        raise ConfigError(f"sigma target must be positive and finite, got {value}")
    log.info("sigma_target (%s) = %.6g", rule, value)
    return float(value), rule


def worker_count(rc: RunConfig) -> int:
    n = int(rc.bench.get("workers", os.cpu_count() or 1))
    cap = os.environ.get("SPIKESOLVE_THREADS")
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError as exc:
            raise ConfigError(f"SPIKESOLVE_THREADS must be an integer, got {cap!r}") from exc
    return max(1, n)
