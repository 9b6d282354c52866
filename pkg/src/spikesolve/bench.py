"""Seeded replicate harness: lambda sweeps and homotopy runs over many seeds,
with per-replicate rows, order-independent aggregates and plot data."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .config import RunConfig, homotopy_config, load_problem, resolve_sigma_target, sfw_config
from .errors import SpikesolveError
from .homotopy import homotopy_solve
from .metrics import metrics_report
from .sfw import boosted_sfw_solve, objective_monotone, sfw_solve

log = logging.getLogger(__name__)

METRIC_KEYS = ("tp", "fp", "fn", "jaccard", "rmse_x", "rmse_a", "n_spikes", "iterations", "seconds")
ROW_KEYS = ("seed", "model", "lambda", "status", "error") + METRIC_KEYS + ("monotone", "met_target")
DEFAULT_LAMBDAS = {"logspace": [-2.0, 1.0, 20]}


def lambda_grid(spec) -> list[float]:
    """``{"logspace": [lo_exp, hi_exp, n]}`` or an explicit list."""
    if isinstance(spec, dict) and "logspace" in spec:
        lo, hi, n = spec["logspace"]
        return [float(v) for v in np.logspace(lo, hi, int(n))]
    if isinstance(spec, (list, tuple)) and spec:
        return [float(v) for v in spec]
    raise SpikesolveError("lambdas must be a non-empty list or {'logspace': [lo, hi, n]}")


def run_replicate(rc: RunConfig, seed: int, model: str, lam: float | None, delta: float) -> dict:
    """One (seed, model, lambda) cell; ``lam=None`` runs the homotopy."""
    rc = replace(rc, model=model)
    row = {"seed": seed, "model": model, "lambda": lam, "status": "ok", "error": ""}
    t0 = time.perf_counter()
    try:
        prob = load_problem(rc, seed)
        fid = prob.fidelity(model)
        if lam is None:
            target, _ = resolve_sigma_target(rc, prob)
            res = homotopy_solve(fid, prob.model, homotopy_config(rc, target))
            mu, iters = res.measure, res.n_iters
            row["met_target"] = bool(res.met_target)
            row["monotone"] = all(r["inner_monotone"] for r in res.lambda_trace)
        else:
            cfg = sfw_config(rc, lam)
            solve = boosted_sfw_solve if cfg.boosted else sfw_solve
            res = solve(fid, prob.model, cfg)
            mu, iters = res.measure, res.iterations
            row["monotone"] = objective_monotone(res.objectives)
            row["met_target"] = None
        row.update(metrics_report(prob.gt, mu, delta))
        row.pop("delta")
        row["n_spikes"] = len(mu)
        row["iterations"] = iters
    except SpikesolveError as exc:
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    row["seconds"] = time.perf_counter() - t0
    return row


def _task(args):
    return run_replicate(*args)


def run_bench(rc: RunConfig, workers: int = 1) -> list[dict]:
    """Every replicate row, sorted by (model, lambda, seed) whatever the
    completion order."""
    if rc.scenario is None:
        raise SpikesolveError("bench needs a scenario (ground truth is required)")
    mode = rc.bench.get("mode", "sweep")
    models = list(rc.bench.get("models", ["kl", "l2"]))
    delta = float(rc.delta if rc.delta is not None else rc.bench.get("delta", 0.05))
    if mode == "sweep":
        lams = [rc.lam] if rc.lam is not None else lambda_grid(rc.bench.get("lambdas", DEFAULT_LAMBDAS))
    elif mode == "homotopy":
        lams = [None]
    else:
        raise SpikesolveError(f"unknown bench mode {mode!r}")
    tasks = [(rc, s, m, lam, delta) for m in models for lam in lams for s in rc.seeds]
    if workers <= 1 or len(tasks) == 1:
        rows = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    order = {m: i for i, m in enumerate(models)}
    rows.sort(key=lambda r: (order[r["model"]], -1.0 if r["lambda"] is None else r["lambda"], r["seed"]))
    return rows


def _stat(values) -> dict:
    v = [float(x) for x in values if x is not None and not (isinstance(x, float) and math.isnan(x))]
    if not v:
        return {"mean": None, "std": None, "n": 0}
    arr = np.array(sorted(v))
    return {"mean": float(np.mean(arr)), "std": float(np.std(arr)), "n": len(v)}


def aggregate(rows: list[dict], mode: str, seeds, delta: float, scenario: str = "") -> dict:
    """Mean and std per (model, lambda); values are sorted before reduction so
    the result does not depend on the row order."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["model"], r["lambda"]), []).append(r)
    out_groups = []
    best: dict[str, dict] = {}
    for (model, lam), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1] or 0.0)):
        ok = [r for r in rs if r["status"] == "ok"]
        stats = {k: _stat(r.get(k) for r in ok) for k in METRIC_KEYS}
        out_groups.append(
            {"model": model, "lambda": lam, "n_ok": len(ok), "n_failed": len(rs) - len(ok), "metrics": stats}
        )
        j = stats["jaccard"]["mean"]
        cur = best.get(model)
        if j is not None and (cur is None or cur["jaccard"] is None or j > cur["jaccard"]):
            best[model] = {"lambda": lam, "jaccard": j}
        elif cur is None:
            best[model] = {"lambda": lam, "jaccard": None}
    failures = [
        {"seed": r["seed"], "model": r["model"], "lambda": r["lambda"], "error": r["error"]}
        for r in rows
        if r["status"] != "ok"
    ]
    return {
        "schema": "bench_aggregate.v1",
        "mode": mode,
        "scenario": scenario,
        "seeds": sorted({int(r["seed"]) for r in rows}),
        "delta": float(delta),
        "groups": out_groups,
        "best": best,
        "failures": failures,
    }


def plot_rows(agg: dict) -> list[dict]:
    """One row per (model, lambda) with mean/std columns for the sweep curves
    (TP, FP, FN, Jaccard, RMSE against lambda)."""
    out = []
    for g in agg["groups"]:
        row = {"model": g["model"], "lambda": g["lambda"]}
        for k in ("tp", "fp", "fn", "jaccard", "rmse_x", "rmse_a"):
            row[f"{k}_mean"] = g["metrics"][k]["mean"]
            row[f"{k}_std"] = g["metrics"][k]["std"]
        out.append(row)
    return out
