"""``spikesolve`` command line.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bench import ROW_KEYS, aggregate, plot_rows, run_bench
from .certificate import build_certificate, certificate_argmax, search_grid
from .config import (
    COMMANDS,
    RunConfig,
    build_run_config,
    homotopy_config,
    load_config_file,
    load_problem,
    parse_seeds,
    require_positive_background,
    resolve_sigma_target,
    scenario_config,
    sfw_config,
    worker_count,
)
from .errors import ConfigError, DataIOError, NumericalError, SpikesolveError
from .forward import GridField
from .geometry import DiracMeasure
from .homotopy import homotopy_solve, initial_lambda
from .io import write_field
from .metrics import metrics_report
from .sfw import boosted_sfw_solve, sfw_solve
from .simulation import simulate

log = logging.getLogger("spikesolve")


def _write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_csv(path: Path, rows: list[dict], columns) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    return path


def _field_name(stem: str, dim: int) -> str:
    return f"{stem}.raw" if dim == 3 else f"{stem}.csv"


def _out(rc: RunConfig) -> Path:
    return Path(rc.out)


def _init_measure(rc: RunConfig, dim: int) -> DiracMeasure | None:
    if rc.spikes is None:
        return None
    mu = DiracMeasure.load(rc.spikes)
    if mu.dim != dim and len(mu):
        raise ConfigError(f"spikes file is {mu.dim}D, data is {dim}D")
    return mu


# --------------------------------------------------------------------------
# commands


def cmd_simulate(rc: RunConfig) -> list[Path]:
    """Ground-truth CSV, acquisition field and scenario JSON per seed."""
    if rc.scenario is None:
        raise ConfigError("simulate needs --scenario or a scenario block")
    written = []
    multi = len(rc.seeds) > 1
    for seed in rc.seeds:
        cfg = scenario_config(rc.scenario, seed)
        gt, y, _ = simulate(cfg)
        out = _out(rc) / f"seed{seed}" if multi else _out(rc)
        out.mkdir(parents=True, exist_ok=True)
        gt.save(out / "ground_truth.csv")
        write_field(y, out / _field_name("acquisition", y.grid.dim))
        (out / "scenario.json").write_text(cfg.to_json(), encoding="utf-8")
        written += [out / "ground_truth.csv", out / _field_name("acquisition", y.grid.dim), out / "scenario.json"]
        log.info("seed %d: %d spikes, %d samples", seed, len(gt), y.grid.size)
    return written


def cmd_solve(rc: RunConfig) -> list[Path]:
    if rc.lam is None:
        raise ConfigError("solve needs --lambda")
    prob = load_problem(rc)
    require_positive_background(rc, prob.model)
    cfg = sfw_config(rc, rc.lam)
    solve = boosted_sfw_solve if cfg.boosted else sfw_solve
    t0 = time.perf_counter()
    res = solve(prob.fidelity(rc.model), prob.model, cfg, _init_measure(rc, prob.model.dim))
    trace = res.trace_json()
    trace.update(
        schema="solve_trace.v1",
        model=rc.model,
        alpha=cfg.alpha,
        seed=rc.seed if prob.scenario is not None else None,
        n_spikes=len(res.measure),
        seconds=time.perf_counter() - t0,
    )
    trace["lambda"] = cfg.lam
    out = _out(rc)
    out.mkdir(parents=True, exist_ok=True)
    res.measure.save(out / "spikes.csv")
    _write_json(out / "trace.json", trace)
    log.info("%d spikes, converged=%s, sup eta %.4g", len(res.measure), res.converged, res.sup_eta)
    return [out / "spikes.csv", out / "trace.json"]


def cmd_homotopy(rc: RunConfig) -> list[Path]:
    prob = load_problem(rc)
    require_positive_background(rc, prob.model)
    target, rule = resolve_sigma_target(rc, prob)
    hcfg = homotopy_config(rc, target, _init_measure(rc, prob.model.dim))
    res = homotopy_solve(prob.fidelity(rc.model), prob.model, hcfg)
    payload = res.to_json()
    payload.update(
        schema="homotopy.v1",
        model=rc.model,
        seed=rc.seed if prob.scenario is not None else None,
        sigma_target=target,
        sigma_target_rule=rule,
        background=float(prob.model.min_background),
        lambda1=res.lambda1,
    )
    out = _out(rc)
    out.mkdir(parents=True, exist_ok=True)
    res.measure.save(out / "spikes.csv")
    _write_json(out / "homotopy.json", payload)
    log.info("%d iterations, met_target=%s, %d spikes", res.n_iters, res.met_target, len(res.measure))
    return [out / "spikes.csv", out / "homotopy.json"]


def cmd_metrics(rc: RunConfig) -> list[Path]:
    if rc.spikes is None:
        raise ConfigError("metrics needs a reconstruction (spikes) file")
    rec = DiracMeasure.load(rc.spikes)
    if rc.ground_truth is not None:
        gt = DiracMeasure.load(rc.ground_truth)
    else:
        gt = load_problem(rc).gt
        if gt is None:
            raise ConfigError("metrics needs a ground truth file or a scenario")
    report = metrics_report(gt, rec, float(rc.delta if rc.delta is not None else 0.05))
    report["schema"] = "metrics.v1"
    path = _write_json(_out(rc) / "metrics.json", report)
    return [path]


def cmd_bench(rc: RunConfig) -> list[Path]:
    workers = worker_count(rc)
    t0 = time.perf_counter()
    rows = run_bench(rc, workers)
    mode = rc.bench.get("mode", "sweep")
    delta = float(rc.delta if rc.delta is not None else rc.bench.get("delta", 0.05))
    name = rc.scenario if isinstance(rc.scenario, str) else "custom"
    agg = aggregate(rows, mode, rc.seeds, delta, name)
    agg["seconds"] = time.perf_counter() - t0
    agg["workers"] = workers
    out = _out(rc)
    plot = plot_rows(agg)
    paths = [
        _write_csv(out / "replicates.csv", rows, ROW_KEYS),
        _write_json(out / "aggregate.json", agg),
        _write_csv(out / "plot_data.csv", plot, list(plot[0]) if plot else ["model", "lambda"]),
    ]
    for model, b in agg["best"].items():
        log.info("%s: best lambda %s, mean Jaccard %s", model, b["lambda"], b["jaccard"])
    if agg["failures"]:
        log.warning("%d replicates failed", len(agg["failures"]))
    return paths


def cmd_certdump(rc: RunConfig) -> list[Path]:
    """Certificate sampled on the search grid, plus a JSON summary.

    Without ``--lambda`` the certificate is taken at the homotopy starting
    value, where its maximum is ``1/gamma``.
    """
    prob = load_problem(rc)
    require_positive_background(rc, prob.model)
    mu = _init_measure(rc, prob.model.dim) or DiracMeasure.empty(prob.model.dim)
    fid = prob.fidelity(rc.model)
    cfg = sfw_config(rc, rc.lam or 1.0)
    if rc.lam is not None:
        lam = rc.lam
    else:
        gamma = float(rc.homotopy.get("gamma", 0.9))
        try:
            lam = initial_lambda(fid, prob.model, mu, gamma, cfg.alpha, cfg.search)
        except NumericalError:
            lam = 1.0
            log.warning("certificate vanishes; dumping at lambda = 1")
    cert = build_certificate(fid, prob.model, mu, lam, cfg.alpha)
    sgrid = search_grid(prob.model, cfg.search)
    raw = prob.model.adjoint_on_grid(cert.p, sgrid) / lam
    values = np.maximum(raw, 0.0) if cert.positive_part else raw
    x, sup = certificate_argmax(cert, cfg.search)
    out = _out(rc)
    fname = _field_name("certificate", sgrid.dim)
    write_field(GridField(sgrid, values), out / fname)
    summary = {
        "schema": "certdump.v1",
        "lambda": float(lam),
        "alpha": cfg.alpha,
        "sup_eta": float(sup),
        "argmax": None if x is None else [float(v) for v in x],
        "field_max": float(np.max(values)),
        "field": fname,
        "n_spikes": len(mu),
        "refine_factor": cfg.search.refine_factor,
    }
    _write_json(out / "certdump.json", summary)
    return [out / fname, out / "certdump.json"]


HANDLERS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "homotopy": cmd_homotopy,
    "metrics": cmd_metrics,
    "bench": cmd_bench,
    "certdump": cmd_certdump,
}


# --------------------------------------------------------------------------
# argument parsing


def _ring(text: str):
    parts = [float(v) for v in text.split(",")]
    return parts[0] if len(parts) == 1 else parts


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikesolve", description="Off-the-grid spike deconvolution.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--model", choices=("l2", "kl"))
    p.add_argument("--lambda", dest="lam", type=float, metavar="X")
    p.add_argument("--alpha", type=int, choices=(0, 1), help="1 enforces non-negative amplitudes")
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int, metavar="N")
    seeds.add_argument("--seeds", metavar="A..B", help="inclusive range or comma list")
    p.add_argument("--scenario", metavar="NAME", help="sim1d, sim2d or sim3d")
    p.add_argument("--data", metavar="FILE", help="acquisition field (.csv or raw volume)")
    p.add_argument("--sigma", type=float, nargs="+", metavar="S", help="PSF widths for --data")
    p.add_argument("--background", type=float, metavar="B")
    p.add_argument("--ground-truth", metavar="FILE", help="spikes CSV")
    p.add_argument("--spikes", metavar="FILE", help="spikes CSV (initial or reconstructed measure)")
    p.add_argument("--sigma-target", metavar="auto|bertero|oracle|VALUE")
    mask = p.add_mutually_exclusive_group()
    mask.add_argument("--bg-ring", type=_ring, metavar="FRACTION")
    mask.add_argument("--bg-mask", metavar="FILE")
    p.add_argument("--delta", type=float, help="matching radius")
    p.add_argument("--boosted", action="store_true", default=None)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def run_config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    seeds = [args.seed] if args.seed is not None else parse_seeds(args.seeds) if args.seeds else None
    overrides = {
        "model": args.model,
        "lam": args.lam,
        "alpha": args.alpha,
        "seeds": seeds,
        "scenario": args.scenario,
        "data": args.data,
        "sigma": args.sigma,
        "background": args.background,
        "ground_truth": args.ground_truth,
        "spikes": args.spikes,
        "sigma_target": args.sigma_target,
        "bg_ring": args.bg_ring,
        "bg_mask": args.bg_mask,
        "delta": args.delta,
        "out": args.out,
    }
    if overrides["bg_ring"] is not None or overrides["bg_mask"] is not None:
        file_values.pop("bg_ring", None)
        file_values.pop("bg_mask", None)
    rc = build_run_config(args.command, file_values, overrides)
    if args.boosted:
        rc = replace(rc, sfw={**rc.sfw, "boosted": True})
    return rc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        rc = run_config_from_args(args)
        for path in HANDLERS[rc.command](rc):
            print(path)
    except ConfigError as exc:
        print(f"spikesolve: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"spikesolve: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (DataIOError, OSError) as exc:
        print(f"spikesolve: I/O error: {exc}", file=sys.stderr)
        return 4
    except SpikesolveError as exc:
        print(f"spikesolve: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
