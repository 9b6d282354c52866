"""Spike matching within a tolerance radius, Jaccard index and RMSE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, EmptyComparison, NoMatches
from .geometry import DiracMeasure


@dataclass(frozen=True)
class MatchReport:
    pairs: tuple[tuple[int, int, float], ...]
    n_tp: int
    n_fp: int
    n_fn: int
    delta: float


def match_spikes(gt: DiracMeasure, rec: DiracMeasure, delta: float) -> MatchReport:
    """Maximum-cardinality matching of reconstructed to ground-truth spikes.

    Only pairs within ``delta`` may be matched. Among matchings of maximum
    size the one with the smallest total distance is returned. Pairing the
    closest spikes first can leave a spike unmatched that an exchange would
    have rescued, so the assignment is solved exactly.
    """
    if not delta > 0:
        raise ConfigError("delta must be positive")
    n_gt, n_rec = len(gt), len(rec)
    pairs = []
    if n_gt and n_rec:
        d = np.linalg.norm(gt.positions[:, None, :] - rec.positions[None, :, :], axis=-1)
        ok = d <= delta
        if ok.any():
            # any infeasible pair costs more than a full set of feasible ones
            big = 2.0 * delta * (min(n_gt, n_rec) + 1)
            gi, ri = linear_sum_assignment(np.where(ok, d, big))
            pairs = [(int(i), int(j), float(d[i, j])) for i, j in zip(gi, ri) if ok[i, j]]
    tp = len(pairs)
    return MatchReport(tuple(pairs), tp, n_rec - tp, n_gt - tp, float(delta))


def jaccard(report: MatchReport) -> float:
    denom = report.n_tp + report.n_fp + report.n_fn
    if denom == 0:
        raise EmptyComparison("both measures are empty")
    return report.n_tp / denom


def _pairs(report: MatchReport):
    if report.n_tp == 0:
        raise NoMatches("no true positives to measure")
    gi = np.array([p[0] for p in report.pairs])
    ri = np.array([p[1] for p in report.pairs])
    return gi, ri


def rmse_positions(report: MatchReport, gt: DiracMeasure, rec: DiracMeasure) -> float:
    gi, ri = _pairs(report)
    sq = np.sum((gt.positions[gi] - rec.positions[ri]) ** 2, axis=1)
    return math.sqrt(float(np.mean(sq)))


def rmse_amplitudes(report: MatchReport, gt: DiracMeasure, rec: DiracMeasure) -> float:
    gi, ri = _pairs(report)
    return math.sqrt(float(np.mean((gt.amplitudes[gi] - rec.amplitudes[ri]) ** 2)))


def metrics_report(gt: DiracMeasure, rec: DiracMeasure, delta: float) -> dict:
    """``{delta, tp, fp, fn, jaccard, rmse_x, rmse_a}``; RMSEs are ``None`` without matches."""
    rep = match_spikes(gt, rec, delta)
    out = {"delta": rep.delta, "tp": rep.n_tp, "fp": rep.n_fp, "fn": rep.n_fn}
    out["jaccard"] = jaccard(rep) if (rep.n_tp + rep.n_fp + rep.n_fn) else None
    out["rmse_x"] = rmse_positions(rep, gt, rec) if rep.n_tp else None
    out["rmse_a"] = rmse_amplitudes(rep, gt, rec) if rep.n_tp else None
    return out
