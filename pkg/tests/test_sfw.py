import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _common import central_diff, random_measure, rel_err, unit_model
from spikesolve.certificate import build_certificate, certificate_argmax, check_optimality
from spikesolve.errors import ConfigError
from spikesolve.fidelity import FidelityModel
from spikesolve.forward import GridField, apply_forward
from spikesolve.geometry import DiracMeasure
from spikesolve.metrics import jaccard, match_spikes
from spikesolve.sfw import (
    AmplitudeSolverConfig,
    SFWConfig,
    SlideSolverConfig,
    amplitude_step,
    boosted_sfw_solve,
    objective_value,
    sfw_solve,
    sliding_gradient,
    sliding_objective,
    sliding_step,
)
from spikesolve.simulation import paper_scenario, simulate


def one_spike(kind="kl", z=0.4123, amp=1.0, b=0.01):
    model = unit_model(1, background=b, shape=(128,))
    y = apply_forward(model, DiracMeasure([[z]], [amp]))
    return FidelityModel(kind, y), model


@pytest.mark.parametrize("kind,alpha", [("kl", 1), ("l2", 1), ("l2", 0)])
def test_noiseless_single_spike_is_recovered(kind, alpha):
    fid, model = one_spike(kind)
    t0 = time.perf_counter()
    res = sfw_solve(fid, model, SFWConfig(lam=1e-3, alpha=alpha))
    assert time.perf_counter() - t0 < 5
    mu = res.measure
    assert res.converged and len(mu) == 1 and res.iterations <= 3
    assert abs(mu.positions[0, 0] - 0.4123) < 1e-3
    assert abs(mu.amplitudes[0] - 1.0) < 1e-2


def test_support_is_extremal_at_convergence():
    fid, model = one_spike()
    cfg = SFWConfig(lam=1e-3)
    res = sfw_solve(fid, model, cfg)
    rep = check_optimality(build_certificate(fid, model, res.measure, cfg.lam, 1), res.measure)
    assert rep.is_optimal
    assert np.all(np.abs(rep.support_values - 1) < 1e-2)


def test_large_lambda_returns_initialisation():
    fid, model = one_spike()
    init = DiracMeasure([[0.2]], [0.05])
    _, sup = certificate_argmax(build_certificate(fid, model, init, 1.0, 1))
    res = sfw_solve(fid, model, SFWConfig(lam=1.01 * sup), init)
    assert res.converged and res.iterations == 0
    assert res.measure == init
    empty = sfw_solve(fid, model, SFWConfig(lam=1e9))
    assert empty.converged and len(empty.measure) == 0


def test_small_lambda_overestimates_spike_count():
    gt, y, model = simulate(paper_scenario("sim1d", 0))
    for kind, alpha in (("kl", 1), ("l2", 0)):
        res = sfw_solve(FidelityModel(kind, y), model, SFWConfig(lam=1e-2, alpha=alpha))
        assert len(res.measure) > len(gt)


def test_kl_requires_positive_background():
    fid, model = one_spike()
    with pytest.raises(ConfigError):
        sfw_solve(fid, model.with_background(0.0), SFWConfig(lam=1.0))


# --------------------------------------------------------------------------
# amplitude step


def test_amplitude_step_unregularised_least_squares():
    model = unit_model(1, background=0.0, shape=(64,))
    x = model.grid.axes[0][20]
    y = apply_forward(model, DiracMeasure([[x]], [1.7]))
    fid = FidelityModel("l2", y)
    a = amplitude_step(fid, model, [[x]], 0.0, 0)
    assert a[0] == pytest.approx(1.7, abs=1e-6)


@pytest.mark.parametrize("kind", ["l2", "kl"])
def test_amplitude_step_large_lambda_zeroes(kind):
    fid, model = one_spike(kind)
    _, sup = certificate_argmax(build_certificate(fid, model, DiracMeasure.empty(1), 1.0, 1))
    a = amplitude_step(fid, model, [[0.4], [0.6]], 2 * sup, 1)
    assert np.all(a == 0)


@pytest.mark.parametrize("kind", ["l2", "kl"])
def test_amplitude_step_fixed_point(kind):
    fid, model = one_spike(kind, b=0.05)
    X = [[0.3], [0.41]]
    a = amplitude_step(fid, model, X, 0.5, 1, AmplitudeSolverConfig(max_iters=5000, grad_tol=1e-12))
    again = amplitude_step(fid, model, X, 0.5, 1, warm_start=a)
    np.testing.assert_allclose(again, a, atol=1e-6)


@given(st.integers(0, 10_000), st.sampled_from(["l2", "kl"]))
@settings(max_examples=30)
def test_amplitude_step_never_worse_than_warm_start(seed, kind):
    rng = np.random.default_rng(seed)
    model = unit_model(1, background=0.1, shape=(48,))
    y = rng.poisson(apply_forward(model, random_measure(rng, 1, 3)).values).astype(float)
    fid = FidelityModel(kind, GridField(model.grid, y))
    X = rng.random((4, 1))
    a0 = rng.uniform(0, 2, 4)
    a = amplitude_step(fid, model, X, 2.0, 1, warm_start=a0)
    assert np.all(a >= 0)
    assert objective_value(fid, model, a, X, 2.0, 1) <= objective_value(fid, model, a0, X, 2.0, 1)


# --------------------------------------------------------------------------
# sliding


@pytest.mark.parametrize("method", ["lbfgsb", "pg"])
def test_sliding_fixes_half_pixel_offset(method):
    fid, model = one_spike(z=0.4123)
    h = model.grid.spacing[0]
    start = DiracMeasure([[0.4123 + h / 2]], [1.0])
    cfg = SlideSolverConfig(method=method)
    out = sliding_step(fid, model, start, 1e-3, 1, cfg)
    assert abs(out.positions[0, 0] - 0.4123) <= abs(h / 2) / 10
    before = objective_value(fid, model, start.amplitudes, start.positions, 1e-3, 1)
    assert objective_value(fid, model, out.amplitudes, out.positions, 1e-3, 1) <= before


def test_sliding_stationary_input_unchanged():
    fid, model = one_spike(z=0.4123)
    res = sfw_solve(fid, model, SFWConfig(lam=1e-3))
    again = sliding_step(fid, model, res.measure, 1e-3, 1)
    np.testing.assert_allclose(again.positions, res.measure.positions, atol=1e-6)
    np.testing.assert_allclose(again.amplitudes, res.measure.amplitudes, rtol=1e-5)


@pytest.mark.parametrize("kind", ["l2", "kl"])
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_sliding_gradient_matches_finite_differences(kind, dim):
    rng = np.random.default_rng(100 * dim + len(kind))
    model = unit_model(dim, background=0.3)
    for _ in range(100):
        gt = random_measure(rng, dim, 2)
        y = rng.poisson(apply_forward(model, gt).values).astype(float)
        fid = FidelityModel(kind, GridField(model.grid, y))
        mu = random_measure(rng, dim, 2)
        lam = rng.uniform(0.1, 2.0)
        ga, gx = sliding_gradient(fid, model, mu.amplitudes, mu.positions, lam)
        fa = central_diff(lambda a: sliding_objective(fid, model, a, mu.positions, lam), mu.amplitudes, 1e-6)
        fx = central_diff(lambda X: sliding_objective(fid, model, mu.amplitudes, X, lam), mu.positions, 1e-5)
        assert rel_err(ga, fa) < 1e-5
        assert rel_err(gx, fx) < 1e-5


# --------------------------------------------------------------------------
# whole-solver invariants


def _check_trace(res, cfg, model):
    obj = res.objectives
    assert np.all(np.diff(obj) <= 1e-9 * np.maximum(1.0, np.abs(obj[:-1])))
    counts = [row["n_spikes"] for row in res.trace]
    assert all(b - a <= 1 for a, b in zip(counts, counts[1:]))
    if cfg.alpha:
        assert np.all(res.measure.amplitudes >= 0)
        assert res.measure.in_domain(model.domain)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("kind,alpha", [("kl", 1), ("l2", 0), ("l2", 1)])
def test_solver_invariants_on_simulated_data(seed, kind, alpha):
    gt, y, model = simulate(paper_scenario("sim1d", seed))
    fid = FidelityModel(kind, y)
    cfg = SFWConfig(lam=5.0, alpha=alpha, max_iters=12)
    res = sfw_solve(fid, model, cfg)
    _check_trace(res, cfg, model)
    if res.converged:
        rep = check_optimality(build_certificate(fid, model, res.measure, cfg.lam, alpha), res.measure)
        assert rep.sup_norm <= 1 + cfg.optimality_tol
        # on the support eta equals the sign of the amplitude
        vals = rep.support_values * np.sign(res.measure.amplitudes)
        assert np.all(vals >= 1 - 10 * cfg.optimality_tol)
        assert np.all(vals <= 1 + cfg.optimality_tol)
    again = sfw_solve(fid, model, cfg)
    assert again.measure == res.measure and again.trace == res.trace


def test_two_dimensional_solve_is_feasible():
    rng = np.random.default_rng(0)
    model = unit_model(2, background=0.05, shape=(32, 32))
    gt = random_measure(rng, 2, 3, margin=0.2)
    y = GridField(model.grid, rng.poisson(apply_forward(model, gt).values).astype(float))
    cfg = SFWConfig(lam=5.0, max_iters=6)
    res = sfw_solve(FidelityModel("kl", y), model, cfg)
    _check_trace(res, cfg, model)
    assert match_spikes(gt, res.measure, 0.02).n_tp == 3


# --------------------------------------------------------------------------
# boosted variant


def test_boosted_single_spike_matches_plain():
    fid, model = one_spike()
    cfg = SFWConfig(lam=1e-3)
    plain, boosted = sfw_solve(fid, model, cfg), boosted_sfw_solve(fid, model, cfg)
    assert len(boosted.measure) == len(plain.measure) == 1
    assert boosted.n_slides <= plain.n_slides


def test_boosted_close_to_plain_at_moderate_lambda():
    diffs = []
    for seed in range(6):
        gt, y, model = simulate(paper_scenario("sim1d", seed))
        fid = FidelityModel("kl", y)
        cfg = SFWConfig(lam=8.82)
        plain, boosted = sfw_solve(fid, model, cfg), boosted_sfw_solve(fid, model, cfg)
        assert boosted.n_slides <= plain.n_slides
        _check_trace(boosted, cfg, model)
        diffs.append(
            jaccard(match_spikes(gt, boosted.measure, 0.05)) - jaccard(match_spikes(gt, plain.measure, 0.05))
        )
    assert abs(np.mean(diffs)) <= 0.1


def test_config_validation():
    with pytest.raises(ConfigError):
        SFWConfig(lam=0.0)
    with pytest.raises(ConfigError):
        SFWConfig(lam=1.0, alpha=2)
    assert SFWConfig(lam=1.0).with_lambda(3.0).lam == 3.0


def test_trace_json_shape():
    fid, model = one_spike()
    res = sfw_solve(fid, model, SFWConfig(lam=1e-3))
    js = res.trace_json()
    assert set(js) == {"iters", "converged"}
    assert set(js["iters"][0]) == {"k", "objective", "sup_eta", "n_spikes"}
