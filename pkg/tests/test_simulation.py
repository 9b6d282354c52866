import numpy as np
import pytest

from spikesolve.errors import ConfigError, UnknownScenario
from spikesolve.fidelity import FidelityModel
from spikesolve.forward import apply_forward
from spikesolve.simulation import (
    ScenarioConfig,
    generate_ground_truth,
    paper_scenario,
    simulate,
    simulate_acquisition,
)


def test_paper_scenarios():
    s1 = paper_scenario("sim1d")
    assert s1.sigma == (0.07,) and s1.background == 0.01 and s1.n_spikes == 6
    assert s1.amplitude_range == (0.6, 1.4) and s1.shape == (128,)
    assert "grid_size" in s1.notes
    s2 = paper_scenario("sim2d")
    assert s2.shape == (128, 128) and s2.amplitude_range == (0.5, 1.5) and s2.n_spikes == 15
    s3 = paper_scenario("sim3d")
    assert s3.shape == (40, 40, 8) and s3.sigma == (200.0, 200.0, 400.0)
    np.testing.assert_allclose(s3.grid.spacing, [65, 65, 250])
    with pytest.raises(UnknownScenario):
        paper_scenario("sim4d")


@pytest.mark.parametrize("name", ["sim1d", "sim2d", "sim3d"])
def test_ground_truth_in_range_and_deterministic(name):
    cfg = paper_scenario(name, seed=11)
    gt = generate_ground_truth(cfg)
    lo, hi = cfg.amplitude_range
    assert len(gt) == cfg.n_spikes and gt.in_domain(cfg.domain)
    assert np.all((gt.amplitudes >= lo) & (gt.amplitudes <= hi))
    assert generate_ground_truth(cfg) == gt
    assert generate_ground_truth(cfg.with_seed(12)) != gt


def test_noise_model_does_not_move_spikes():
    cfg = paper_scenario("sim1d", 5)
    quiet = ScenarioConfig.from_dict({**cfg.to_dict(), "noise": "none"})
    assert generate_ground_truth(quiet) == generate_ground_truth(cfg)


def test_noiseless_acquisition_is_forward_image():
    cfg = ScenarioConfig.from_dict({**paper_scenario("sim2d", 1).to_dict(), "noise": "none"})
    gt, y, model = simulate(cfg)
    assert np.array_equal(y.values, apply_forward(model, gt).values)
    assert FidelityModel("kl", y).value(apply_forward(model, gt)) == 0.0


def test_acquisition_reproducible():
    cfg = paper_scenario("sim1d", 7)
    _, y1, _ = simulate(cfg)
    _, y2, _ = simulate(cfg)
    assert y1.values.tobytes() == y2.values.tobytes()
    assert np.all(y1.values == np.round(y1.values))


def _flat(rate, n, noise="poisson", seed=0, **kw):
    return ScenarioConfig(
        lower=(0.0,), upper=(1.0,), shape=(n,), sigma=(0.01,), n_spikes=1,
        amplitude_range=(1e-300, 1e-300), background=rate, noise=noise, seed=seed, **kw,
    )


def test_poisson_mean_at_low_rate():
    cfg = _flat(0.01, 10**6)
    gt = generate_ground_truth(cfg)
    y = simulate_acquisition(cfg, gt).values
    assert abs(y.mean() - 0.01) <= 3 * np.sqrt(0.01 / 1e6)


@pytest.mark.parametrize("rate", [0.1, 1.0, 5.7, 337.0])
def test_poisson_sampler_moments(rate):
    n = 200_000
    cfg = _flat(rate, n, seed=int(rate * 10))
    y = simulate_acquisition(cfg, generate_ground_truth(cfg)).values
    se_mean = np.sqrt(rate / n)
    # variance of the sample variance for Poisson: (mu + 2 mu^2) / n
    se_var = np.sqrt((rate + 2 * rate**2) / n)
    assert abs(y.mean() - rate) < 5 * se_mean
    assert abs(y.var(ddof=1) - rate) < 5 * se_var


def test_vanishing_field_gives_zero_counts():
    cfg = _flat(1e-300, 1000)
    assert np.all(simulate_acquisition(cfg, generate_ground_truth(cfg)).values == 0)


def test_photon_scale_rescales_back():
    cfg = _flat(2.0, 100_000, photon_scale=10.0)
    y = simulate_acquisition(cfg, generate_ground_truth(cfg)).values
    assert abs(y.mean() - 2.0) < 5 * np.sqrt(2.0 / 10.0 / 100_000)
    assert np.allclose(y * 10, np.round(y * 10))


def test_config_validation_and_json():
    with pytest.raises(ConfigError):
        _flat(0.0, 10)  # Poisson needs a positive background
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({**paper_scenario("sim1d").to_dict(), "colour": "red"})
    cfg = paper_scenario("sim3d", 4)
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.to_json() == ScenarioConfig.from_dict(cfg.to_dict()).to_json()
