import numpy as np
import pytest
from scipy.special import expit

from fullsub.errors import ConfigError
from fullsub.pipeline import Pipeline
from fullsub.simulate import (
    GAMMA,
    Cell,
    Design,
    KRule,
    ScenarioConfig,
    generate,
    log_log_slope,
    rate_study,
    replication_stream,
    run_monte_carlo,
    transform_covariates,
)


def test_determinism():
    cfg = ScenarioConfig(200, seed=7, replication_index=3)
    a, b = generate(cfg), generate(cfg)
    for name in ("x", "z", "y", "true_scores"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    other = generate(ScenarioConfig(200, seed=7, replication_index=4))
    assert not np.array_equal(a.x, other.x)


def test_prefix_property():
    small = generate(ScenarioConfig(50, seed=1))
    big = generate(ScenarioConfig(500, seed=1))
    assert np.array_equal(small.x, big.x[:50]) and np.array_equal(small.z, big.z[:50])


def test_stream_is_seed_sequence_philox():
    a = replication_stream(11, 2).random(3)
    b = np.random.Generator(np.random.Philox(np.random.SeedSequence([11, 2]))).random(3)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("design", list(Design))
def test_structure(design):
    sim = generate(ScenarioConfig(1000, design, seed=3))
    np.testing.assert_array_equal(sim.w, transform_covariates(sim.x))
    np.testing.assert_array_equal(sim.y, np.where(sim.z == 1, sim.y1, sim.y0))
    assert np.all((sim.true_scores > 0) & (sim.true_scores < 1))
    assert sim.true_delta == 0.0
    eta = sim.x @ GAMMA
    if design is Design.KS_LOGIT:
        np.testing.assert_allclose(sim.true_scores, expit(eta))
    else:
        np.testing.assert_allclose(sim.true_scores, 1 - np.exp(-np.exp(eta)), atol=1e-12)
        assert np.all(210 + sim.x @ [27.4, 13.7, 13.7, 13.7] > 0)


def test_transform_at_origin():
    w = transform_covariates(np.zeros((1, 4)))[0]
    np.testing.assert_allclose(w, [1.0, 10.0, 0.6**3, 400.0])
    assert expit(np.zeros(4) @ GAMMA) == 0.5


def test_generator_moments():
    n = 100_000
    sim = generate(ScenarioConfig(n, seed=2024))
    tol = 4 / np.sqrt(n)
    np.testing.assert_allclose(sim.x.mean(axis=0), 0, atol=tol)
    np.testing.assert_allclose(sim.x.var(axis=0), 1, atol=tol * np.sqrt(2))
    eps = sim.y - (210 + sim.x @ [27.4, 13.7, 13.7, 13.7])
    assert abs(eps.mean()) < tol and abs(eps.var() - 1) < tol * np.sqrt(2)


def test_treated_fraction_stable_across_seeds():
    fracs = [generate(ScenarioConfig(20_000, seed=s)).z.mean() for s in range(4)]
    # E[expit(X gamma)] = 0.5 by symmetry of X gamma around 0
    np.testing.assert_allclose(fracs, 0.5, atol=4 * 0.5 / np.sqrt(20_000))


def test_config_validation():
    with pytest.raises(ConfigError):
        ScenarioConfig(10)
    with pytest.raises(ConfigError):
        Cell(100, "DR", "ipw")  # DR needs an outcome specification
    with pytest.raises(ConfigError):
        Cell(100, "HT", "subclass")  # k missing


def test_single_replication_bias_is_estimate():
    cell = Cell(300, "Hajek", "full_subclass")
    table = run_monte_carlo([cell], 1, seed=5)
    sim = generate(ScenarioConfig(300, seed=5, replication_index=0))
    delta = Pipeline("full_subclass", "Hajek").run(sim.as_dataset()).delta
    row = table.rows[0]
    assert row.bias == delta and row.rmse == abs(delta)


def test_common_random_numbers_and_threads():
    cells = [
        Cell(200, "HT", "full_subclass"),
        Cell(200, "Hajek", "full_subclass"),
        Cell(200, "Subclass", "full_subclass"),
        Cell(200, "Hajek", "ipw", ps_spec="incorrect"),
    ]
    serial = run_monte_carlo(cells, 6, seed=9)
    parallel = run_monte_carlo(cells, 6, seed=9, threads=3)
    assert np.array_equal(serial.deltas, parallel.deltas, equal_nan=True)
    # HT equals Hajek per replication: same dataset, same partition
    np.testing.assert_allclose(serial.deltas[:, 0], serial.deltas[:, 1], rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(serial.deltas[:, 0], serial.deltas[:, 2], rtol=1e-10, atol=1e-10)
    assert serial.records()[0]["n_failures"] == 0


def test_failures_are_counted():
    # fixed K = N is infeasible on every replication
    table = run_monte_carlo([Cell(20, "Subclass", "subclass", k=20)], 3, seed=1)
    row = table.rows[0]
    assert row.n_failures == 3 and np.isnan(row.bias)
    assert len(table.failures) == 3


@pytest.mark.parametrize(
    "spec, n, k",
    [("k_max", 100, None), ("fixed(5)", 100, 5), ("power(1)", 100, 100), ("nlog2", 1000, 20),
     ({"kind": "power", "value": 0.5}, 100, 10)],
)
def test_k_rules(spec, n, k):
    assert KRule.parse(spec).k_for(n) == k


def test_k_rule_rejects_garbage():
    with pytest.raises(ConfigError):
        KRule.parse("fixed(-1)")
    with pytest.raises(ConfigError):
        KRule.parse("sqrt")


@pytest.mark.filterwarnings("ignore::fullsub.glm.SeparationWarning")
def test_rate_study_power_one_infeasible():
    study = rate_study([20, 40], "power(1)", 5, seed=0)
    assert all(r.feasible_fraction == 0.0 for r in study.rows)
    assert study.slope is None


def test_slope_helper():
    assert log_log_slope([100, 400], [1.0, 0.5]) == pytest.approx(-0.5)
    assert log_log_slope([100], [1.0]) is None
