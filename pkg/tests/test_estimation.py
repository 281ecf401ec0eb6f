import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import distsense.estimation as est
from conftest import ghz
from distsense.dynamics import TimeGrid, generators, propagate
from distsense.errors import EstimatorUndefinedError, ValidationError
from distsense.estimation import (
    MeasurementSpec, ProbeSpec, adaptive_estimate, build_model, default_measurement, estimate_theta, make_probe,
    monte_carlo_theta, outcome_distribution, parity_expectation, sample_shots,
)
from distsense.metrology import effective_qfi, qfim
from distsense.operators import SX, SY, SZ, kron_all, random_state
from distsense.scenarios import builtin

PAULI = {"x": SX, "y": SY, "z": SZ}


def test_probes():
    assert np.allclose(make_probe("ghz", 3), ghz(3))
    assert np.allclose(make_probe("bell-singlet", 2), np.array([0, 1, -1, 0]) / np.sqrt(2))
    assert np.allclose(make_probe("product", 2), 0.5)
    assert np.allclose(make_probe(ProbeSpec("custom", 1, (3, 4j))), [0.6, 0.8j])
    for bad in (("bell-singlet", 3), ("nope", 2), ("ghz", 0)):
        with pytest.raises(ValidationError):
            make_probe(*bad)
    with pytest.raises(ValidationError):
        make_probe("custom", 2, [1, 0, 0])


def test_outcome_order_is_big_endian():
    psi = np.zeros(8, dtype=complex)
    psi[0b100] = 1  # qubit 0 in |1>
    p = outcome_distribution(psi, MeasurementSpec("zzz"))
    assert p[4] == 1


def test_ghz_xx_parity_even():
    p = outcome_distribution(ghz(2), MeasurementSpec(("x", "x")))
    assert np.allclose(p, [0.5, 0, 0, 0.5])
    assert np.isclose(parity_expectation(p), 1)


def test_default_measurement_parity_zero_on_singlet():
    p = outcome_distribution(make_probe("bell-singlet", 2), default_measurement(2))
    assert default_measurement(3).bases == ("x", "x", "y")
    assert abs(parity_expectation(p)) < 1e-15


def test_measurement_validation():
    with pytest.raises(ValidationError):
        MeasurementSpec(("x", "w"))
    with pytest.raises(ValidationError):
        outcome_distribution(ghz(3), default_measurement(2))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.lists(st.sampled_from("xyz"), min_size=1, max_size=4))
def test_parity_matches_pauli_string(seed, bases):
    psi = random_state(2 ** len(bases), np.random.default_rng(seed))
    p = outcome_distribution(psi, MeasurementSpec(tuple(bases)))
    op = kron_all([PAULI[b] for b in bases])
    assert np.isclose(parity_expectation(p), np.vdot(psi, op @ psi).real, atol=1e-12)


def test_sampling_deterministic_and_streams_differ():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    a = sample_shots(p, 10000, seed=3, stream=1)
    assert np.array_equal(a, sample_shots(p, 10000, seed=3, stream=1))
    assert not np.array_equal(a, sample_shots(p, 10000, seed=3, stream=2))
    assert not np.array_equal(a, sample_shots(p, 10000, seed=4, stream=1))
    assert a.sum() == 10000


@pytest.mark.parametrize("chunk", [4, 7, 1000])
def test_sampling_independent_of_chunking(monkeypatch, chunk):
    p = np.array([0.25, 0.05, 0.7])
    ref = sample_shots(p, 5003, seed=9)
    monkeypatch.setattr(est, "SHOT_CHUNK", chunk)
    assert np.array_equal(sample_shots(p, 5003, seed=9), ref)


def test_sampling_prefix_property():
    # shot i depends only on its counter, so fewer shots are a prefix of more
    p = np.array([0.5, 0.5])
    u_all = est._uniforms(1, 0, 0, 1000)
    assert np.array_equal(est._uniforms(1, 0, 301, 50), u_all[301:351])


def test_sampling_uniform_within_5_sigma():
    mu, k = 10**6, 16
    c = sample_shots(np.full(k, 1 / k), mu, seed=0)
    sigma = np.sqrt(mu * (1 / k) * (1 - 1 / k))
    assert np.max(np.abs(c - mu / k)) <= 5 * sigma


def test_sampling_validation():
    for args in (([0.5, 0.6], 10, 0), ([1.0], 0, 0), ([1.0], 10, -1)):
        with pytest.raises(ValidationError):
            sample_shots(*args)


def _clock_model(M=200, T=1.0):
    s = builtin("clock_sync")
    grid = TimeGrid(T, M)
    model = build_model(s.network, grid, s.w, make_probe(s.probe, 2), None, s.prior)
    return s, model


def test_estimate_theta_within_5_sigma():
    s, model = _clock_model()
    mu = 10**5
    counts = sample_shots(model.probabilities_at(s.truth), mu, seed=1)
    res = estimate_theta(counts, model)
    jeff = model.effective_qfi()
    crb = float(np.dot(s.w, s.w)) ** 2 / (mu * jeff)
    assert abs(res.theta_hat - s.theta_true) <= 5 * np.sqrt(crb)
    assert np.isclose(res.sample_variance, crb, rtol=0.05)
    assert res.shots == mu
    assert np.allclose(res.x_hat @ s.w, res.theta_hat)


def test_estimator_consistency_large_mu():
    s, model = _clock_model()
    counts = sample_shots(model.probabilities_at(s.truth), 10**6, seed=2)
    assert abs(estimate_theta(counts, model).theta_hat - s.theta_true) < 2e-3


def test_estimator_noiseless_counts_exact():
    s, model = _clock_model()
    p = model.probabilities_at(s.truth)
    assert abs(estimate_theta(p * 1e6, model).theta_hat - s.theta_true) < 1e-6


def test_monte_carlo_variance_near_exact_bound():
    s, model = _clock_model()
    mu = 20000
    th = monte_carlo_theta(model, s.truth, mu, 200, seed=5)
    crb = float(np.dot(s.w, s.w)) ** 2 / model.effective_qfi()
    assert 0.7 <= mu * np.var(th, ddof=1) / crb <= 1.3


def test_flat_distribution_rejected(clock_net):
    model = build_model(clock_net, TimeGrid(1.0, 50), [1, 1], make_probe("bell-singlet", 2), None, [1, 1])
    with pytest.raises(EstimatorUndefinedError):
        estimate_theta(np.array([10, 10, 10, 10]), model)
    with pytest.raises(ValidationError):
        estimate_theta(np.array([1, 2, 3]), _clock_model()[1])


def test_adaptive_clock_sync_single_stage():
    s = builtin("clock_sync").replace(M=200, shots=20000)
    res = adaptive_estimate(s, s.stage1_shots, s.shots, rounds=3, seed=0)
    assert len(res.trace) == 1 and res.trace[0]["stage"] == "entangled"
    assert abs(res.theta_hat - s.theta_true) <= 5 * np.sqrt(res.sample_variance)


def test_adaptive_radar_rounds():
    s = builtin("radar").replace(M=400)
    res = adaptive_estimate(s, s.stage1_shots, s.shots, s.rounds, seed=1)
    stages = [r["stage"] for r in res.trace]
    assert stages == ["separable", "entangled", "entangled", "entangled"]
    crb = float(np.dot(s.w, s.w)) ** 2 / (s.shots * 16.0)
    assert np.isclose(res.sample_variance, crb, rtol=0.05)
    assert res.trace[-1]["abs_error"] <= 5 * np.sqrt(crb)
    again = adaptive_estimate(s, s.stage1_shots, s.shots, s.rounds, seed=1)
    assert again.theta_hat == res.theta_hat


def test_separable_information_is_half():
    s = builtin("clock_sync")
    grid = TimeGrid(2.0, 100)
    g = generators(s.network, s.truth, s.w, propagate(s.network, s.truth, None, grid))
    ent = effective_qfi(qfim(make_probe("bell-singlet", 2), g), s.w)
    sep = effective_qfi(qfim(make_probe("product", 2), g), s.w)
    assert np.isclose(ent, 16 * 4.0) and np.isclose(sep, 8 * 4.0)
