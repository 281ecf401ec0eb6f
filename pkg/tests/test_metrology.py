import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ghz
from distsense.control import random_local_control
from distsense.dynamics import GeneratorSet, TimeGrid, generators, propagate
from distsense.errors import SimulationError, UnboundedVarianceError, ValidationError
from distsense.estimation import build_model, make_probe
from distsense.metrology import (
    classical_fisher, effective_qfi, fidelity_qfi_oracle, precision_bound, precision_report, qfi_upper_bound, qfim,
)
from distsense.model import ConstantZField, Node, SensorNetwork
from distsense.operators import I2, SZ, pauli_dot, random_state, sum_local
from distsense.scenarios import random_scenario

SINGLET = np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2)


def _gens(S, w):
    S = np.asarray(S, dtype=complex)
    return GeneratorSet(S=S, S_theta=np.einsum("j,jab->ab", w, S), w=np.asarray(w, dtype=float))


@pytest.mark.parametrize("T", [0.5, 1.0, 3.0])
def test_singlet_qfim(T):
    S = [T * np.kron(SZ, I2), T * np.kron(I2, SZ)]
    J = qfim(SINGLET, _gens(S, [1, -1]))
    assert np.allclose(J, 4 * T**2 * np.array([[1, -1], [-1, 1]]))
    assert np.isclose(effective_qfi(J, [1, -1]), 16 * T**2)


def test_ghz3_clock_qfi():
    T = 1.3
    net = SensorNetwork((Node(3, ConstantZField(0)),), 1)
    grid = TimeGrid(T, 100)
    g = generators(net, [0.7], [1.0], propagate(net, [0.7], None, grid))
    assert np.isclose(effective_qfi(qfim(ghz(3), g), [1.0]), 36 * T**2)


def test_product_state_commuting_generators_give_zero():
    S = [np.kron(SZ, I2)]
    zero = np.array([1, 0, 0, 0], dtype=complex)
    assert np.allclose(qfim(zero, _gens(S, [1.0])), 0)


def test_qfim_flags_non_psd():
    with pytest.raises(ValidationError):
        qfim(SINGLET, _gens([np.eye(2)], [1.0]))
    with pytest.raises(SimulationError):
        effective_qfi(np.array([[-1.0]]), [1.0])


def test_upper_bound_clock(clock_net):
    for T in (0.5, 2.0):
        assert np.isclose(qfi_upper_bound(clock_net, [1, 1], [1, -1], TimeGrid(T, 100)), 16 * T**2)


def test_precision_bound_examples():
    assert np.isclose(precision_bound(16.0, [1, -1], 1), 0.125)
    assert np.isclose(precision_bound(16.0, [1, -1], 100), 0.00125)
    with pytest.raises(UnboundedVarianceError):
        precision_bound(0.0, [1, -1])
    with pytest.raises(ValidationError):
        precision_bound(1.0, [1], 0)
    rep = precision_report(0.0, 4.0, [1.0])
    assert rep.variance_bound == float("inf")


def test_fidelity_oracle_clock(clock_net):
    grid = TimeGrid(1.0, 200)
    d = np.array([1, -1]) / np.sqrt(2)
    val = fidelity_qfi_oracle(clock_net, [1.05, 1.0], None, grid, SINGLET, d)
    assert np.isclose(val, 8.0, rtol=1e-4)


def test_fidelity_oracle_matches_qfim_random():
    s = random_scenario(21, d=2, N=2, Q=3, M=400)
    grid = s.grid_for(s.sweep[0])
    ctl = random_local_control(s.network, grid, np.random.default_rng(0))
    psi = random_state(8, np.random.default_rng(1))
    J = qfim(psi, generators(s.network, s.truth, s.w, propagate(s.network, s.truth, ctl, grid)))
    d = np.array([0.6, -0.8])
    val = fidelity_qfi_oracle(s.network, s.truth, ctl, grid, psi, d)
    assert np.isclose(val, d @ J @ d, rtol=1e-3)


def test_ramsey_cfi():
    net = SensorNetwork((Node(1, ConstantZField(0)),), 1)
    for T in (0.3, 1.0, 2.0):
        model = build_model(net, TimeGrid(T, 200), [1.0], make_probe("product", 1), None, [0.4])
        assert np.isclose(model.fisher(0.4), 4 * T**2, rtol=1e-6)


def test_classical_fisher_closed_form():
    # p(theta) = (1 + sin theta)/2: F = cos^2 / (1 - sin^2) = 1 away from the edges
    f = classical_fisher(lambda t: np.array([(1 + np.sin(t)) / 2, (1 - np.sin(t)) / 2]), 0.3)
    assert np.isclose(f, 1.0, rtol=1e-8)
    with pytest.raises(ValidationError):
        classical_fisher(lambda t: np.array([0.7, 0.7]), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 2 * np.pi))
def test_qfim_global_phase_invariant(seed, phase):
    rng = np.random.default_rng(seed)
    psi = random_state(4, rng)
    S = [sum_local(pauli_dot(rng.normal(size=(2, 3)))) for _ in range(2)]
    g = _gens(S, [1.0, 0.5])
    assert np.allclose(qfim(psi, g), qfim(np.exp(1j * phase) * psi, g), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_cfi_never_exceeds_qfi(seed):
    s = random_scenario(seed, d=2, N=2, Q=2, M=300)
    grid = s.grid_for(s.sweep[0])
    rng = np.random.default_rng(seed)
    ctl = random_local_control(s.network, grid, rng)
    psi = random_state(4, rng)
    w = np.asarray(s.w)
    model = build_model(s.network, grid, w, psi, ctl, s.truth)
    cfi = model.fisher(model.theta_ref)
    qfi_theta = model.effective_qfi() / float(w @ w) ** 2
    assert cfi <= qfi_theta * (1 + 1e-5) + 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6))
def test_qfi_below_upper_bound(seed):
    s = random_scenario(seed, d=2, N=2, Q=3, M=300)
    grid = s.grid_for(s.sweep[0])
    ctl = random_local_control(s.network, grid, np.random.default_rng(seed))
    J = qfim(ghz(3), generators(s.network, s.truth, s.w, propagate(s.network, s.truth, ctl, grid)))
    assert effective_qfi(J, s.w) <= qfi_upper_bound(s.network, s.truth, s.w, grid) * (1 + 1e-9)
