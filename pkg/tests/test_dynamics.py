import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from conftest import two_node
from distsense.control import ControlProtocol, cancel_control, random_local_control
from distsense.dynamics import (
    TimeGrid, cumulative_products, generator_oracle, generators, locality_residual, propagate,
)
from distsense.errors import ValidationError
from distsense.model import ConstantZField, Node, SensorNetwork, TabulatedField, free_hamiltonian
from distsense.operators import I2, SX, SY, SZ, eigen_bounds, embed_local
from distsense.scenarios import random_scenario


def test_time_grid():
    g = TimeGrid(2.0, 4)
    assert g.dt == 0.5
    assert np.allclose(g.midpoints, [0.25, 0.75, 1.25, 1.75])
    assert np.allclose(g.boundaries, [0, 0.5, 1, 1.5, 2])
    assert TimeGrid.for_time(0.5).M == 2000 and TimeGrid.for_time(3.0).M == 6000
    with pytest.raises(ValidationError):
        TimeGrid(0.0, 10)
    with pytest.raises(ValidationError):
        TimeGrid(1.0, 0)


def test_cumulative_products_matches_loop(rng):
    mats = rng.normal(size=(2, 37, 2, 2)) + 1j * rng.normal(size=(2, 37, 2, 2))
    mats /= np.abs(mats).max()
    out = cumulative_products(mats)
    ref = mats[:, 0]
    for k in range(1, 37):
        ref = mats[:, k] @ ref
        assert np.allclose(out[:, k], ref)


def test_zero_field_gives_identity():
    zero = TabulatedField([0, 1], np.zeros((2, 3)))
    net = two_node(zero, zero)
    sched = propagate(net, [0, 0], None, TimeGrid(1.0, 50))
    assert np.allclose(sched.final(), np.eye(4))


def test_single_qubit_quarter_turn():
    net = SensorNetwork((Node(1, ConstantZField(0)),), 1)
    u = propagate(net, [1.0], None, TimeGrid(np.pi / 2, 2000)).final()
    assert np.max(np.abs(u - np.diag([-1j, 1j]))) <= 1e-6


def test_radar_cancel_gives_identity(radar_net):
    grid = TimeGrid(1.0, 200)
    x = [0.3, 0.4]
    ctl = cancel_control(radar_net, x, grid)
    assert np.allclose(propagate(radar_net, x, ctl, grid).final(), np.eye(4), atol=1e-12)


def test_clock_generators(clock_net):
    T = 1.7
    grid = TimeGrid(T, 500)
    x = [1.05, 1.0]
    g = generators(clock_net, x, [1, -1], propagate(clock_net, x, None, grid))
    assert np.allclose(g.S[0], T * np.kron(SZ, I2))
    assert np.allclose(g.S[1], T * np.kron(I2, SZ))
    assert np.allclose(g.S_theta, T * (np.kron(SZ, I2) - np.kron(I2, SZ)))


def test_radar_theta_generator_spread(radar_net):
    grid = TimeGrid(1.0, 1000)
    x = [0.3, 0.4]
    ctl = cancel_control(radar_net, x, grid)
    g = generators(radar_net, x, [1, 1], propagate(radar_net, x, ctl, grid))
    lo, hi = eigen_bounds(g.S_theta)
    assert np.isclose(hi - lo, 4.0, atol=1e-12)


def test_dense_and_local_paths_agree():
    s = random_scenario(4, d=3, N=2, Q=4, M=150)
    grid = s.grid_for(s.sweep[0])
    ctl = random_local_control(s.network, grid, np.random.default_rng(0))
    loc = propagate(s.network, s.truth, ctl, grid)
    den = propagate(s.network, s.truth, ctl, grid, dense=True)
    assert den.local and den.factorization_residual < 1e-12
    assert np.allclose(loc.final(), den.final(), atol=1e-12)
    gl = generators(s.network, s.truth, s.w, loc)
    gd = generators(s.network, s.truth, s.w, den)
    assert np.allclose(gl.S, gd.S, atol=1e-12)


def test_locality_of_generators():
    # the dense-path generator has no weight outside single-qubit Pauli strings
    s = random_scenario(11, d=2, N=2, Q=3, M=120)
    grid = s.grid_for(s.sweep[0])
    ctl = random_local_control(s.network, grid, np.random.default_rng(1))
    g = generators(s.network, s.truth, s.w, propagate(s.network, s.truth, ctl, grid, dense=True))
    for S in g.S:
        resid = S.copy()
        for q in range(3):
            for P in (SX, SY, SZ):
                op = embed_local(P, q, 3)
                resid -= np.trace(op @ S) / 8 * op
        resid -= np.trace(S) / 8 * np.eye(8)
        assert np.max(np.abs(resid)) < 1e-12


def test_theta_generator_is_weighted_sum():
    s = random_scenario(2, d=2, N=3, Q=2, M=100)
    grid = s.grid_for(s.sweep[0])
    g = generators(s.network, s.truth, s.w, propagate(s.network, s.truth, None, grid))
    assert np.allclose(g.S_theta, np.einsum("j,jab->ab", s.w, g.S), atol=1e-13)
    assert np.allclose(g.theta_local, np.einsum("j,jqc->qc", s.w, g.local))


def test_generator_matches_oracle_random():
    for seed in range(3):
        s = random_scenario(100 + seed, d=2, N=2, Q=3, M=4000)
        grid = s.grid_for(s.sweep[0])
        ctl = random_local_control(s.network, grid, np.random.default_rng(seed))
        g = generators(s.network, s.truth, s.w, propagate(s.network, s.truth, ctl, grid))
        for j in range(2):
            ref = generator_oracle(s.network, s.truth, ctl, grid, j=j, eps=1e-5)
            assert np.max(np.abs(g.S[j] - ref)) <= 1e-4


def test_generator_midpoint_convergence_order():
    s = random_scenario(7, d=2, N=2, Q=2, M=100)
    T = s.sweep[0]
    x = np.asarray(s.truth)

    def gen(M):
        grid = TimeGrid(T, M)
        return generators(s.network, x, s.w, propagate(s.network, x, None, grid)).S[0]

    ref = gen(6400)
    e1 = np.max(np.abs(gen(100) - ref))
    e2 = np.max(np.abs(gen(200) - ref))
    assert 4 * 0.7 <= e1 / e2 <= 4 * 1.3


def test_locality_residual_small():
    s = random_scenario(5, d=2, N=2, Q=3, M=300)
    grid = s.grid_for(s.sweep[0])
    ctl = random_local_control(s.network, grid, np.random.default_rng(2))
    assert locality_residual(s.network, s.truth, ctl, grid) < 1e-12


def test_propagator_matches_dense_expm_loop():
    s = random_scenario(8, d=2, N=1, Q=2, M=80)
    grid = s.grid_for(s.sweep[0])
    u = np.eye(4, dtype=complex)
    for t in grid.midpoints:
        u = scipy.linalg.expm(-1j * grid.dt * free_hamiltonian(s.network, s.truth, t)) @ u
    assert np.allclose(propagate(s.network, s.truth, None, grid).final(), u, atol=1e-12)


def test_control_shape_checked(clock_net):
    grid = TimeGrid(1.0, 10)
    bad = ControlProtocol.zero(3, grid)
    with pytest.raises(ValidationError):
        propagate(clock_net, [1, 1], bad, grid)
    with pytest.raises(ValidationError):
        propagate(clock_net, [1, 1], ControlProtocol.zero(2, TimeGrid(1.0, 11)), grid)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_propagators_stay_unitary(seed):
    s = random_scenario(seed, d=2, N=2, Q=3, M=400)
    grid = s.grid_for(s.sweep[0])
    ctl = random_local_control(s.network, grid, np.random.default_rng(seed))
    sched = propagate(s.network, s.truth, ctl, grid)
    u = sched.boundaries
    err = np.abs(u.conj().swapaxes(-1, -2) @ u - np.eye(2)).max()
    assert err < 1e-12
    assert np.abs(np.linalg.det(u) - 1).max() < 1e-12
