import numpy as np
import pytest

from distsense.errors import ValidationError
from distsense.scenarios import (
    BUILTINS, builtin, loglog_slope, random_scenario, run_scenario, sweep_row,
)


def test_builtins_listed():
    assert set(BUILTINS) == {"clock_sync", "radar", "ac_fields"}
    with pytest.raises(ValidationError):
        builtin("gravimeter")


@pytest.mark.parametrize("T", [0.5, 2.0])
def test_clock_sync_row(T):
    row, proto = sweep_row(builtin("clock_sync"), T)
    for v in (row.qfi_controlled, row.qfi_uncontrolled, row.bound):
        assert np.isclose(v, 16 * T**2, rtol=1e-12)
    assert np.isclose(row.cfi, 16 * T**2, rtol=1e-6)
    assert np.isclose(row.precision_bound, 2 / (16 * T**2))
    assert proto.max_amplitude() == 0


def test_radar_rows():
    for T in (0.5, 1.0, 2.0):
        row, _ = sweep_row(builtin("radar"), T)
        assert np.isclose(row.qfi_controlled, 16 * T**2, rtol=1e-12)
        assert np.isclose(row.qfi_uncontrolled, 16 * np.sin(T) ** 2, rtol=1e-6)


def test_ac_fields_slope_and_bound():
    s = builtin("ac_fields").replace(sweep=(1.0, 2.0, 4.0, 8.0))
    rep = run_scenario(s)
    assert abs(rep.slope() - 4.0) < 0.01
    assert np.allclose(rep.column("qfi_controlled"), rep.column("bound"), rtol=1e-6)
    # no sign change of v before pi/2, so no pulse and no gain there
    late = rep.column("T") > np.pi / 2
    assert np.all(rep.column("qfi_controlled")[late] > rep.column("qfi_uncontrolled")[late])
    assert np.allclose(rep.column("qfi_controlled")[~late], rep.column("qfi_uncontrolled")[~late])


def test_random_scenario_deterministic():
    a, b = random_scenario(42), random_scenario(42)
    assert a.truth == b.truth and a.w == b.w and a.sweep == b.sweep
    ts = np.linspace(0, 2, 9)
    for na, nb in zip(a.network.nodes, b.network.nodes):
        assert np.array_equal(na.field(np.array(a.truth), ts), nb.field(np.array(b.truth), ts))
    assert random_scenario(43).truth != a.truth


def test_random_scenario_structure():
    s = random_scenario(1, d=3, N=4, Q=5, smoothness=0.7)
    assert len(s.network.nodes) == 3 and s.network.total_qubits == 5 and s.network.n_params == 4
    assert all(n.qubits >= 1 for n in s.network.nodes)
    assert 0.5 <= s.sweep[0] <= 2.0
    pts = np.random.default_rng(0).uniform(-1, 1, (20, 4))
    ts = np.linspace(0, 2, 50)
    for n in s.network.nodes:
        assert max(np.linalg.norm(n.field(x, ts), axis=-1).max() for x in pts) <= 0.7 + 1e-12
    with pytest.raises(ValidationError):
        random_scenario(0, d=3, Q=2)


def test_weight_scaling():
    s = random_scenario(8, M=500)
    T = s.sweep[0]
    r1, _ = sweep_row(s, T)
    r2, _ = sweep_row(s.replace(w=tuple(3 * np.array(s.w))), T)
    assert np.isclose(r2.qfi_controlled, 9 * r1.qfi_controlled, rtol=1e-9)
    assert np.isclose(r2.bound, 9 * r1.bound, rtol=1e-12)


@pytest.mark.slow
def test_step_doubling_converges():
    for seed in range(3):
        s = random_scenario(seed)
        T = s.sweep[0]
        for strategy in ("alignment", "none"):
            sc = s.replace(control=strategy)
            a, _ = sweep_row(sc, T, M=1000)
            b, _ = sweep_row(sc, T, M=2000)
            assert abs(a.qfi_controlled - b.qfi_controlled) <= 1e-3 * b.qfi_controlled


def test_scenario_validation(clock_net):
    s = builtin("clock_sync")
    for kw in ({"sweep": ()}, {"sweep": (-1.0,)}, {"probe": "custom"}, {"control": "magic"}, {"shots": 0},
               {"seed": -1}, {"w": (0.0, 0.0)}, {"truth": (1.0,)}, {"M": 0}):
        with pytest.raises(ValidationError):
            s.replace(**kw)


def test_loglog_slope():
    T = np.array([1.0, 2.0, 4.0])
    assert np.isclose(loglog_slope(T, 3 * T**2), 2.0)
    with pytest.raises(ValidationError):
        loglog_slope([1.0], [1.0])
