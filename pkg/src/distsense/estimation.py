"""Probes, local measurements, shot sampling and maximum-likelihood estimation.

Outcome labels are integers 0..2^Q-1 read big-endian: bit q of the label
(qubit 0 most significant) is 0 for the +1 eigenvalue of that qubit's basis
Pauli and 1 for -1.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import minimize_scalar

from .control import ControlProtocol, needs_control, synthesize
from .dynamics import TimeGrid, generators, propagate
from .errors import EstimatorUndefinedError, SimulationError, ValidationError
from .metrology import classical_fisher, effective_qfi, qfim
from .model import SensorNetwork
from .operators import check_state, kron_all

PROBE_KINDS = ("ghz", "bell-singlet", "product", "custom")
SHOT_CHUNK = 1 << 20  # multiple of 4 so chunk starts align with Philox blocks
LOG_FLOOR = 1e-300

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_SDG = np.diag([1, -1j])
# rows map the +1/-1 eigenvectors of each Pauli onto |0>/|1>
BASIS_ROTATIONS = {"x": _H, "y": _H @ _SDG, "z": np.eye(2, dtype=complex)}


@dataclass(frozen=True)
class ProbeSpec:
    kind: str
    n_qubits: int
    amplitudes: tuple | None = None


def make_probe(spec: ProbeSpec | str, n_qubits: int | None = None, amplitudes=None) -> np.ndarray:
    if isinstance(spec, str):
        spec = ProbeSpec(spec, n_qubits, None if amplitudes is None else tuple(amplitudes))
    q = spec.n_qubits
    if q is None or q < 1:
        raise ValidationError("probe needs at least one qubit")
    d = 2**q
    if spec.kind == "ghz":
        psi = np.zeros(d, dtype=complex)
        psi[0] = psi[-1] = 1 / np.sqrt(2)
        return psi
    if spec.kind == "bell-singlet":
        if q != 2:
            raise ValidationError("the singlet probe is defined for two qubits")
        return np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2)
    if spec.kind == "product":
        return np.full(d, 2 ** (-q / 2), dtype=complex)
    if spec.kind == "custom":
        amp = np.asarray(spec.amplitudes, dtype=complex).reshape(-1)
        if amp.size != d:
            raise ValidationError(f"custom probe needs {d} amplitudes, got {amp.size}")
        nrm = np.linalg.norm(amp)
        if not nrm > 0:
            raise ValidationError("custom probe amplitudes have zero norm")
        return amp / nrm
    raise ValidationError(f"unknown probe kind {spec.kind!r}")


@dataclass(frozen=True, eq=False)
class MeasurementSpec:
    """One Pauli basis per qubit, optionally preceded by local readout rotations."""

    bases: tuple[str, ...]
    frames: np.ndarray | None = None  # (Q, 2, 2)

    def __post_init__(self):
        object.__setattr__(self, "bases", tuple(self.bases))
        bad = [b for b in self.bases if b not in BASIS_ROTATIONS]
        if bad or not self.bases:
            raise ValidationError(f"measurement bases must be x, y or z; got {self.bases}")
        if self.frames is not None:
            fr = np.asarray(self.frames, dtype=complex)
            if fr.shape != (len(self.bases), 2, 2):
                raise ValidationError("readout frames must be one 2x2 unitary per qubit")
            object.__setattr__(self, "frames", fr)

    @property
    def n_qubits(self) -> int:
        return len(self.bases)

    def local_unitaries(self) -> np.ndarray:
        rot = np.stack([BASIS_ROTATIONS[b] for b in self.bases])
        return rot if self.frames is None else rot @ self.frames


def default_measurement(n_qubits: int, frames=None) -> MeasurementSpec:
    if n_qubits < 1:
        raise ValidationError("measurement needs at least one qubit")
    return MeasurementSpec(("x",) * (n_qubits - 1) + ("y",), frames)


def readout_frames(schedule) -> np.ndarray:
    """Inverse of each qubit's full propagator, so readout happens in the probe frame."""
    return np.conj(np.swapaxes(schedule.final_local(), -1, -2))


def outcome_distribution(state, meas: MeasurementSpec) -> np.ndarray:
    psi = check_state(state)
    if psi.size != 2**meas.n_qubits:
        raise ValidationError(f"state dimension {psi.size} does not match {meas.n_qubits}-qubit measurement")
    q = meas.n_qubits
    t = psi.reshape((2,) * q)
    for i, u in enumerate(meas.local_unitaries()):
        t = np.moveaxis(np.tensordot(u, t, axes=([1], [i])), 0, i)
    p = np.abs(t.reshape(-1)) ** 2
    return p / p.sum()


def parity_expectation(p: np.ndarray) -> float:
    """<product of the measured Paulis> from a big-endian outcome distribution."""
    p = np.asarray(p, dtype=float)
    n = p.size.bit_length() - 1
    ones = np.array([bin(m).count("1") for m in range(p.size)])
    return float(np.sum(p * (-1.0) ** ones)) if n else float(p[0])


def _uniforms(seed: int, stream: int, start: int, n: int) -> np.ndarray:
    bg = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    bg.advance(start // 4)
    off = start % 4
    return np.random.Generator(bg).random(n + off)[off:]


def sample_shots(dist, mu: int, seed: int, stream: int = 0) -> np.ndarray:
    """Multinomial counts; shot i uses counter i of the Philox stream keyed by (seed, stream)."""
    if int(mu) != mu or mu < 1:
        raise ValidationError(f"shot count must be a positive integer, got {mu}")
    if int(seed) != seed or seed < 0 or int(stream) != stream or stream < 0:
        raise ValidationError("seed and stream must be non-negative integers")
    p = np.asarray(dist, dtype=float).reshape(-1)
    if np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
        raise ValidationError("shot distribution must be non-negative and sum to 1")
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    counts = np.zeros(p.size, dtype=np.int64)
    for start in range(0, int(mu), SHOT_CHUNK):
        n = min(SHOT_CHUNK, int(mu) - start)
        u = _uniforms(int(seed), int(stream), start, n)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), p.size - 1)
        counts += np.bincount(idx, minlength=p.size)
    return counts


@dataclass
class EstimationResult:
    theta_hat: float
    sample_variance: float
    shots: int
    trace: list = dc_field(default_factory=list)
    x_hat: np.ndarray | None = None


@dataclass(eq=False)
class EstimationModel:
    """Forward model p_m(theta) for one experiment.

    The control protocol and readout frames are fixed (built from ``x_ref``).
    Moving theta shifts the parameters along w from ``x_ref``; other
    directions stay at their current estimates.
    """

    net: SensorNetwork
    grid: TimeGrid
    w: np.ndarray
    probe: np.ndarray
    control: ControlProtocol | None
    measurement: MeasurementSpec
    x_ref: np.ndarray

    def __post_init__(self):
        self.w = self.net.check_weights(self.w)
        self.x_ref = self.net.check_point(self.x_ref)
        self.probe = check_state(self.probe)
        if self.probe.size != self.net.dim:
            raise ValidationError("probe dimension does not match the network")

    @property
    def theta_ref(self) -> float:
        return float(self.w @ self.x_ref)

    def point(self, theta: float) -> np.ndarray:
        return self.x_ref + (theta - self.theta_ref) * self.w / (self.w @ self.w)

    def probabilities_at(self, x) -> np.ndarray:
        sched = propagate(self.net, x, self.control, self.grid)
        psi = kron_all(sched.final_local()) @ self.probe
        return outcome_distribution(psi, self.measurement)

    def probabilities(self, theta: float) -> np.ndarray:
        return self.probabilities_at(self.point(theta))

    def fisher(self, theta: float, dtheta: float = 1e-5) -> float:
        """Classical Fisher information about theta itself."""
        return classical_fisher(self.probabilities, theta, dtheta)

    def effective_qfi(self) -> float:
        sched = propagate(self.net, self.x_ref, self.control, self.grid)
        return effective_qfi(qfim(self.probe, generators(self.net, self.x_ref, self.w, sched)), self.w)

    def default_window(self) -> tuple[float, float]:
        """Half a fringe either side of theta_ref, where the signal is monotone."""
        jeff = self.effective_qfi()
        if not jeff > 0:
            raise EstimatorUndefinedError("the experiment carries no information about theta")
        half = np.pi * float(self.w @ self.w) / (2 * np.sqrt(jeff))
        return self.theta_ref - half, self.theta_ref + half


def build_model(net: SensorNetwork, grid: TimeGrid, w, probe, control, x_ref, bases=None) -> EstimationModel:
    """Model whose readout frames undo the full propagation at x_ref."""
    sched = propagate(net, x_ref, control, grid)
    frames = readout_frames(sched)
    meas = default_measurement(net.total_qubits, frames) if bases is None else MeasurementSpec(bases, frames)
    return EstimationModel(net, grid, np.asarray(w, dtype=float), probe, control, meas, np.asarray(x_ref, dtype=float))


def _loglik(counts, p):
    return float(np.sum(counts * np.log(np.maximum(p, LOG_FLOOR))))


def _ml_on_window(counts, prob_fn, window, n_scan: int = 41) -> float:
    lo, hi = map(float, window)
    if not hi > lo:
        raise ValidationError("estimation window must have positive width")
    grid = np.linspace(lo, hi, n_scan)
    probs = np.array([prob_fn(t) for t in grid])
    if np.max(np.ptp(probs, axis=0)) < 1e-12:
        raise EstimatorUndefinedError("outcome distribution does not depend on the parameter")
    ll = np.array([_loglik(counts, p) for p in probs])
    i = int(np.argmax(ll))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_scan - 1)]
    width = hi - lo
    res = minimize_scalar(lambda t: -_loglik(counts, prob_fn(t)), bounds=(a, b), method="bounded",
                          options={"xatol": 1e-6 * width})
    return float(res.x) if -res.fun >= ll[i] else float(grid[i])


def estimate_theta(counts, model: EstimationModel, window=None) -> EstimationResult:
    """Windowed maximum likelihood for theta = w.x through the forward simulator."""
    counts = np.asarray(counts, dtype=float).reshape(-1)
    if counts.size != 2**model.net.total_qubits or np.any(counts < 0):
        raise ValidationError("counts must be non-negative with one entry per outcome")
    mu = int(round(counts.sum()))
    if mu < 1:
        raise ValidationError("no shots recorded")
    window = model.default_window() if window is None else window
    theta = _ml_on_window(counts, model.probabilities, window)
    fi = model.fisher(theta)
    var = 1.0 / (mu * fi) if fi > 0 else float("inf")
    return EstimationResult(theta, var, mu, x_hat=model.point(theta))


def monte_carlo_theta(model: EstimationModel, x_true, mu: int, reps: int, seed: int, window=None) -> np.ndarray:
    """theta estimates from ``reps`` independent experiments; repetition r uses stream r."""
    p = model.probabilities_at(x_true)
    window = model.default_window() if window is None else window
    return np.array([estimate_theta(sample_shots(p, mu, seed, r), model, window).theta_hat for r in range(reps)])


def _coordinate_window(x, j, jjj):
    if not jjj > 0:
        raise EstimatorUndefinedError(f"stage-1 experiment carries no information about parameter {j}")
    half = np.pi / (2 * np.sqrt(jjj))
    return x[j] - half, x[j] + half


def _scenario_parts(scenario, T, M):
    grid = scenario.grid_for(T, M)
    return scenario.network, grid, np.asarray(scenario.w, dtype=float)


def separable_stage(net: SensorNetwork, grid: TimeGrid, w, strategy: str, x_prior, x_true, shots: int, seed: int,
                    stream: int = 0, sweeps: int = 2):
    """Product-probe experiment; each x_j estimated by ML with the others held fixed.

    Returns (x_hat, per-parameter Fisher information, theta Fisher information).
    """
    x_prior = net.check_point(x_prior)
    control = synthesize(strategy, net, x_prior, w, grid, align_prep=True)
    probe = make_probe("product", net.total_qubits)
    sched = propagate(net, x_prior, control, grid)
    J = qfim(probe, generators(net, x_prior, w, sched))
    meas = MeasurementSpec(("y",) * net.total_qubits, readout_frames(sched))

    def dist(x):
        s = propagate(net, x, control, grid)
        return outcome_distribution(kron_all(s.final_local()) @ probe, meas)

    counts = sample_shots(dist(x_true), shots, seed, stream)
    x_hat = x_prior.copy()
    for _ in range(sweeps):
        for j in range(net.n_params):
            def pj(v, j=j):
                xx = x_hat.copy()
                xx[j] = v
                return dist(xx)

            lo, hi = _coordinate_window(x_prior, j, J[j, j])
            x_hat[j] = _ml_on_window(counts, pj, (lo, hi))
    return x_hat, J, control


def adaptive_estimate(scenario, stage1_shots: int, stage2_shots: int, rounds: int, seed: int, T: float | None = None,
                      M: int | None = None, stream_base: int = 0) -> EstimationResult:
    """Rough separable stage, then rounds of control synthesis at x_hat and entangled estimation.

    ``scenario`` needs ``network``, ``truth``, ``prior``, ``w``, ``probe``,
    ``control`` and ``grid_for(T, M)``. When no node needs control the
    separable stage is skipped and a single entangled stage runs at the prior.
    The separable stage draws from RNG stream ``stream_base`` and round r from
    ``stream_base + r``.
    """
    if int(rounds) != rounds or rounds < 1:
        raise ValidationError("rounds must be a positive integer")
    T = scenario.estimation_T if T is None else T
    net, grid, w = _scenario_parts(scenario, T, M)
    truth = net.check_point(scenario.truth)
    x_hat = net.check_point(scenario.prior)
    ww = float(w @ w)
    trace = []

    def row(rnd, stage, proto, shots, theta, var):
        trace.append({
            "round": rnd, "stage": stage, "x_hat": x_hat.copy(), "protocol": proto, "shots": shots,
            "theta_hat": theta, "running_variance": var, "abs_error": abs(theta - float(w @ truth)),
        })

    control_free = not any(needs_control(net, x_hat, w, grid))
    if control_free:
        rounds_run = 1
    else:
        x_hat, J1, ctl = separable_stage(net, grid, w, scenario.control, x_hat, truth, stage1_shots, seed, stream_base)
        jth = effective_qfi(J1, w)
        var1 = ww**2 / (stage1_shots * jth) if jth > 0 else float("inf")
        row(0, "separable", scenario.control, stage1_shots, float(w @ x_hat), var1)
        rounds_run = int(rounds)

    result = None
    for r in range(1, rounds_run + 1):
        align = scenario.probe == "ghz"
        ctl = synthesize(scenario.control, net, x_hat, w, grid, align_prep=align)
        probe = make_probe(scenario.probe, net.total_qubits)
        model = build_model(net, grid, w, probe, ctl, x_hat)
        counts = sample_shots(model.probabilities_at(truth), stage2_shots, seed, stream_base + r)
        result = estimate_theta(counts, model)
        x_hat = model.point(result.theta_hat)
        row(r, "entangled", scenario.control, stage2_shots, result.theta_hat, result.sample_variance)
    if result is None:
        raise SimulationError("adaptive estimation produced no estimate")
    result.trace = trace
    result.x_hat = x_hat
    return result
