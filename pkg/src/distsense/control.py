"""Local control synthesis.

A protocol stores one control Pauli vector per qubit and grid step, plus a
preparation rotation per qubit applied at t = 0. Rotation vectors follow the
operators module convention: a encodes exp(-i a.sigma).

Strategies:

* ``none``       zero control.
* ``cancel``     H_C = -f(x_hat), constant; time-independent fields only.
* ``alignment``  per-step frame rotations that keep every V-vector on one
                 axis in the rotating frame.
* ``pi-pulse``   x-axis pi pulses at the sign changes of an axis-fixed v_z(t).

Preparation frames rotate each qubit so that its accumulated generator points
along the probe's sensitive axis (z for GHZ-type probes). They are computed
from the estimate x_hat, like everything else here.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field as dc_field

import numpy as np

from .dynamics import TimeGrid, generators, propagate
from .errors import SimulationError, ValidationError
from .model import SensorNetwork, node_fields, qubit_fields, qubit_v_vectors
from .operators import pauli_dot, rotation_between, su2_exp, su2_log

STRATEGIES = ("alignment", "cancel", "pi-pulse", "none", "custom")
DEGENERATE_V = 1e-12
COMMUTE_ATOL = 1e-10
Z_AXIS = np.array([0.0, 0.0, 1.0])


@dataclass(eq=False)
class ControlProtocol:
    grid: TimeGrid
    amplitudes: np.ndarray  # (Q, M, 3)
    prep: np.ndarray  # (Q, 3)
    strategy: str = "custom"
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        self.prep = np.asarray(self.prep, dtype=float)
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown control strategy {self.strategy!r}")
        if self.amplitudes.ndim != 3 or self.amplitudes.shape[1:] != (self.grid.M, 3):
            raise ValidationError(f"control amplitudes must have shape (Q, {self.grid.M}, 3), got {self.amplitudes.shape}")
        if self.prep.shape != (self.amplitudes.shape[0], 3):
            raise ValidationError("preparation rotations must have shape (Q, 3)")
        if not (np.all(np.isfinite(self.amplitudes)) and np.all(np.isfinite(self.prep))):
            raise ValidationError("control protocol has non-finite entries")

    @classmethod
    def zero(cls, n_qubits: int, grid: TimeGrid, strategy: str = "none") -> "ControlProtocol":
        return cls(grid, np.zeros((n_qubits, grid.M, 3)), np.zeros((n_qubits, 3)), strategy)

    @property
    def n_qubits(self) -> int:
        return self.amplitudes.shape[0]

    def max_amplitude(self) -> float:
        return float(np.max(np.linalg.norm(self.amplitudes, axis=-1))) if self.amplitudes.size else 0.0

    def with_prep(self, prep) -> "ControlProtocol":
        return ControlProtocol(self.grid, self.amplitudes.copy(), np.asarray(prep, dtype=float), self.strategy,
                               dict(self.meta))

    def to_rows(self) -> list[tuple]:
        """(step, time, qubit, cx, cy, cz) rows; all-zero entries are skipped.

        Preparation rotations use step -1 at time 0 and hold rotation vectors
        rather than Hamiltonians.
        """
        rows = []
        for q in range(self.n_qubits):
            if np.any(self.prep[q] != 0):
                rows.append((-1, 0.0, q, *map(float, self.prep[q])))
        mids = self.grid.midpoints
        nz = np.nonzero(np.any(self.amplitudes != 0, axis=-1))
        for q, m in sorted(zip(*nz), key=lambda qm: (qm[1], qm[0])):
            rows.append((int(m), float(mids[m]), int(q), *map(float, self.amplitudes[q, m])))
        return rows

    @classmethod
    def from_rows(cls, rows, grid: TimeGrid, n_qubits: int, strategy: str = "custom") -> "ControlProtocol":
        amps = np.zeros((n_qubits, grid.M, 3))
        prep = np.zeros((n_qubits, 3))
        for row in rows:
            step, _, q, cx, cy, cz = row
            step, q = int(step), int(q)
            if not 0 <= q < n_qubits:
                raise ValidationError(f"protocol row names qubit {q} outside 0..{n_qubits - 1}")
            if step == -1:
                prep[q] = (cx, cy, cz)
            elif 0 <= step < grid.M:
                amps[q, step] = (cx, cy, cz)
            else:
                raise ValidationError(f"protocol row names step {step} outside the grid")
        return cls(grid, amps, prep, strategy)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["step", "time", "qubit", "cx", "cy", "cz"])
        for r in self.to_rows():
            wr.writerow([r[0], "%.12g" % r[1], r[2]] + ["%.12g" % c for c in r[3:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, grid: TimeGrid, n_qubits: int, strategy: str = "custom") -> "ControlProtocol":
        reader = csv.DictReader(io.StringIO(text))
        rows = [(int(r["step"]), float(r["time"]), int(r["qubit"]), float(r["cx"]), float(r["cy"]), float(r["cz"]))
                for r in reader]
        return cls.from_rows(rows, grid, n_qubits, strategy)


def _sample_times(grid: TimeGrid | None, n: int = 33) -> np.ndarray:
    T = grid.T if grid is not None else 10.0
    return np.linspace(0.0, T, n)


def _time_independent(net: SensorNetwork, x, k: int, ts) -> bool:
    f = net.nodes[k].field(x, ts)
    scale = max(1.0, float(np.max(np.abs(f))))
    return bool(np.all(np.abs(f - f[0]) <= 1e-12 * scale))


def needs_control(net: SensorNetwork, x, w, grid: TimeGrid | None = None) -> list[bool]:
    """Per node: False only if the field is time-independent and commutes with V."""
    x = net.check_point(x)
    w = net.check_weights(w)
    ts = _sample_times(grid)
    f_all = node_fields(net, x, ts)
    v_all = np.einsum("j,jqtc->qtc", w, _node_partials(net, x, ts))
    out = []
    for k in range(len(net.nodes)):
        if not _time_independent(net, x, k, ts):
            out.append(True)
            continue
        f, v = f_all[k, 0], v_all[k, 0]
        # [f.sigma, v.sigma] = 2i (f x v).sigma
        out.append(bool(2 * np.linalg.norm(np.cross(f, v)) > COMMUTE_ATOL))
    return out


def _node_partials(net, x, t):
    from .model import _node_partial

    return np.stack([np.stack([_node_partial(net, k, j, x, t, 1e-6) for k in range(len(net.nodes))])
                     for j in range(net.n_params)])


def _per_qubit(net: SensorNetwork, per_node: np.ndarray) -> np.ndarray:
    return per_node[net.qubit_nodes]


def cancel_control(net: SensorNetwork, x_hat, grid: TimeGrid, w=None, align_prep: bool = False) -> ControlProtocol:
    """H_C = -f(x_hat) on every qubit, constant in time."""
    x_hat = net.check_point(x_hat)
    ts = _sample_times(grid)
    for k in range(len(net.nodes)):
        if not _time_independent(net, x_hat, k, ts):
            raise ValidationError(f"cancel control needs time-independent fields; node {k} varies in time")
    f = qubit_fields(net, x_hat, grid.midpoints[:1])[:, 0]  # (Q, 3)
    amps = np.repeat(-f[:, None, :], grid.M, axis=1)
    proto = ControlProtocol(grid, amps, np.zeros((net.total_qubits, 3)), "cancel")
    if align_prep:
        if w is None:
            raise ValidationError("preparation alignment needs the weight vector")
        proto = align_prep_frames(net, x_hat, w, proto)
    return proto


def _unit_directions(v: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Unit vectors along v (..., T, 3); degenerate samples hold the previous direction.

    Leading degenerate samples take the first well-defined direction; if
    there is none the fallback axis is used throughout.
    """
    n = np.linalg.norm(v, axis=-1)
    out = np.empty_like(v)
    for idx in np.ndindex(v.shape[:-2]):
        ok = n[idx] >= DEGENERATE_V
        if not np.any(ok):
            out[idx] = fallback
            continue
        first = int(np.argmax(ok))
        prev = v[idx][first] / n[idx][first]
        for m in range(v.shape[-2]):
            if ok[m]:
                prev = v[idx][m] / n[idx][m]
            out[idx + (m,)] = prev
    return out


def alignment_control(net: SensorNetwork, x_hat, w, grid: TimeGrid, axis=None,
                      align_prep: bool = True) -> tuple[ControlProtocol, float]:
    """Frame-rotation control that keeps each qubit's V-vector on a fixed axis.

    The frame at each grid boundary carries the V direction there. Consecutive
    frames differ by the minimal rotation between neighbouring directions,
    dressed on both sides by half a step of the drift component along V, so
    that commuting drift needs no control at all. H_C is the step generator
    minus the drift at the step midpoint. Returns the protocol and its
    alignment residual at x_hat.
    """
    x_hat = net.check_point(x_hat)
    w = net.check_weights(w)
    axis = Z_AXIS if axis is None else np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    dt = grid.dt
    # one representative qubit per node
    heads = [net.qubit_index(k, 0) for k in range(len(net.nodes))]
    v_b = qubit_v_vectors(net, x_hat, w, grid.boundaries)[heads]  # (d, M+1, 3)
    vhat = _unit_directions(v_b, axis)
    f_mid = node_fields(net, x_hat, grid.midpoints)  # (d, M, 3)

    a, b = vhat[:, :-1], vhat[:, 1:]
    G = su2_exp(rotation_between(a, b))
    pre = su2_exp((0.5 * dt * np.sum(f_mid * a, axis=-1))[..., None] * a)
    post = su2_exp((0.5 * dt * np.sum(f_mid * b, axis=-1))[..., None] * b)
    h_opt = su2_log(post @ G @ pre) / dt
    h_c = h_opt - f_mid

    prep_node = rotation_between(np.broadcast_to(axis, vhat[:, 0].shape), vhat[:, 0])
    proto = ControlProtocol(grid, _per_qubit(net, h_c), _per_qubit(net, prep_node), "alignment",
                            {"axis": axis.tolist()})
    if align_prep:
        proto = align_prep_frames(net, x_hat, w, proto, axis)
    return proto, verify_protocol(net, x_hat, w, proto, grid)


def align_prep_frames(net: SensorNetwork, x_hat, w, protocol: ControlProtocol, axis=None) -> ControlProtocol:
    """Re-choose preparation rotations so each simulated generator lies along ``axis``.

    Qubits with a vanishing generator keep their current rotation.
    """
    axis = Z_AXIS if axis is None else np.asarray(axis, dtype=float) / np.linalg.norm(axis)
    sched = propagate(net, x_hat, protocol, protocol.grid)
    s = generators(net, x_hat, w, sched).theta_local  # (Q, 3)
    norms = np.linalg.norm(s, axis=-1)
    prep = protocol.prep.copy()
    old = su2_exp(prep)
    for q in range(net.total_qubits):
        if norms[q] <= DEGENERATE_V:
            continue
        # s_q is expressed in the old preparation frame; turn axis onto it there
        r = su2_exp(rotation_between(axis, s[q] / norms[q]))
        prep[q] = su2_log(old[q] @ r)
    return protocol.with_prep(prep)


def _axis_fixed(values: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    return bool(np.all(np.abs(values[..., :2]) <= 1e-12 * scale))


def pulse_steps(vz: np.ndarray, grid: TimeGrid) -> list[int]:
    """Grid steps holding each sign change of v_z sampled at the midpoints."""
    mids = grid.midpoints
    steps = []
    last = None
    for m in range(vz.size):
        if vz[m] == 0:
            continue
        if last is not None and np.sign(vz[m]) != np.sign(vz[last]):
            # linear interpolation between the bracketing nonzero samples
            t0, t1 = mids[last], mids[m]
            tc = t0 + (t1 - t0) * vz[last] / (vz[last] - vz[m])
            steps.append(int(min(grid.M - 1, max(0, np.floor(tc / grid.dt)))))
        last = m
    return steps


def pi_pulse_schedule(net: SensorNetwork, k: int, x_hat, w, grid: TimeGrid) -> ControlProtocol:
    """x-axis pi pulses on node k at every sign change of its v_z(t).

    A pulse occupies one grid step with amplitude pi/(2 dt) along x (a Bloch
    rotation by pi in this package's convention); the drift is cancelled during
    that step so the pulse is a clean rotation. Other nodes get no control.
    """
    x_hat = net.check_point(x_hat)
    w = net.check_weights(w)
    if not 0 <= k < len(net.nodes):
        raise ValidationError(f"node index {k} out of range")
    qi = net.qubit_index(k, 0)
    f = node_fields(net, x_hat, grid.midpoints)[k]
    v = qubit_v_vectors(net, x_hat, w, grid.midpoints)[qi]
    if not (_axis_fixed(f) and _axis_fixed(v)):
        raise ValidationError(f"pi-pulse control needs a z-axis field and V on node {k}")
    steps = pulse_steps(v[:, 2], grid)
    amps = np.zeros((net.total_qubits, grid.M, 3))
    owned = [q for q, node in enumerate(net.qubit_nodes) if node == k]
    for m in steps:
        amps[owned, m] = np.array([np.pi / (2 * grid.dt), 0.0, 0.0]) - f[m]
    return ControlProtocol(grid, amps, np.zeros((net.total_qubits, 3)), "pi-pulse",
                           {"pulse_steps": {str(k): steps}})


def pi_pulse_control(net: SensorNetwork, x_hat, w, grid: TimeGrid, align_prep: bool = False) -> ControlProtocol:
    amps = np.zeros((net.total_qubits, grid.M, 3))
    pulses = {}
    for k in range(len(net.nodes)):
        p = pi_pulse_schedule(net, k, x_hat, w, grid)
        amps += p.amplitudes
        pulses.update(p.meta["pulse_steps"])
    proto = ControlProtocol(grid, amps, np.zeros((net.total_qubits, 3)), "pi-pulse", {"pulse_steps": pulses})
    if align_prep:
        proto = align_prep_frames(net, x_hat, w, proto)
    return proto


def verify_protocol(net: SensorNetwork, x, w, protocol: ControlProtocol, grid: TimeGrid | None = None) -> float:
    """Worst-case alignment residual max_{q,m} |U^dag V U - |v| a_q.sigma|_max.

    a_q is the direction of qubit q's accumulated generator, i.e. the fixed
    axis the protocol actually aligns to (up to the preparation frame).
    """
    grid = protocol.grid if grid is None else grid
    if grid != protocol.grid:
        raise ValidationError("protocol was synthesized on a different grid")
    if protocol.n_qubits != net.total_qubits:
        raise ValidationError("protocol qubit count does not match the network")
    sched = propagate(net, x, protocol, grid)
    w = net.check_weights(w)
    v = qubit_v_vectors(net, x, w, grid.midpoints)  # (Q, M, 3)
    u = sched.midpoints
    rotated = np.einsum("qmji,qmjk,qmkl->qmil", u.conj(), pauli_dot(v), u, optimize=True)
    s = generators(net, x, w, sched).theta_local
    norms = np.linalg.norm(s, axis=-1)
    ahat = np.where((norms > DEGENERATE_V)[:, None], s / np.where(norms > 0, norms, 1.0)[:, None], Z_AXIS)
    target = np.linalg.norm(v, axis=-1)[..., None] * ahat[:, None, :]
    return float(np.max(np.abs(rotated - pauli_dot(target)))) if rotated.size else 0.0


def synthesize(strategy: str, net: SensorNetwork, x_hat, w, grid: TimeGrid, align_prep: bool = False) -> ControlProtocol:
    """Build a protocol for a strategy tag at the estimate x_hat."""
    if strategy == "none":
        proto = ControlProtocol.zero(net.total_qubits, grid)
        return align_prep_frames(net, x_hat, w, proto) if align_prep else proto
    if strategy == "cancel":
        return cancel_control(net, x_hat, grid, w, align_prep)
    if strategy == "alignment":
        return alignment_control(net, x_hat, w, grid, align_prep=align_prep)[0]
    if strategy == "pi-pulse":
        return pi_pulse_control(net, x_hat, w, grid, align_prep)
    raise ValidationError(f"cannot synthesize control strategy {strategy!r}")


def random_local_control(net: SensorNetwork, grid: TimeGrid, rng: np.random.Generator, scale: float = 1.0,
                         pieces: int = 8) -> ControlProtocol:
    """Random piecewise-constant local control with a random preparation frame."""
    q = net.total_qubits
    knots = rng.normal(scale=scale, size=(q, pieces, 3))
    idx = np.minimum((np.arange(grid.M) * pieces) // grid.M, pieces - 1)
    prep = rng.normal(size=(q, 3))
    return ControlProtocol(grid, knots[:, idx], prep, "custom")
