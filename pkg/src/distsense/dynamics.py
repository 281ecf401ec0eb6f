"""Time-ordered propagation and parameter generators.

Every Hamiltonian in this package is a sum of single-qubit terms (fields act
per qubit and controls are local), so the register propagator is a Kronecker
product of 2x2 factors. The default path propagates those factors directly.
``dense=True`` exponentiates the full 2^Q Hamiltonian at every step instead;
it is slower and exists to cross-check the factorized path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import DEFAULT_FD_STEP, SensorNetwork, qubit_fields, qubit_partials
from .operators import (
    _expm_hermitian,
    hermitize,
    kron_all,
    pauli_components,
    pauli_dot,
    su2_exp,
    sum_local,
)

DEFAULT_STEPS = 2000


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with M piecewise-constant steps sampled at midpoints."""

    T: float
    M: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValidationError(f"total time must be positive, got {self.T}")
        if int(self.M) != self.M or self.M < 1:
            raise ValidationError(f"step count must be a positive integer, got {self.M}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "M", int(self.M))

    @classmethod
    def for_time(cls, T: float, steps_per_unit: int = DEFAULT_STEPS) -> "TimeGrid":
        """Grid with M = steps_per_unit * max(1, T), i.e. fixed dt for T >= 1."""
        return cls(T, int(round(steps_per_unit * max(1.0, T))))

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) * self.dt

    @property
    def boundaries(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.dt


def cumulative_products(mats: np.ndarray) -> np.ndarray:
    """P[k] = mats[k] @ mats[k-1] @ ... @ mats[0] along axis -3.

    Log-depth (Hillis-Steele) scan so long grids stay vectorized.
    """
    out = np.array(mats, copy=True)
    n = out.shape[-3]
    d = 1
    while d < n:
        out[..., d:, :, :] = out[..., d:, :, :] @ out[..., :-d, :, :]
        d *= 2
    return out


def project_su2(u: np.ndarray) -> np.ndarray:
    """Nearest matrix of the form [[a, -b*], [b, a*]] with |a|^2+|b|^2 = 1.

    The scan accumulates roundoff of order M * eps; every per-qubit factor is
    in SU(2) by construction, so projecting back removes the drift.
    """
    a = 0.5 * (u[..., 0, 0] + np.conj(u[..., 1, 1]))
    b = 0.5 * (u[..., 1, 0] - np.conj(u[..., 0, 1]))
    n = np.sqrt(np.abs(a) ** 2 + np.abs(b) ** 2)
    a, b = a / n, b / n
    return np.stack([np.stack([a, -np.conj(b)], -1), np.stack([b, np.conj(a)], -1)], -2)


@dataclass
class PropagatorSchedule:
    """Propagators on a grid.

    ``steps``, ``boundaries`` and ``midpoints`` hold per-qubit 2x2 factors with
    shapes (Q, M, 2, 2), (Q, M+1, 2, 2) and (Q, M, 2, 2). ``boundaries[:, k]``
    is U(k dt) including any preparation rotation; ``midpoints[:, m]`` is
    U(t_m). Dense runs also fill the ``dense_*`` arrays with full-register
    matrices and set ``local`` from the measured factorization residual.
    """

    grid: TimeGrid
    steps: np.ndarray
    boundaries: np.ndarray
    midpoints: np.ndarray
    local: bool = True
    dense_steps: np.ndarray | None = None
    dense_boundaries: np.ndarray | None = None
    dense_midpoints: np.ndarray | None = None
    factorization_residual: float = 0.0

    @property
    def n_qubits(self) -> int:
        return self.steps.shape[0]

    def cumulative(self, k: int) -> np.ndarray:
        if self.dense_boundaries is not None:
            return self.dense_boundaries[k]
        return kron_all(self.boundaries[:, k])

    def step(self, m: int) -> np.ndarray:
        if self.dense_steps is not None:
            return self.dense_steps[m]
        return kron_all(self.steps[:, m])

    def final(self) -> np.ndarray:
        return self.cumulative(self.grid.M)

    def final_local(self) -> np.ndarray:
        return self.boundaries[:, -1]


@dataclass
class GeneratorSet:
    """Generators S_j (N, D, D), their w-combination, and per-qubit Pauli vectors."""

    S: np.ndarray
    S_theta: np.ndarray
    w: np.ndarray
    local: np.ndarray | None = None

    @property
    def theta_local(self) -> np.ndarray | None:
        if self.local is None:
            return None
        return np.einsum("j,jqc->qc", self.w, self.local)


def _check_control(control, net: SensorNetwork, grid: TimeGrid):
    if control is None:
        return
    if control.grid != grid:
        raise ValidationError(f"control grid {control.grid} does not match requested grid {grid}")
    if control.amplitudes.shape != (net.total_qubits, grid.M, 3):
        raise ValidationError(
            f"control amplitudes have shape {control.amplitudes.shape}, expected {(net.total_qubits, grid.M, 3)}"
        )


def step_hamiltonians(net: SensorNetwork, x, control, grid: TimeGrid) -> np.ndarray:
    """Per-qubit total Hamiltonian vectors at the midpoints, shape (Q, M, 3)."""
    _check_control(control, net, grid)
    h = qubit_fields(net, x, grid.midpoints)
    if control is not None:
        h = h + control.amplitudes
    return h


def _prep_unitaries(net, control) -> np.ndarray:
    q = net.total_qubits
    if control is None:
        return np.broadcast_to(np.eye(2, dtype=complex), (q, 2, 2)).copy()
    return su2_exp(control.prep)


def propagate(net: SensorNetwork, x, control=None, grid: TimeGrid | None = None, dense: bool = False) -> PropagatorSchedule:
    if grid is None:
        if control is None:
            raise ValidationError("propagate needs a grid or a control protocol carrying one")
        grid = control.grid
    h = step_hamiltonians(net, x, control, grid)
    dt = grid.dt
    steps = su2_exp(h * dt)
    half = su2_exp(h * (dt / 2))
    prep = _prep_unitaries(net, control)
    chain = np.concatenate([prep[:, None], steps], axis=1)
    boundaries = project_su2(cumulative_products(chain))
    midpoints = half @ boundaries[:, :-1]
    sched = PropagatorSchedule(grid, steps, boundaries, midpoints)
    if dense:
        _fill_dense(sched, h, prep, dt)
    return sched


def _full_from_vectors(h: np.ndarray) -> np.ndarray:
    """(Q, M, 3) per-qubit vectors -> (M, D, D) register Hamiltonians."""
    q, m, _ = h.shape
    ops = pauli_dot(h)
    d = 2**q
    out = np.zeros((m, d, d), dtype=complex)
    for i in range(q):
        left = np.eye(2**i)
        right = np.eye(2 ** (q - i - 1))
        out += np.einsum("ab,mcd,ef->macebdf", left, ops[i], right).reshape(m, d, d)
    return out


def _fill_dense(sched: PropagatorSchedule, h, prep, dt):
    full_h = _full_from_vectors(h)
    steps = _expm_hermitian(full_h, dt)
    half = _expm_hermitian(full_h, dt / 2)
    prep_full = kron_all(prep)
    chain = np.concatenate([prep_full[None], steps], axis=0)
    bounds = cumulative_products(chain)
    sched.dense_steps = steps
    sched.dense_boundaries = bounds
    sched.dense_midpoints = half @ bounds[:-1]
    resid = 0.0
    for m in range(steps.shape[0]):
        resid = max(resid, float(np.max(np.abs(steps[m] - kron_all(sched.steps[:, m])))))
    sched.factorization_residual = resid
    sched.local = resid <= 1e-10


def generators(net: SensorNetwork, x, w, schedule: PropagatorSchedule, grid: TimeGrid | None = None,
               step: float = DEFAULT_FD_STEP) -> GeneratorSet:
    """Integral-form generators S_j = sum_m U^dag(t_m) dH/dx_j(t_m) U(t_m) dt."""
    grid = schedule.grid if grid is None else grid
    if grid != schedule.grid:
        raise ValidationError("schedule was produced on a different grid")
    w = net.check_weights(w)
    q = net.total_qubits
    if schedule.n_qubits != q:
        raise ValidationError("schedule qubit count does not match the network")
    partials = qubit_partials(net, x, grid.midpoints, step)  # (N, Q, M, 3)
    if schedule.dense_midpoints is not None:
        return _dense_generators(partials, w, schedule, grid)
    u = schedule.midpoints
    a = pauli_dot(partials)
    rotated = np.einsum("qmji,nqmjk,qmkl->nqil", u.conj(), a, u, optimize=True) * grid.dt
    local = pauli_components(hermitize(rotated))  # (N, Q, 3)
    S = np.stack([sum_local(pauli_dot(local[j])) for j in range(net.n_params)])
    S_theta = hermitize(np.einsum("j,jab->ab", w, S))
    return GeneratorSet(S=S, S_theta=S_theta, w=w, local=local)


def _dense_generators(partials, w, schedule, grid) -> GeneratorSet:
    u = schedule.dense_midpoints
    S = []
    for j in range(partials.shape[0]):
        p_full = _full_from_vectors(partials[j])
        S.append(hermitize(np.einsum("mji,mjk,mkl->il", u.conj(), p_full, u, optimize=True) * grid.dt))
    S = np.stack(S)
    return GeneratorSet(S=S, S_theta=hermitize(np.einsum("j,jab->ab", w, S)), w=w)


def generator_oracle(net: SensorNetwork, x, control, grid: TimeGrid, j: int | None = None, eps: float = 1e-5,
                     direction=None) -> np.ndarray:
    """i U^dag(T) dU(T)/dx by central differences of the final propagator.

    The control protocol is held fixed across the shifted runs. Pass either a
    parameter index ``j`` or an explicit ``direction`` in parameter space.
    """
    if not eps > 0:
        raise ValidationError("eps must be positive")
    x = net.check_point(x)
    if direction is None:
        if j is None or not 0 <= j < net.n_params:
            raise ValidationError("give a valid parameter index or a direction")
        direction = np.zeros(net.n_params)
        direction[j] = 1.0
    direction = np.asarray(direction, dtype=float)
    u0 = propagate(net, x, control, grid).final()
    up = propagate(net, x + eps * direction, control, grid).final()
    um = propagate(net, x - eps * direction, control, grid).final()
    return hermitize(1j * u0.conj().T @ (up - um) / (2 * eps))


def final_state(net: SensorNetwork, x, control, grid: TimeGrid, probe) -> np.ndarray:
    sched = propagate(net, x, control, grid)
    return kron_all(sched.final_local()) @ np.asarray(probe, dtype=complex)


def locality_residual(net: SensorNetwork, x, control, grid: TimeGrid, steps=None, chunk: int = 512) -> float:
    """Max deviation between exp(-i H_full dt) and the Kronecker product of per-qubit factors.

    H_full is assembled from embedded local terms and exponentiated densely,
    so this is an independent check that each step propagator factorizes.
    """
    h = step_hamiltonians(net, x, control, grid)
    idx = np.arange(grid.M) if steps is None else np.asarray(list(steps), dtype=int)
    q = net.total_qubits
    worst = 0.0
    for start in range(0, idx.size, chunk):
        sel = idx[start:start + chunk]
        hs = h[:, sel]
        full = sum(np.einsum("ab,mcd,ef->macebdf", np.eye(2**i), pauli_dot(hs[i]), np.eye(2 ** (q - i - 1)))
                   .reshape(sel.size, 2**q, 2**q) for i in range(q))
        dense = _expm_hermitian(full, grid.dt)
        factors = su2_exp(hs * grid.dt)  # (Q, m, 2, 2)
        factored = factors[0]
        for i in range(1, q):
            factored = np.einsum("mab,mcd->macbd", factored, factors[i]).reshape(sel.size, 2 ** (i + 1), 2 ** (i + 1))
        worst = max(worst, float(np.max(np.abs(dense - factored))))
    return worst
