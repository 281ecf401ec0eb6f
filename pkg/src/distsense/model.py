"""Sensor networks, parametrized fields and the derivative engine.

A network is a list of nodes; node k holds ``n_k`` qubits that all couple to
the same field f^k(x, t) . sigma. Fields are evaluated vectorized over time:
``field(x, t)`` with ``t`` of shape (T,) returns an array of shape (T, 3).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError
from .operators import embed_local, pauli_dot

MAX_QUBITS = 6
DEFAULT_FD_STEP = 1e-6


class FieldFunction:
    """Base class for f(x, t). Subclasses implement ``evaluate``.

    ``partial`` returns None when no closed form is available; the engine
    then falls back to central differences.
    """

    time_independent = False

    def evaluate(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def partial(self, j: int, x: np.ndarray, t: np.ndarray) -> np.ndarray | None:
        return None

    def __call__(self, x, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        out = np.asarray(self.evaluate(x, np.atleast_1d(t)), dtype=float)
        out = np.broadcast_to(out, np.atleast_1d(t).shape + (3,))
        if t.ndim == 0:
            out = out[0]
        if not np.all(np.isfinite(out)):
            raise ValidationError(f"{type(self).__name__} produced a non-finite value")
        return np.array(out)

    def describe(self) -> dict:
        return {"family": type(self).__name__}


def _zeros(t: np.ndarray) -> np.ndarray:
    return np.zeros(t.shape + (3,))


@dataclass(frozen=True)
class ConstantZField(FieldFunction):
    """f = scale * x_j * z (a detuned clock)."""

    param: int
    scale: float = 1.0
    time_independent = True

    def evaluate(self, x, t):
        out = _zeros(t)
        out[..., 2] = self.scale * x[self.param]
        return out

    def partial(self, j, x, t):
        out = _zeros(t)
        if j == self.param:
            out[..., 2] = self.scale
        return out

    def describe(self):
        return {"family": "constant_z", "param": self.param, "scale": self.scale}


@dataclass(frozen=True)
class AngleField(FieldFunction):
    """Unit field tilted by angle x_j in the x-z plane: sin(x_j) x + cos(x_j) z."""

    param: int
    time_independent = True

    def evaluate(self, x, t):
        out = _zeros(t)
        out[..., 0] = np.sin(x[self.param])
        out[..., 2] = np.cos(x[self.param])
        return out

    def partial(self, j, x, t):
        out = _zeros(t)
        if j == self.param:
            out[..., 0] = np.cos(x[self.param])
            out[..., 2] = -np.sin(x[self.param])
        return out

    def describe(self):
        return {"family": "angle", "param": self.param}


@dataclass(frozen=True)
class ACField(FieldFunction):
    """Oscillating longitudinal field sin(x_j t) z with unknown frequency x_j."""

    param: int

    def evaluate(self, x, t):
        out = _zeros(t)
        out[..., 2] = np.sin(x[self.param] * t)
        return out

    def partial(self, j, x, t):
        out = _zeros(t)
        if j == self.param:
            out[..., 2] = t * np.cos(x[self.param] * t)
        return out

    def describe(self):
        return {"family": "ac", "param": self.param}


class TabulatedField(FieldFunction):
    """Time-sampled Pauli vectors with linear interpolation.

    With ``param`` set the field is x_param * g(t); otherwise it is a known
    parameter-free drift g(t). Times outside the table are clamped.
    """

    def __init__(self, times: Sequence[float], values, param: int | None = None):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.ndim != 1 or self.times.size < 2:
            raise ValidationError("tabulated field needs at least two time samples")
        if np.any(np.diff(self.times) <= 0):
            raise ValidationError("tabulated field times must be strictly increasing")
        if self.values.shape != (self.times.size, 3):
            raise ValidationError("tabulated field values must have shape (len(times), 3)")
        self.param = param

    @property
    def time_independent(self):
        return bool(np.all(self.values == self.values[0]))

    def _g(self, t):
        return np.stack([np.interp(t, self.times, self.values[:, c]) for c in range(3)], axis=-1)

    def evaluate(self, x, t):
        g = self._g(t)
        return g * x[self.param] if self.param is not None else g

    def partial(self, j, x, t):
        if self.param is not None and j == self.param:
            return self._g(t)
        return _zeros(t)

    def describe(self):
        return {
            "family": "tabulated",
            "param": self.param,
            "times": self.times.tolist(),
            "values": self.values.tolist(),
        }


@dataclass(frozen=True, eq=False)
class TrigField(FieldFunction):
    """Sum of cosines  f_c = sum_r A[r,c] cos(alpha[r].x + beta[r] t + phase[r,c]).

    Used by the random scenario generator; |f| <= sqrt(3) * max_c sum_r |A[r,c]|.
    """

    amplitude: np.ndarray  # (R, 3)
    alpha: np.ndarray  # (R, N)
    beta: np.ndarray  # (R,)
    phase: np.ndarray  # (R, 3)

    def _arg(self, x, t):
        return (self.alpha @ x)[None, :, None] + self.beta[None, :, None] * t[:, None, None] + self.phase[None]

    def evaluate(self, x, t):
        return np.sum(self.amplitude[None] * np.cos(self._arg(x, t)), axis=1)

    def partial(self, j, x, t):
        coeff = -self.amplitude * self.alpha[:, j : j + 1]
        return np.sum(coeff[None] * np.sin(self._arg(x, t)), axis=1)

    @property
    def time_independent(self):
        return bool(np.all(self.beta == 0))

    def describe(self):
        return {
            "family": "trig",
            "amplitude": self.amplitude.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "phase": self.phase.tolist(),
        }


class CallableField(FieldFunction):
    """Wrap plain callables f(x, t) -> (T, 3) and optional partial(j, x, t)."""

    def __init__(self, fn: Callable, partial: Callable | None = None, time_independent: bool = False):
        self._fn = fn
        self._partial = partial
        self.time_independent = time_independent

    def evaluate(self, x, t):
        return self._fn(x, t)

    def partial(self, j, x, t):
        return None if self._partial is None else self._partial(j, x, t)


@dataclass(frozen=True)
class Node:
    qubits: int
    field: FieldFunction


@dataclass(frozen=True)
class SensorNetwork:
    nodes: tuple[Node, ...]
    n_params: int
    domain: tuple[tuple[float, float], ...] | None = dc_field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise ValidationError("network needs at least one node")
        if self.n_params < 1:
            raise ValidationError("network needs at least one parameter")
        for k, node in enumerate(self.nodes):
            if node.qubits < 1:
                raise ValidationError(f"node {k} has no qubits")
            if not isinstance(node.field, FieldFunction):
                raise ValidationError(f"node {k} field is not a FieldFunction")
        if self.total_qubits > MAX_QUBITS:
            raise ValidationError(f"{self.total_qubits} qubits exceeds the simulability limit of {MAX_QUBITS}")
        if self.domain is not None and len(self.domain) != self.n_params:
            raise ValidationError("domain box must give one interval per parameter")

    @property
    def total_qubits(self) -> int:
        return sum(n.qubits for n in self.nodes)

    @property
    def dim(self) -> int:
        return 2**self.total_qubits

    @property
    def qubit_nodes(self) -> list[int]:
        """Node index owning each qubit, in register order."""
        return [k for k, node in enumerate(self.nodes) for _ in range(node.qubits)]

    def qubit_index(self, k: int, i: int) -> int:
        if not 0 <= k < len(self.nodes) or not 0 <= i < self.nodes[k].qubits:
            raise ValidationError(f"no qubit {i} in node {k}")
        return sum(n.qubits for n in self.nodes[:k]) + i

    def check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.n_params:
            raise ValidationError(f"parameter vector has length {x.size}, expected {self.n_params}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("parameter vector is not finite")
        if self.domain is not None:
            for j, (lo, hi) in enumerate(self.domain):
                if not lo <= x[j] <= hi:
                    raise ValidationError(f"parameter {j}={x[j]} outside domain [{lo}, {hi}]")
        return x

    def check_weights(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float).reshape(-1)
        if w.size != self.n_params:
            raise ValidationError(f"weight vector has length {w.size}, expected {self.n_params}")
        if not np.all(np.isfinite(w)) or not np.dot(w, w) > 0:
            raise ValidationError("weight vector must be finite and not all zero")
        return w

    def describe(self) -> dict:
        return {
            "n_params": self.n_params,
            "nodes": [{"qubits": n.qubits, "field": n.field.describe()} for n in self.nodes],
        }


def node_fields(net: SensorNetwork, x, t) -> np.ndarray:
    """Field of every node, shape (d, len(t), 3)."""
    x = net.check_point(x)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return np.stack([node.field(x, t) for node in net.nodes])


def qubit_fields(net: SensorNetwork, x, t) -> np.ndarray:
    """Field seen by every qubit, shape (Q, len(t), 3)."""
    return node_fields(net, x, t)[net.qubit_nodes]


def free_hamiltonian(net: SensorNetwork, x, t: float) -> np.ndarray:
    f = qubit_fields(net, x, [t])[:, 0]
    q = net.total_qubits
    return sum(embed_local(pauli_dot(f[i]), i, q) for i in range(q))


def _node_partial(net, k, j, x, t, step):
    field = net.nodes[k].field
    exact = field.partial(j, x, t)
    if exact is not None:
        return np.broadcast_to(np.asarray(exact, dtype=float), t.shape + (3,))
    delta = step * max(1.0, abs(x[j]))
    xp = x.copy()
    xm = x.copy()
    xp[j] += delta
    xm[j] -= delta
    return (field(xp, t) - field(xm, t)) / (2 * delta)


def partial_field(net: SensorNetwork, k: int, j: int, x, t, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """d f^k / d x_j at time(s) t, analytic when the field provides it."""
    if not step > 0:
        raise ValidationError("finite-difference step must be positive")
    if not 0 <= j < net.n_params:
        raise ValidationError(f"parameter index {j} out of range")
    x = net.check_point(x)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = _node_partial(net, k, j, x, t_arr, step)
    return out[0] if np.ndim(t) == 0 else np.array(out)


def fd_partial_field(net: SensorNetwork, k: int, j: int, x, t, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference partial, ignoring any analytic form (for cross-checks)."""
    x = net.check_point(x)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    field = net.nodes[k].field
    delta = step * max(1.0, abs(x[j]))
    xp, xm = x.copy(), x.copy()
    xp[j] += delta
    xm[j] -= delta
    out = (field(xp, t_arr) - field(xm, t_arr)) / (2 * delta)
    return out[0] if np.ndim(t) == 0 else out


def qubit_partials(net: SensorNetwork, x, t, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """All partials, shape (N, Q, len(t), 3)."""
    x = net.check_point(x)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    per_node = np.stack(
        [np.stack([_node_partial(net, k, j, x, t, step) for k in range(len(net.nodes))]) for j in range(net.n_params)]
    )
    return per_node[:, net.qubit_nodes]


def v_operator(net: SensorNetwork, k: int, i: int, x, t, w, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Weighted derivative vector v_ki(t) = sum_j w_j d f^k / d x_j."""
    net.qubit_index(k, i)
    w = net.check_weights(w)
    return sum(w[j] * partial_field(net, k, j, x, t, step) for j in range(net.n_params))


def qubit_v_vectors(net: SensorNetwork, x, w, t, step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """v vectors for every qubit, shape (Q, len(t), 3)."""
    w = net.check_weights(w)
    return np.einsum("j,jqtc->qtc", w, qubit_partials(net, x, t, step))


def v_magnitude_integral(net: SensorNetwork, k: int, i: int, x, w, grid) -> float:
    """Midpoint-rule integral of |v_ki(t)| over the grid."""
    v = v_operator(net, k, i, x, grid.midpoints, w)
    return float(np.sum(np.linalg.norm(v, axis=-1)) * grid.dt)
