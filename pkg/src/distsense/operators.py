"""Dense operator algebra for small multi-qubit registers.

Operators are plain complex numpy arrays. Pauli vectors are real arrays whose
last axis has length 3. Qubit 0 is the leftmost Kronecker factor.
"""
from __future__ import annotations

from functools import reduce

import numpy as np

from .errors import ValidationError

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = np.stack([SX, SY, SZ])

HERMITIAN_ATOL = 1e-12
UNITARY_ATOL = 1e-10
NORM_ATOL = 1e-12


def _as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (3,):
        raise ValidationError(f"Pauli vector must have 3 components, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError("Pauli vector has non-finite components")
    return v


def magnitude(v) -> np.ndarray | float:
    """Euclidean length of one or many Pauli vectors."""
    return np.linalg.norm(_as_vector(v), axis=-1)


def pauli_dot(v) -> np.ndarray:
    """Return v . sigma; works on a stack of vectors of shape (..., 3)."""
    v = _as_vector(v)
    return np.einsum("...k,kij->...ij", v.astype(complex), PAULIS)


def pauli_components(op) -> np.ndarray:
    """Real Pauli vector of the traceless Hermitian part of 2x2 operator(s)."""
    op = np.asarray(op)
    return 0.5 * np.real(np.einsum("kji,...ij->...k", PAULIS, op))


def is_hermitian(a: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    a = np.asarray(a)
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    return bool(np.all(np.abs(a - a.conj().swapaxes(-1, -2)) <= atol * scale))


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def check_hermitian(a: np.ndarray, name: str = "operator") -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValidationError(f"{name} must be square, got shape {a.shape}")
    if not is_hermitian(a):
        raise ValidationError(f"{name} is not Hermitian")
    return a


def is_unitary(u: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    u = np.asarray(u)
    eye = np.eye(u.shape[-1])
    return bool(np.max(np.abs(np.conj(np.swapaxes(u, -1, -2)) @ u - eye)) <= atol)


def kron_all(ops) -> np.ndarray:
    return reduce(np.kron, ops)


def embed_local(op: np.ndarray, qubit_index: int, total_qubits: int) -> np.ndarray:
    """Place a single-qubit operator on ``qubit_index`` of a ``total_qubits`` register."""
    op = np.asarray(op, dtype=complex)
    if op.shape != (2, 2):
        raise ValidationError(f"local operator must be 2x2, got {op.shape}")
    if not 0 <= qubit_index < total_qubits:
        raise ValidationError(f"qubit index {qubit_index} out of range for {total_qubits} qubits")
    left = np.eye(2**qubit_index)
    right = np.eye(2 ** (total_qubits - qubit_index - 1))
    return np.kron(np.kron(left, op), right)


def sum_local(ops) -> np.ndarray:
    """Sum of single-qubit operators, one per qubit, embedded in the full register."""
    ops = list(ops)
    q = len(ops)
    return sum(embed_local(op, i, q) for i, op in enumerate(ops))


def eigen_bounds(a: np.ndarray) -> tuple[float, float]:
    a = check_hermitian(a)
    vals = np.linalg.eigvalsh(hermitize(a))
    return float(vals[0]), float(vals[-1])


def check_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    if abs(np.vdot(psi, psi).real - 1.0) > NORM_ATOL:
        raise ValidationError("state is not normalized")
    return psi


def _match(psi: np.ndarray, a: np.ndarray) -> None:
    if a.shape != (psi.size, psi.size):
        raise ValidationError(f"dimension mismatch: state {psi.size}, operator {a.shape}")


def expectation(psi, a) -> float:
    psi = check_state(psi)
    a = np.asarray(a, dtype=complex)
    _match(psi, a)
    val = np.vdot(psi, a @ psi)
    if abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
        raise ValidationError("expectation has an imaginary residue; operator not Hermitian?")
    return float(val.real)


def variance(psi, a) -> float:
    """<A^2> - <A>^2, clipped to zero when roundoff makes it slightly negative."""
    psi = check_state(psi)
    a = np.asarray(a, dtype=complex)
    _match(psi, a)
    phi = a @ psi
    mean = np.vdot(psi, phi).real
    var = float(np.vdot(phi, phi).real - mean**2)
    if var < 0.0:
        if var < -1e-10 * max(1.0, mean**2):
            raise ValidationError(f"negative variance {var:g}")
        var = 0.0
    return var


def _expm_hermitian(h: np.ndarray, dt: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(hermitize(h))
    phases = np.exp(-1j * vals * dt)
    return (vecs * phases[..., None, :]) @ np.conj(np.swapaxes(vecs, -1, -2))


def step_unitary(h: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i H dt) by Hermitian eigendecomposition. Accepts a stack of H."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    h = check_hermitian(h, "Hamiltonian")
    return _expm_hermitian(h, dt)


# Single-qubit SU(2) helpers. A rotation vector a encodes U = exp(-i a.sigma),
# which turns the Bloch sphere by angle 2|a| about a/|a|.

def su2_exp(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    r = np.linalg.norm(a, axis=-1)
    c = np.cos(r)
    # sin(r)/r without the 0/0
    s = np.where(r > 1e-300, np.sin(r) / np.where(r > 1e-300, r, 1.0), 1.0)
    out = np.einsum("...,ij->...ij", c.astype(complex), I2)
    return out - 1j * np.einsum("...,...k,kij->...ij", s, a, PAULIS)


def su2_log(u) -> np.ndarray:
    """Rotation vector a with u = phase * exp(-i a.sigma) and |a| <= pi/2."""
    u = np.asarray(u, dtype=complex)
    det = np.linalg.det(u)
    u = u / np.sqrt(det)[..., None, None]
    tr = np.trace(u, axis1=-2, axis2=-1).real / 2
    # u = cos|a| - i sin|a| (n.sigma), so i*u carries sin|a| n
    b = pauli_components(1j * u)
    flip = tr < 0
    tr = np.where(flip, -tr, tr)
    b = np.where(flip[..., None], -b, b)
    sn = np.linalg.norm(b, axis=-1)
    ang = np.arctan2(sn, tr)
    scale = np.where(sn > 1e-300, ang / np.where(sn > 1e-300, sn, 1.0), 1.0)
    return b * scale[..., None]


def rotation_between(a, b) -> np.ndarray:
    """Rotation vector of the minimal rotation carrying unit vector a onto b.

    The unitary exp(-i r.sigma) maps a.sigma to b.sigma under conjugation
    U (a.sigma) U^dagger. Antipodal pairs turn by pi about the x axis
    projected orthogonal to a (y axis if a is along x).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cross = np.cross(a, b)
    sn = np.linalg.norm(cross, axis=-1)
    cs = np.sum(a * b, axis=-1)
    ang = np.arctan2(sn, cs)
    axis = cross / np.where(sn > 1e-15, sn, 1.0)[..., None]
    anti = (sn <= 1e-12) & (cs < 0)
    if np.any(anti):
        ex = np.broadcast_to(np.array([1.0, 0.0, 0.0]), a.shape)
        ey = np.broadcast_to(np.array([0.0, 1.0, 0.0]), a.shape)
        perp = ex - np.sum(ex * a, axis=-1)[..., None] * a
        pn = np.linalg.norm(perp, axis=-1)
        alt = ey - np.sum(ey * a, axis=-1)[..., None] * a
        perp = np.where((pn > 1e-6)[..., None], perp, alt)
        perp = perp / np.linalg.norm(perp, axis=-1)[..., None]
        axis = np.where(anti[..., None], perp, axis)
        ang = np.where(anti, np.pi, ang)
    return 0.5 * ang[..., None] * axis


def frame_onto(v) -> np.ndarray:
    """Unitary F with F^dagger (v.sigma) F = |v| sigma_z (geodesic choice)."""
    v = _as_vector(v)
    n = np.linalg.norm(v, axis=-1)
    vhat = v / np.where(n > 0, n, 1.0)[..., None]
    vhat = np.where((n > 0)[..., None], vhat, np.array([0.0, 0.0, 1.0]))
    z = np.broadcast_to(np.array([0.0, 0.0, 1.0]), vhat.shape)
    return su2_exp(rotation_between(z, vhat))


def random_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * hermitize(a)
