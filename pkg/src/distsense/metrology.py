"""Fisher information, the local-control ceiling and Cramer-Rao style bounds."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import GeneratorSet, TimeGrid, final_state
from .errors import SimulationError, UnboundedVarianceError, ValidationError
from .model import SensorNetwork, qubit_v_vectors
from .operators import check_state

PSD_ATOL = 1e-8
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class PrecisionReport:
    effective_qfi: float
    upper_bound: float
    variance_bound: float
    repetitions: int = 1


def qfim(state, gens: GeneratorSet) -> np.ndarray:
    """J_ij = 4 Re(<S_i S_j> - <S_i><S_j>) for a pure probe state."""
    psi = check_state(state)
    S = np.asarray(gens.S if isinstance(gens, GeneratorSet) else gens)
    if S.shape[-1] != psi.size:
        raise ValidationError(f"generator dimension {S.shape[-1]} does not match state dimension {psi.size}")
    phi = S @ psi  # (N, D)
    mean = phi @ psi.conj()
    second = phi.conj() @ phi.T  # <S_i S_j> = <S_i psi | S_j psi>
    J = 4 * np.real(second - np.outer(mean.conj(), mean))
    J = 0.5 * (J + J.T)
    lo = np.linalg.eigvalsh(J)[0] if J.size else 0.0
    if lo < -PSD_ATOL * max(1.0, np.max(np.abs(J))):
        raise SimulationError(f"QFIM has eigenvalue {lo:g}; check the integrator settings")
    return J


def effective_qfi(J, w) -> float:
    J = np.asarray(J, dtype=float)
    w = np.asarray(w, dtype=float).reshape(-1)
    if J.shape != (w.size, w.size):
        raise ValidationError(f"QFIM shape {J.shape} does not match weight length {w.size}")
    val = float(w @ J @ w)
    if val < 0:
        if val < -PSD_ATOL * max(1.0, float(np.abs(J).max()) * float(w @ w)):
            raise SimulationError(f"effective QFI {val:g} is negative")
        val = 0.0
    return val


def qfi_upper_bound(net: SensorNetwork, x, w, grid: TimeGrid) -> float:
    """4 (sum over qubits of int_0^T |v(t)| dt)^2, midpoint quadrature."""
    v = qubit_v_vectors(net, x, w, grid.midpoints)
    total = float(np.sum(np.linalg.norm(v, axis=-1)) * grid.dt)
    return 4.0 * total**2


def precision_bound(j_eff: float, w, mu: int = 1) -> float:
    """Weak Cramer-Rao bound w^T w / (mu J_eff)."""
    if int(mu) != mu or mu < 1:
        raise ValidationError(f"repetitions must be a positive integer, got {mu}")
    if not j_eff > 0:
        raise UnboundedVarianceError(f"effective QFI {j_eff:g} gives no finite variance bound")
    w = np.asarray(w, dtype=float).reshape(-1)
    return float(w @ w) / (mu * j_eff)


def precision_report(j_eff: float, bound: float, w, mu: int = 1) -> PrecisionReport:
    try:
        var = precision_bound(j_eff, w, mu)
    except UnboundedVarianceError:
        var = float("inf")
    return PrecisionReport(j_eff, bound, var, mu)


def _overlap_qfi(psi0, psi1, eps):
    return 8.0 * (1.0 - abs(np.vdot(psi0, psi1))) / eps**2


def fidelity_qfi_oracle(net: SensorNetwork, x, control, grid: TimeGrid, probe, direction, eps: float = 1e-4,
                        rtol: float = 0.01) -> float:
    """QFI along a unit direction from the curvature of the state overlap.

    The control protocol is frozen. The estimate at eps is checked against
    eps/2; disagreement above ``rtol`` means eps is outside the quadratic
    regime and raises.
    """
    if not eps > 0:
        raise ValidationError("eps must be positive")
    x = net.check_point(x)
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.size != net.n_params or not np.linalg.norm(d) > 0:
        raise ValidationError("direction must be a nonzero vector in parameter space")
    d = d / np.linalg.norm(d)
    psi0 = final_state(net, x, control, grid, probe)
    # two-sided shifts cancel the odd term in the overlap expansion
    f1 = 0.5 * (_overlap_qfi(psi0, final_state(net, x + eps * d, control, grid, probe), eps)
                + _overlap_qfi(psi0, final_state(net, x - eps * d, control, grid, probe), eps))
    h = eps / 2
    f2 = 0.5 * (_overlap_qfi(psi0, final_state(net, x + h * d, control, grid, probe), h)
                + _overlap_qfi(psi0, final_state(net, x - h * d, control, grid, probe), h))
    scale = max(abs(f1), abs(f2))
    if scale > 1e-6 and abs(f1 - f2) > rtol * scale:
        raise SimulationError(f"overlap curvature not converged at eps={eps:g} ({f1:g} vs {f2:g})")
    return float(f2)


def classical_fisher(prob_fn: Callable[[float], np.ndarray], theta: float, dtheta: float = 1e-5) -> float:
    """sum_m (dp_m/dtheta)^2 / p_m with a central difference for the derivative."""
    if not dtheta > 0:
        raise ValidationError("dtheta must be positive")
    p0 = _check_dist(prob_fn(theta))
    pp = _check_dist(prob_fn(theta + dtheta))
    pm = _check_dist(prob_fn(theta - dtheta))
    dp = (pp - pm) / (2 * dtheta)
    keep = p0 >= PROB_FLOOR
    return float(np.sum(dp[keep] ** 2 / p0[keep]))


def _check_dist(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(-1)
    if np.any(p < -1e-12):
        raise ValidationError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValidationError(f"probabilities sum to {p.sum():.12g}, not 1")
    return np.clip(p, 0.0, None)
