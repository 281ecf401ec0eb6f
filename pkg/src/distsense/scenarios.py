"""Built-in applications, random scenario generation and sweep orchestration."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field as dc_field

import numpy as np

from .control import synthesize, verify_protocol, ControlProtocol
from .dynamics import TimeGrid, generators, propagate
from .errors import UnboundedVarianceError, ValidationError
from .estimation import adaptive_estimate, build_model, make_probe, PROBE_KINDS
from .metrology import effective_qfi, precision_bound, qfi_upper_bound, qfim
from .model import ACField, AngleField, ConstantZField, Node, SensorNetwork, TrigField

DEFAULT_SWEEP = (0.5, 1.0, 2.0, 4.0, 8.0)
STEPS_PER_UNIT = 2000
CONTROL_TAGS = ("alignment", "cancel", "pi-pulse", "none")


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    network: SensorNetwork
    truth: tuple
    w: tuple
    prior: tuple | None = None
    sweep: tuple = DEFAULT_SWEEP
    M: int | None = None  # fixed step count; None means STEPS_PER_UNIT * max(1, T)
    probe: str = "ghz"
    control: str = "alignment"
    shots: int = 100_000
    stage1_shots: int = 10_000
    rounds: int = 1
    seed: int = 0
    estimation_T: float = 1.0
    field_bound: float | None = None

    def __post_init__(self):
        net = self.network
        object.__setattr__(self, "truth", tuple(map(float, net.check_point(self.truth))))
        object.__setattr__(self, "w", tuple(map(float, net.check_weights(self.w))))
        prior = self.truth if self.prior is None else self.prior
        object.__setattr__(self, "prior", tuple(map(float, net.check_point(prior))))
        sweep = tuple(float(t) for t in self.sweep)
        if not sweep or any(not (np.isfinite(t) and t > 0) for t in sweep):
            raise ValidationError("time sweep must be a non-empty list of positive times")
        object.__setattr__(self, "sweep", sweep)
        if self.M is not None and (int(self.M) != self.M or self.M < 1):
            raise ValidationError("M must be a positive integer")
        if self.probe not in PROBE_KINDS or self.probe == "custom":
            raise ValidationError(f"unknown probe kind {self.probe!r}")
        if self.control not in CONTROL_TAGS:
            raise ValidationError(f"unknown control strategy {self.control!r}")
        for key in ("shots", "stage1_shots", "rounds"):
            val = getattr(self, key)
            if int(val) != val or val < 1:
                raise ValidationError(f"{key} must be a positive integer")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError("seed must be a non-negative integer")

    def grid_for(self, T: float, M: int | None = None) -> TimeGrid:
        M = self.M if M is None else M
        return TimeGrid.for_time(T, STEPS_PER_UNIT) if M is None else TimeGrid(T, M)

    def replace(self, **kw) -> "Scenario":
        return dataclasses.replace(self, **kw)

    @property
    def theta_true(self) -> float:
        return float(np.dot(self.w, self.truth))

    def settings(self) -> dict:
        """Resolved run settings (everything except the network itself)."""
        return {
            "scenario": self.name, "truth": list(self.truth), "prior": list(self.prior), "w": list(self.w),
            "T": list(self.sweep), "M": self.M, "probe": self.probe, "control": self.control,
            "shots": self.shots, "stage1_shots": self.stage1_shots, "rounds": self.rounds, "seed": self.seed,
            "estimation_T": self.estimation_T,
        }


@dataclass
class ReportRow:
    T: float
    M: int
    qfi_controlled: float
    qfi_uncontrolled: float
    bound: float
    cfi: float
    precision_bound: float
    residual: float


@dataclass
class ScenarioReport:
    scenario: Scenario
    rows: list = dc_field(default_factory=list)
    protocols: dict = dc_field(default_factory=dict)
    estimation: dict | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def slope(self, name: str = "qfi_controlled") -> float:
        return loglog_slope(self.column("T"), self.column(name))


def _two_node(field0, field1) -> SensorNetwork:
    return SensorNetwork((Node(1, field0), Node(1, field1)), 2)


def builtin(name: str) -> Scenario:
    if name == "clock_sync":
        net = _two_node(ConstantZField(0), ConstantZField(1))
        return Scenario("clock_sync", net, truth=(1.05, 1.0), prior=(1.0, 1.0), w=(1.0, -1.0),
                        probe="bell-singlet", control="none")
    if name == "radar":
        net = SensorNetwork((Node(1, AngleField(0)), Node(1, AngleField(1))), 2,
                            domain=((-np.pi, np.pi), (-np.pi, np.pi)))
        return Scenario("radar", net, truth=(0.3, 0.4), prior=(0.25, 0.42), w=(1.0, 1.0), probe="ghz",
                        control="cancel", rounds=3)
    if name == "ac_fields":
        net = _two_node(ACField(0), ACField(1))
        return Scenario("ac_fields", net, truth=(1.0, 1.0), prior=(0.98, 1.02), w=(1.0, 1.0), probe="ghz",
                        control="pi-pulse", rounds=2)
    raise ValidationError(f"unknown scenario {name!r}; choose from {', '.join(BUILTINS)}")


BUILTINS = ("clock_sync", "radar", "ac_fields")


def _split_qubits(rng, d: int, Q: int) -> list[int]:
    counts = [1] * d
    for _ in range(Q - d):
        counts[int(rng.integers(d))] += 1
    return counts


def random_trig_field(rng: np.random.Generator, n_params: int, bound: float, terms: int = 3) -> TrigField:
    """Random trigonometric field with |f| <= bound everywhere."""
    amp = rng.normal(size=(terms, 3))
    amp *= bound / (np.sqrt(3) * np.max(np.sum(np.abs(amp), axis=0)))
    return TrigField(
        amplitude=amp,
        alpha=rng.normal(size=(terms, n_params)),
        beta=rng.uniform(-2.0, 2.0, size=terms),
        phase=rng.uniform(0.0, 2 * np.pi, size=(terms, 3)),
    )


def random_scenario(seed: int, d: int = 2, N: int = 2, Q: int | None = None, smoothness: float = 1.5,
                    M: int = 1000) -> Scenario:
    """Reproducible random network of trigonometric fields.

    ``smoothness`` bounds every field magnitude; parameter derivatives are
    bounded by it times the largest |alpha|.
    """
    Q = d if Q is None else Q
    if d < 1 or N < 1 or Q < d:
        raise ValidationError("need d >= 1 nodes, N >= 1 parameters and at least one qubit per node")
    rng = np.random.default_rng(seed)
    nodes = tuple(Node(n, random_trig_field(rng, N, smoothness)) for n in _split_qubits(rng, d, Q))
    net = SensorNetwork(nodes, N)
    truth = rng.uniform(-1.0, 1.0, size=N)
    w = rng.normal(size=N)
    T = float(rng.uniform(0.5, 2.0))
    return Scenario(f"random-{seed}", net, truth=truth, w=w, sweep=(T,), M=M, probe="ghz", control="alignment",
                    field_bound=smoothness)


def loglog_slope(T, values) -> float:
    T = np.asarray(T, dtype=float)
    v = np.asarray(values, dtype=float)
    if T.size < 2 or np.any(v <= 0):
        raise ValidationError("slope fit needs at least two positive values")
    return float(np.polyfit(np.log(T), np.log(v), 1)[0])


def controlled_protocol(s: Scenario, grid: TimeGrid, x_hat=None) -> ControlProtocol:
    x_hat = s.truth if x_hat is None else x_hat
    return synthesize(s.control, s.network, x_hat, s.w, grid, align_prep=s.probe == "ghz")


def uncontrolled_protocol(s: Scenario, grid: TimeGrid) -> ControlProtocol:
    return synthesize("none", s.network, s.truth, s.w, grid, align_prep=s.probe == "ghz")


def protocol_qfi(s: Scenario, protocol: ControlProtocol, grid: TimeGrid, probe=None) -> float:
    probe = make_probe(s.probe, s.network.total_qubits) if probe is None else probe
    sched = propagate(s.network, s.truth, protocol, grid)
    return effective_qfi(qfim(probe, generators(s.network, s.truth, s.w, sched)), s.w)


def sweep_row(s: Scenario, T: float, M: int | None = None) -> tuple[ReportRow, ControlProtocol]:
    grid = s.grid_for(T, M)
    w = np.asarray(s.w)
    probe = make_probe(s.probe, s.network.total_qubits)
    ctl = controlled_protocol(s, grid)
    q_ctl = protocol_qfi(s, ctl, grid, probe)
    q_unc = protocol_qfi(s, uncontrolled_protocol(s, grid), grid, probe)
    bound = qfi_upper_bound(s.network, s.truth, w, grid)
    # CFI along x + s*w, the same parametrization as w^T J w
    model = build_model(s.network, grid, w, probe, ctl, s.truth)
    cfi = model.fisher(model.theta_ref) * float(w @ w) ** 2
    try:
        prec = precision_bound(q_ctl, w, 1)
    except UnboundedVarianceError:
        prec = float("inf")
    resid = verify_protocol(s.network, s.truth, w, ctl, grid)
    return ReportRow(float(T), grid.M, q_ctl, q_unc, bound, cfi, prec, resid), ctl


def estimation_summary(s: Scenario, repetitions: int = 1, T: float | None = None) -> dict:
    """Adaptive estimation, optionally repeated, compared against both CRB forms.

    ``crb_weak`` is w^T w / (mu w^T J w); ``crb_exact`` is (w^T w)^2 / (mu w^T J w),
    the bound for theta = w.x itself when the state depends on x only through theta.
    """
    T = s.estimation_T if T is None else T
    grid = s.grid_for(T)
    w = np.asarray(s.w)
    results = [adaptive_estimate(s, s.stage1_shots, s.shots, s.rounds, s.seed, T=T,
                                 stream_base=r * (s.rounds + 1)) for r in range(repetitions)]
    thetas = np.array([r.theta_hat for r in results])
    mu = s.shots
    if repetitions > 1:
        mu_var = float(mu * np.var(thetas, ddof=1))
    else:
        mu_var = float(mu * results[0].sample_variance)
    jeff = protocol_qfi(s, controlled_protocol(s, grid), grid)
    ww = float(w @ w)
    weak = ww / jeff if jeff > 0 else float("inf")
    exact = ww**2 / jeff if jeff > 0 else float("inf")
    return {
        "T": float(T), "theta_true": s.theta_true, "theta_hat": float(np.mean(thetas)), "repetitions": repetitions,
        "shots": mu, "mu_variance": mu_var, "qfi": jeff, "crb_weak": weak, "crb_exact": exact,
        "ratio_to_crb_weak": mu_var / weak, "ratio_to_crb_exact": mu_var / exact,
        "trace": results[0].trace,
    }


def run_scenario(s: Scenario, estimate: bool = False, repetitions: int = 1) -> ScenarioReport:
    report = ScenarioReport(s)
    for T in s.sweep:
        row, ctl = sweep_row(s, T)
        report.rows.append(row)
        report.protocols[T] = ctl
    if estimate:
        report.estimation = estimation_summary(s, repetitions)
    return report
