"""End-to-end acceptance checks.

Each check returns a ``CheckResult``. ``run_all`` is what the ``acceptance``
CLI subcommand and the acceptance test module both call, so the suite can be
run from the command line alone. ``quick=True`` shrinks the randomized and
Monte Carlo sample counts for smoke runs; tolerances never change.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .control import alignment_control, random_local_control, synthesize
from .dynamics import generator_oracle, generators, locality_residual, propagate
from .errors import ValidationError
from .estimation import build_model, make_probe
from .metrology import effective_qfi, fidelity_qfi_oracle, precision_bound, qfi_upper_bound, qfim
from .operators import kron_all, random_state
from .scenarios import BUILTINS, builtin, controlled_protocol, estimation_summary, loglog_slope, random_scenario


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _rel(a, b):
    return abs(a - b) / abs(b)


def _qfi(net, x, w, control, grid, probe):
    sched = propagate(net, x, control, grid)
    return effective_qfi(qfim(probe, generators(net, x, w, sched)), w)


def _random_config(rng):
    d = int(rng.integers(1, 4))
    N = int(rng.integers(1, 4))
    Q = int(rng.integers(d, 5))
    return d, N, Q


def check_clock_sync() -> CheckResult:
    s = builtin("clock_sync")
    w = np.asarray(s.w)
    worst_q = worst_c = 0.0
    prec_ok = True
    slowest = 0.0
    for T in (0.5, 1.0, 2.0):
        t0 = time.perf_counter()
        grid = s.grid_for(T)
        probe = make_probe("bell-singlet", 2)
        ctl = controlled_protocol(s, grid)
        q = _qfi(s.network, s.truth, w, ctl, grid, probe)
        model = build_model(s.network, grid, w, probe, ctl, s.truth)
        cfi = model.fisher(model.theta_ref) * float(w @ w) ** 2
        prec_ok &= precision_bound(q, w, 1) == float(w @ w) / q and abs(precision_bound(q, w, 1) * 8 * T**2 - 1) < 1e-6
        slowest = max(slowest, time.perf_counter() - t0)
        worst_q = max(worst_q, _rel(q, 16 * T**2))
        worst_c = max(worst_c, _rel(cfi, q))
    ok = worst_q <= 1e-6 and worst_c <= 1e-3 and prec_ok and slowest < 1.0
    return CheckResult(1, "clock synchronization", ok,
                       f"max rel err QFI {worst_q:.2e}, CFI/QFI {worst_c:.2e}, precision formula ok={prec_ok}, "
                       f"slowest T {slowest:.2f}s")


def check_separable() -> CheckResult:
    s = builtin("clock_sync")
    w = np.asarray(s.w)
    worst = 0.0
    for T in (0.5, 1.0, 2.0):
        grid = s.grid_for(T)
        sep = synthesize("none", s.network, s.truth, w, grid, align_prep=True)
        q_sep = _qfi(s.network, s.truth, w, sep, grid, make_probe("product", 2))
        q_ent = _qfi(s.network, s.truth, w, controlled_protocol(s, grid), grid, make_probe("bell-singlet", 2))
        worst = max(worst, _rel(q_sep, 8 * T**2), abs(q_ent / q_sep - 2.0) / 2.0)
    return CheckResult(2, "separable baseline", worst <= 1e-6, f"max rel err vs 8T^2 and ratio 2: {worst:.2e}")


def check_radar() -> CheckResult:
    s = builtin("radar")
    w = np.asarray(s.w)
    probe = make_probe("ghz", 2)
    wc = wu = 0.0
    slowest = 0.0
    for T in (1.0, 2.0, 4.0):
        t0 = time.perf_counter()
        grid = s.grid_for(T)
        ctl = synthesize("cancel", s.network, s.truth, w, grid, align_prep=True)
        unc = synthesize("none", s.network, s.truth, w, grid, align_prep=True)
        wc = max(wc, _rel(_qfi(s.network, s.truth, w, ctl, grid, probe), 16 * T**2))
        wu = max(wu, _rel(_qfi(s.network, s.truth, w, unc, grid, probe), 16 * np.sin(T) ** 2))
        slowest = max(slowest, time.perf_counter() - t0)
    ok = wc <= 1e-4 and wu <= 1e-3 and slowest < 5.0
    return CheckResult(3, "radar", ok, f"controlled rel err {wc:.2e}, uncontrolled vs 16sin^2T {wu:.2e}, "
                                       f"slowest T {slowest:.2f}s")


def check_ac_fields() -> CheckResult:
    t0 = time.perf_counter()
    s = builtin("ac_fields")
    w = np.asarray(s.w)
    probe = make_probe("ghz", 2)
    Ts = (1.0, 2.0, 4.0, 8.0)
    qs, gap = [], 0.0
    for T in Ts:
        grid = s.grid_for(T)
        ctl = synthesize("pi-pulse", s.network, s.truth, w, grid, align_prep=True)
        q = _qfi(s.network, s.truth, w, ctl, grid, probe)
        qs.append(q)
        gap = max(gap, _rel(q, qfi_upper_bound(s.network, s.truth, w, grid)))
    slope = loglog_slope(Ts, qs)
    dt = time.perf_counter() - t0
    ok = abs(slope - 4.0) <= 0.10 and gap <= 1e-3 and dt < 30
    return CheckResult(4, "AC fields", ok, f"log-log slope {slope:.4f}, max rel gap to bound {gap:.2e}")


def check_bound_universality(n: int = 500, seed: int = 1000) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for i in range(n):
        d, N, Q = _random_config(rng)
        s = random_scenario(seed + i, d, N, Q)
        grid = s.grid_for(s.sweep[0])
        ctl = random_local_control(s.network, grid, rng, scale=2.0)
        probe = make_probe("ghz", Q) if i % 2 else random_state(2**Q, rng)
        w = np.asarray(s.w)
        q = _qfi(s.network, s.truth, w, ctl, grid, probe)
        b = qfi_upper_bound(s.network, s.truth, w, grid)
        worst = max(worst, (q - b) / b)
    return CheckResult(5, "bound universality", worst <= 1e-6,
                       f"{n} scenarios, max (QFI-bound)/bound {worst:.2e}")


def check_saturation(n: int = 100, seed: int = 2000) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = np.inf
    for i in range(n):
        d, N, Q = _random_config(rng)
        s = random_scenario(seed + i, d, N, Q)
        grid = s.grid_for(s.sweep[0])
        w = np.asarray(s.w)
        ctl, _ = alignment_control(s.network, s.truth, w, grid)
        q = _qfi(s.network, s.truth, w, ctl, grid, make_probe("ghz", Q))
        worst = min(worst, q / qfi_upper_bound(s.network, s.truth, w, grid))
    return CheckResult(6, "saturation", worst >= 0.999, f"{n} scenarios, min QFI/bound {worst:.6f}")


def check_oracles(n: int = 100, seed: int = 3000) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_f = worst_g = worst_abs = 0.0
    gen_ok = True
    for i in range(n):
        d, N, Q = _random_config(rng)
        s = random_scenario(seed + i, d, N, Q)
        grid = s.grid_for(s.sweep[0])
        w = np.asarray(s.w)
        ctl = random_local_control(s.network, grid, rng) if i % 2 else alignment_control(s.network, s.truth, w, grid)[0]
        probe = make_probe("ghz", Q)
        sched = propagate(s.network, s.truth, ctl, grid)
        gens = generators(s.network, s.truth, w, sched)
        q = effective_qfi(qfim(probe, gens), w)
        f = fidelity_qfi_oracle(s.network, s.truth, ctl, grid, probe, w) * float(w @ w)
        worst_f = max(worst_f, _rel(f, q))
        tol = max(1e-4, 10 / grid.M)
        for j in range(N):
            err = float(np.max(np.abs(generator_oracle(s.network, s.truth, ctl, grid, j, 1e-5) - gens.S[j])))
            worst_g = max(worst_g, err / tol)
            worst_abs = max(worst_abs, err)
            gen_ok &= err <= tol
    ok = worst_f <= 1e-3 and gen_ok
    return CheckResult(7, "oracle equivalence", ok,
                       f"{n} scenarios, max rel QFI vs overlap oracle {worst_f:.2e}, "
                       f"max generator err {worst_abs:.2e} ({worst_g:.1e} of tolerance)")


def _random_product(Q, rng):
    return kron_all([random_state(2, rng) for _ in range(Q)])


def check_probe_optimality(n_scen: int = 20, n_probe: int = 500, seed: int = 4000) -> CheckResult:
    rng = np.random.default_rng(seed)
    excess = -np.inf
    ghz_gap = 0.0
    for i in range(n_scen):
        Q = int(rng.integers(2, 5))
        d = int(rng.integers(1, min(Q, 3) + 1))
        s = random_scenario(seed + i, d, int(rng.integers(1, 4)), Q)
        grid = s.grid_for(s.sweep[0])
        w = np.asarray(s.w)
        ctl, _ = alignment_control(s.network, s.truth, w, grid)
        gens = generators(s.network, s.truth, w, propagate(s.network, s.truth, ctl, grid))
        q_ghz = effective_qfi(qfim(make_probe("ghz", Q), gens), w)
        lam = np.linalg.eigvalsh(gens.S_theta)
        ghz_gap = max(ghz_gap, _rel(q_ghz, (lam[-1] - lam[0]) ** 2))
        for _ in range(n_probe):
            q = effective_qfi(qfim(_random_product(Q, rng), gens), w)
            excess = max(excess, (q - q_ghz) / q_ghz)
    ok = excess <= 1e-9 and ghz_gap <= 1e-6
    return CheckResult(8, "probe optimality", ok,
                       f"{n_scen}x{n_probe} product probes, max excess over GHZ {excess:.2e}, "
                       f"GHZ vs max spread {ghz_gap:.2e}")


def check_estimator(reps: int = 200, shots: int = 100_000) -> CheckResult:
    s = builtin("clock_sync").replace(shots=shots)
    summ = estimation_summary(s, reps)
    r = summ["ratio_to_crb_weak"]
    ok = 0.85 <= r <= 1.20
    return CheckResult(9, "estimator vs CRB", ok,
                       f"mu*var {summ['mu_variance']:.4f}; ratio to w'w/J {r:.3f} (target [0.85, 1.20]); "
                       f"ratio to (w'w)^2/J {summ['ratio_to_crb_exact']:.3f}")


def check_locality(n_random: int = 20, seed: int = 5000) -> CheckResult:
    worst = 0.0
    count = 0
    for name in BUILTINS:
        s = builtin(name)
        for T in s.sweep:
            grid = s.grid_for(T)
            for strat in ("alignment", "cancel", "pi-pulse", "none"):
                try:
                    ctl = synthesize(strat, s.network, s.prior, s.w, grid, align_prep=True)
                except ValidationError:
                    continue  # strategy not applicable to this field family
                worst = max(worst, locality_residual(s.network, s.truth, ctl, grid))
                count += 1
    rng = np.random.default_rng(seed)
    for i in range(n_random):
        d, N, Q = _random_config(rng)
        s = random_scenario(seed + i, d, N, Q)
        grid = s.grid_for(s.sweep[0])
        ctl, _ = alignment_control(s.network, s.prior, s.w, grid)
        worst = max(worst, locality_residual(s.network, s.truth, ctl, grid))
        count += 1
    cli_ok, cli_detail = _cli_smoke()
    ok = worst <= 1e-10 and cli_ok
    return CheckResult(10, "locality of control", ok,
                       f"{count} protocols, max factorization residual {worst:.2e}; CLI: {cli_detail}")


def _cli_smoke() -> tuple[bool, str]:
    """Drive every subcommand in-process on a temporary directory."""
    import tempfile
    from pathlib import Path

    from . import cli

    runs = [
        (["list-scenarios"], []),
        (["qfi", "clock_sync", "--T", "1"], ["qfi.csv", "manifest.json"]),
        (["control-export", "radar", "--T", "1"], ["protocol.csv", "manifest.json"]),
        (["estimate", "clock_sync", "--shots", "2000"], ["estimation.csv", "estimation_summary.csv", "manifest.json"]),
    ]
    with tempfile.TemporaryDirectory() as tmp:
        for i, (argv, files) in enumerate(runs):
            out = Path(tmp) / str(i)
            code = cli.main(argv + ["--out", str(out)], stdout=_Null())
            if code != 0 or not all((out / f).is_file() for f in files):
                return False, f"'{' '.join(argv)}' failed (exit {code})"
    return True, "all subcommands ok"


class _Null:
    def write(self, _):
        return 0

    def flush(self):
        pass


CHECKS = {
    1: check_clock_sync,
    2: check_separable,
    3: check_radar,
    4: check_ac_fields,
    5: check_bound_universality,
    6: check_saturation,
    7: check_oracles,
    8: check_probe_optimality,
    9: check_estimator,
    10: check_locality,
}

QUICK = {
    5: dict(n=50),
    6: dict(n=10),
    7: dict(n=10),
    8: dict(n_scen=4, n_probe=100),
    9: dict(reps=20),
    10: dict(n_random=3),
}


def run_check(number: int, quick: bool = False) -> CheckResult:
    t0 = time.perf_counter()
    kwargs = QUICK.get(number, {}) if quick else {}
    res = CHECKS[number](**kwargs)
    res.seconds = time.perf_counter() - t0
    return res


def run_all(numbers=None, quick: bool = False, echo=None) -> list[CheckResult]:
    out = []
    for n in numbers or sorted(CHECKS):
        res = run_check(n, quick)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
