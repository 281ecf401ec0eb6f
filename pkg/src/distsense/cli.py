"""Command-line interface: ``distsense <command> [scenario] [options]``.

Exit codes: 0 success, 1 invalid input, 2 simulation failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import platform
import re
import sys
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .errors import SimulationError, ValidationError
from .scenarios import BUILTINS, CONTROL_TAGS, Scenario, builtin, controlled_protocol, estimation_summary, \
    run_scenario, loglog_slope
from .control import verify_protocol
from .estimation import PROBE_KINDS

OUT_ENV = "DISTSENSE_OUT"
FLOAT_FMT = "%.12g"

_num_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario"],
    "properties": {
        "scenario": {"enum": list(BUILTINS)},
        "T": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "M": {"type": ["integer", "null"], "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "shots": {"type": "integer", "minimum": 1},
        "stage1_shots": {"type": "integer", "minimum": 1},
        "rounds": {"type": "integer", "minimum": 1},
        "repetitions": {"type": "integer", "minimum": 1},
        "probe": {"enum": [p for p in PROBE_KINDS if p != "custom"]},
        "control": {"enum": list(CONTROL_TAGS)},
        "w": _num_list,
        "truth": _num_list,
        "prior": _num_list,
        "estimation_T": {"type": "number", "exclusiveMinimum": 0},
        "format": {"enum": ["csv", "json"]},
    },
}
MANIFEST_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["config"],
    "properties": {
        "command": {"type": "string"},
        "config": CONFIG_SCHEMA,
        "versions": {"type": "object"},
        "outputs": {"type": "array"},
        "extras": {"type": "object"},
    },
}
# config keys that map onto Scenario fields
_SCENARIO_KEYS = {"T": "sweep", "M": "M", "seed": "seed", "shots": "shots", "stage1_shots": "stage1_shots",
                  "rounds": "rounds", "probe": "probe", "control": "control", "w": "w", "truth": "truth",
                  "prior": "prior", "estimation_T": "estimation_T"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _schema_error(err: jsonschema.ValidationError, text: str, path: str) -> ValidationError:
    keys = [p for p in err.absolute_path if isinstance(p, str)]
    key = keys[-1] if keys else None
    if err.validator == "additionalProperties":
        m = re.search(r"'([^']+)' was unexpected", err.message)
        key = m.group(1) if m else key
        msg = f"unknown key {key!r}"
    else:
        msg = f"key {key!r}: {err.message}" if key else err.message
    line = _line_of(text, key) if key else None
    where = f"{path}:{line}" if line else path
    return ValidationError(f"{where}: {msg}")


def load_config(path: str) -> dict:
    """Read a JSON config or a run manifest; returns the validated config mapping."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    schema = MANIFEST_SCHEMA if isinstance(data, dict) and "config" in data else CONFIG_SCHEMA
    errors = sorted(jsonschema.Draft7Validator(schema).iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise _schema_error(errors[0], text, path)
    return dict(data["config"]) if schema is MANIFEST_SCHEMA else dict(data)


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"{flag} expects comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ValidationError(f"{flag} is empty")
    return vals


def resolve_config(args) -> dict:
    """Merge builtin defaults, config file values and flags (flags win)."""
    cfg = load_config(args.config) if args.config else {}
    name = args.scenario_flag or args.scenario or cfg.get("scenario")
    if name is None:
        raise ValidationError("no scenario given; pass a builtin name or --config")
    if cfg.get("scenario") not in (None, name):
        cfg = {k: v for k, v in cfg.items() if k == "format"}
    cfg["scenario"] = name
    flags = {
        "T": _parse_floats(args.T, "--T") if args.T else None,
        "M": args.M, "seed": args.seed, "shots": args.shots, "rounds": args.rounds, "probe": args.probe,
        "control": args.control, "format": args.format,
        "repetitions": getattr(args, "repetitions", None),
    }
    cfg.update({k: v for k, v in flags.items() if v is not None})
    errors = list(jsonschema.Draft7Validator(CONFIG_SCHEMA).iter_errors(cfg))
    if errors:
        err = errors[0]
        key = next((p for p in err.absolute_path if isinstance(p, str)), None)
        raise ValidationError(f"option {key!r}: {err.message}" if key else err.message)
    scenario = build_scenario(cfg)
    resolved = scenario.settings()
    resolved["format"] = cfg.get("format", "csv")
    resolved["repetitions"] = cfg.get("repetitions", 1)
    return resolved


def build_scenario(cfg: dict) -> Scenario:
    base = builtin(cfg["scenario"])
    kw = {_SCENARIO_KEYS[k]: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.items() if k in _SCENARIO_KEYS}
    n = base.network.n_params
    for key in ("w", "truth", "prior"):
        if key in cfg and len(cfg[key]) != n:
            raise ValidationError(f"key {key!r}: expected {n} values, got {len(cfg[key])}")
    if "w" in cfg and not any(cfg["w"]):
        raise ValidationError("key 'w': weight vector must not be all zero")
    return base.replace(**kw)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % (v + 0.0)  # no negative zero
    return str(v)


def _table(header, rows, fmt: str) -> tuple[str, str]:
    if fmt == "json":
        recs = [{h: _jsonable(v) for h, v in zip(header, r)} for r in rows]
        return "json", json.dumps(recs, indent=2) + "\n"
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_fmt(v) for v in r])
    return "csv", buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(FLOAT_FMT % v)
        return f if np.isfinite(f) else str(f)
    return v


def _versions() -> dict:
    return {"distsense": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "jsonschema": _pkg_version("jsonschema"), "python": platform.python_version()}


def _pkg_version(name):
    from importlib.metadata import version

    return version(name)


def _manifest(command: str, cfg: dict, outputs: list[str], extras: dict) -> str:
    doc = {"command": command, "config": cfg, "versions": _versions(), "outputs": outputs,
           "extras": _jsonable(extras)}
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def cmd_qfi(cfg: dict) -> tuple[dict, dict]:
    s = build_scenario(cfg)
    report = run_scenario(s)
    header = ["T", "qfi_controlled", "qfi_uncontrolled", "bound", "cfi", "precision_bound"]
    rows = [[r.T, r.qfi_controlled, r.qfi_uncontrolled, r.bound, r.cfi, r.precision_bound] for r in report.rows]
    ext, text = _table(header, rows, cfg["format"])
    extras = {"M": [r.M for r in report.rows], "alignment_residual": [r.residual for r in report.rows]}
    qs = report.column("qfi_controlled")
    if len(qs) >= 2 and np.all(qs > 0):
        extras["loglog_slope_qfi_controlled"] = loglog_slope(report.column("T"), qs)
    return {f"qfi.{ext}": text}, extras


def cmd_estimate(cfg: dict) -> tuple[dict, dict]:
    s = build_scenario(cfg)
    summ = estimation_summary(s, cfg.get("repetitions", 1))
    n = s.network.n_params
    header = ["round", "stage"] + [f"x_hat_{j}" for j in range(n)] + \
             ["protocol", "shots", "theta_hat", "running_variance", "abs_error"]
    rows = [[r["round"], r["stage"], *r["x_hat"], r["protocol"], r["shots"], r["theta_hat"],
             r["running_variance"], r["abs_error"]] for r in summ["trace"]]
    ext, trace = _table(header, rows, cfg["format"])
    keys = ["T", "theta_true", "theta_hat", "repetitions", "shots", "mu_variance", "qfi", "crb_weak", "crb_exact",
            "ratio_to_crb_weak", "ratio_to_crb_exact"]
    _, summary = _table(keys, [[summ[k] for k in keys]], cfg["format"])
    return {f"estimation.{ext}": trace, f"estimation_summary.{ext}": summary}, {}


def cmd_control_export(cfg: dict) -> tuple[dict, dict]:
    """Protocol synthesized at the prior estimate for the first time in the sweep."""
    s = build_scenario(cfg)
    T = s.sweep[0]
    grid = s.grid_for(T)
    proto = controlled_protocol(s, grid, x_hat=s.prior)
    resid = verify_protocol(s.network, s.prior, s.w, proto, grid)
    ext, text = _table(["step", "time", "qubit", "cx", "cy", "cz"], proto.to_rows(), cfg["format"])
    extras = {"T": T, "M": grid.M, "x_hat": list(s.prior), "strategy": proto.strategy,
              "alignment_residual": resid, "meta": proto.meta}
    return {f"protocol.{ext}": text}, extras


COMMANDS = {"qfi": cmd_qfi, "estimate": cmd_estimate, "control-export": cmd_control_export}


def _write_outputs(out: Path, files: dict):
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            path = out / name
            with open(path, "w", newline="", encoding="utf-8") as fh:
                written.append(path)
                fh.write(text)
    except OSError:
        for path in written:
            path.unlink(missing_ok=True)
        raise


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="distsense", description="Distributed quantum sensing workbench.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, hlp in (("qfi", "QFI / bound / precision sweep"), ("estimate", "adaptive estimation run"),
                      ("control-export", "export the synthesized control protocol")):
        c = sub.add_parser(name, help=hlp)
        c.add_argument("scenario", nargs="?", help="builtin scenario name")
        c.add_argument("--scenario", dest="scenario_flag", help="builtin scenario name")
        c.add_argument("--config", help="JSON config or run manifest")
        c.add_argument("--T", help="comma-separated total times")
        c.add_argument("--M", type=int, help="time steps per run (default 2000*max(1,T))")
        c.add_argument("--seed", type=int)
        c.add_argument("--shots", type=int)
        c.add_argument("--rounds", type=int)
        c.add_argument("--probe", choices=[k for k in PROBE_KINDS if k != "custom"])
        c.add_argument("--control", choices=list(CONTROL_TAGS))
        c.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./distsense-out)")
        c.add_argument("--format", choices=["csv", "json"])
        if name == "estimate":
            c.add_argument("--repetitions", type=int, help="independent Monte Carlo repetitions")
    sub.add_parser("list-scenarios", help="list builtin scenarios").add_argument("--out", help=argparse.SUPPRESS)
    a = sub.add_parser("acceptance", help="run the acceptance suite")
    a.add_argument("--only", help="comma-separated criterion numbers")
    a.add_argument("--quick", action="store_true", help="smaller random/Monte Carlo samples")
    a.add_argument("--out", help="output directory for acceptance.csv")
    return p


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "distsense-out")


def _run_acceptance(args, stdout) -> int:
    from .acceptance import run_all

    nums = None
    if args.only:
        try:
            nums = sorted({int(v) for v in args.only.split(",")})
        except ValueError:
            raise ValidationError("--only expects comma-separated criterion numbers") from None
        if any(n < 1 or n > 10 for n in nums):
            raise ValidationError("criterion numbers run from 1 to 10")
    results = run_all(nums, args.quick, echo=lambda s: print(s, file=stdout, flush=True))
    rows = [[r.number, r.name, r.passed, r.detail, r.seconds] for r in results]
    _, text = _table(["criterion", "name", "passed", "detail", "seconds"], rows, "csv")
    _write_outputs(_out_dir(args), {"acceptance.csv": text})
    print(f"{sum(r.passed for r in results)}/{len(results)} criteria passed", file=stdout)
    return 0


def main(argv=None, stdout=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    try:
        args = build_parser().parse_args(argv)
        if args.command == "list-scenarios":
            for name in BUILTINS:
                s = builtin(name)
                print(f"{name}\tprobe={s.probe}\tcontrol={s.control}\tw={list(s.w)}", file=stdout)
            return 0
        if args.command == "acceptance":
            return _run_acceptance(args, stdout)
        cfg = resolve_config(args)
        files, extras = COMMANDS[args.command](cfg)
        files["manifest.json"] = _manifest(args.command, cfg, sorted(files), extras)
        out = _out_dir(args)
        _write_outputs(out, files)
        for name in sorted(files):
            print(out / name, file=stdout)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SimulationError, np.linalg.LinAlgError, FloatingPointError, OSError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
