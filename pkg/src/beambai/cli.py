"""Command-line front end.

Reads a YAML config, validates it completely (all violations are reported
together), runs one of ``run``, ``sweep``, ``bounds`` or ``casestudy`` and
writes CSV files plus ``manifest.json`` into the output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import yaml

from . import bounds, experiments
from .algorithms import BudgetError
from .detection import RegimeError
from .environment import CaseStudyChannel, SlotLaw
from .grouping import is_power_of_two

ENV_PREFIX = "BEAMBAI_"
COMMANDS = ("run", "sweep", "bounds", "casestudy")

# key -> (type, unit, description); nested sections are listed with dotted keys
SCHEMA_DOC: dict[str, tuple[str, str, str]] = {
    "command": ("str", "-", "one of run | sweep | bounds | casestudy"),
    "seed": ("int", "-", "master seed (u64); every trial stream derives from it"),
    "trials": ("int", "trials", "Monte Carlo trials per sweep point"),
    "workers": ("int", "processes", "worker processes (results do not depend on it)"),
    "out": ("str", "path", "output directory, created if missing"),
    "T": ("int", "slots", "beam-selection budget for run/sweep"),
    "scenario.kind": ("str", "-", "stationary | distance | change | blockage"),
    "scenario.n_beams": ("int", "beams", "codebook size, a power of two"),
    "scenario.big_gain": ("float", "power", "stationary: mean of the aligned beam (G)"),
    "scenario.small_gain": ("float", "power", "stationary: mean of every other beam (g)"),
    "scenario.noise_scale": ("float", "power", "s2 in the reward variance 2 s2 mu"),
    "scenario.random_best": ("bool", "-", "stationary/distance: draw the aligned beam per trial"),
    "scenario.distance_m": ("float", "m", "distance: user distance"),
    "scenario.sidelobe_ratio": ("float", "-", "distance: g / G"),
    "scenario.top_mean": ("float", "power", "change: best pre-change mean"),
    "scenario.mean_step": ("float", "power", "change: gap between consecutive ranks"),
    "scenario.post_mean": ("float", "power", "change: mean of the changed beam after the change"),
    "scenario.top_fraction": ("float", "-", "change: changed beam's rank is drawn from 2..ceil(fraction N)"),
    "scenario.law.kind": ("str", "-", "change slot law: fixed | uniform | beta"),
    "scenario.law.slot": ("int", "slots", "fixed law: change slot"),
    "scenario.law.lo": ("float", "slots or fraction of T", "window start"),
    "scenario.law.hi": ("float", "slots or fraction of T", "window end"),
    "scenario.law.alpha": ("float", "-", "beta law shape alpha"),
    "scenario.law.beta": ("float", "-", "beta law shape beta"),
    "scenario.law.relative": ("bool", "-", "lo/hi are fractions of T"),
    "scenario.training_gain_db": ("float", "dB", "blockage: measurement SNR relative to the data SNR"),
    "scenario.blocked_loss_db": ("float", "dB", "blockage: attenuation before the change"),
    "scenario.frame_slots": ("int", "slots", "blockage: frame length T_tot"),
    "scenario.channel.distance_m": ("float", "m", "link distance"),
    "scenario.channel.bandwidth_hz": ("float", "Hz", "noise bandwidth W"),
    "scenario.channel.tx_power_dbm": ("float", "dBm", "transmit power"),
    "scenario.channel.carrier_hz": ("float", "Hz", "carrier frequency"),
    "scenario.channel.noise_figure_db": ("float", "dB", "receiver noise figure"),
    "scenario.channel.noise_psd_dbm_hz": ("float", "dBm/Hz", "thermal noise density"),
    "scenario.channel.pathloss_model": ("str", "-", "free_space | log_distance"),
    "scenario.channel.pathloss_exponent": ("float", "-", "log_distance exponent"),
    "policies[].name": ("str", "-", "exhaustive | cbe | sh | kshes"),
    "policies[].K": ("int", "beams", "kshes: change confined to the top K (default from scenario)"),
    "policies[].offset": ("int", "rounds", "kshes: added to r* = log2(N/2K)"),
    "policies[].min_samples": ("int", "samples", "kshes: per-beam floor in halving rounds"),
    "sweep.<axis>": ("list", "axis units", "sweep axis: T, K or any scenario field"),
    "bounds.n_beams": ("int", "beams", "codebook size for the bound grid"),
    "bounds.T": ("list[int]", "slots", "budgets"),
    "bounds.distance_m": ("list[float]", "m", "distances"),
    "bounds.sidelobe_ratio": ("float", "-", "g / G"),
    "bounds.noise_scale": ("float", "power", "s2"),
    "casestudy.n_beams": ("list[int]", "beams", "codebook sizes"),
    "casestudy.fractions": ("list[float]", "-", "budget fractions T / T_tot"),
}


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    trials: int = 1000
    workers: int = 1
    out: str = "results"
    T: int | None = None
    scenario: dict[str, Any] = field(default_factory=dict)
    policies: list[dict[str, Any]] = field(default_factory=list)
    sweep: dict[str, list] = field(default_factory=dict)
    bounds: dict[str, Any] = field(default_factory=dict)
    casestudy: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# --- validation ---------------------------------------------------------------

_SCALARS = {
    "int": (int,),
    "float": (int, float),
    "str": (str,),
    "bool": (bool,),
}


def _type_ok(value, kind: str) -> bool:
    if kind in ("int", "float") and isinstance(value, bool):
        return False
    return isinstance(value, _SCALARS[kind])


def _field_kind(cls, name) -> str | None:
    for f in fields(cls):
        if f.name == name:
            t = str(f.type)
            for kind in ("bool", "int", "float", "str"):
                if t.startswith(kind):
                    return kind
            return "other"
    return None


def _check_block(block, cls, where, errors, skip=()):
    if not isinstance(block, dict):
        errors.append(f"{where}: expected a mapping")
        return
    for key, value in block.items():
        if key in skip:
            continue
        kind = _field_kind(cls, key)
        if kind is None:
            errors.append(f"{where}.{key}: unknown key")
        elif kind != "other" and not _type_ok(value, kind):
            errors.append(f"{where}.{key}: expected {kind}, got {type(value).__name__}")


def _check_n_beams(value, where, errors):
    if isinstance(value, bool) or not isinstance(value, int) or not is_power_of_two(value) or value < 2:
        errors.append(f"{where}: n_beams must be a power of two >= 2, got {value!r}")


def _validate(raw: dict[str, Any]) -> list[str]:
    errors: list[str] = []
    allowed = {f.name for f in fields(RunConfig)}
    for key in raw:
        if key not in allowed:
            errors.append(f"{key}: unknown key")
    command = raw.get("command")
    if command is None:
        errors.append("command: required")
    elif command not in COMMANDS:
        errors.append(f"command: must be one of {COMMANDS}, got {command!r}")
    for key, kind in (("seed", "int"), ("trials", "int"), ("workers", "int"), ("out", "str"), ("T", "int")):
        if key in raw and raw[key] is not None and not _type_ok(raw[key], kind):
            errors.append(f"{key}: expected {kind}, got {type(raw[key]).__name__}")
    if _type_ok(raw.get("seed", 0), "int") and raw.get("seed", 0) < 0:
        errors.append("seed: must be >= 0")
    if _type_ok(raw.get("trials", 1), "int") and raw.get("trials", 1) < 1:
        errors.append("trials: must be >= 1")
    if _type_ok(raw.get("workers", 1), "int") and raw.get("workers", 1) < 1:
        errors.append("workers: must be >= 1")

    scen = raw.get("scenario", {})
    if command in ("run", "sweep"):
        if not scen:
            errors.append("scenario: required for run/sweep")
        if raw.get("T") is None and "T" not in raw.get("sweep", {}):
            errors.append("T: required for run/sweep (or sweep over T)")
        if not raw.get("policies"):
            errors.append("policies: at least one policy is required")
    if scen:
        _validate_scenario(scen, errors)
    pols = raw.get("policies", [])
    if not isinstance(pols, list):
        errors.append("policies: expected a list")
    else:
        for i, pol in enumerate(pols):
            _check_block(pol, experiments.PolicySpec, f"policies[{i}]", errors)
            if isinstance(pol, dict):
                if "name" not in pol:
                    errors.append(f"policies[{i}].name: required")
                elif pol["name"] not in ("exhaustive", "cbe", "sh", "kshes"):
                    errors.append(f"policies[{i}].name: unknown policy {pol['name']!r}")
    sweep = raw.get("sweep", {})
    if not isinstance(sweep, dict):
        errors.append("sweep: expected a mapping")
    else:
        cls = experiments.SCENARIOS.get(scen.get("kind")) if isinstance(scen, dict) else None
        names = {f.name for f in fields(cls)} if cls else set()
        for axis, values in sweep.items():
            if not isinstance(values, list) or not values:
                errors.append(f"sweep.{axis}: expected a nonempty list")
            elif cls and axis not in names | {"T", "K"}:
                errors.append(f"sweep.{axis}: unknown sweep axis")
            elif axis == "n_beams":
                for v in values:
                    _check_n_beams(v, f"sweep.{axis}", errors)
    _validate_bounds(raw.get("bounds", {}), command, errors)
    _validate_casestudy(raw.get("casestudy", {}), command, errors)
    return errors


def _validate_scenario(scen, errors):
    if not isinstance(scen, dict):
        errors.append("scenario: expected a mapping")
        return
    kind = scen.get("kind")
    cls = experiments.SCENARIOS.get(kind)
    if cls is None:
        errors.append(f"scenario.kind: must be one of {tuple(experiments.SCENARIOS)}, got {kind!r}")
        return
    _check_block(scen, cls, "scenario", errors, skip=("kind", "law", "channel"))
    if "n_beams" in scen:
        _check_n_beams(scen["n_beams"], "scenario.n_beams", errors)
    if "law" in scen:
        if kind != "change":
            errors.append("scenario.law: only the change scenario takes a law")
        else:
            _check_block(scen["law"], SlotLaw, "scenario.law", errors)
    if "channel" in scen:
        if kind != "blockage":
            errors.append("scenario.channel: only the blockage scenario takes a channel")
        else:
            _check_block(scen["channel"], CaseStudyChannel, "scenario.channel", errors)


def _validate_bounds(block, command, errors):
    if not isinstance(block, dict):
        errors.append("bounds: expected a mapping")
        return
    known = {"n_beams", "T", "distance_m", "sidelobe_ratio", "noise_scale"}
    for key in block:
        if key not in known:
            errors.append(f"bounds.{key}: unknown key")
    if "n_beams" in block:
        _check_n_beams(block["n_beams"], "bounds.n_beams", errors)
    for key in ("T", "distance_m"):
        if key in block and (not isinstance(block[key], list) or not block[key]):
            errors.append(f"bounds.{key}: expected a nonempty list")
    if command == "bounds":
        for key in ("T", "distance_m"):
            if key not in block:
                errors.append(f"bounds.{key}: required for the bounds command")


def _validate_casestudy(block, command, errors):
    if not isinstance(block, dict):
        errors.append("casestudy: expected a mapping")
        return
    for key in block:
        if key not in ("n_beams", "fractions"):
            errors.append(f"casestudy.{key}: unknown key")
    for v in block.get("n_beams", []) if isinstance(block.get("n_beams", []), list) else []:
        _check_n_beams(v, "casestudy.n_beams", errors)
    fr = block.get("fractions", [])
    if isinstance(fr, list):
        for v in fr:
            if not _type_ok(v, "float") or not 0 < v < 1:
                errors.append(f"casestudy.fractions: {v!r} is not in (0, 1)")
    if command == "casestudy":
        for key in ("n_beams", "fractions"):
            if not block.get(key):
                errors.append(f"casestudy.{key}: required for the casestudy command")


def parse_config(text: str) -> RunConfig:
    """Parse and validate YAML text; raises :class:`ConfigError` listing every violation."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"yaml: {exc}"]) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be a mapping"])
    errors = _validate(raw)
    if errors:
        raise ConfigError(errors)
    return RunConfig(**raw)


def serialize(config: RunConfig) -> str:
    data = {k: v for k, v in config.to_dict().items() if v not in (None, {}, [])}
    return yaml.safe_dump(data, sort_keys=False)


def config_hash(config: RunConfig) -> str:
    canon = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


# --- construction -------------------------------------------------------------

def build_scenario(block: dict[str, Any]):
    block = dict(block)
    cls = experiments.SCENARIOS[block.pop("kind")]
    if "law" in block:
        block["law"] = SlotLaw(**block["law"])
    if "channel" in block:
        block["channel"] = CaseStudyChannel(**block["channel"])
    return cls(**block)


def build_policies(items) -> tuple[experiments.PolicySpec, ...]:
    return tuple(experiments.PolicySpec(**item) for item in items)


# --- execution -----------------------------------------------------------------

@dataclass
class ExecutionResult:
    status: int
    artifacts: dict[str, Path]


def execute(config: RunConfig) -> ExecutionResult:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, dict] = {}
    paths: dict[str, Path] = {}

    def emit(name, header, rows, version):
        path = experiments.write_csv(out / f"{name}.csv", header, rows)
        artifacts[name] = {"path": path.name, "columns": list(header), "columns_version": version}
        paths[name] = path

    if config.command in ("run", "sweep"):
        scenario = build_scenario(config.scenario)
        policies = build_policies(config.policies)
        axes = {k: tuple(v) for k, v in config.sweep.items()} if config.command == "sweep" else {}
        T = config.T if config.T is not None else axes["T"][0]
        plan = experiments.ExperimentPlan(scenario, policies, T, config.trials, config.seed, axes)
        estimates = experiments.run_comparison_sweep(plan, workers=config.workers)
        header, rows = experiments.estimate_rows(estimates, config.seed)
        emit("sweep" if config.command == "sweep" else "estimates", header, rows,
             experiments.ESTIMATE_COLUMNS_VERSION)
    elif config.command == "bounds":
        header, rows = bound_rows(config)
        emit("bounds", header, rows, experiments.BOUND_COLUMNS_VERSION)
    elif config.command == "casestudy":
        scen_block = dict(config.scenario or {"kind": "blockage"})
        scenario = build_scenario(scen_block)
        res = experiments.optimize_case_study(scenario, config.casestudy["n_beams"],
                                              config.casestudy["fractions"], config.trials,
                                              config.seed, workers=config.workers)
        header = ["n_beams", "fraction", "T", "p_error", "rate_bps", "feasible", "trials", "seed"]
        rows = [[str(p.n_beams), repr(p.fraction), str(p.T), repr(p.p_error), repr(p.rate_bps),
                 "true" if p.feasible else "false", str(config.trials), str(config.seed)]
                for p in res.points]
        emit("rates", header, rows, experiments.RATE_COLUMNS_VERSION)
        emit("optima", ["fraction", "best_n_beams"],
             [[repr(f), str(n)] for f, n in res.best_n.items()], experiments.RATE_COLUMNS_VERSION)
    manifest = experiments.write_manifest(out / "manifest.json", config.to_dict(), config.seed, artifacts)
    paths["manifest"] = manifest
    return ExecutionResult(0, paths)


def bound_rows(config: RunConfig):
    b = config.bounds
    n = b.get("n_beams", 16)
    ratio = b.get("sidelobe_ratio", 1e-4)
    s2 = b.get("noise_scale", 1.0)
    chash = config_hash(config)
    header = ["config_hash", "bound", "n_beams", "distance_m", "T", "G", "g", "value", "raw", "vacuous", "regime"]
    rows = []
    for d in b["distance_m"]:
        G, g = experiments.DistanceScenario(n_beams=n, distance_m=d, sidelobe_ratio=ratio,
                                            noise_scale=s2).gains()
        for T in b["T"]:
            for name in ("cbe", "karnin", "exhaustive"):
                regime = "ok"
                try:
                    if name == "cbe":
                        raw = bounds.bound_cbe(T, n, G, g, s2, clamp=False)
                    elif name == "karnin":
                        raw = bounds.bound_karnin(T, n, G, g, clamp=False)
                    else:
                        raw = bounds.bound_exhaustive(T, n, G - g, s2, G, clamp=False)
                except RegimeError:
                    raw, regime = math.inf, "outside"
                value = min(1.0, max(0.0, raw))
                rows.append([chash, name, str(n), repr(float(d)), str(T), repr(G), repr(g),
                             repr(value), repr(raw), "true" if not raw < 1.0 else "false", regime])
    return header, rows


# --- entry point ----------------------------------------------------------------

def help_epilog() -> str:
    lines = ["config keys (YAML):"]
    for key, (kind, unit, desc) in SCHEMA_DOC.items():
        lines.append(f"  {key:34s} {kind:12s} [{unit}] {desc}")
    lines.append("")
    lines.append(f"environment overrides: {ENV_PREFIX}CONFIG, {ENV_PREFIX}SEED, {ENV_PREFIX}OUT, "
                 f"{ENV_PREFIX}WORKERS, {ENV_PREFIX}TRIALS (flags take precedence)")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="beambai",
        description="Run beam-selection experiments and bound evaluations from a YAML config.",
        epilog=help_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the config's command")
    p.add_argument("--config", help="path to the YAML config")
    p.add_argument("--seed", type=int, help="master seed (u64)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--trials", type=int, help="trials per point (overrides config)")
    return p


def _error(kind: str, message: str, violations=None, code: int = 1) -> int:
    record = {"error": kind, "message": message}
    if violations:
        record["violations"] = violations
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    env = os.environ
    config_path = args.config or env.get(ENV_PREFIX + "CONFIG")
    if not config_path:
        return _error("usage", "no config given (--config or BEAMBAI_CONFIG)", code=2)
    try:
        text = Path(config_path).read_text(encoding="utf-8")
    except OSError as exc:
        return _error("io", str(exc), code=2)
    try:
        raw = yaml.safe_load(text) or {}
        if not isinstance(raw, dict):
            raise ConfigError(["config: top level must be a mapping"])
        overrides = {
            "command": args.command,
            "seed": args.seed if args.seed is not None else _env_int(env, "SEED"),
            "out": args.out or env.get(ENV_PREFIX + "OUT"),
            "workers": args.workers if args.workers is not None else _env_int(env, "WORKERS"),
            "trials": args.trials if args.trials is not None else _env_int(env, "TRIALS"),
        }
        raw.update({k: v for k, v in overrides.items() if v is not None})
        config = parse_config(yaml.safe_dump(raw))
    except ConfigError as exc:
        return _error("config", "invalid configuration", exc.violations, code=2)
    except yaml.YAMLError as exc:
        return _error("config", f"yaml: {exc}", code=2)
    try:
        result = execute(config)
    except (BudgetError, ValueError) as exc:
        return _error(type(exc).__name__, str(exc), code=1)
    except OSError as exc:
        return _error("io", str(exc), code=1)
    for name, path in result.artifacts.items():
        print(f"{name}: {path}")
    return result.status


def _env_int(env, name):
    value = env.get(ENV_PREFIX + name)
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigError([f"{ENV_PREFIX}{name}: expected an integer, got {value!r}"]) from None


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
