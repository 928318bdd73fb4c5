"""Batch command line: ``pamc complete``, ``pamc loop`` and ``pamc study:<name>``.

Configuration is flat ``key = value`` text with section prefixes
(``solver.lambda_L = 0.5``). Every key has a default; the resolved set is
echoed to ``<run dir>/resolved_config``. Failures print one JSON line on
stderr and exit 1 (bad input) or 2 (numerical failure).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .completion import SolverConfig, weighted_pcp
from .confidence import ConfidenceMap, append_coverage_row, conformal_intervals, coverage_report
from .errors import InvalidArgument, NumericalFailure
from .experiments import STUDIES, STUDY_KEYS, SweepSpec, run_study
from .mdp_env import Policy, generate_random_mdp, load_mdp, sample_observations, save_mdp
from .mnar import build_weights, estimate_propensity
from .pamc_loop import LoopConfig, run_baseline, run_pamc
from .tensor_core import SeededRng, write_matrix_csv

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class ConfigError(InvalidArgument):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# key -> (type, default). Types: int, float, bool, str, "float?" (None allowed),
# "int?", "floats" (comma-separated list).
SCHEMA = {
    "seed": ("int", 0),
    "outdir": ("str", "runs"),
    "env.mdp_dir": ("str?", None),
    "env.n_states": ("int", 20),
    "env.n_actions": ("int", 5),
    "env.branching": ("int", 3),
    "env.rank": ("int", 2),
    "env.sigma": ("float", 0.1),
    "env.sparse_density": ("float", 0.0),
    "env.sparse_magnitude": ("float", 1.0),
    "env.gamma": ("float", 0.9),
    "env.n_steps": ("int", 5000),
    "env.obs_prob": ("float", 1.0),
    "env.behavior_epsilon": ("float", 0.3),
    "solver.lambda_L": ("float?", None),
    "solver.lambda_S": ("float?", math.inf),
    "solver.max_iters": ("int", 2000),
    "solver.tol": ("float", 1e-7),
    "solver.step_size": ("float?", None),
    "solver.rank_hint": ("int", 2),
    "solver.max_rank": ("int?", 2),
    "solver.continuation": ("float", 0.9),
    "solver.accelerate": ("bool", True),
    "complete.clip_floor": ("float", 0.01),
    "complete.alpha": ("float", 0.05),
    "complete.calibration_fraction": ("float", 0.2),
    "complete.tau": ("float?", None),
    "loop.with_baseline": ("bool", True),
    "sweep.parameter": ("str?", None),
    "sweep.values": ("floats?", None),
    "sweep.seeds": ("int?", None),
}
for _f in dataclasses.fields(LoopConfig):
    if _f.name == "solver":
        continue
    _kind = {"int": "int", "float": "float"}.get(str(_f.type), "float?")
    SCHEMA[f"loop.{_f.name}"] = (_kind, _f.default)


def _coerce(key: str, kind: str, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    optional = kind.endswith("?")
    base = kind.rstrip("?")
    if optional and text.lower() in ("none", "null", ""):
        return None
    try:
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "bool":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if base == "floats":
            return tuple(float(x) for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(key, f"expected {base}, got {text!r}") from None


def parse_lines(lines) -> dict:
    out = {}
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}", "expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(command: str, raw: dict) -> dict:
    """Defaults overlaid with ``raw``; unknown keys and bad types raise
    :class:`ConfigError` naming the key."""
    cfg = {k: default for k, (_, default) in SCHEMA.items()}
    for key, value in raw.items():
        if key.startswith("study."):
            if key[6:] not in STUDY_KEYS:
                raise ConfigError(key, "unknown study key")
            cfg[key] = _coerce(key, "float?", value) if isinstance(value, str) else value
            continue
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        cfg[key] = _coerce(key, SCHEMA[key][0], value)
    cfg["command"] = command
    _check(cfg)
    return cfg


def _check(cfg: dict) -> None:
    positive_ints = ("env.n_states", "env.n_actions", "env.branching", "env.n_steps")
    for key in positive_ints:
        if cfg[key] < 1:
            raise ConfigError(key, "must be at least 1")
    if cfg["env.rank"] < 0:
        raise ConfigError("env.rank", "must be nonnegative")
    if cfg["seed"] < 0:
        raise ConfigError("seed", "must be a nonnegative 64-bit integer")
    for key in ("env.obs_prob", "env.behavior_epsilon"):
        if not 0.0 <= cfg[key] <= 1.0:
            raise ConfigError(key, "must lie in [0, 1]")
    # the owning dataclasses validate the rest; map their messages to keys
    try:
        solver_config(cfg)
    except InvalidArgument as exc:
        raise ConfigError(_key_in("solver", str(exc)), str(exc)) from None
    try:
        loop_config(cfg)
    except InvalidArgument as exc:
        raise ConfigError(_key_in("loop", str(exc)), str(exc)) from None


def _key_in(section: str, message: str) -> str:
    word = message.split()[0] if message else ""
    key = f"{section}.{word}"
    return key if key in SCHEMA else section


def solver_config(cfg: dict) -> SolverConfig:
    return SolverConfig(
        lambda_L=cfg["solver.lambda_L"], lambda_S=cfg["solver.lambda_S"],
        max_iters=cfg["solver.max_iters"], tol=cfg["solver.tol"], step_size=cfg["solver.step_size"],
        rank_hint=cfg["solver.rank_hint"], max_rank=cfg["solver.max_rank"],
        continuation=cfg["solver.continuation"], accelerate=cfg["solver.accelerate"],
    )


def loop_config(cfg: dict) -> LoopConfig:
    kwargs = {f.name: cfg[f"loop.{f.name}"] for f in dataclasses.fields(LoopConfig) if f.name != "solver"}
    solver = dataclasses.replace(solver_config(cfg))
    return LoopConfig(solver=solver, **kwargs)


def format_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        if v is None:
            text = "none"
        elif isinstance(v, bool):
            text = str(v).lower()
        elif isinstance(v, float):
            text = repr(v)
        elif isinstance(v, tuple):
            text = ",".join(repr(float(x)) for x in v)
        else:
            text = str(v)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def new_run_dir(outdir, command: str, seed: int) -> Path:
    """``<outdir>/<command>-seed<seed>``, suffixed ``-1``, ``-2``, ... if taken."""
    root = Path(outdir)
    root.mkdir(parents=True, exist_ok=True)
    stem = f"{command.replace(':', '-')}-seed{seed}"
    candidate = root / stem
    n = 0
    while True:
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            n += 1
            candidate = root / f"{stem}-{n}"


def version_stamp() -> str:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    return (f"package = pamc {version}\npython = {platform.python_version()}\n"
            f"numpy = {np.__version__}\nplatform = {platform.platform()}\n")


def _mdp_from(cfg: dict, rng: SeededRng):
    if cfg["env.mdp_dir"]:
        return load_mdp(cfg["env.mdp_dir"])
    spec = {"rank": cfg["env.rank"], "sigma": cfg["env.sigma"],
            "sparse_density": cfg["env.sparse_density"], "sparse_magnitude": cfg["env.sparse_magnitude"]}
    return generate_random_mdp(cfg["env.n_states"], cfg["env.n_actions"], cfg["env.branching"], spec,
                               gamma=cfg["env.gamma"], rng=rng.child(0))


def cmd_complete(cfg: dict, run: Path) -> None:
    rng = SeededRng(cfg["seed"])
    mdp = _mdp_from(cfg, rng)
    base = Policy.deterministic(rng.child(5).gen.integers(0, mdp.n_actions, mdp.n_states), mdp.n_actions)
    behavior = base.epsilon_greedy(cfg["env.behavior_epsilon"])
    obs = sample_observations(mdp, behavior, cfg["env.n_steps"], cfg["env.obs_prob"], rng.child(1))
    if len(obs) == 0:
        raise InvalidArgument("no rewards were observed; raise env.n_steps or env.obs_prob")
    weights = build_weights(estimate_propensity(obs), cfg["complete.clip_floor"])
    fit, cal = obs.split(cfg["complete.calibration_fraction"], rng.child(2))
    result = weighted_pcp(fit, weights, solver_config(cfg), rng.child(3))
    result.save(run / "completion")
    save_mdp(mdp, run / "mdp")
    try:
        conf = conformal_intervals(result, cal, cfg["complete.alpha"], weights, cfg["complete.tau"])
    except InvalidArgument:
        # too few calibration entries for this alpha: report no confidence at all
        conf = ConfidenceMap.abstain_everywhere(mdp.mean_reward.shape, cfg["complete.alpha"],
                                                cfg["complete.tau"] or 1.0)
    write_matrix_csv(run / "completion" / "half_width.csv", conf.half_width)
    report = coverage_report(conf, result, mdp.mean_reward)
    append_coverage_row(run / "coverage.csv", cfg["seed"], cfg["complete.alpha"], report)


def cmd_loop(cfg: dict, run: Path) -> None:
    rng = SeededRng(cfg["seed"])
    mdp = _mdp_from(cfg, rng)
    loop = loop_config(cfg)
    trace = run_pamc(mdp, loop, rng.child(1))
    trace.to_csv(run / "trace.csv")
    lines = [f"pamc_final_return = {trace.final_return:.17g}", f"pamc_regret = {trace.regret:.17g}",
             f"pamc_mean_abstention = {trace.mean_abstention:.17g}"]
    if cfg["loop.with_baseline"]:
        base = run_baseline(mdp, loop, rng.child(1))
        base.to_csv(run / "baseline_trace.csv")
        lines += [f"baseline_final_return = {base.final_return:.17g}", f"baseline_regret = {base.regret:.17g}"]
    (run / "summary.txt").write_text("\n".join(lines) + "\n")


def study_spec(name: str, cfg: dict) -> SweepSpec:
    _, default = STUDIES[name]
    base = dict(default.base)
    base["seed"] = cfg["seed"]
    for key, value in cfg.items():
        if key.startswith("study."):
            base[key[6:]] = value
    parameter = cfg["sweep.parameter"] or default.parameter
    values = cfg["sweep.values"] if cfg["sweep.values"] is not None else default.values
    if parameter in ("rank", "n_obs", "size", "n_states", "n_actions"):
        values = tuple(int(v) for v in values)
    seeds = cfg["sweep.seeds"] if cfg["sweep.seeds"] is not None else default.seeds
    return SweepSpec(parameter, values, seeds, base)


def dispatch(cfg: dict, run: Path) -> int:
    command = cfg["command"]
    if command == "complete":
        cmd_complete(cfg, run)
    elif command == "loop":
        cmd_loop(cfg, run)
    elif command.startswith("study:"):
        name = command.split(":", 1)[1]
        run_study(name, study_spec(name, cfg), run)
    return EXIT_OK


def _fail(code: int, kind: str, message: str, key=None) -> int:
    record = {"error": kind, "exit": code, "message": message}
    if key is not None:
        record["key"] = key
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pamc", description=__doc__.splitlines()[0])
    parser.add_argument("command", help="complete | loop | study:<name>")
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="64-bit unsigned seed")
    parser.add_argument("--outdir", help="parent directory for the run directory")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK

    command = args.command
    known = command in ("complete", "loop") or (
        command.startswith("study:") and command.split(":", 1)[1] in STUDIES)
    if not known:
        return _fail(EXIT_INVALID, "unknown-command", f"unknown command {command!r}")
    try:
        raw = {}
        if args.config:
            path = Path(args.config)
            if not path.is_file():
                raise ConfigError("--config", f"file not found: {path}")
            raw.update(parse_lines(path.read_text().splitlines()))
        raw.update(parse_lines(args.set))
        if args.seed is not None:
            raw["seed"] = str(args.seed)
        if args.outdir is not None:
            raw["outdir"] = args.outdir
        cfg = resolve_config(command, raw)
        if command.startswith("study:"):
            study_spec(command.split(":", 1)[1], cfg)
    except ConfigError as exc:
        return _fail(EXIT_INVALID, "invalid-config", str(exc), exc.key)
    except InvalidArgument as exc:
        return _fail(EXIT_INVALID, "invalid-config", str(exc))

    run = new_run_dir(cfg["outdir"], command, cfg["seed"])
    (run / "resolved_config").write_text(format_config(cfg))
    (run / "version_stamp").write_text(version_stamp())
    try:
        code = dispatch(cfg, run)
    except NumericalFailure as exc:
        return _fail(EXIT_NUMERICAL, "numerical-failure", str(exc))
    except InvalidArgument as exc:
        return _fail(EXIT_INVALID, "invalid-argument", str(exc))
    print(str(run))
    return code


if __name__ == "__main__":
    sys.exit(main())
