"""Experiment harness and command-line interface.

A config is a JSON document (see ``CONFIG_SCHEMA``) naming an environment,
a way to build the function classes, an algorithm and its parameters.
Trial i builds its instance from seed ``root + i`` and runs the algorithm
with seed ``i``, so results depend only on (config, index) and not on the
order in which worker processes finish.

Exit codes: 0 success, 1 runtime failure (every trial errored, or an
uncaught exception), 2 invalid config or input file, 3 search budget
exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from .alt_algs import (global_params, global_policy_run, global_practical_params, mmd_metaalg, mmd_params,
                       mmd_practical_params)
from .cdp_core import CdpSpec, exact_values, load_spec, policy_value, save_spec, spec_from_dict, spec_to_dict
from .envs import NAMED_ENVS, build_named, random_deterministic_cdp
from .function_classes import (TabularPolicyClass, TabularValueClass, check_completeness, check_realizability,
                               close_classes, load_classes, synthesize_classes)
from .report import RunReport
from .valor import default_params, metaalg, practical_params

ALGORITHMS = ("valor-unconstrained", "valor-constrained", "mmd", "global", "olive", "bellman-backup",
              "needle-demo")
BUILTIN_CLASS_ENVS = ("backup-chain", "needle", "rare-reward")
WORKERS_ENV = "ORACLERL_WORKERS"
CSV_HEADER = ("trial", "seed", "algorithm", "iteration", "estimated_value", "estimated_policy_value",
              "store_total", "csc_calls", "lp_calls", "ls_calls", "multi_csc_calls", "trajectories")

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["algorithm", "env"],
    "additionalProperties": False,
    "properties": {
        "algorithm": {"enum": list(ALGORITHMS)},
        "env": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["suite", "named", "file", "inline"]},
                "name": {"enum": sorted(NAMED_ENVS)},
                "params": {"type": "object"},
                "path": {"type": "string"},
                "spec": {"type": "object"},
                "horizon": {"$ref": "#/$defs/range"},
                "num_actions": {"$ref": "#/$defs/range"},
                "max_states": {"$ref": "#/$defs/range"},
                "max_obs_per_state": {"type": "integer", "minimum": 1},
            },
            "allOf": [
                {"if": {"properties": {"kind": {"const": "named"}}}, "then": {"required": ["name"]}},
                {"if": {"properties": {"kind": {"const": "file"}}}, "then": {"required": ["path"]}},
                {"if": {"properties": {"kind": {"const": "inline"}}}, "then": {"required": ["spec"]}},
            ],
            "additionalProperties": False,
        },
        "classes": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["synthesize", "close", "tabular", "explicit-file", "builtin"]},
                "n_distractors": {"type": "integer", "minimum": 0},
                "path": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "params": {
            "type": "object",
            "properties": {
                "mode": {"enum": ["theoretical", "practical"]},
                "eps": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "overrides": {"type": "object"},
            },
            "additionalProperties": False,
        },
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "json": {"type": "string"}, "csv": {"type": "string"},
                           "wall_time": {"type": "boolean"}},
            "additionalProperties": False,
        },
    },
    "$defs": {
        "range": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
    },
}


class ConfigError(ValueError):
    """Invalid experiment config; carries the JSON path of the offending value."""

    def __init__(self, path: str, message: str):
        super().__init__(f"config error at {path or '<root>'}: {message}")
        self.path = path


def validate_config(config: dict) -> dict:
    """Schema check plus the checks a schema cannot express (file existence)."""
    try:
        jsonschema.validate(config, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(".".join(str(p) for p in exc.absolute_path), exc.message) from None
    env = config["env"]
    if env["kind"] == "file" and not Path(env["path"]).is_file():
        raise ConfigError("env.path", f"no such file: {env['path']}")
    cls = config.get("classes", {})
    if cls.get("kind") == "explicit-file" and not Path(cls.get("path", "")).is_file():
        raise ConfigError("classes.path", f"no such file: {cls.get('path')}")
    if cls.get("kind") == "builtin" and env.get("name") not in BUILTIN_CLASS_ENVS:
        raise ConfigError("classes.kind", f"builtin classes exist only for {', '.join(BUILTIN_CLASS_ENVS)}")
    if env["kind"] in ("file", "inline") and cls.get("kind", "synthesize") == "builtin":
        raise ConfigError("classes.kind", "builtin classes need a named environment")
    return config


def _default_classes(config: dict) -> dict:
    if config["algorithm"] in ("global", "olive"):
        return {"kind": "tabular"}
    if config["algorithm"] in ("bellman-backup", "needle-demo"):
        return {"kind": "builtin"}
    if config["algorithm"] == "mmd":
        return {"kind": "close", "n_distractors": 63}
    return {"kind": "synthesize", "n_distractors": 63}


# ---------------------------------------------------------------------------
# instances


def _draw(rng, bounds, default):
    lo, hi = bounds if bounds is not None else default
    return int(rng.integers(lo, hi + 1))


def make_instance(config: dict, instance_seed: int):
    """(spec, G, Pi, extra) for one trial; ``extra`` holds builder-specific objects."""
    env = config["env"]
    cls = config.get("classes") or _default_classes(config)
    rng = np.random.default_rng(instance_seed)
    extra = {}
    if env["kind"] == "suite":
        H = _draw(rng, env.get("horizon"), (2, 3))
        K = _draw(rng, env.get("num_actions"), (2, 3))
        M = _draw(rng, env.get("max_states"), (2, 4))
        kw = {"max_obs_per_state": env["max_obs_per_state"]} if "max_obs_per_state" in env else {}
        spec = random_deterministic_cdp(rng, horizon=H, max_states=M, num_actions=K, **kw)
    elif env["kind"] == "named":
        params = dict(env.get("params", {}))
        if params.get("seed") == "trial":
            params["seed"] = instance_seed
        if env["name"] in BUILTIN_CLASS_ENVS:
            from .hardness import barriers
            builder = {"backup-chain": lambda horizon=6, eps=0.2: barriers.build_backup_chain(horizon, eps),
                       "needle": lambda m=8: barriers.build_needle_env(m),
                       "rare-reward": lambda eps=0.04: barriers.build_rare_reward_env(eps)}[env["name"]]
            try:
                barrier = builder(**params)
            except TypeError as exc:
                raise ConfigError("env.params", str(exc)) from None
            spec = barrier.spec
            extra["barrier"] = barrier
        else:
            try:
                spec = build_named(env["name"], **params)
            except TypeError as exc:
                raise ConfigError("env.params", str(exc)) from None
    elif env["kind"] == "file":
        spec = load_spec(env["path"])
    else:
        spec = spec_from_dict(env["spec"])

    kind = cls["kind"]
    if kind == "builtin":
        if "barrier" not in extra:
            raise ConfigError("classes.kind", "builtin classes need a barrier environment")
        G, Pi = extra["barrier"].G, extra["barrier"].Pi
    elif kind == "tabular":
        G, Pi = TabularValueClass(spec.num_obs), TabularPolicyClass(spec.num_obs, spec.num_actions)
    elif kind == "explicit-file":
        G, Pi = load_classes(cls["path"])
        if G.num_obs != spec.num_obs or Pi.num_obs != spec.num_obs:
            raise ConfigError("classes.path", "class tables do not match the environment's observations")
    else:
        G, Pi = synthesize_classes(spec, cls.get("n_distractors", 63), rng)
        if kind == "close":
            G, Pi, _ = close_classes(spec, G, Pi)
    return spec, G, Pi, extra


# ---------------------------------------------------------------------------
# trials


def _params(config: dict, spec: CdpSpec, G, Pi):
    p = config.get("params", {})
    mode = p.get("mode", "practical")
    eps, delta = p.get("eps", 0.1), p.get("delta", 0.1)
    over = dict(p.get("overrides", {}))
    M, K, H = spec.max_states, spec.num_actions, spec.horizon
    n_G = G.size if not G.tabular else 2 ** 20
    n_Pi = Pi.size if not Pi.tabular else K ** spec.num_obs
    algo = config["algorithm"]
    if algo.startswith("valor"):
        if mode == "practical":
            return practical_params(eps, delta, M, K, H, **over)
        return default_params(eps, delta, M, K, H, n_G, n_Pi, variant=algo.split("-", 1)[1])
    if algo == "mmd":
        return mmd_practical_params(eps, delta, M, K, H, **over) if mode == "practical" else \
            mmd_params(eps, delta, M, K, H, n_G, n_Pi)
    if algo == "global":
        return global_practical_params(eps, delta, M, K, H, **over) if mode == "practical" else \
            global_params(eps, delta, M, K, H, n_G, n_Pi)
    return {"eps": eps, "delta": delta, **over}


def _bellman_backup_report(spec, G, Pi, params, seed) -> RunReport:
    from .hardness.barriers import bellman_backup
    rep = RunReport("bellman-backup", seed=seed)
    rep.v_star = exact_values(spec).v_star
    n = params.get("n")
    res = bellman_backup(spec, G, Pi, None if n is None else int(n), np.random.default_rng(seed),
                         params.get("tie_break", "prefer-bad"))
    rep.policy = res.policy.tolist()
    rep.v_policy = res.value(spec)
    rep.returned = True
    rep.iterations = 1
    rep.diagnostics = {"g_choice": res.g_choice, "pi_choice": res.pi_choice}
    return rep


def _needle_report(extra, params, seed) -> RunReport:
    from .hardness.barriers import needle_explorer
    env = extra.get("barrier")
    if env is None or env.spec.horizon != 2:
        raise ConfigError("env.name", "needle-demo runs on the needle environment")
    tr = needle_explorer(env, int(params.get("iterations", 100)))
    rep = RunReport("needle-demo", seed=seed)
    rep.v_star = exact_values(env.spec).v_star
    rep.policy = tr.policy.tolist()
    rep.v_policy = policy_value(env.spec, tr.policy)
    rep.returned = True
    rep.iterations = len(tr.chosen_policies)
    rep.diagnostics = {"new_distributions": tr.new_distributions,
                       "distinct_policies": sorted(set(tr.chosen_policies))}
    return rep


def run_trial(config: dict, index: int) -> dict:
    """One trial; algorithm errors are recorded in the report rather than raised."""
    root = int(config.get("seed", 0))
    algo = config["algorithm"]
    spec, G, Pi, extra = make_instance(config, root + index)
    try:
        params = _params(config, spec, G, Pi)
    except OverflowError as exc:
        rep = RunReport(algo, seed=index, error=f"OverflowError: {exc}")
        rep.v_star = exact_values(spec).v_star
        return _finish(rep, config, index)
    if algo.startswith("valor"):
        rep = metaalg(spec, G, Pi, params, algo.split("-", 1)[1], seed=index)
    elif algo == "mmd":
        rep = mmd_metaalg(spec, G, Pi, params, seed=index)
    elif algo == "global":
        rep = global_policy_run(spec, G, Pi, params, seed=index)
    elif algo == "olive":
        from .hardness.olive import olive_run
        rep = olive_run(spec, G, Pi, float(params.get("phi", 0.0)), params["eps"],
                        int(params.get("n_per_round", 2000)), np.random.default_rng(index),
                        exact=bool(params.get("exact", True)), max_rounds=int(params.get("max_rounds", 50)))
        rep.seed = index
    elif algo == "bellman-backup":
        rep = _bellman_backup_report(spec, G, Pi, params, index)
    else:
        rep = _needle_report(extra, params, index)
    return _finish(rep, config, index)


def _finish(rep: RunReport, config: dict, index: int) -> dict:
    d = rep.to_dict()
    d["trial"] = index
    d["instance_seed"] = int(config.get("seed", 0)) + index
    eps = config.get("params", {}).get("eps", 0.1)
    d["success"] = rep.succeeded(eps)
    if not config.get("output", {}).get("wall_time", False):
        d.pop("wall_time", None)
    return d


def _quantiles(values) -> dict | None:
    vals = np.array([v for v in values if v is not None], dtype=float)
    if vals.size == 0:
        return None
    q = np.quantile(vals, [0.0, 0.1, 0.5, 0.9, 1.0])
    return {"min": float(q[0]), "q10": float(q[1]), "median": float(q[2]), "q90": float(q[3]),
            "max": float(q[4]), "mean": float(vals.mean())}


def summarize(trials: list[dict], eps: float) -> dict:
    budget_keys = sorted({k for t in trials for k in t["budget"]})
    return {
        "trials": len(trials),
        "eps": eps,
        "success_rate": float(np.mean([t["success"] for t in trials])),
        "returned_rate": float(np.mean([t["returned"] for t in trials])),
        "errors": sum(t["error"] is not None for t in trials),
        "exact_suboptimality": _quantiles(t["exact_suboptimality"] for t in trials),
        "estimated_suboptimality": _quantiles(t["estimated_suboptimality"] for t in trials),
        "iterations": _quantiles(t["iterations"] for t in trials),
        "budget": {k: _quantiles(t["budget"].get(k, 0) for t in trials) for k in budget_keys},
        "max_store_size": max((max(t["store_sizes"], default=0) for t in trials), default=0),
    }


def _workers(n_trials: int) -> int:
    raw = os.environ.get(WORKERS_ENV)
    n = int(raw) if raw else (os.cpu_count() or 1)
    return max(1, min(n, n_trials))


def run_experiment(config: dict) -> dict:
    """Validate, run every trial and aggregate. Pure in (config, seeds)."""
    validate_config(config)
    n = int(config.get("trials", 1))
    workers = _workers(n)
    if workers == 1:
        trials = [run_trial(config, i) for i in range(n)]
    else:
        with ProcessPoolExecutor(workers) as pool:
            trials = list(pool.map(run_trial, [config] * n, range(n)))
    eps = config.get("params", {}).get("eps", 0.1)
    return {"config": config, "summary": summarize(trials, eps), "trials": trials}


def metrics_rows(result: dict) -> list[list]:
    """CSV rows, one per (trial, iteration), in ``CSV_HEADER`` order.

    Algorithms without a per-iteration log contribute one row built from
    the final report.
    """
    rows = []
    for t in result["trials"]:
        if not t["metrics"]:
            rows.append([t["trial"], t["seed"], t["algorithm"], t["iterations"], t["estimated_value"],
                         t["estimated_policy_value"], sum(t["store_sizes"]),
                         *(t["budget"].get(k, 0) for k in CSV_HEADER[7:])])
            continue
        for m in t["metrics"]:
            budget = m if "trajectories" in m else t["budget"]
            store = sum(v for k, v in m.items() if k.startswith(("store_", "learned_")))
            rows.append([t["trial"], t["seed"], t["algorithm"], m.get("k", m.get("round")),
                         m.get("v_hat", m.get("predicted")), m.get("v_hat_pi"), store,
                         *(budget.get(k, 0) for k in CSV_HEADER[7:])])
    return rows


def dumps(result: dict) -> str:
    return json.dumps(result, indent=2, sort_keys=True)


def write_outputs(result: dict, out_dir: str | Path, json_name: str = "report.json",
                  csv_name: str = "metrics.csv") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jp, cp = out / json_name, out / csv_name
    jp.write_text(dumps(result) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(metrics_rows(result))
    cp.write_text(buf.getvalue())
    return jp, cp


# ---------------------------------------------------------------------------
# CLI


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _kv(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError("params", f"expected key=value, got {item!r}")
        out[key] = _parse_value(val)
    return out


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError("", f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"config is not valid JSON: {exc}") from None


def cmd_run(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.trials is not None:
        config["trials"] = args.trials
    if args.algorithm is not None:
        config["algorithm"] = args.algorithm
    if args.mode is not None:
        config.setdefault("params", {})["mode"] = args.mode
    result = run_experiment(config)
    out_cfg = config.get("output", {})
    out_dir = args.out or out_cfg.get("dir")
    if out_dir:
        jp, cp = write_outputs(result, out_dir, out_cfg.get("json", "report.json"),
                               out_cfg.get("csv", "metrics.csv"))
        print(f"wrote {jp} and {cp}")
    s = result["summary"]
    print(f"{config['algorithm']}: {s['trials']} trials, success rate {s['success_rate']:.3f} at eps={s['eps']}, "
          f"{s['errors']} errors")
    return 1 if s["errors"] == s["trials"] else 0


def cmd_build_env(args) -> int:
    params = _kv(args.param)
    if args.name not in NAMED_ENVS:
        raise ConfigError("name", f"unknown environment {args.name!r}; known: {', '.join(sorted(NAMED_ENVS))}")
    try:
        spec = build_named(args.name, **params)
    except TypeError as exc:
        raise ConfigError("params", str(exc)) from None
    if args.out:
        save_spec(spec, args.out)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(spec_to_dict(spec), indent=1))
    return 0


def cmd_check_assumptions(args) -> int:
    if args.config:
        config = validate_config(_load_config(args.config))
        spec, G, Pi, _ = make_instance(config, int(config.get("seed", 0)) if args.seed is None else args.seed)
    else:
        if not args.env or not Path(args.env).is_file():
            raise ConfigError("env", f"no such environment file: {args.env}")
        spec = load_spec(args.env)
        if args.classes:
            if not Path(args.classes).is_file():
                raise ConfigError("classes", f"no such classes file: {args.classes}")
            G, Pi = load_classes(args.classes)
        else:
            G, Pi = synthesize_classes(spec, args.n_distractors, args.seed or 0)
    real = check_realizability(spec, G, Pi)
    out = real.to_dict()
    if not (G.tabular or Pi.tabular):
        comp = check_completeness(spec, G, Pi, rng=args.seed or 0)
        out["assumption_3"], out["assumption_4"] = comp.policy_value_complete, comp.policy_complete
        out["witnesses"] = {**real.witnesses, **comp.witnesses}
    print(json.dumps(out, indent=2, default=str))
    return 0


def cmd_sat_decide(args) -> int:
    from .hardness.sat import SearchBudgetExceeded, brute_force_sat, parse_dimacs, sat_decision_via_olive
    try:
        text = Path(args.file).read_text()
    except OSError as exc:
        raise ConfigError("file", str(exc)) from None
    try:
        formula = parse_dimacs(text)
    except ValueError as exc:
        raise ConfigError("file", str(exc)) from None
    try:
        sat = sat_decision_via_olive(formula, args.budget)
    except SearchBudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 3
    print("SAT" if sat else "UNSAT")
    if args.check:
        truth, _ = brute_force_sat(formula)
        print(f"truth table: {'SAT' if truth else 'UNSAT'}")
        if truth != sat:
            return 1
    return 0


def cmd_barrier(args) -> int:
    from .hardness import barriers
    if args.which == "backup":
        thr = barriers.sample_threshold(args.H, args.eps)
        ns = args.n or [int(np.ceil(thr)) - 1, 10 * 4 ** args.H]
        print(f"H={args.H} eps={args.eps} threshold 4^H/(32 eps^2)={thr:.1f} trials={args.trials} "
              f"ties={args.tie_break}")
        print(f"{'n':>8} {'failure_rate':>13} {'trigger_prob':>13}")
        for n in ns:
            rate = barriers.backup_failure_rate(args.H, args.eps, n, args.trials, args.seed, args.tie_break)
            print(f"{n:>8} {rate:>13.3f} {barriers.backup_failure_probability(args.H, args.eps, n):>13.4f}")
    elif args.which == "needle":
        env = barriers.build_needle_env(args.m)
        tr = barriers.needle_explorer(env, args.iterations)
        print(f"m={args.m} policies={env.Pi.size} iterations={args.iterations}")
        print(f"suboptimality {tr.suboptimality:.6g}")
        print(f"new distributions {tr.new_distributions}")
        print(f"distinct chosen policies {len(set(tr.chosen_policies))}")
    else:
        t = barriers.rare_reward_table(args.eps)
        print(f"eps={args.eps}")
        print(f"{'function':<8} {'sqloss':>10}")
        for name in ("g_0", "g_star", "g_bad"):
            print(f"{name:<8} {t[name]:>10.6g}")
        print(f"E[g_bad - g_star] = {t['bias']:.6g} (sqrt(eps) - eps = {np.sqrt(args.eps) - args.eps:.6g})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oraclerl", description="Oracle-efficient PAC RL benchmarks.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--trials", type=int)
    r.add_argument("--out")
    r.add_argument("--mode", choices=["theoretical", "practical"])
    r.add_argument("--algorithm", choices=ALGORITHMS)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("build-env", help="write a named environment as JSON")
    b.add_argument("name")
    b.add_argument("--param", action="append", metavar="KEY=VALUE")
    b.add_argument("--out")
    b.set_defaults(func=cmd_build_env)

    c = sub.add_parser("check-assumptions", help="check realizability and completeness")
    c.add_argument("--config")
    c.add_argument("--env")
    c.add_argument("--classes")
    c.add_argument("--n-distractors", type=int, default=63)
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_check_assumptions)

    s = sub.add_parser("sat-decide", help="decide a DIMACS formula through the OLIVE reduction")
    s.add_argument("file")
    s.add_argument("--budget", type=int, default=1 << 16)
    s.add_argument("--check", action="store_true", help="compare with a truth-table solver")
    s.set_defaults(func=cmd_sat_decide)

    br = sub.add_parser("barrier", help="reproduce the counterexample numbers")
    br.add_argument("which", choices=["backup", "needle", "rare"])
    br.add_argument("--H", type=int, default=6)
    br.add_argument("--eps", type=float)
    br.add_argument("--n", type=int, action="append")
    br.add_argument("--trials", type=int, default=200)
    br.add_argument("--seed", type=int, default=0)
    br.add_argument("--tie-break", default="prefer-bad", choices=["prefer-bad", "lowest-id"])
    br.add_argument("--m", type=int, default=8)
    br.add_argument("--iterations", type=int, default=100)
    br.set_defaults(func=cmd_barrier)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "which", None) is not None and args.eps is None:
        args.eps = 0.2 if args.which == "backup" else 0.04
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
