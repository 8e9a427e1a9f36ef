"""Command-line front end: evaluate, estimate, improve and simulate.

Exit codes: 0 success, 1 bad configuration, 2 chain not ergodic, 3 singular
fundamental kernel, 4 unvisited state in trajectory data, 5 improvement hit
``max_iters`` without converging, 6 any other numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import warnings
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import __version__
from .chain import DEFAULT_TOL, analyze_chain
from .edgeworth import EdgeworthCdf, RiskSpec, cdf_grid, edgeworth_from_solution, risk_report, var_quantile
from .errors import (
    ConfigError,
    NotErgodicError,
    RiskMdpError,
    SingularKernelError,
    UnvisitedStateError,
)
from .estimation import TransitionCounts, evaluate_estimated
from .gradient import ImprovementConfig, improve
from .mdp import SoftmaxPolicy, TabularMdp, induce_chain, validate_mdp
from .montecarlo import empirical_cumulants, simulate, simulate_path

log = logging.getLogger("riskmdp")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_ERGODIC = 2
EXIT_SINGULAR = 3
EXIT_UNVISITED = 4
EXIT_MAX_ITERS = 5
EXIT_NUMERICAL = 6

SEED_ENV = "RISKMDP_SEED"

DEFAULTS = {
    "x0": 0,
    "risk": {"kind": "value_at_risk", "lambda": 0.05},
    "seed": 0,
    "output_dir": "riskmdp-out",
    "evaluate": {"tol": DEFAULT_TOL, "centered": True, "grid_points": 401, "grid_width": 4.0},
    "estimate": {
        "delta": 0.05,
        "epsilon": 0.01,
        "lambda_split": 0.5,
        "m_const": 1.0,
        "tau_geo": None,
        "c": None,
    },
    "improve": {
        "method": "spsa",
        "beta": 0.1,
        "step_a": 1.0,
        "step_A": 10.0,
        "epsilon_stop": 1e-4,
        "max_iters": 2000,
        "patience": 1,
        "eval": "exact",
        "n_samples": 100_000,
        "delta": 0.05,
    },
    "simulate": {"n_traj": 10_000, "write_samples": False, "path_steps": 0},
}


# ----------------------------------------------------------------------------
# configuration


def _schema():
    text = resources.files("riskmdp").joinpath("config.schema.json").read_text()
    return json.loads(text)


def _location(path) -> str:
    loc = "$"
    for part in path:
        loc += f"[{part}]" if isinstance(part, int) else f".{part}"
    return loc


def validate_config(raw) -> None:
    """Raise ConfigError naming the JSON path of the first schema violation."""
    validator = Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = errors[0]
        loc = _location(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            loc = _location([*err.absolute_path, extra[0]]) if extra else loc
            raise ConfigError(loc, "unknown key")
        raise ConfigError(loc, err.message)


def normalize_config(raw) -> dict:
    """Validated config with every default filled in; idempotent."""
    validate_config(raw)
    cfg = copy.deepcopy(raw)
    for key, val in DEFAULTS.items():
        if isinstance(val, dict):
            section = dict(val)
            section.update(cfg.get(key, {}))
            cfg[key] = section
        else:
            cfg.setdefault(key, val)
    policy = cfg["policy"]
    policy.setdefault("lo", -10.0)
    policy.setdefault("hi", 10.0)
    validate_config(cfg)
    return cfg


def load_config(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError("$", f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return normalize_config(raw), path.parent


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def effective_seed(cfg) -> int:
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return int(cfg["seed"])
    try:
        seed = int(env)
    except ValueError as exc:
        raise ConfigError(f"env:{SEED_ENV}", f"not an integer: {env!r}") from exc
    if seed < 0:
        raise ConfigError(f"env:{SEED_ENV}", "must be non-negative")
    return seed


def build_mdp(cfg, base: Path) -> TabularMdp:
    spec = cfg["mdp"]
    if isinstance(spec, str):
        mdp_path = base / spec
        try:
            spec = json.loads(mdp_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("$.mdp", f"cannot read MDP file {mdp_path}: {exc}") from exc
        validate_config({"mdp": spec, "policy": {"theta": [0.0]}})
    try:
        m = TabularMdp(spec["kernel"], spec["reward"], spec["horizon"])
    except ValueError as exc:
        raise ConfigError("$.mdp", str(exc)) from exc
    problems = validate_mdp(m)
    if problems:
        raise ConfigError("$.mdp", "; ".join(problems))
    return m


def build_policy(cfg, m: TabularMdp) -> SoftmaxPolicy:
    p = cfg["policy"]
    try:
        pol = SoftmaxPolicy(p["theta"], p["lo"], p["hi"], p.get("features"))
        pol.logits(m.n_states, m.n_actions)
    except ValueError as exc:
        raise ConfigError("$.policy", str(exc)) from exc
    return pol


def build_risk(cfg) -> RiskSpec:
    try:
        return RiskSpec(cfg["risk"]["kind"], float(cfg["risk"]["lambda"]))
    except ValueError as exc:
        raise ConfigError("$.risk", str(exc)) from exc


def build_chain(cfg, base):
    m = build_mdp(cfg, base)
    pol = build_policy(cfg, m)
    if not 0 <= cfg["x0"] < m.n_states:
        raise ConfigError("$.x0", f"initial state outside 0..{m.n_states - 1}")
    return m, pol, induce_chain(m, pol, cfg["x0"])


# ----------------------------------------------------------------------------
# artifacts


def _provenance(cfg, seed) -> dict:
    return {"config_sha256": config_hash(cfg), "seed": int(seed), "version": __version__}


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        return val if math.isfinite(val) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _dumps(record) -> str:
    return json.dumps(_clean(record), sort_keys=True, indent=2) + "\n"


def write_json(path: Path, record) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dumps(record))


def write_csv(path: Path, header, rows, prov) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# config_sha256={prov['config_sha256']} seed={prov['seed']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue())


def _out_dir(cfg, base, args) -> Path:
    if getattr(args, "output_dir", None):
        return Path(args.output_dir)
    out = Path(cfg["output_dir"])
    return out if out.is_absolute() else base / out


# ----------------------------------------------------------------------------
# subcommands


def _direct_evaluate(args) -> int:
    missing = [n for n in ("phi", "sigma", "varrho", "rhat0", "T", "lam") if getattr(args, n) is None]
    if missing:
        raise ConfigError("argv", "--direct needs " + ", ".join("--" + m.replace("lam", "lambda") for m in missing))
    e = EdgeworthCdf(args.phi, args.sigma, args.varrho, args.rhat0, args.T)
    q, var = var_quantile(e, args.lam)
    print(f"quantile q_lambda = {q:.6f}")
    print(f"value-at-risk -q_lambda = {var:.6f}")
    if args.output_dir:
        prov = {"config_sha256": config_hash(vars_direct(args)), "seed": 0, "version": __version__}
        out = Path(args.output_dir)
        write_json(out / "risk.json", {**vars_direct(args), "q_lambda": q, "var": var, **prov})
        y, g = cdf_grid(e)
        write_csv(out / "cdf_grid.csv", ["y", "G_T"], zip(y, g), prov)
    return EXIT_OK


def vars_direct(args) -> dict:
    return {"phi": args.phi, "sigma": args.sigma, "varrho": args.varrho, "rhat_x0": args.rhat0,
            "horizon": args.T, "lambda": args.lam}


def cmd_evaluate(args) -> int:
    if args.direct:
        return _direct_evaluate(args)
    cfg, base = _load(args)
    seed = effective_seed(cfg)
    m, pol, c = build_chain(cfg, base)
    spec = build_risk(cfg)
    ev = cfg["evaluate"]
    centered = ev["centered"] and not args.varrho_uncentered
    sol = analyze_chain(c, tol=ev["tol"], centered=centered)
    prov = _provenance(cfg, seed)
    report = risk_report(sol, c.x0, spec, m.horizon)
    out = _out_dir(cfg, base, args)
    write_json(out / "solution.json", {"solution": sol.to_dict(), "risk": report,
                                       "varrho_centered": centered, **prov})
    if sol.sigma2 > 0:
        e = edgeworth_from_solution(sol, c.x0, m.horizon)
        y, g = cdf_grid(e, ev["grid_points"], ev["grid_width"])
        write_csv(out / "cdf_grid.csv", ["y", "G_T"], zip(y, g), prov)
    if args.dump_solution:
        sys.stdout.write(_dumps(sol.to_dict()))
    _print_risk(report)
    return EXIT_OK


def _print_risk(report):
    if report["q_lambda"] is not None:
        print(f"quantile q_lambda = {report['q_lambda']:.6f}")
        print(f"value-at-risk -q_lambda = {report['var']:.6f}")
    else:
        print(f"mean-variance risk = {report['risk']:.6f}")


def _read_table(text) -> np.ndarray:
    """Numeric CSV with ``#`` comments and an optional header row."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if lines and any(ch.isalpha() for ch in lines[0].replace("e", "").replace("E", "")):
        lines = lines[1:]
    return np.loadtxt(io.StringIO("\n".join(lines)), delimiter=",", ndmin=2)


def read_counts(cfg, base, n_states) -> TransitionCounts:
    est = cfg["estimate"]
    if est.get("counts"):
        path = base / est["counts"]
        text = path.read_text()
        try:
            data = np.array(json.loads(text))
        except json.JSONDecodeError:
            data = _read_table(text)
        if data.shape != (n_states, n_states):
            raise ConfigError("$.estimate.counts", f"expected {n_states}x{n_states} counts, got {data.shape}")
        if np.any(data != np.round(data)) or np.any(data < 0):
            raise ConfigError("$.estimate.counts", "counts must be non-negative integers")
        return TransitionCounts(data.astype(np.int64))
    if est.get("trajectory"):
        path = base / est["trajectory"]
        try:
            data = _read_table(path.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError("$.estimate.trajectory", f"cannot read {path}: {exc}") from exc
        if data.shape[1] == 2:
            data = data[np.argsort(data[:, 0], kind="stable")]
        states = data[:, -1]
        if np.any(states != np.round(states)):
            raise ConfigError("$.estimate.trajectory", "states must be integers")
        try:
            return TransitionCounts.from_path(states.astype(np.int64), n_states)
        except ValueError as exc:
            raise ConfigError("$.estimate.trajectory", str(exc)) from exc
    raise ConfigError("$.estimate", "needs either 'trajectory' or 'counts'")


def cmd_estimate(args) -> int:
    cfg, base = _load(args)
    seed = effective_seed(cfg)
    m, pol, c = build_chain(cfg, base)
    spec = build_risk(cfg)
    est = cfg["estimate"]
    counts = read_counts(cfg, base, m.n_states)
    risk_lambda = spec.lam if spec.kind == "mean_variance" else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = evaluate_estimated(
            counts, c.r, c.x0, delta=est["delta"], epsilon=est["epsilon"],
            lambda_split=est["lambda_split"], m_const=est["m_const"], tau_geo=est["tau_geo"],
            c=est["c"], risk_lambda=risk_lambda, tol=cfg["evaluate"]["tol"],
            centered=cfg["evaluate"]["centered"],
        )
    cert = res.certificate
    if not cert.feasible:
        log.warning("certificate infeasible (%s); estimate reported without guarantee", cert.limiting)
    report = risk_report(res.solution, c.x0, spec, m.horizon)
    record = {
        "solution": res.solution.to_dict(),
        "certificate": cert.to_dict(),
        "n2_feasible": res.n2_feasible,
        "eps1": res.kernel.eps1,
        "n_transitions": int(counts.counts.sum()),
        "risk": report,
        **_provenance(cfg, seed),
    }
    write_json(_out_dir(cfg, base, args) / "estimate.json", record)
    _print_risk(report)
    print(f"certificate feasible = {cert.feasible} (c1_ok={cert.c1_ok}, c2_ok={cert.c2_ok})")
    return EXIT_OK


def cmd_improve(args) -> int:
    cfg, base = _load(args)
    imp = cfg["improve"]
    for key in ("method", "beta", "step_a", "step_A", "epsilon_stop", "max_iters", "eval"):
        val = getattr(args, key)
        if val is not None:
            imp[key] = val
    validate_config(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    seed = effective_seed(cfg)
    m, pol, c = build_chain(cfg, base)
    spec = build_risk(cfg)
    icfg = ImprovementConfig(
        method=imp["method"], beta=imp["beta"], step_a=imp["step_a"], step_A=imp["step_A"],
        epsilon_stop=imp["epsilon_stop"], max_iters=imp["max_iters"], seed=seed,
        n_samples=imp["n_samples"], delta=imp["delta"], patience=imp["patience"],
    )
    trace = improve(m, pol, spec, icfg, eval_mode=imp["eval"], x0=cfg["x0"])
    prov = _provenance(cfg, seed)
    out = _out_dir(cfg, base, args)
    rows = [
        (rec.t, rec.risk, float(np.linalg.norm(rec.theta)), rec.step) for rec in trace.records
    ]
    write_csv(out / "trace.csv", ["t", "risk", "theta_norm", "step"], rows, prov)
    write_json(out / "policy.json", {
        "theta": trace.theta_star,
        "lo": pol.lo,
        "hi": pol.hi,
        "converged": trace.converged,
        "iterations": trace.n_iters,
        "initial_risk": trace.initial_risk,
        "final_risk": trace.final_risk,
        "probe_failures": trace.probe_failures,
        **prov,
    })
    print(f"iterations = {trace.n_iters}, converged = {trace.converged}")
    print(f"risk {trace.initial_risk:.6f} -> {trace.final_risk:.6f}")
    return EXIT_OK if trace.converged else EXIT_MAX_ITERS


def cmd_simulate(args) -> int:
    cfg, base = _load(args)
    if args.seed is not None:
        cfg["seed"] = args.seed
    seed = effective_seed(cfg)
    m, pol, c = build_chain(cfg, base)
    sim = cfg["simulate"]
    n_traj = sim["n_traj"] if args.n_traj is None else args.n_traj
    prov = _provenance(cfg, seed)
    out = _out_dir(cfg, base, args)
    batch = simulate(c, n_traj, m.horizon, seed)
    record = {"summary": batch.summary(), **prov}
    if n_traj >= 10:
        record["cumulants"] = vars(empirical_cumulants(batch))
    write_json(out / "simulate.json", record)
    if sim["write_samples"]:
        write_csv(out / "samples.csv", ["index", "s_T"], enumerate(batch.s_values), prov)
    steps = sim["path_steps"] if args.path_steps is None else args.path_steps
    if steps > 0:
        states = simulate_path(c, steps, seed)
        write_csv(out / "trajectory.csv", ["t", "state"], enumerate(states.tolist()), prov)
    s = batch.summary()
    print(f"n_traj = {s['n_traj']}, mean S_T = {s['mean']:.6f}, var S_T = {s['var']:.6f}")
    return EXIT_OK


def _load(args):
    cfg, base = load_config(args.config)
    if getattr(args, "dump_config", False):
        sys.stdout.write(_dumps(cfg))
        raise _Done()
    return cfg, base


class _Done(Exception):
    pass


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskmdp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("config", nargs=None if config_required else "?", help="JSON config file")
        p.add_argument("--output-dir", help="override the config's output_dir")
        p.add_argument("--dump-config", action="store_true",
                       help="print the normalized config and exit")

    p = sub.add_parser("evaluate", help="exact evaluation of a known kernel")
    common(p, config_required=False)
    p.add_argument("--dump-solution", action="store_true", help="print the chain solution JSON")
    p.add_argument("--varrho-uncentered", action="store_true",
                   help="use raw rewards in the third-order lag sums")
    p.add_argument("--direct", action="store_true",
                   help="evaluate the expansion from scalars instead of a config")
    p.add_argument("--phi", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--varrho", type=float)
    p.add_argument("--rhat0", type=float)
    p.add_argument("--T", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("estimate", help="evaluation from trajectory data")
    common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("improve", help="SPSA/SF policy improvement")
    common(p)
    p.add_argument("--method", choices=["spsa", "sf"])
    p.add_argument("--beta", type=float)
    p.add_argument("--step-a", dest="step_a", type=float)
    p.add_argument("--step-A", dest="step_A", type=float)
    p.add_argument("--eps-stop", dest="epsilon_stop", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--eval", choices=["exact", "estimated"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_improve)

    p = sub.add_parser("simulate", help="Monte Carlo batch of cumulative rewards")
    common(p)
    p.add_argument("--n-traj", dest="n_traj", type=int)
    p.add_argument("--path-steps", dest="path_steps", type=int,
                   help="also write one trajectory of this many steps")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="riskmdp: %(levelname)s: %(message)s")
    if args.command == "evaluate" and not args.direct and args.config is None:
        parser.error("evaluate needs a config file unless --direct is given")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except _Done:
        return EXIT_OK
    except ConfigError as exc:
        log.error("bad configuration: %s", exc)
        return EXIT_CONFIG
    except NotErgodicError as exc:
        log.error("%s", exc)
        return EXIT_NOT_ERGODIC
    except SingularKernelError as exc:
        log.error("%s", exc)
        return EXIT_SINGULAR
    except UnvisitedStateError as exc:
        log.error("%s", exc)
        return EXIT_UNVISITED
    except (RiskMdpError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
