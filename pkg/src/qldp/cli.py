"""Command line driver: ``qldp <command> --config FILE [--seed N] [--out DIR] [--threads K]``.

Configuration files are YAML (JSON is accepted too).  Reports are written as
``report.json`` plus command-specific CSV files; wall time goes to a
separate ``timing.json`` so that reports of identical runs are
byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import environment as env
from .channels import (
    instrument_from_kraus,
    is_positivity_improving,
    is_primitive,
    is_trace_preserving,
)
from .cocycle import NonConvergenceError
from .ep import (
    TriWitness,
    TwoTimeSite,
    build_two_time_instrument,
    check_gc_symmetry,
    check_tri_duality,
    sandwich_check,
)
from .fixtures import BUILTINS, classical_d1, depolarizing_pair, two_time_model
from .ldp import lambda_profile, legendre
from .matlin import ValidationError, density_matrix
from .qmp import empirical_rate, log_mgf, sample_trajectories

SCHEMA = "qldp-report/1"
COMMANDS = ("verify", "lyapunov", "rate", "simulate", "bruteforce", "ep")
EXIT_OK, EXIT_VALIDATION, EXIT_NONCONVERGENCE, EXIT_PROPERTY = 0, 2, 3, 4
# stream identifiers for per-task seeding
SIM_STREAM = 1

DEFAULTS = {
    "alpha_grid": {"min": -2.0, "max": 3.0, "step": 0.05},
    "n_steps": 2000,
    "n_replicas": 4,
    "seed": 0,
    "initial_state": "maximally-mixed",
    "output_dir": "qldp-out",
    "options": {},
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``(path, expected, got)`` triples."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p}: expected {e}, got {g}" for p, e, g in self.errors))


@dataclass
class RunConfig:
    model_spec: dict
    model: object
    alpha_grid: dict
    alphas: np.ndarray
    n_steps: int
    n_replicas: int
    seed: int
    initial_state: object
    rho0: np.ndarray
    output_dir: str
    options: dict = field(default_factory=dict)
    two_time_sites: dict | None = None

    def echo(self):
        return {
            "model": self.model_spec,
            "alpha_grid": self.alpha_grid,
            "n_steps": self.n_steps,
            "n_replicas": self.n_replicas,
            "seed": self.seed,
            "initial_state": self.initial_state,
            "output_dir": self.output_dir,
            "options": self.options,
        }


# -- parsing -----------------------------------------------------------------

def _complex_matrix(obj, path, errors):
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError):
        errors.append((path, "matrix of [re, im] pairs", repr(obj)[:60]))
        return None
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        errors.append((path, "square matrix of [re, im] pairs", f"array of shape {arr.shape}"))
        return None
    return arr[..., 0] + 1j * arr[..., 1]


def _number(cfg, key, path, errors, kind=float, minimum=None, strict=False):
    val = cfg.get(key)
    ok = isinstance(val, (int, float)) and not isinstance(val, bool)
    if kind is int:
        ok = isinstance(val, int) and not isinstance(val, bool)
    if not ok:
        errors.append((path, kind.__name__, repr(val)))
        return None
    if minimum is not None and (val <= minimum if strict else val < minimum):
        errors.append((path, f"{kind.__name__} {'>' if strict else '>='} {minimum}", repr(val)))
        return None
    return kind(val)


def _parse_site(spec, path, errors):
    if not isinstance(spec, dict):
        errors.append((path, "mapping", type(spec).__name__))
        return None, None
    if "two_time" in spec:
        t = spec["two_time"]
        try:
            U = _complex_matrix(t["unitary"], f"{path}.two_time.unitary", errors)
            if U is None:
                return None, None
            site = TwoTimeSite(int(t["sys_dim"]), int(t["probe_dim"]), U,
                               np.asarray(t["energies"], dtype=float), float(t["beta"]))
        except KeyError as exc:
            errors.append((f"{path}.two_time.{exc.args[0]}", "field present", "missing"))
            return None, None
        except ValidationError as exc:
            errors.append((f"{path}.two_time", "valid two-time site", str(exc)))
            return None, None
        return build_two_time_instrument(site), site
    outs = spec.get("outcomes")
    if not isinstance(outs, list) or not outs:
        errors.append((f"{path}.outcomes", "nonempty list", repr(outs)[:60]))
        return None, None
    table = {}
    for i, o in enumerate(outs):
        opath = f"{path}.outcomes[{i}]"
        if not isinstance(o, dict) or "label" not in o or "kraus" not in o:
            errors.append((opath, "mapping with label, weight, kraus", repr(o)[:60]))
            continue
        w = _number(o, "weight", f"{opath}.weight", errors) if "weight" in o else 0.0
        ks = [_complex_matrix(K, f"{opath}.kraus[{j}]", errors) for j, K in enumerate(o["kraus"])]
        if w is None or any(K is None for K in ks):
            continue
        table[o["label"]] = (ks, w)
    if len(table) != len(outs):
        return None, None
    try:
        return instrument_from_kraus(table), None
    except ValidationError as exc:
        errors.append((path, "instrument summing to a trace preserving map", str(exc)))
        return None, None


def _build_model(spec, errors):
    if not isinstance(spec, dict):
        errors.append(("model", "mapping", type(spec).__name__))
        return None, None
    if "builtin" in spec:
        name = spec["builtin"]
        if name not in BUILTINS:
            errors.append(("model.builtin", f"one of {list(BUILTINS)}", repr(name)))
            return None, None
        if name == "depolarizing-pair":
            return depolarizing_pair(), None
        if name == "classical-d1":
            return classical_d1(), None
        model, sites, _ = two_time_model(seed=int(spec.get("fixture_seed", 0)))
        return model, sites
    kind = spec.get("kind")
    if kind not in env.KINDS:
        errors.append(("model.kind", f"one of {list(env.KINDS)} or a builtin", repr(kind)))
        return None, None
    sites_spec = spec.get("sites")
    if not isinstance(sites_spec, dict) or not sites_spec:
        errors.append(("model.sites", "nonempty mapping symbol -> site", repr(sites_spec)[:60]))
        return None, None
    table, two_time = {}, {}
    for sym, s in sites_spec.items():
        inst, site = _parse_site(s, f"model.sites.{sym}", errors)
        if inst is not None:
            table[sym] = inst
            if site is not None:
                two_time[sym] = site
    if errors:
        return None, None
    try:
        if kind == "deterministic-single":
            if len(table) != 1:
                errors.append(("model.sites", "exactly one site", f"{len(table)} sites"))
                return None, None
            model = env.deterministic(next(iter(table.values())), symbol=next(iter(table)))
        elif kind == "iid":
            model = env.iid(table, spec.get("probabilities"))
        elif kind == "markov":
            model = env.markov(table, spec.get("transition"), spec.get("stationary"))
        elif kind == "rotation":
            model = env.rotation(table, spec.get("angle"), spec.get("bin_edges"), spec.get("bin_symbols"))
        else:
            model = env.explicit_path(table, spec.get("sequence"))
    except (ValidationError, TypeError, ValueError) as exc:
        errors.append((f"model ({kind})", "valid environment parameters", str(exc)))
        return None, None
    return model, (two_time or None)


def parse_config(text):
    """Parse and validate configuration text; raises :class:`ConfigError`."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("<document>", "valid YAML", str(exc).splitlines()[0])]) from None
    if not isinstance(raw, dict):
        raise ConfigError([("<document>", "mapping", type(raw).__name__)])
    errors = []
    known = set(DEFAULTS) | {"model"}
    for k in raw:
        if k not in known:
            errors.append((k, f"one of {sorted(known)}", "unknown key"))
    cfg = {**DEFAULTS, **raw}
    cfg["alpha_grid"] = {**DEFAULTS["alpha_grid"], **(raw.get("alpha_grid") or {})}
    if "model" not in raw:
        errors.append(("model", "model specification", "missing"))
        raise ConfigError(errors)

    grid = cfg["alpha_grid"]
    lo = _number(grid, "min", "alpha_grid.min", errors)
    hi = _number(grid, "max", "alpha_grid.max", errors)
    step = _number(grid, "step", "alpha_grid.step", errors, minimum=0, strict=True)
    alphas = None
    if None not in (lo, hi, step):
        if hi < lo:
            errors.append(("alpha_grid.max", f">= alpha_grid.min ({lo})", repr(hi)))
        else:
            k = int(math.floor((hi - lo) / step + 1e-9))
            alphas = np.round(lo + step * np.arange(k + 1), 12)
    n_steps = _number(cfg, "n_steps", "n_steps", errors, kind=int, minimum=1)
    n_rep = _number(cfg, "n_replicas", "n_replicas", errors, kind=int, minimum=1)
    seed = _number(cfg, "seed", "seed", errors, kind=int, minimum=0)
    if seed is not None and seed >= 2**64:
        errors.append(("seed", "64-bit unsigned integer", repr(seed)))
    if not isinstance(cfg["options"], dict):
        errors.append(("options", "mapping", type(cfg["options"]).__name__))
    if not isinstance(cfg["output_dir"], str):
        errors.append(("output_dir", "string", repr(cfg["output_dir"])))

    model, two_time = _build_model(raw["model"], errors)
    rho0 = None
    init = cfg["initial_state"]
    if model is not None:
        d = model.dim
        if init == "maximally-mixed":
            rho0 = np.eye(d, dtype=complex) / d
        else:
            M = _complex_matrix(init, "initial_state", errors)
            if M is not None:
                try:
                    if M.shape != (d, d):
                        raise ValidationError(f"shape {M.shape} does not match dimension {d}")
                    rho0 = density_matrix(M)
                except ValidationError as exc:
                    errors.append(("initial_state", "density matrix", str(exc)))
    if errors:
        raise ConfigError(errors)
    return RunConfig(raw["model"], model, cfg["alpha_grid"], alphas, n_steps, n_rep, seed,
                     init, rho0, cfg["output_dir"], dict(cfg["options"]), two_time)


# -- commands ----------------------------------------------------------------

class PropertyFailure(RuntimeError):
    pass


def _assumptions(cfg):
    return env.verify_assumptions(cfg.model, seed=0).as_dict()


def cmd_verify(cfg, threads):
    rep = env.verify_assumptions(cfg.model, seed=0)
    structure = {}
    for sym, inst in cfg.model.site_table.items():
        ch = inst.channel
        structure[str(sym)] = {
            "trace_preserving": is_trace_preserving(ch),
            "positivity_improving": str(is_positivity_improving(ch)),
            "primitive": str(is_primitive(ch)),
        }
    payload = {"assumptions": rep.as_dict(), "structure": structure}
    status = EXIT_OK if rep.ok else EXIT_PROPERTY
    return payload, {}, status


def _lambda_csv(prof, alphas):
    rows = [("alpha", "lambda", "stderr", "method_spread")]
    for a, lam, se, sp in zip(alphas, prof["lambdas"], prof["std_errors"], prof["method_spread"]):
        rows.append((a, lam, se, sp))
    return rows


def cmd_lyapunov(cfg, threads):
    prof = lambda_profile(cfg.model, cfg.alphas, cfg.n_steps, cfg.n_replicas, cfg.seed, threads)
    table = []
    for a, lam, se, sp, meth in zip(cfg.alphas, prof["lambdas"], prof["std_errors"],
                                    prof["method_spread"], prof["methods"]):
        table.append({"alpha": float(a), "lambda": lam, "std_error": se, "method_spread": sp,
                      "replica0": meth})
    payload = {"method": "fixed-point (replica mean); norm and trace on replica 0",
               "n_steps": cfg.n_steps, "n_replicas": cfg.n_replicas, "table": table,
               "failed_alphas": prof["failed"]}
    status = EXIT_NONCONVERGENCE if prof["failed"] else EXIT_OK
    return payload, {"lambda.csv": _lambda_csv(prof, cfg.alphas)}, status


def cmd_rate(cfg, threads):
    prof = lambda_profile(cfg.model, cfg.alphas, cfg.n_steps, cfg.n_replicas, cfg.seed, threads)
    ok = ~np.isnan(prof["lambdas"])
    if ok.sum() < 3:
        raise NonConvergenceError("fewer than 3 alpha values converged", np.nan)
    rp = legendre(prof["alphas"][ok], prof["lambdas"][ok], std_errors=prof["std_errors"][ok])
    rate_rows = [("s", "lambda_star", "domain_flag")]
    rate_rows += list(zip(rp.s_grid, rp.lambda_star, rp.domain_flags))
    payload = {"n_steps": cfg.n_steps, "n_replicas": cfg.n_replicas,
               "alphas": rp.alphas, "lambdas": rp.lambdas, "lambdas_convex": rp.lambdas_convex,
               "std_errors": rp.std_errors, "s_grid": rp.s_grid, "lambda_star": rp.lambda_star,
               "domain_flags": rp.domain_flags, "partial": bool(prof["failed"]),
               "failed_alphas": prof["failed"],
               "note": "rate function of the Birkhoff mean at s is lambda_star(-s)"}
    status = EXIT_NONCONVERGENCE if prof["failed"] else EXIT_OK
    return payload, {"lambda.csv": _lambda_csv(prof, cfg.alphas), "rate.csv": rate_rows}, status


def cmd_simulate(cfg, threads):
    opts = cfg.options
    n_traj = int(opts.get("n_traj", 1000))
    n_dump = int(opts.get("n_dump", 20))
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(SIM_STREAM,))
    path = env.sample_path(cfg.model, 0, np.random.SeedSequence(cfg.seed, spawn_key=(SIM_STREAM, 0)))
    batch = sample_trajectories(cfg.model, path, cfg.rho0, cfg.n_steps, n_traj,
                                np.random.default_rng(ss))
    means = batch.birkhoff_sums / cfg.n_steps
    mean, se = float(means.mean()), float(means.std(ddof=1) / np.sqrt(n_traj)) if n_traj > 1 else 0.0
    interval = opts.get("interval", [mean - 0.05, mean + 0.05])
    er = empirical_rate(cfg.model, cfg.rho0, cfg.n_steps, n_traj, tuple(interval),
                        seed=np.random.SeedSequence(cfg.seed, spawn_key=(SIM_STREAM, 1)), path=path)
    rows = [(f"# seed={cfg.seed} n_steps={cfg.n_steps} n_traj={n_traj}",),
            ("trajectory", "outcomes", "birkhoff_sum", "log_prob")]
    for t in range(min(n_dump, n_traj)):
        tr = batch[t]
        rows.append((t, " ".join(str(a) for a in tr.outcomes), tr.birkhoff_sum, tr.log_prob))
    payload = {"n_steps": cfg.n_steps, "n_traj": n_traj, "birkhoff_mean": mean,
               "birkhoff_mean_std_error": se,
               "empirical_rate": {"interval": [float(x) for x in interval], "value": er.value,
                                  "hits": er.hits, "below_resolution": er.below_resolution}}
    return payload, {"trajectories.csv": rows}, EXIT_OK


def cmd_bruteforce(cfg, threads):
    opts = cfg.options
    n = int(opts.get("n", 6))
    alphas = [float(a) for a in opts.get("alphas", [-2, -1, 0, 0.5, 1, 2])]
    path = env.sample_path(cfg.model, 0, np.random.SeedSequence(cfg.seed, spawn_key=(SIM_STREAM, 0)))
    rows, worst = [], 0.0
    for a in alphas:
        lb = log_mgf(cfg.model, path, cfg.rho0, a, n, "bruteforce")
        lt = log_mgf(cfg.model, path, cfg.rho0, a, n, "trace")
        rel = abs(math.expm1(lb - lt))
        worst = max(worst, rel)
        rows.append({"alpha": a, "log_mgf_bruteforce": lb, "log_mgf_trace": lt, "rel_dev": rel})
    passed = worst < 1e-9
    print(f"{'PASS' if passed else 'FAIL'} bruteforce n={n} max relative deviation {worst:.3e}")
    payload = {"n": n, "rows": rows, "max_rel_dev": worst, "passed": passed}
    return payload, {}, EXIT_OK if passed else EXIT_PROPERTY


def cmd_ep(cfg, threads):
    if not cfg.two_time_sites:
        raise ValidationError("ep needs a two-time model (builtin two-time or sites with two_time)")
    opts = cfg.options
    sites = cfg.two_time_sites
    tri_alphas = [float(a) for a in opts.get("tri_alphas", [-1, 0, 0.5, 1, 2])]
    tri = {}
    for sym, site in sites.items():
        w = TriWitness.conjugation(site.sys_dim, site.probe_dim)
        r = check_tri_duality(site, w, tri_alphas)
        tri[str(sym)] = {"max_deviation": r["max_deviation"], "passed": r["passed"]}
    n_sw = int(opts.get("sandwich_n", 4))
    path = env.sample_path(cfg.model, 0, np.random.SeedSequence(cfg.seed, spawn_key=(SIM_STREAM, 0)))
    sw = sandwich_check(cfg.model, path, cfg.rho0, n_sw)
    gc = check_gc_symmetry(cfg.model, cfg.alphas, cfg.n_steps, cfg.n_replicas, cfg.seed, threads)
    gc_rows = [("s", "J(s)", "J(-s)-J(s)-s")]
    gc_rows += [(s, J, r) for s, J, r, ok in zip(gc["s"], gc["J"], gc["J_residual"], gc["resolved"]) if ok]
    payload = {
        "tri_duality": tri,
        "sandwich": sw,
        "gc": {"rows": gc["rows"], "lambda_passed": gc["lambda_passed"],
               "J_max_residual": gc["J_max_residual"], "J_tolerance": gc["J_tolerance"],
               "J_passed": gc["J_passed"], "failed_alphas": gc["failed_alphas"]},
    }
    passed = (all(t["passed"] for t in tri.values()) and sw["passed"] and gc["lambda_passed"]
              and gc["J_passed"])
    if gc["failed_alphas"]:
        return payload, {"gc.csv": gc_rows}, EXIT_NONCONVERGENCE
    return payload, {"gc.csv": gc_rows}, EXIT_OK if passed else EXIT_PROPERTY


HANDLERS = {"verify": cmd_verify, "lyapunov": cmd_lyapunov, "rate": cmd_rate,
            "simulate": cmd_simulate, "bruteforce": cmd_bruteforce, "ep": cmd_ep}


# -- emission ----------------------------------------------------------------

def _plain(x):
    """JSON-ready copy: arrays to lists, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    if x is None or isinstance(x, str):
        return x
    return str(x)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def emit(report, files, out_dir):
    """Write ``report.json`` and CSV files to ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = out / "report.json"
    p.write_text(json.dumps(_plain(report), indent=2) + "\n")
    written.append(p)
    for name, rows in files.items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        p = out / name
        p.write_text(buf.getvalue())
        written.append(p)
    return written


def run(command, cfg, threads=1):
    """Execute a command; returns ``(report, files, exit_code)``."""
    if command not in HANDLERS:
        raise ValueError(f"unknown command {command!r}")
    payload, files, status = HANDLERS[command](cfg, threads)
    report = {
        "schema": SCHEMA,
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "assumptions": payload["assumptions"] if command == "verify" else _assumptions(cfg),
        "payload": payload,
        "exit_code": status,
    }
    return report, files, status


def main(argv=None):
    ap = argparse.ArgumentParser(prog="qldp", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="YAML or JSON configuration file")
    ap.add_argument("--seed", type=int, help="root seed (overrides the config)")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--threads", type=int, help="worker threads (default: $QLDP_THREADS or 1)")
    args = ap.parse_args(argv)
    threads = args.threads or int(os.environ.get("QLDP_THREADS", "1") or 1)
    try:
        cfg = parse_config(Path(args.config).read_text())
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError([("--seed", "64-bit unsigned integer", repr(args.seed))])
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output_dir = args.out
        t0 = time.perf_counter()
        report, files, status = run(args.command, cfg, threads)
        wall = time.perf_counter() - t0
    except ConfigError as exc:
        for p, e, g in exc.errors:
            print(f"config error at {p}: expected {e}, got {g}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ValidationError, OSError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    emit(report, files, cfg.output_dir)
    Path(cfg.output_dir, "timing.json").write_text(
        json.dumps({"wall_time_s": wall, "threads": threads}, indent=2) + "\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
