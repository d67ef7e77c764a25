"""``qcoal`` command line: eps, simulate, moehle, ergodics, scenario.

Exit codes: 0 success, 2 invalid configuration, 3 non-convergence of a
backward product, 4 configuration-chain size guard.

Every output file carries the resolved configuration, the seed and the
package version, and nothing time-dependent, so a rerun with the same
inputs reproduces the files byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import scenarios
from .ancestry import POLICIES, simulate_T2, simulate_tree
from .config import ConfigError, RunConfig, from_mapping, load_file, parse_proportions
from .config_chain import GuardError, fixed_env_limit_check, random_env_limit_check
from .ergodics import (
    DEFAULT_MAX_STEPS,
    DEFAULT_TOL,
    DEFAULT_WARMUP,
    NonConvergenceError,
    batch_means_se,
    draw_gamma,
    ergodic_path_c,
    estimate_eps,
)
from .model import IslandStructure, condition_checks, effective_migration, validate

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGENCE, EXIT_GUARD = 0, 2, 3, 4
SCHEMA_VERSION = 1


# ----------------------------------------------------------------------------
# output helpers


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


def _envelope(command: str, cfg: RunConfig, result: dict) -> dict:
    return {"schema": f"quenched_coalescent/{command}/{SCHEMA_VERSION}", "version": __version__,
            "seed": cfg.seed, "config": cfg.resolved(), "result": result}


def _header_lines(command: str, cfg: RunConfig) -> list[str]:
    return [f"command={command}", f"version={__version__}", f"seed={cfg.seed}",
            "config=" + json.dumps(_jsonable(cfg.resolved()), sort_keys=True)]


def _write(cfg: RunConfig, name: str, text: str) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _write_json(cfg: RunConfig, name: str, command: str, result: dict) -> Path:
    doc = _jsonable(_envelope(command, cfg, result))
    return _write(cfg, name, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_table(cfg: RunConfig, name: str, command: str, header: list[str],
                 rows: list[list]) -> Path:
    buf = io.StringIO()
    for line in _header_lines(command, cfg):
        buf.write("# " + line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return _write(cfg, name, buf.getvalue())


# ----------------------------------------------------------------------------
# configuration


def _resolve(args) -> RunConfig:
    data = load_file(args.config) if args.config else {}
    cfg = from_mapping(data, args.command)
    if getattr(args, "scenario", None) is not None:
        cfg.scenario, cfg.env = args.scenario, None
    if getattr(args, "a", None) is not None:
        cfg.a = parse_proportions(args.a)
    if getattr(args, "N", None) is not None:
        cfg.N = args.N
    for key in ("seed", "reps", "workers", "out_dir"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    for key in ("tol", "max_steps", "path_length", "warmup", "n", "policy", "islands", "cap",
                "t", "N_list", "mode", "seeds", "u", "samples", "paths"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.options["N" if key == "N_list" else key] = val
    if cfg.scenario is not None:
        try:
            cfg.scenario = scenarios.normalize_name(cfg.scenario)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from exc
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def _checked(cfg: RunConfig, N: int | None = None):
    structure = cfg.structure() if N is None else IslandStructure(cfg.structure().a, N)
    spec = cfg.spec(structure.N)
    problems = validate(spec, structure)
    if problems:
        raise ConfigError("; ".join(problems))
    return spec, structure


def _closed_forms(cfg: RunConfig) -> dict:
    if cfg.scenario is None or cfg.a is None:
        return {}
    return {k: v for k, (v, _) in scenarios.closed_forms(cfg.scenario, cfg.a).items()}


# ----------------------------------------------------------------------------
# commands


def cmd_eps(cfg: RunConfig) -> int:
    spec, structure = _checked(cfg)
    o = cfg.options
    reps = int(cfg.reps or 20_000)
    tol = float(o.get("tol", DEFAULT_TOL))
    max_steps = int(o.get("max_steps", DEFAULT_MAX_STEPS))
    rep = estimate_eps(spec, structure, cfg.seed, reps, tol, max_steps, cfg.workers)
    path_length = int(o.get("path_length", 100_000))
    cpath = ergodic_path_c(spec, structure, cfg.seed, path_length,
                           int(o.get("warmup", DEFAULT_WARMUP)))
    erg = {"c_q": float(cpath.mean()), "se": batch_means_se(cpath), "path_length": path_length}
    result = {"report": rep.to_record(), "ergodic": erg, "closed_forms": _closed_forms(cfg)}
    _write_json(cfg, "eps_summary.json", "eps", result)
    buf = io.StringIO()
    for line in _header_lines("eps", cfg):
        buf.write("# " + line + "\n")
    buf.write(rep.to_csv())
    _write(cfg, "eps.csv", buf.getvalue())
    se = rep.std_errors
    for key in ("c_f", "c_a", "c_q", "gap"):
        val = getattr(rep, key)
        if val is None:
            print(f"{key:>5} = n/a (random environment)")
        else:
            print(f"{key:>5} = {val:.6f}  (SE {se.get(key, 0.0):.2g})")
    print(f"c_q ergodic = {erg['c_q']:.6f}  (SE {erg['se']:.2g}, path {path_length})")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    spec, structure = _checked(cfg)
    o = cfg.options
    n = int(o.get("n", 2))
    reps = int(cfg.reps or 10_000)
    policy = str(o.get("policy", "stationary"))
    islands = o.get("islands")
    if isinstance(islands, str):
        islands = [int(x) for x in islands.split(",")]
    c_ref = _closed_forms(cfg).get("c_q")
    kw = dict(islands=islands, c_reference=c_ref, cap=o.get("cap"),
              tol=float(o.get("tol", DEFAULT_TOL)),
              max_steps=int(o.get("max_steps", DEFAULT_MAX_STEPS)), workers=cfg.workers)
    if n == 2:
        summ = simulate_T2(spec, structure, cfg.seed, reps, policy, **kw)
        print(f"Ne_hat = {summ.Ne_hat:.2f}  (SE {summ.se:.2f})")
        print(f"c_hat  = {summ.c_hat:.5f}  (SE {summ.c_hat_se:.2g})")
        print(f"KS vs geometric-exponential (c={summ.ks_reference_c:.5f}) = {summ.ks:.5f}")
    else:
        summ = simulate_tree(spec, structure, cfg.seed, n, reps, policy, **kw)
        for k in sorted(summ.scaled_means, reverse=True):
            print(f"T_{k}: mean {summ.mean_times[k]:.2f}  scaled {summ.scaled_means[k]:.4f}"
                  f"  Kingman {summ.kingman_means[k]:.4f}")
        print(f"KS(T2) = {summ.ks_T2:.5f}")
    print(f"multi-merger fraction = {summ.multi_merger_fraction:.3g}; capped = {summ.capped}")
    result = {"summary": summ.to_record(), "policy": policy, "closed_forms": _closed_forms(cfg)}
    _write_json(cfg, "simulate_summary.json", "simulate", result)
    _write(cfg, "simulate_samples.csv", summ.sample.to_csv(_header_lines("simulate", cfg)))
    return EXIT_OK


def _as_list(x, cast):
    if isinstance(x, str):
        return [cast(v) for v in x.split(",")]
    if isinstance(x, (list, tuple)):
        return [cast(v) for v in x]
    return [cast(x)]


def cmd_moehle(cfg: RunConfig) -> int:
    o = cfg.options
    n = int(o.get("n", 3))
    ts = _as_list(o.get("t", 1.0), float)
    Ns = _as_list(o.get("N", [100, 200, 400, 800]), int)
    mode = str(o.get("mode", "fixed"))
    seeds = int(o.get("seeds", 20))
    warmup = int(o.get("warmup", DEFAULT_WARMUP))
    if mode not in ("fixed", "random"):
        raise ConfigError("mode must be fixed or random")
    rows = []
    for N in Ns:
        spec, structure = _checked(cfg, N)
        for t in ts:
            if mode == "fixed":
                if not spec.is_constant():
                    raise ConfigError("fixed mode needs a constant environment")
                chk = fixed_env_limit_check(effective_migration(spec, 0, N), structure.a,
                                            n, N, t)
                rows.append([N, t, n, chk.norm, chk.c, "", 1])
            else:
                checks = [random_env_limit_check(spec, structure, n, N, t, cfg.seed,
                                                 warmup, stream_id=i) for i in range(seeds)]
                rows.append([N, t, n, float(np.median([c.norm for c in checks])),
                             float(np.mean([c.c for c in checks])),
                             float(np.median([c.full_norm for c in checks])), seeds])
    header = ["N", "t", "n", "norm", "c_hat", "full_norm", "seeds"]
    _write_table(cfg, "moehle.csv", "moehle", header, rows)
    _write_json(cfg, "moehle.json", "moehle",
                {"mode": mode, "rows": [dict(zip(header, r)) for r in rows]})
    for r in rows:
        print(f"N={r[0]:>6}  t={r[1]:<5g} norm={r[3]:.6g}  c_hat={r[4]:.5f}")
    return EXIT_OK


def _contraction(history: np.ndarray) -> tuple[float, int]:
    """Geometric per-step rate and the longest window needed to halve."""
    h = np.asarray(history, dtype=float)
    pos = h[h > 0]
    if pos.size < 2:
        return 0.0, 1
    rate = float((pos[-1] / pos[0]) ** (1.0 / (pos.size - 1)))
    worst = 1
    for j in range(pos.size):
        k = np.nonzero(pos[j:] <= pos[j] / 2)[0]
        if k.size:
            worst = max(worst, int(k[0]))
    return rate, worst


def cmd_ergodics(cfg: RunConfig) -> int:
    o = cfg.options
    u = int(o.get("u", 30))
    samples = int(o.get("samples", 10_000))
    n_paths = int(o.get("paths", 5))
    runs = [scenarios.z_recursions(cfg.seed, u, stream_id=i) for i in range(samples)]
    zu = np.array([r.Z[u] for r in runs])
    ks = scenarios.ks_uniform(zu)
    crit = scenarios.ks_critical(samples, 0.01)
    steps = np.abs(np.diff(np.stack([r.Z_star for r in runs]), axis=1))
    bounds = 2.0 ** -(np.arange(u) + 1)
    cauchy_ok = bool(np.all(steps <= bounds))

    # oscillation certificates of the configured environment (coin by default)
    a = cfg.a or (0.5, 0.5)
    spec = cfg.spec() if (cfg.scenario or cfg.env) else scenarios.two_island_coin(a)
    certs = []
    for i in range(min(samples, 20)):
        est = draw_gamma(spec, cfg.seed, i, float(o.get("tol", DEFAULT_TOL)),
                         int(o.get("max_steps", DEFAULT_MAX_STEPS)))
        rate, halve = _contraction(est.history)
        certs.append({"stream": i, "steps": est.steps_used, "oscillation": est.oscillation,
                      "rate": rate, "halving_window": halve, "history": est.history})
    rate = float(np.median([c["rate"] for c in certs]))
    halve = max(c["halving_window"] for c in certs)

    path_rows = [[i, j, r.Z[j], r.Z_star[j]] for i, r in enumerate(runs[:n_paths])
                 for j in range(u + 1)]
    _write_table(cfg, "ergodics_paths.csv", "ergodics", ["sample", "j", "Z", "Z_star"], path_rows)
    result = {"u": u, "samples": samples, "ks": ks, "ks_critical_1pct": crit,
              "cauchy_ok": cauchy_ok, "median_contraction_rate": rate,
              "max_halving_window": halve, "certificates": certs}
    _write_json(cfg, "ergodics.json", "ergodics", result)
    print(f"KS(Z_{u}) = {ks:.5f}  (1% critical {crit:.5f}) {'pass' if ks < crit else 'FAIL'}")
    print(f"Z* increments within 2^-(j+1): {cauchy_ok}")
    print(f"oscillation: median per-step factor {rate:.4f}, halves within {halve} step(s)")
    return EXIT_OK


def cmd_scenario(args) -> int:
    if args.action == "list":
        for name in scenarios.SCENARIO_NAMES:
            print(name)
        return EXIT_OK
    if not args.name:
        raise ConfigError("scenario show needs a name")
    a = parse_proportions(args.a or "0.5,0.5")
    desc = scenarios.describe(args.name, a)
    spec = scenarios.build(desc.name, a, args.N)
    doc = {"name": desc.name, "L": desc.L, "a": list(desc.a),
           "closed_forms": {k: {"value": v, "formula": f} for k, (v, f) in desc.closed_forms.items()},
           "conditions": condition_checks(spec),
           "matrices": [m.tolist() for m in spec.matrices]}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--reps", type=int, help="replicates")
    common.add_argument("--workers", type=int, help="worker processes (output unchanged)")
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--scenario", help="two-island-coin | favored-island | dummy-island")
    common.add_argument("--a", help="island proportions, e.g. 0.3,0.7 or 1/3,1/3,1/3")
    common.add_argument("--N", type=int, help="population size")
    common.add_argument("--tol", type=float)
    common.add_argument("--max-steps", dest="max_steps", type=int)

    p = argparse.ArgumentParser(prog="qcoal", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("eps", parents=[common], help="effective-size factors")
    e.add_argument("--path-length", dest="path_length", type=int)
    e.add_argument("--warmup", type=int)

    s = sub.add_parser("simulate", parents=[common], help="backward genealogy simulation")
    s.add_argument("--n", type=int, help="sample size (2 gives T2 only)")
    s.add_argument("--policy", choices=POLICIES)
    s.add_argument("--islands", help="starting islands for --policy fixed, e.g. 0,1")
    s.add_argument("--cap", type=int, help="generation cap per replicate")

    m = sub.add_parser("moehle", parents=[common], help="convergence of the configuration chain")
    m.add_argument("--n", type=int)
    m.add_argument("--t", help="comma-separated time grid")
    m.add_argument("--N-list", dest="N_list", help="comma-separated population sizes")
    m.add_argument("--mode", choices=("fixed", "random"))
    m.add_argument("--seeds", type=int, help="environment seeds per N (random mode)")
    m.add_argument("--warmup", type=int)

    g = sub.add_parser("ergodics", parents=[common], help="random-matrix product diagnostics")
    g.add_argument("--u", type=int, help="recursion depth")
    g.add_argument("--samples", type=int)
    g.add_argument("--paths", type=int, help="paths written to CSV")

    c = sub.add_parser("scenario", help="list or show canned scenarios")
    c.add_argument("action", choices=("list", "show"))
    c.add_argument("name", nargs="?")
    c.add_argument("--a")
    c.add_argument("--N", type=int, default=1000)
    return p


COMMANDS = {"eps": cmd_eps, "simulate": cmd_simulate, "moehle": cmd_moehle,
            "ergodics": cmd_ergodics}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "scenario":
            return cmd_scenario(args)
        cfg = _resolve(args)
        return COMMANDS[args.command](cfg)
    except GuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ConfigError, ValueError, KeyError) as exc:
        msg = exc.args[0] if exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
