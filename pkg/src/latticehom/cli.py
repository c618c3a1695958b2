"""Command-line experiment runner.

Every command validates its configuration, runs, prints a JSON manifest and,
with ``--out DIR``, writes the manifest and tables into DIR.  Exit codes:
0 success, 1 compute failure or failed check, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

log = logging.getLogger("latticehom")

COMMANDS = ["correctors", "homogenize", "sigma", "excess-decay", "identity-check", "liouville-dim",
            "smooth-bench", "extend-bench", "walk", "acceptance"]


class ConfigError(ValueError):
    pass


def _version():
    try:
        return version("latticehom")
    except PackageNotFoundError:
        return "unknown"


def _floats(text):
    return [float(x) for x in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(x) for x in str(text).replace(",", " ").split()]


def _exponent(text):
    return math.inf if str(text).lower() in ("inf", "infinity") else float(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("configuration")
    g.add_argument("--config", help="JSON file of option values; explicit flags override it")
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--L", type=int, default=32, help="torus side")
    g.add_argument("--R", type=int, default=16, help="box radius")
    g.add_argument("--rho", type=int, default=None, help="cutoff width (default max(4, R/16))")
    g.add_argument("--radii", type=_ints, default=None, help="comma-separated radii")
    g.add_argument("--law", default="lognormal:0,1", help="e.g. constant:2, layered:1,4, two_point:4, gff")
    g.add_argument("--p", type=_exponent, default=4.0)
    g.add_argument("--q", type=_exponent, default=4.0)
    g.add_argument("--eps", type=_floats, default=None, help="smoothing scale(s)")
    g.add_argument("--m", type=int, default=None, help="smoothing step count")
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds from --seed")
    g.add_argument("--tol", type=float, default=1e-10)
    g.add_argument("--threads", type=int, default=1)
    g.add_argument("--out", default=None, help="output directory")
    g.add_argument("--env-in", default=None, help="load the environment from this file")
    g.add_argument("--env-out", default=None, help="save the sampled environment here")
    g.add_argument("--verbose", action="store_true")
    g.add_argument("--T", type=float, default=100.0, help="walk horizon")
    g.add_argument("--paths", type=int, default=10_000, help="walk path count")
    g.add_argument("--samples", type=int, default=10, help="random harmonic functions (liouville-dim)")
    g.add_argument("--lambda-filter", type=float, default=None, help="moment threshold for excess-decay")
    g.add_argument("--only", type=_ints, default=None, help="acceptance: run only these criteria")

    parser = argparse.ArgumentParser(prog="latticehom", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = {name: sub.add_parser(name, parents=[common]) for name in COMMANDS}
    return parser


def parse_config(argv) -> dict:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        sp = parser.commands[args.command]
        unknown = set(cfg) - set(vars(args))
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        sp.set_defaults(**cfg)  # explicit flags still win on re-parse
        args = parser.parse_args(argv)
    cfg = vars(args)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    from .environment import parse_law
    if cfg["d"] < 1:
        raise ConfigError("--d must be positive")
    for key in ("L", "R", "seeds", "threads", "paths", "samples"):
        if cfg[key] is not None and cfg[key] < 1:
            raise ConfigError(f"--{key} must be positive")
    if cfg["tol"] <= 0:
        raise ConfigError("--tol must be positive")
    if cfg["m"] is not None and cfg["m"] < 0:
        raise ConfigError("--m must be nonnegative")
    if cfg["eps"] is not None and any(e <= 0 for e in cfg["eps"]):
        raise ConfigError("--eps must be positive")
    for key in ("p", "q"):
        if cfg[key] <= 1:
            raise ConfigError(f"--{key} must exceed 1")
    name, _ = parse_law(cfg["law"])
    known = {"constant", "layered", "layered_noise", "gff", "lognormal", "two_point", "uniform", "pareto"}
    if name not in known:
        raise ConfigError(f"unknown law {name!r}")


def config_hash(cfg: dict) -> str:
    keep = {k: v for k, v in cfg.items() if k not in ("out", "verbose", "config")}
    blob = json.dumps(keep, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _seeds(cfg):
    return list(range(cfg["seed"], cfg["seed"] + cfg["seeds"]))


def _environment(cfg, topology, seed):
    from .environment import load_environment, make_environment, save_environment
    if cfg["env_in"]:
        env = load_environment(cfg["env_in"])
        if env.topology != topology:
            raise ConfigError("loaded environment does not match the requested lattice")
    else:
        env = make_environment(cfg["law"], topology, seed)
    if cfg["env_out"]:
        save_environment(env, cfg["env_out"])
    return env


_PROVENANCE: dict = {}


def _comment() -> str:
    return "# " + json.dumps(_PROVENANCE, sort_keys=True)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(_comment() + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ----------------------------------------------------------------------------
# Commands.  Each returns (results dict, success flag) and may write into out.
# ----------------------------------------------------------------------------


def cmd_correctors(cfg, out, with_sigma=False):
    from .correctors import correctors
    from .environment import torus
    env = _environment(cfg, torus(cfg["d"], cfg["L"]), cfg["seed"])
    cs = correctors(env, cfg["tol"], with_sigma=with_sigma)
    if out:
        np.save(out / "phi.npy", cs.phi)
        if with_sigma:
            np.save(out / "sigma.npy", cs.sigma)
    summary = cs.summary()
    ok = all(v <= 10 * cfg["tol"] for v in cs.residuals.values())
    return summary, ok


def cmd_homogenize(cfg, out):
    from .correctors import correctors
    from .environment import torus
    rows = []
    for s in _seeds(cfg):
        env = _environment(cfg, torus(cfg["d"], cfg["L"]), s)
        cs = correctors(env, cfg["tol"], with_sigma=False)
        rows.append([s] + np.diag(cs.a_h).tolist())
    if out:
        _write_csv(out / "a_h.csv", ["seed"] + [f"a_{i + 1}{i + 1}" for i in range(cfg["d"])], rows)
    diag = np.array([r[1:] for r in rows])
    return {"a_h": {str(r[0]): r[1:] for r in rows}, "mean_diagonal": diag.mean(axis=0).tolist()}, True


def cmd_sigma(cfg, out):
    return cmd_correctors(cfg, out, with_sigma=True)


def cmd_excess_decay(cfg, out):
    from .excess import excess_decay_experiment
    R = cfg["R"]
    radii = cfg["radii"] or [max(1, R // 8), max(1, R // 4), max(1, R // 2)]
    tab = excess_decay_experiment(cfg["law"], R, radii, _seeds(cfg), cfg["d"], cfg["p"], cfg["q"],
                                  cfg["lambda_filter"], cfg["tol"], threads=cfg["threads"])
    if out:
        tab.write_csv(out / "excess_decay.csv", comment=_comment())
    res = {"radii": radii,
           "median_ratio": {v: {str(r): tab.median_ratio(r, v) for r in radii} for v in ("corrected", "uncorrected")},
           "median_alpha_hat": {v: tab.median_alpha(v) for v in ("corrected", "uncorrected")},
           "filtered_seeds": [s["seed"] for s in tab.per_seed if s["filtered"]]}
    return res, True


def cmd_identity_check(cfg, out):
    from .environment import torus
    from .excess import energy_identity_check, identity_setup
    R = cfg["R"]
    rho = cfg["rho"] or max(4, R // 16)
    env = _environment(cfg, torus(cfg["d"], 2 * R + 8), cfg["seed"])
    rep = energy_identity_check(*identity_setup(env, R, rho, cfg["seed"], cfg["tol"]), tol=cfg["tol"])
    res = rep.as_dict()
    return res, rep.hypotheses_ok and rep.residual <= 1e-8


def cmd_liouville_dim(cfg, out):
    from .correctors import correctors
    from .environment import torus
    from .excess import liouville_dimension
    L = cfg["L"]
    R = min(cfg["R"], (L - 8) // 2) if L >= 10 else (L - 3) // 2
    env = _environment(cfg, torus(cfg["d"], L), cfg["seed"])
    cs = correctors(env, cfg["tol"], with_sigma=False)
    rep = liouville_dimension(cs, R, n_samples=cfg["samples"], seed=cfg["seed"], radii=cfg["radii"], tol=cfg["tol"])
    if out:
        _write_csv(out / "liouville.csv", ["sample"] + [f"r={r}" for r in rep.radii],
                   [[k] + row for k, row in enumerate(rep.distances)])
    return {"R": R, "gram_eigenvalues": rep.gram_eigenvalues, "rank": rep.rank, "radii": rep.radii,
            "median_distance": np.median(rep.distances, axis=0).tolist()}, rep.rank == cfg["d"] + 1


def cmd_smooth_bench(cfg, out):
    from .surface import smoothing_constants
    radii = cfg["radii"] or [8, 16, 32, 64]
    eps_list = cfg["eps"] or [0.25]
    rows = []
    for eps in eps_list:
        for r in (2.0, math.inf):
            for R in radii:
                c = smoothing_constants(cfg["d"], R, eps, 1.0, r, seed=cfg["seed"])
                rows.append([R, eps, c.m, 1.0, r, c.c_value, c.c_gradient, c.c_approx])
    if out:
        _write_csv(out / "smoothing.csv", ["R", "eps", "m", "s", "r", "c_value", "c_gradient", "c_approx"], rows)
    return {"rows": rows}, True


def cmd_extend_bench(cfg, out):
    from .extension import boundary_scaling
    eps_list = cfg["eps"] or [0.4, 0.2, 0.1]
    res = boundary_scaling(cfg["law"], cfg["R"], eps_list, _seeds(cfg), cfg["p"], cfg["q"], cfg["d"], cfg["tol"])
    if out:
        rows = [[s, br, e, v] for (br, e), vals in res.samples.items() for s, v in zip(_seeds(cfg), vals)]
        _write_csv(out / "boundary_scaling.csv", ["seed", "branch", "eps", "ratio"], rows)
    return {"eps": res.eps, "medians": res.medians, "slopes": res.slopes, "radii": res.radii}, True


def cmd_walk(cfg, out):
    from .environment import simulate_walk, torus
    env = _environment(cfg, torus(cfg["d"], cfg["L"]), cfg["seed"])
    w = simulate_walk(env, cfg["T"], cfg["paths"], cfg["seed"])
    return {"T": w.T, "paths": w.n_paths, "covariance": w.covariance.tolist(), "stderr": w.stderr.tolist(),
            "mean_jumps": w.mean_jumps}, True


def cmd_acceptance(cfg, out):
    from .acceptance import run_all
    results = run_all(cfg["only"], echo=print)
    if out:
        _write_csv(out / "acceptance.csv", ["criterion", "name", "passed", "runtime", "detail"],
                   [[r.number, r.name, int(r.passed), f"{r.runtime:.2f}", r.detail] for r in results])
    return {str(r.number): {"passed": r.passed, "detail": r.detail, "runtime": r.runtime} for r in results}, \
        all(r.passed for r in results)


HANDLERS = {
    "correctors": cmd_correctors, "homogenize": cmd_homogenize, "sigma": cmd_sigma,
    "excess-decay": cmd_excess_decay, "identity-check": cmd_identity_check, "liouville-dim": cmd_liouville_dim,
    "smooth-bench": cmd_smooth_bench, "extend-bench": cmd_extend_bench, "walk": cmd_walk,
    "acceptance": cmd_acceptance,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"latticehom: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse errors
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if cfg["verbose"] else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _PROVENANCE.update(command=cfg["command"], seed=cfg["seed"], version=_version(), config_hash=config_hash(cfg))
    out = Path(cfg["out"]) if cfg["out"] else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    t = time.perf_counter()
    try:
        results, ok = HANDLERS[cfg["command"]](cfg, out)
    except ConfigError as exc:
        print(f"latticehom: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
        log.debug("failure", exc_info=True)
        print(f"latticehom: {cfg['command']} failed: {exc}", file=sys.stderr)
        return 1
    manifest = {"command": cfg["command"], "version": _version(), "config": cfg, "config_hash": config_hash(cfg),
                "seed": cfg["seed"], "wall_time": time.perf_counter() - t, "ok": bool(ok), "results": results}
    text = json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable)
    if out:
        (out / "manifest.json").write_text(text + "\n")
    if cfg["command"] != "acceptance" or cfg["verbose"]:
        print(text)
    return 0 if ok else 1


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


if __name__ == "__main__":
    sys.exit(main())
