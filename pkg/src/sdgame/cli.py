"""Command-line entry point: scenario config -> solvers -> artifacts + manifest.

Exit codes: 0 all checks passed, 1 a mathematical check failed, 2 invalid input.
"""

from __future__ import annotations

import argparse
import copy
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, artifacts, diagnostics, plotting, saddle
from .chain import build_kernel
from .counterexample import CounterexampleParams, gap_report
from .dpp import dpp_consistency, solve_game
from .families import apply_overrides, builtin_config, config_hash, load_config, spec_from_config
from .hamiltonian import isaacs_check
from .model import SpecError, build_grid, validate_spec
from .pdefd import IsaacsRefusal, cross_check, refinement_study

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2

DEFAULT_FAMILY = {"solve": "heat", "isaacs-check": "example81", "counterexample": "example81",
                  "saddle": "example81", "dpp-check": "heat", "diagnose": "heat"}


def _run_cfg(cfg: dict) -> dict:
    return cfg.setdefault("run", {})


def _grid(spec, cfg: dict, resolution=None):
    g = cfg.get("grid") or {}
    return build_grid(spec, n_t=g.get("n_t"), resolution=resolution or g.get("resolution"),
                      reach=g.get("reach"))


def _coarse(res):
    return [(int(r) - 1) // 2 + 1 for r in res]


def _validated(cfg: dict):
    spec = spec_from_config(cfg)
    rep = validate_spec(spec, seed=int(cfg.get("seed", 0)))
    if not rep.passed:
        raise SpecError("scenario validation failed: " +
                        ", ".join(c.name for c in rep.checks if not c.passed))
    return spec, rep


def cmd_solve(cfg, out: Path, threads: int):
    spec, val = _validated(cfg)
    res = (cfg.get("grid") or {}).get("resolution")
    grid = _grid(spec, cfg)
    kernel = build_kernel(spec, grid)
    lo, lu, lv = solve_game(spec, grid, kernel, "lower", threads)
    up, uu, uv = solve_game(spec, grid, kernel, "upper", threads)
    arts = [artifacts.export_fields(out / "values.csv", {"lower": lo, "upper": up}, 0,
                                    {"lower_u": lu, "upper_v": uv})]
    cache = {}
    for name, f in (("lower", lo), ("upper", up)):
        cache.update(artifacts.field_arrays(name, f))
    for name, p in (("lower_u", lu), ("lower_v", lv), ("upper_u", uu), ("upper_v", uv)):
        cache.update(artifacts.policy_arrays(name, p))
    arts.append(artifacts.save_cache(out / "fields.bin", cache))
    duality = diagnostics.weak_duality(lo, up)
    bounds = [diagnostics.check_bounds(f, spec) for f in (lo, up)]
    summary = {"lower_at_origin": lo.at_origin(), "upper_at_origin": up.at_origin(),
               "gap_at_origin": up.at_origin() - lo.at_origin(), "grid": grid.describe(),
               "kernel": kernel.consistency, "validation": val.to_dict(),
               "weak_duality": duality.to_dict(), "bounds": [b.to_dict() for b in bounds]}
    ok = duality.passed and all(b.passed for b in bounds)
    if (cfg.get("grid") or {}).get("refine", True) and res is not None:
        study = refinement_study(spec, [_coarse(res), list(res)], "dpp", threads)
        arts.append(artifacts.write_json(out / "refinement.json", study))
        arts.append(plotting.refinement_figure(study, out / "refinement.png"))
    arts.append(artifacts.write_json(out / "solve.json", summary))
    arts.append(plotting.value_figure({"lower": lo, "upper": up}, out / "value.png"))
    return ok, arts


def cmd_isaacs(cfg, out: Path, threads: int):
    spec = spec_from_config(cfg)
    run = _run_cfg(cfg)
    rep = isaacs_check(spec, int(run.get("samples", 10_000)), float(run.get("tolerance", 1e-10)),
                       int(cfg.get("seed", 0)))
    return rep.passed, [artifacts.write_json(out / "isaacs.json", rep.to_dict())]


def cmd_counterexample(cfg, out: Path, threads: int):
    p = (cfg.get("scenario") or {}).get("params") or {}
    run = _run_cfg(cfg)
    params = CounterexampleParams(alpha=float(p.get("alpha", 0.3)), a=float(p.get("a", 0.5)),
                                  T=float(cfg.get("horizon", 1.0)),
                                  n_paths=int(run.get("paths", 100_000)), seed=int(cfg.get("seed", 0)))
    weak = None
    res = (cfg.get("grid") or {}).get("resolution")
    if run.get("weak", True) and params.alpha > 0 and res is not None:
        spec = spec_from_config(cfg)
        study = refinement_study(spec, [_coarse(res), list(res)], "dpp", threads)
        weak = {"rows": study["rows"]}
    rep = gap_report(params, weak)
    d = rep.to_dict()
    arts = [artifacts.write_json(out / "gap_report.json", d),
            artifacts.write_csv(out / "candidates.csv", ["candidate", "E_X2_T", "u0", "J", "stderr"],
                                ([c["candidate"], c["E_X2_T"], c["u0"], c["J"], c["stderr"]]
                                 for c in d["candidates"])),
            plotting.counterexample_figure(d, out / "counterexample.png")]
    return rep.passed, arts


def cmd_saddle(cfg, out: Path, threads: int):
    spec, _ = _validated(cfg)
    run = _run_cfg(cfg)
    grid = _grid(spec, cfg)
    kernel = build_kernel(spec, grid)
    ex = saddle.extract(spec, grid, kernel, threads=threads)
    cert = saddle.verify(spec, grid, kernel, ex.u_star, ex.v_star, int(run.get("deviations", 100)),
                         int(cfg.get("seed", 0)), ex.epsilon, threads)
    d = cert.to_dict()
    d["extraction"] = {"epsilon": ex.epsilon, "field_gap": ex.field_gap,
                       "one_step_gap": ex.one_step_gap}
    arts = [artifacts.write_json(out / "certificate.json", d),
            artifacts.write_csv(out / "trials.csv", ["policy_id", "side", "payoff", "gain", "violation"],
                                ([t.policy_id, t.side, t.payoff, t.gain, t.violation]
                                 for t in cert.trials)),
            artifacts.save_cache(out / "policies.bin", {**artifacts.policy_arrays("u_star", ex.u_star),
                                                        **artifacts.policy_arrays("v_star", ex.v_star)})]
    return cert.passed, arts


def cmd_dpp_check(cfg, out: Path, threads: int):
    spec, _ = _validated(cfg)
    grid = _grid(spec, cfg)
    kernel = build_kernel(spec, grid)
    splits = sorted({max(1, grid.n_t // 4), max(1, grid.n_t // 2), max(1, grid.n_t - 1)})
    splits = [s for s in splits if 0 < s < grid.n_t]
    rows = [{"split": s, "side": side, "deviation": dpp_consistency(spec, grid, kernel, s, side,
                                                                    threads=threads)}
            for s in splits for side in ("lower", "upper")]
    lo, _, _ = solve_game(spec, grid, kernel, "lower", threads)
    up, _, _ = solve_game(spec, grid, kernel, "upper", threads)
    duality = diagnostics.weak_duality(lo, up)
    report = {"splits": rows, "weak_duality": duality.to_dict()}
    ok = duality.passed and all(r["deviation"] == 0.0 for r in rows)
    try:
        report["cross_check"] = cross_check(spec, grid, grid, threads=threads)
        ok = ok and report["cross_check"]["passed"]
    except IsaacsRefusal as exc:
        report["cross_check"] = {"refused": str(exc), "isaacs": exc.report.to_dict()}
    return ok, [artifacts.write_json(out / "dpp_check.json", report)]


def cmd_diagnose(cfg, out: Path, threads: int):
    spec, _ = _validated(cfg)
    run = _run_cfg(cfg)
    seed = int(cfg.get("seed", 0))
    grid = _grid(spec, cfg)
    kernel = build_kernel(spec, grid)
    lo, _, _ = solve_game(spec, grid, kernel, "lower", threads)
    up, _, _ = solve_game(spec, grid, kernel, "upper", threads)
    bounds = [diagnostics.check_bounds(f, spec) for f in (lo, up)]
    mod = diagnostics.modulus_report(lo, spec, int(run.get("probes", 2000)), seed)
    apri = diagnostics.bsde_apriori(spec, grid, kernel, int(run.get("trials", 20)), seed)
    report = {"bounds": [b.to_dict() for b in bounds], "modulus": mod.to_dict(),
              "apriori": apri.to_dict()}
    ok = all(b.passed for b in bounds) and mod.passed and apri.passed
    res = (cfg.get("grid") or {}).get("resolution")
    if res is not None and (cfg.get("grid") or {}).get("refine", True):
        g2 = _grid(spec, cfg, _coarse(res))
        lo2, _, _ = solve_game(spec, g2, build_kernel(spec, g2), "lower", threads)
        stab = diagnostics.modulus_stability(diagnostics.modulus_report(lo2, spec, mod.probes, seed), mod)
        report["modulus_stability"] = stab
    arts = [artifacts.write_json(out / "diagnostics.json", report),
            artifacts.write_csv(out / "modulus_spatial.csv", ["distance", "gap", "rho0"], mod.spatial.tolist()),
            artifacts.write_csv(out / "modulus_temporal.csv", ["distance", "gap", "rho1"], mod.temporal.tolist()),
            plotting.modulus_figure(mod, out / "modulus.png")]
    return ok, arts


COMMANDS = {"solve": cmd_solve, "isaacs-check": cmd_isaacs, "counterexample": cmd_counterexample,
            "saddle": cmd_saddle, "dpp-check": cmd_dpp_check, "diagnose": cmd_diagnose}

RUN_FLAGS = {"samples": int, "tolerance": float, "paths": int, "deviations": int, "probes": int,
             "trials": int}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdgame", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="scenario YAML or a previous run manifest")
        s.add_argument("--family", help="built-in scenario when --config is absent")
        s.add_argument("--out", default="runs", help="artifact root directory")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int, default=1)
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config override, repeatable")
        if name == "counterexample":
            s.add_argument("--alpha", type=float)
            s.add_argument("--a", type=float)
            s.add_argument("--T", type=float)
            s.add_argument("--paths", type=int)
            s.add_argument("--no-weak", action="store_true", help="skip the lattice game values")
        if name == "isaacs-check":
            s.add_argument("--samples", type=int)
            s.add_argument("--tolerance", type=float)
        if name == "saddle":
            s.add_argument("--deviations", type=int)
        if name == "diagnose":
            s.add_argument("--probes", type=int)
            s.add_argument("--trials", type=int)
    return p


def resolve_config(args) -> dict:
    cfg = load_config(args.config) if args.config else builtin_config(
        args.family or DEFAULT_FAMILY[args.subcommand])
    cfg = apply_overrides(copy.deepcopy(cfg), args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    run = _run_cfg(cfg)
    for key in RUN_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            run[key] = val
    if args.subcommand == "counterexample":
        params = cfg.setdefault("scenario", {}).setdefault("params", {})
        if args.alpha is not None:
            params["alpha"] = args.alpha
        if args.a is not None:
            params["a"] = args.a
        if args.T is not None:
            cfg["horizon"] = args.T
        if args.no_weak:
            run["weak"] = False
    return cfg


def _versions() -> dict:
    import matplotlib
    import scipy

    return {"sdgame": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "python": sys.version.split()[0]}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        h = config_hash({"subcommand": args.subcommand, "config": cfg})
        out = Path(args.out) / f"{args.subcommand}-{h}"
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        ok, arts = COMMANDS[args.subcommand](cfg, out, max(1, args.threads))
    except (SpecError, yaml.YAMLError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    code = EXIT_OK if ok else EXIT_FAILED
    manifest = {"config_hash": h, "subcommand": args.subcommand, "config": cfg,
                "parameters": {"threads": args.threads, "seed": cfg.get("seed", 0)},
                "artifacts": sorted(a.name for a in arts),
                "wall_clock": time.perf_counter() - t0, "versions": _versions(), "exit_code": code}
    artifacts.write_json(out / "manifest.json", manifest)
    print(f"{args.subcommand}: {'ok' if ok else 'FAILED'} -> {out}")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
