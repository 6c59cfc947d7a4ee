"""Command line entry point.

    raylbe scatter       deviation-angle table for the configured (r, |w|) sweep
    raylbe simulate-md   truncated-potential MD ensembles: states, events, trees
    raylbe simulate-lbe  jump-process walkers: snapshots, trees, estimator tables
    raylbe compare       MD vs jump process at t = t_fraction * T for each cell
    raylbe sweep         compare + excluded-set measures + divergence over the grid
    raylbe validate      quick self-checks; exit 3 if any fails

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 failed validation.  Every run writes manifest.json next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, config as config_mod
from ._backend import NAME as BACKEND
from .errors import ConfigError, NumericalError

log = logging.getLogger("raylbe")

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 1, 2, 3
MIN_COMPARE_SAMPLES = 1000


class AcceptanceFailure(Exception):
    pass


# ---------------------------------------------------------------- output helpers

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    return o


def write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def cell_name(eps, seed):
    return f"eps{eps:g}_seed{seed}"


def write_manifest(out: Path, run, command, started, extra=None):
    derived = {f"{e:g}": run.sim(e).derived() for e in run.epsilons}
    from .rng import STREAM_KINDS, substream_seed

    man = {
        "command": command,
        "version": __version__,
        "backend": BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config_hash": run.hash(),
        "config": run.to_dict(),
        "derived": derived,
        "seeds": {str(s): {k: substream_seed(s, k, 0) for k in STREAM_KINDS} for s in run.seeds},
        "seed_rule": "Philox(SeedSequence(entropy=seed, spawn_key=(kind_id, index)))",
        "warnings": run.warnings,
        "wall_clock_s": time.time() - started,
        "workers": int(os.environ.get("RAYLBE_WORKERS", "1") or 1),
    }
    if extra:
        man.update(extra)
    write_json(out / "manifest.json", man)


# ---------------------------------------------------------------- subcommands

def cmd_scatter(run, out: Path, args):
    from . import scattering as sc
    from .potentials import truncate

    scfg = run.scatter
    R = float(scfg["R"])
    r_grid = np.linspace(*[float(x) for x in scfg["r"][:2]], int(scfg["r"][2]))
    w_grid = np.linspace(*[float(x) for x in scfg["speed"][:2]], int(scfg["speed"][2]))
    p = run.potential
    pR = truncate(p, R)
    rows = []
    for r in r_grid:
        for w in w_grid:
            th, th_R, gap = sc.angle_gap(p, R, float(r), float(w), run.quad_tol)
            rho = sc.closest_approach(p, float(r), float(w))
            tau = sc.scattering_time(pR, float(min(r, R)), float(w), max(run.quad_tol, 1e-10)) if r < R else 0.0
            rows.append((r, w, th, th_R, rho, tau, gap))
    write_csv(out / "scatter.csv", ["r", "speed", "theta", "theta_R", "rho_star", "tau_star", "gap"], rows)
    return {"rows": len(rows)}


def _cells(run, args):
    eps = [args.epsilon] if args.epsilon is not None else run.epsilons
    seeds = [args.seed] if args.seed is not None else run.seeds
    return [(e, s) for e in eps for s in seeds]


def cmd_simulate_md(run, out: Path, args):
    from .campaign import md_ensemble

    for eps, seed in _cells(run, args):
        d = out / cell_name(eps, seed)
        d.mkdir(parents=True, exist_ok=True)
        ens = md_ensemble(run, eps, seed, args.samples, t_end=args.t_end)
        write_csv(d / "states.csv", ["id", "t", "x1", "x2", "x3", "v1", "v2", "v3", "events"],
                  [(i, ens.t, *ens.x[i], *ens.v[i], ens.jumps[i]) for i in range(len(ens.x))])
        with open(d / "trees.jsonl", "w") as fh:
            for tr in ens.trees:
                fh.write(tr.to_json() + "\n")
        rows = []
        for i, c in enumerate(ens.classes):
            r = c.row()
            rows.append([i] + [r[k] for k in sorted(r)])
        if ens.classes:
            write_csv(d / "classification.csv", ["id"] + sorted(ens.classes[0].row()), rows)
    return {"cells": len(_cells(run, args))}


def cmd_simulate_lbe(run, out: Path, args):
    from .campaign import lbe_ensemble
    from .lbe_mc import estimate_density

    t_snap = run.T * run.compare["t_fraction"]
    times = sorted({t_snap, run.T}) if args.times is None else sorted(args.times)
    for eps, seed in _cells(run, args):
        d = out / cell_name(eps, seed)
        d.mkdir(parents=True, exist_ok=True)
        snaps, trees, proposals = lbe_ensemble(run, eps, seed, args.samples, times, return_trees=True)
        rows = []
        for s in snaps:
            rows += [(i, s.t, *s.x[i], *s.v[i]) for i in range(len(s.x))]
        write_csv(d / "walkers.csv", ["id", "t", "x1", "x2", "x3", "v1", "v2", "v3"], rows)
        with open(d / "trees.jsonl", "w") as fh:
            for tr in trees:
                fh.write(tr.to_json() + "\n")
        est_rows, weak_rows = [], []
        for s in snaps:
            est = estimate_density(s.x, s.v, s.t, run.binning(), run.tests())
            est_rows += [(s.t, b, p, e) for b, p, e in est.rows()]
            weak_rows += [(s.t, k, m, e) for k, (m, e) in est.weak.items()]
        write_csv(d / "histogram.csv", ["t", "bin", "value", "stderr"], est_rows)
        write_csv(d / "weak.csv", ["t", "test", "value", "stderr"], weak_rows)
    return {"cells": len(_cells(run, args))}


def _compare_rows(res):
    rep = res.distance
    tv = (res.epsilon, res.seed, rep.tv_binned, rep.tv_ci[0], rep.tv_ci[1], rep.tv_count,
          rep.metadata["n_a"], rep.metadata["n_b"])
    weak = [(res.epsilon, res.seed, lab, gap, se) for lab, gap, se in rep.weak_gaps]
    ex = []
    for src, r in (("md", res.md_exclusion), ("lbe", res.lbe_exclusion)):
        for k, f in r.fractions.items():
            ex.append((res.epsilon, res.seed, src, k, f, r.intervals[k][0], r.intervals[k][1], r.n, r.bound))
    xi = (res.epsilon, res.seed, res.xi, res.xi_empirical, res.xi_se, len(res.md.first_clear))
    return tv, weak, ex, xi


TV_HEAD = ["epsilon", "seed", "tv", "tv_lo", "tv_hi", "tv_count", "n_md", "n_lbe"]
WEAK_HEAD = ["epsilon", "seed", "test", "gap", "stderr"]
EX_HEAD = ["epsilon", "seed", "source", "class", "fraction", "lo", "hi", "n", "lambda_bound"]
XI_HEAD = ["epsilon", "seed", "xi", "xi_empirical", "stderr", "n"]
DIV_HEAD = ["epsilon", "seed", "n", "matched", "median", "median_lo", "median_hi", "maximum",
            "differing_fraction", "differing_lo", "differing_hi", "excluded_R_fraction"]


def _run_compare(run, out: Path, args, with_divergence: bool):
    from .campaign import compare_cell, divergence_row

    n_md = args.samples or run.samples["trajectories"]
    n_lbe = args.walkers or run.samples["walkers"]
    if min(n_md, n_lbe) < MIN_COMPARE_SAMPLES:
        raise ConfigError(f"compare needs at least {MIN_COMPARE_SAMPLES} samples per ensemble "
                          f"(got {n_md} MD, {n_lbe} walkers)")
    tvs, weaks, exs, xis, divs = [], [], [], [], []
    summary = {"cells": []}
    for eps, seed in _cells(run, args):
        d = out / cell_name(eps, seed)
        d.mkdir(parents=True, exist_ok=True)
        res = compare_cell(run, eps, seed, args.samples, args.walkers)
        tv, weak, ex, xi = _compare_rows(res)
        write_csv(d / "distance.csv", TV_HEAD, [tv])
        write_csv(d / "weak_gaps.csv", WEAK_HEAD, weak)
        write_csv(d / "excluded.csv", EX_HEAD, ex)
        write_json(d / "distance.json", res.distance.to_dict())
        cell = {"epsilon": eps, "seed": seed, "distance": res.distance.to_dict(),
                "md_exclusion": res.md_exclusion.to_dict(), "lbe_exclusion": res.lbe_exclusion.to_dict(),
                "xi": [res.xi, res.xi_empirical, res.xi_se]}
        if with_divergence:
            row = divergence_row(run, eps, seed, args.div_samples)
            dr = row.to_dict()
            div = (eps, seed, row.n, row.matched, row.median, row.median_ci[0], row.median_ci[1], row.maximum,
                   row.differing_fraction, row.differing_ci[0], row.differing_ci[1], row.excluded_R_fraction)
            write_csv(d / "divergence.csv", DIV_HEAD, [div])
            divs.append(div)
            cell["divergence"] = dr
        write_json(d / "cell.json", cell)
        tvs.append(tv)
        weaks += weak
        exs += ex
        xis.append(xi)
        summary["cells"].append(cell)
        log.info("cell eps=%g seed=%d tv=%.4f", eps, seed, res.distance.tv_binned)
    write_csv(out / "tv.csv", TV_HEAD, tvs)
    write_csv(out / "weak_gaps.csv", WEAK_HEAD, weaks)
    write_csv(out / "excluded.csv", EX_HEAD, exs)
    write_csv(out / "xi.csv", XI_HEAD, xis)
    if with_divergence:
        write_csv(out / "divergence.csv", DIV_HEAD, divs)
    summary["config_hash"] = run.hash()
    summary["seeds"] = run.seeds
    summary["tolerances"] = run.raw["tolerances"]
    summary["note"] = ("TV is computed on a fixed phase-space binning and on the collision-count "
                       "marginal as a stand-in for TV on tree space")
    write_json(out / "summary.json", summary)
    return {"cells": len(summary["cells"])}


def cmd_compare(run, out, args):
    return _run_compare(run, out, args, with_divergence=False)


def cmd_sweep(run, out, args):
    return _run_compare(run, out, args, with_divergence=True)


def cmd_validate(run, out: Path, args):
    """Fast self-checks of the configured model; raises AcceptanceFailure on any failure."""
    from . import scattering as sc
    from .compare import c1_formula
    from .densities import moment_report
    from .lbe_mc import loss_rate, loss_rate_quadrature
    from .potentials import admissibility_passed, make_zero, validate_admissibility
    from .rng import stream

    checks = []

    def check(name, ok, detail=""):
        checks.append((name, bool(ok), detail))

    rep = validate_admissibility(run.potential)
    check("potential_admissible", admissibility_passed(rep),
          ";".join(f"{c.name}={'ok' if c.passed else 'FAIL'}" for c in rep))
    m = moment_report(run.background)
    check("background_second_moment", m["second_moment_finite"], f"{m['second_moment']:.6g}")
    rng = stream(run.seeds[0], "test", 0)
    n = 1000
    v = rng.standard_normal((n, 3))
    vs = rng.standard_normal((n, 3))
    r = 3.0 * rng.random(n)
    z = 2 * math.pi * rng.random(n)
    vp, vsp, th = sc.scatter_many(run.potential, r, z, v, vs, run.quad_tol, "symmetric")
    mom = np.abs((vp + vsp) - (v + vs)).max()
    en = np.abs((vp ** 2 + vsp ** 2).sum(1) - (v ** 2 + vs ** 2).sum(1)).max()
    check("collision_conservation", mom < 1e-12 and en < 1e-11, f"momentum {mom:.2e} energy {en:.2e}")
    th0 = sc.deviation_angle(make_zero(), 1.0, 1.0)
    th_head = sc.deviation_angle(run.potential, 0.0, 1.0, run.quad_tol)
    check("free_and_head_on", abs(th0) < 1e-10 and abs(th_head - math.pi) < 1e-10,
          f"theta0 {th0:.2e} head-on {th_head - math.pi:.2e}")
    c1 = [c1_formula(R, 4.0, 1 + run.background.second_moment())["value"] for R in (10, 100, 1000, 10000)]
    check("c1_decreasing", all(a > b for a, b in zip(c1, c1[1:])), ",".join(f"{c:.4g}" for c in c1))
    for eps in run.epsilons:
        cfg = run.sim(eps)
        check(f"xi_in_unit_interval[{eps:g}]", 0 < cfg.xi <= 1, f"{cfg.xi:.4g}")
    vv = np.array([0.3, -0.2, 1.1])
    a = float(loss_rate(run.background, 2.0, vv))
    b = loss_rate_quadrature(run.background, 2.0, vv)
    check("loss_rate_closed_form", abs(a - b) <= 1e-9 * b, f"{a:.12g} vs {b:.12g}")
    write_csv(out / "validate.csv", ["check", "passed", "detail"], checks)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
    failed = [c[0] for c in checks if not c[1]]
    if failed:
        raise AcceptanceFailure("failed checks: " + ", ".join(failed))
    return {"checks": len(checks)}


COMMANDS = {
    "scatter": cmd_scatter,
    "simulate-md": cmd_simulate_md,
    "simulate-lbe": cmd_simulate_lbe,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


# ---------------------------------------------------------------- parsing

def parse_overrides(items):
    """--set a.b.c=value pairs (values parsed as YAML) into a nested dict."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, val = item.split("=", 1)
        try:
            parsed = yaml.safe_load(val)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {key}: cannot parse value {val!r}") from exc
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = parsed
    return out


def build_parser():
    ap = argparse.ArgumentParser(prog="raylbe", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"raylbe {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", nargs="?", default=None, help="run configuration (YAML); default: shipped defaults")
        p.add_argument("-o", "--output", default=None, help="output directory (default: config 'output')")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. --set samples.walkers=2000")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("simulate-md", "simulate-lbe", "compare", "sweep"):
            p.add_argument("--epsilon", type=float, default=None, help="run a single epsilon")
            p.add_argument("--seed", type=int, default=None, help="run a single seed")
            p.add_argument("--samples", type=int, default=None, help="MD trajectories / walkers per cell")
        if name in ("compare", "sweep"):
            p.add_argument("--walkers", type=int, default=None, help="jump-process walkers per cell")
            p.add_argument("--div-samples", type=int, default=None, help="divergence trajectories per cell")
        if name == "simulate-md":
            p.add_argument("--t-end", type=float, default=None, help="stop time (default t_fraction * T)")
        if name == "simulate-lbe":
            p.add_argument("--times", type=float, nargs="+", default=None, help="snapshot times")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        overrides = parse_overrides(args.overrides)
        if args.config is None:
            run = config_mod.load_text(config_mod.default_text(), "<default.yaml>", overrides)
        else:
            run = config_mod.load(args.config, overrides)
        for w in run.warnings:
            log.warning(w)
        out = Path(args.output or run.output)
        out.mkdir(parents=True, exist_ok=True)
        info = COMMANDS[args.command](run, out, args)
        write_manifest(out, run, args.command, started, {"result": info})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None)
        if diag:
            print(f"diagnostics: {json.dumps(_jsonable(diag), sort_keys=True)}", file=sys.stderr)
        return EXIT_NUMERICAL
    except AcceptanceFailure as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return 0


if __name__ == "__main__":
    sys.exit(main())
