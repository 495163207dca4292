"""Command-line front end: ``curvlab <group> <command> [flags]``.

Exit codes: 0 success, 2 validation failure, 3 numerical nonconvergence,
4 combinatorial guard.  On failure a one-line JSON error record is written
to stderr.  Tabular output is CSV, nested output JSON; every document carries
the resolved configuration and the package version and nothing time-dependent.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, quantum
from .entropy import ks_entropy_estimate, ruelle_check
from .errors import CurvlabError, ValidationError
from .experiments import (EXPERIMENTS, OUTPUT_ENV, ExperimentConfig, PRESETS, Report, _clean, preset_config,
                          run_experiment, summary_document, synthetic_roof)
from .fileio import load_measure, load_model, load_roof, words_text
from .riccati import HopfConfig, growth_bound_check, hopf_unstable, lyapunov_upper
from .surface import validate_nonpositive
from .symbolic import RoofFunction, index_family

DEFAULT_OUT = "curvlab-output"


def _emit(text: str, out=None):
    if out:
        d = os.path.dirname(out)
        if d:
            os.makedirs(d, exist_ok=True)
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(doc) -> str:
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# surface
def cmd_surface_validate(args):
    model = load_model(args.model)
    rep = validate_nonpositive(model, args.samples)
    doc = {"version": __version__, "config": {"model": args.model, "samples": args.samples},
           "report": rep.as_dict()}
    _emit(_json(doc), args.out)
    return 0 if rep.passed else 2


# ---------------------------------------------------------------------------
# riccati
def _orbit_states(model, n, seed):
    rng = np.random.default_rng(seed)
    return [model.random_state(rng) for _ in range(n)]


def cmd_riccati(args):
    model = load_model(args.model)
    cfg = HopfConfig(T=args.horizon, tol=args.tol)
    config = {"model": args.model, "orbits": args.orbits, "seed": args.seed, "horizon": args.horizon,
              "tol": args.tol}
    rep = Report(f"riccati-{args.action}", config)
    rows = []
    for i, s in enumerate(_orbit_states(model, args.orbits, args.seed)):
        if args.action == "hopf":
            r = hopf_unstable(model, s, cfg, details=True)
            rows.append([args.seed, i, r.horizons[-1], r.value, abs(r.iterates[-1] - r.iterates[-2]), r.monotone])
        elif args.action == "lyapunov":
            r = lyapunov_upper(model, s, args.T, cfg)
            rows.append([args.seed, i, args.T, r["riccati"], r["tangent"], abs(r["riccati"] - r["tangent"])])
        else:
            r = growth_bound_check(model, s, args.t, cfg)
            rows.append([args.seed, i, args.t, r.left, r.right, r.passed])
    if args.action == "hopf":
        header = ["seed", "orbit", "horizon", "U_u", "last_increment", "monotone"]
    elif args.action == "lyapunov":
        header = ["seed", "orbit", "T", "riccati", "tangent", "gap"]
        config["T"] = args.T
    else:
        header = ["seed", "orbit", "t", "left", "right", "passed"]
        config["t"] = args.t
    rep.tables["rows"] = (header, rows)
    _emit(rep.csv_text("rows"), args.out)
    if args.action == "growth-check" and not all(r[-1] for r in rows):
        return 2
    return 0


# ---------------------------------------------------------------------------
# symbolic
def cmd_symbolic_words(args):
    roof = load_roof(args.roof)
    fam = index_family(roof, args.T, args.orientation, cap=args.cap)
    header = {"version": __version__, "config": {"roof": args.roof, "T": args.T, "orientation": args.orientation},
              "K": roof.K, "count": len(fam)}
    _emit(words_text(fam.words, header), args.out)
    return 0


# ---------------------------------------------------------------------------
# entropy
def cmd_entropy_estimate(args):
    mu = load_measure(args.measure)
    n = min(args.n, mu.max_depth) if mu.max_depth else args.n
    est = ks_entropy_estimate(mu, n)
    doc = {"version": __version__, "config": {"measure": args.measure, "n": args.n}, "K": mu.K,
           "compatibility_error": mu.compatibility_error(), **est}
    _emit(_json(doc), args.out)
    return 0


def cmd_entropy_ruelle(args):
    r = ruelle_check(args.h, args.mean_uu, args.tol)
    doc = {"version": __version__, "config": {"h": args.h, "mean_Uu": args.mean_uu, "tol": args.tol}, **r}
    _emit(_json(doc), args.out)
    return 0


# ---------------------------------------------------------------------------
# quantum
def cmd_quantum_eup(args):
    cfg = ExperimentConfig(seed=args.seed, eup_n=args.n, eup_trials=args.trials)
    rep = run_experiment("eup", cfg)[0]
    if args.out_csv:
        _emit(rep.csv_text("eup"), args.out_csv)
    doc = rep.document()
    doc["data"] = {"slack_min": min(r[6] for r in rep.tables["eup"][1]) if args.trials else None}
    _emit(_json(doc), args.out)
    return 0


def cmd_quantum_pipeline(args):
    hb = args.hbar
    n = int(round(1.0 / hb))
    if abs(n * hb - 1.0) > 1e-12:
        raise ValidationError("hbar must be the reciprocal of an integer")
    grid = quantum.TorusGrid((4 * n, args.ny))
    part = quantum.smooth_partition(quantum.grid_cells(args.cells, args.cells), args.width, grid)
    K = args.cells ** 2
    from fractions import Fraction
    f0 = Fraction(args.eta).limit_denominator(1000) * Fraction(args.eps0).limit_denominator(1000)
    if args.roof == "zero":
        roof = RoofFunction([[f0] * K for _ in range(K)], [[Fraction(0)] * K for _ in range(K)])
    elif args.roof == "synthetic":
        roof = synthetic_roof(K, f0)
    else:
        roof = load_roof(args.roof)
    pcfg = quantum.PipelineConfig(cells=(args.cells, args.cells), width=args.width, eta=args.eta, eps=args.eps,
                                  eps_prime=args.eps_prime, eps0=args.eps0, delta0=args.delta0, seed=args.seed)
    r = quantum.pressure_bound_pipeline(part, roof, hb, pcfg)
    config = {"hbar": hb, "cells": args.cells, "width": args.width, "eta": args.eta, "eps": args.eps,
              "eps_prime": args.eps_prime, "eps0": args.eps0, "delta0": args.delta0, "roof": args.roof,
              "grid": list(grid.shape), "seed": args.seed}
    _emit(_json({"version": __version__, "config": config, "roof": roof.as_dict(), "report": r}), args.out)
    return 0


# ---------------------------------------------------------------------------
# run
def cmd_run(args):
    cfg = preset_config(args.preset)
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, cfg)
    cfg = cfg.replace(model=args.model, seed=args.seed, eup_n=args.n, eup_trials=args.trials,
                      workers=args.workers, roof=args.roof)
    out = args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUT
    cfg = cfg.replace(out=out)
    reps = run_experiment(args.experiment, cfg)
    written = []
    for r in reps:
        written += r.write(out)
    summary = summary_document(reps, cfg)
    if args.experiment == "all":
        p = os.path.join(out, "summary.json")
        with open(p, "w") as fh:
            fh.write(_json(summary))
        written.append(p)
    summary["files"] = written
    sys.stdout.write(_json(summary))
    return 0


# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="curvlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"curvlab {__version__}")
    sub = p.add_subparsers(dest="group", required=True)

    # surface
    g = sub.add_parser("surface", help="surface models").add_subparsers(dest="command", required=True)
    c = g.add_parser("validate", help="check nonpositive curvature on samples")
    c.add_argument("--model", default="bolza", help="preset name or model file")
    c.add_argument("--samples", type=int, default=100)
    c.add_argument("--out")
    c.set_defaults(func=cmd_surface_validate)

    # riccati
    g = sub.add_parser("riccati", help="unstable Riccati solution").add_subparsers(dest="command", required=True)
    for action in ("hopf", "lyapunov", "growth-check"):
        c = g.add_parser(action)
        c.add_argument("--model", default="bolza", help="preset name or model file")
        c.add_argument("--orbits", type=int, default=10)
        c.add_argument("--seed", type=int, default=0)
        c.add_argument("--horizon", type=float, default=5.0, help="initial Hopf horizon")
        c.add_argument("--tol", type=float, default=1e-9)
        c.add_argument("--T", type=float, default=50.0, help="Lyapunov averaging time")
        c.add_argument("--t", type=float, default=5.0, help="growth-check time")
        c.add_argument("--out", help="CSV path (default: stdout)")
        c.set_defaults(func=cmd_riccati, action=action)

    # symbolic
    g = sub.add_parser("symbolic", help="index families").add_subparsers(dest="command", required=True)
    c = g.add_parser("words", help="emit I(T) (or K(T)) as JSON lines")
    c.add_argument("--roof", required=True, help="roof table file")
    c.add_argument("--T", type=float, required=True)
    c.add_argument("--orientation", choices=("forward", "backward"), default="forward")
    c.add_argument("--cap", type=int, default=10 ** 7)
    c.add_argument("--out")
    c.set_defaults(func=cmd_symbolic_words)

    # entropy
    g = sub.add_parser("entropy", help="entropy estimators").add_subparsers(dest="command", required=True)
    c = g.add_parser("estimate", help="H_n/n and H_{n+1} - H_n of a cylinder measure")
    c.add_argument("--measure", required=True)
    c.add_argument("--n", type=int, default=8)
    c.add_argument("--out")
    c.set_defaults(func=cmd_entropy_estimate)
    c = g.add_parser("ruelle", help="Ruelle slack")
    c.add_argument("--h", type=float, required=True)
    c.add_argument("--mean-uu", type=float, required=True, dest="mean_uu")
    c.add_argument("--tol", type=float, default=1e-9)
    c.add_argument("--out")
    c.set_defaults(func=cmd_entropy_ruelle)

    # quantum
    g = sub.add_parser("quantum", help="quantum pressures").add_subparsers(dest="command", required=True)
    c = g.add_parser("eup", help="entropic uncertainty on random instances")
    c.add_argument("--n", type=int, default=None, help="dimension (default: random N <= 16)")
    c.add_argument("--trials", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.add_argument("--out-csv", dest="out_csv")
    c.set_defaults(func=cmd_quantum_eup)
    c = g.add_parser("pipeline", help="pressure bound at one hbar")
    c.add_argument("--hbar", type=float, required=True)
    c.add_argument("--cells", type=int, default=2, help="cells per side")
    c.add_argument("--delta0", type=float, default=0.1)
    c.add_argument("--width", type=float, default=0.1)
    c.add_argument("--eta", type=float, default=1.2)
    c.add_argument("--eps", type=float, default=0.1)
    c.add_argument("--eps-prime", type=float, default=0.1, dest="eps_prime")
    c.add_argument("--eps0", type=float, default=1.0)
    c.add_argument("--roof", default="zero", help="'zero', 'synthetic' or a roof file")
    c.add_argument("--ny", type=int, default=64, help="grid points across y")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_quantum_pipeline)

    # run
    c = sub.add_parser("run", help="named experiments")
    c.add_argument("experiment", choices=list(EXPERIMENTS) + ["all"])
    c.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    c.add_argument("--config", help="INI file with an [experiment] section")
    c.add_argument("--model")
    c.add_argument("--roof")
    c.add_argument("--seed", type=int)
    c.add_argument("--n", type=int, help="eup dimension")
    c.add_argument("--trials", type=int, help="eup trials")
    c.add_argument("--workers", type=int)
    c.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./{DEFAULT_OUT})")
    c.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CurvlabError as exc:
        sys.stderr.write(json.dumps(exc.record(), sort_keys=True) + "\n")
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
