"""Command-line front end: ``gen``, ``run``, ``phase`` and ``ablate``.

Exit codes: 0 on success, 1 on runtime or IO failure, 2 on usage errors.
Angles are degrees on the command line and in every output file.
"""

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict

import numpy as np

from . import gnlm
from .evaluation import (
    VARIANTS,
    PhaseSettings,
    ablation_run,
    default_phase_models,
    direction_error_stats,
    edge_errors,
    phase_sweep,
)
from .initializers import METHODS as INIT_METHODS
from .initializers import initialize
from .sweep import MODES, DirectionField, SweepConfig, run
from .synthetic import CorruptionSpec, GraphModel, make_instance, true_directions
from .viewgraph import enumerate_triangles, load_scene, save_scene

logger = logging.getLogger("tride")

RUN_METHODS = ("none", "tride", "gn", "lm")


class UsageError(Exception):
    pass


def parse_grid(text, integer=False):
    """``"a:b:step"`` (inclusive) or a comma list."""
    text = text.strip()
    if not text:
        raise UsageError("empty grid")
    if ":" in text:
        try:
            lo, hi, step = (float(t) for t in text.split(":"))
        except ValueError as exc:
            raise UsageError(f"bad range grid {text!r}") from exc
        if step <= 0 or hi < lo:
            raise UsageError(f"bad range grid {text!r}")
        count = int(np.floor((hi - lo) / step + 1e-9)) + 1
        values = [round(lo + k * step, 12) for k in range(count)]
    else:
        try:
            values = [float(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise UsageError(f"bad list grid {text!r}") from exc
    if not values:
        raise UsageError("empty grid")
    return [int(v) for v in values] if integer else values


def _sweep_config(args):
    return SweepConfig(
        sigma=args.sigma,
        n_cand=args.ncand,
        beta=args.beta,
        a_min=args.amin,
        k_max=args.kmax,
        tau_stop=args.taustop,
        mode=args.mode,
        seed=args.seed,
    )


def _add_sweep_flags(p):
    d = SweepConfig()
    p.add_argument("--mode", default=d.mode, choices=[m.replace("_", "-") for m in MODES] + list(MODES))
    p.add_argument("--sigma", type=float, default=d.sigma, help="kernel width, degrees")
    p.add_argument("--beta", type=float, default=d.beta)
    p.add_argument("--ncand", type=int, default=d.n_cand)
    p.add_argument("--amin", type=float, default=d.a_min)
    p.add_argument("--kmax", type=int, default=d.k_max)
    p.add_argument("--taustop", type=float, default=d.tau_stop, help="degrees")
    p.add_argument("--seed", type=int, default=d.seed)


def _graph_model(args):
    if args.model == "er" and args.p is None:
        raise UsageError("--model er requires --p")
    if args.model == "rgg" and args.r is None:
        raise UsageError("--model rgg requires --r")
    try:
        return GraphModel(
            args.model,
            args.n,
            1.0 if args.p is None else args.p,
            0.5 if args.r is None else args.r,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _json_dump(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _write_csv(path, header, rows):
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    finally:
        if fh is not sys.stdout:
            fh.close()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# Commands ------------------------------------------------------------------


def cmd_gen(args):
    model = _graph_model(args)
    try:
        spec = CorruptionSpec(args.corrupt_q, args.corrupt_frac, args.noise_deg)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not 0.0 <= args.inlier_frac <= 1.0:
        raise UsageError("--inlier-frac must lie in [0, 1]")
    inst = make_instance(model, args.matches, spec, args.seed, args.inlier_frac)
    meta = {
        "model": model.kind,
        "n": model.n,
        "p": model.p,
        "r": model.r,
        "matches": args.matches,
        "inlier_frac": args.inlier_frac,
        "noise_deg": args.noise_deg,
        "corrupt_q": args.corrupt_q,
        "corrupt_frac": args.corrupt_frac,
        "seed": args.seed,
    }
    save_scene(args.out, inst.graph, inst.truth, inst.corrupted, meta)
    return 0


def _stats_dict(stats):
    return None if stats is None else asdict(stats)


def cmd_run(args):
    config = _sweep_config(args)
    graph, locations, corrupted = load_scene(args.scene)
    truth = true_directions(locations, graph.edges) if locations is not None else None
    timing = {}

    t0 = time.perf_counter()
    init = initialize(graph, args.init, config.sigma, config.seed)
    timing["wall_time_init_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    tri = enumerate_triangles(graph)
    timing["wall_time_triangles_s"] = time.perf_counter() - t0

    report = {
        "config": {**asdict(config), "method": args.method, "init": args.init, "scene": str(args.scene)},
        "graph": {"n_cam": graph.n_cam, "n_edges": graph.n_edges, "n_triangles": tri.n_triangles},
    }
    t0 = time.perf_counter()
    if args.method == "none":
        result = init.directions
    elif args.method == "tride":
        field, sweep_report = run(graph, tri, init, config)
        result = field.directions
        report["sweeps"] = sweep_report.to_dict()
    elif args.method == "gn":
        state, trace = gnlm.run_gn(gnlm.TangentState.from_directions(init.directions), tri, args.iters or 5, a_min=config.a_min)
        result = state.directions
        report["gn_trace"] = trace
    else:
        lm_cfg = gnlm.LMConfig(beta=config.beta, a_min=config.a_min, iters=args.iters or 10)
        state, trace = gnlm.run_lm(gnlm.TangentState.from_directions(init.directions), graph, tri, lm_cfg)
        result = state.directions
        report["lm_trace"] = trace
    timing["wall_time_method_s"] = time.perf_counter() - t0
    report["timing"] = timing

    if truth is not None:
        report["before"] = _stats_dict(direction_error_stats(init.directions, truth))
        report["after"] = _stats_dict(direction_error_stats(result, truth))
        if corrupted is not None and corrupted.any():
            report["after_corrupted"] = _stats_dict(direction_error_stats(result[corrupted], truth[corrupted]))
    _json_dump(args.out, report)

    if args.csv:
        rows = []
        before = edge_errors(init.directions, truth) if truth is not None else None
        after = edge_errors(result, truth) if truth is not None else None
        for e, (i, j) in enumerate(graph.edges):
            row = [e, int(i), int(j), *(float(v) for v in result[e])]
            if truth is not None:
                row += [float(before[e]), float(after[e])]
            rows.append(row)
        header = ["edge", "i", "j", "gx", "gy", "gz"]
        if truth is not None:
            header += ["err_before_deg", "err_after_deg"]
        _write_csv(args.csv, header, rows)
    return 0


PHASE_HEADER = ["model", "n", "p", "r", "q", "n_seeds", "fraction", "fraction_std", "mean_error_deg", "failures"]


def cmd_phase(args):
    q_grid = parse_grid(args.q_grid)
    n_grid = parse_grid(args.n_grid, integer=True)
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    if any(not 0.0 <= q <= 1.0 for q in q_grid):
        raise UsageError("q values must lie in [0, 1]")
    config = _sweep_config(args)
    settings = PhaseSettings(
        sweeps=args.sweeps,
        tol_deg=args.tol,
        n_matches=args.matches,
        pool_contains_truth=args.pool_contains_truth,
        config=config,
    )
    try:
        models = default_phase_models(args.model, n_grid, 1.0 if args.p is None else args.p, 0.5 if args.r is None else args.r)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    seeds = range(args.seed_base, args.seed_base + args.seeds)
    points = phase_sweep(models, q_grid, seeds, settings, workers=args.workers)
    rows = [[pt.kind, pt.n, pt.p, pt.r, pt.q, len(pt.seeds), pt.fraction, pt.fraction_std, pt.mean_error, pt.failures] for pt in points]
    _write_csv(args.out, PHASE_HEADER, rows)
    return 0


ABLATE_HEADER = ["variant", "n_seeds", "mean_deg", "mean_std", "median_deg", "median_std", "p90_deg", "p90_std"]


def cmd_ablate(args):
    variants = [v.strip().replace("-", "_") for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise UsageError("empty variant list")
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variants {bad}; expected {list(VARIANTS)}")
    config = _sweep_config(args)
    per_seed = []
    if args.scene:
        graph, locations, _ = load_scene(args.scene)
        if locations is None:
            raise RuntimeError("ablation needs a scene with truth locations")
        init = initialize(graph, args.init, config.sigma, config.seed)
        per_seed.append(ablation_run(graph, init, true_directions(locations, graph.edges), variants, config))
    else:
        if args.seeds < 1:
            raise UsageError("--seeds must be at least 1")
        model = GraphModel("complete", args.n)
        spec = CorruptionSpec(args.corrupt_q, args.corrupt_frac, args.noise_deg)
        for seed in range(args.seed_base, args.seed_base + args.seeds):
            inst = make_instance(model, args.matches, spec, seed)
            init = initialize(inst.graph, args.init, config.sigma, config.seed)
            per_seed.append(ablation_run(inst.graph, init, inst.truth, variants, config))
    rows = []
    for v in variants:
        vals = np.array([d[v].as_tuple() for d in per_seed])
        mean, std = vals.mean(axis=0), vals.std(axis=0)
        rows.append([v, len(per_seed), float(mean[0]), float(std[0]), float(mean[1]), float(std[1]), float(mean[2]), float(std[2])])
    _write_csv(args.out, ABLATE_HEADER, rows)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="tride", description="Triangle-weighted refinement of translation directions.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic scene file")
    g.add_argument("--model", choices=["complete", "er", "rgg"], default="complete")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=float)
    g.add_argument("--r", type=float)
    g.add_argument("--matches", type=int, default=80)
    g.add_argument("--inlier-frac", type=float, default=1.0)
    g.add_argument("--noise-deg", type=float, default=0.0)
    g.add_argument("--corrupt-q", type=float, default=0.0)
    g.add_argument("--corrupt-frac", type=float, default=0.8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="initialize and refine the directions of a scene")
    r.add_argument("--scene", required=True)
    r.add_argument("--init", choices=INIT_METHODS, default="pca")
    r.add_argument("--method", choices=RUN_METHODS, default="tride")
    r.add_argument("--iters", type=int, help="GN/LM iterations (defaults 5 and 10)")
    _add_sweep_flags(r)
    r.add_argument("--out", default="-", help="JSON report path (default stdout)")
    r.add_argument("--csv", help="optional per-edge CSV dump")
    r.set_defaults(func=cmd_run)

    ph = sub.add_parser("phase", help="exact-recovery sweep over graph size and corruption")
    ph.add_argument("--model", choices=["complete", "er", "rgg"], default="complete")
    ph.add_argument("--n-grid", required=True)
    ph.add_argument("--q-grid", required=True)
    ph.add_argument("--p", type=float)
    ph.add_argument("--r", type=float)
    ph.add_argument("--seeds", type=int, default=5)
    ph.add_argument("--seed-base", type=int, default=0)
    ph.add_argument("--sweeps", type=int, default=1)
    ph.add_argument("--tol", type=float, default=1e-6, help="recovery tolerance, degrees")
    ph.add_argument("--matches", type=int, default=80)
    ph.add_argument("--pool-contains-truth", action="store_true")
    ph.add_argument("--workers", type=int, default=1)
    _add_sweep_flags(ph)
    ph.add_argument("--out", default="-")
    ph.set_defaults(func=cmd_phase)

    ab = sub.add_parser("ablate", help="error statistics per sweep variant")
    ab.add_argument("--variants", default=",".join(VARIANTS))
    ab.add_argument("--scene")
    ab.add_argument("--init", choices=INIT_METHODS, default="pca")
    ab.add_argument("--n", type=int, default=12)
    ab.add_argument("--matches", type=int, default=80)
    ab.add_argument("--corrupt-q", type=float, default=0.3)
    ab.add_argument("--corrupt-frac", type=float, default=0.8)
    ab.add_argument("--noise-deg", type=float, default=0.0)
    ab.add_argument("--seeds", type=int, default=5)
    ab.add_argument("--seed-base", type=int, default=0)
    _add_sweep_flags(ab)
    ab.add_argument("--out", default="-")
    ab.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if hasattr(args, "mode"):
        args.mode = args.mode.replace("-", "_")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tride: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"tride: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
