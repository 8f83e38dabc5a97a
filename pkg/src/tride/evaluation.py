"""Error metrics, ablations, phase-transition sweeps and theory certificates."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import GenerationFailure, InputMismatch
from .geometry import canonicalize, orthonormal_complement, sample_sphere, unoriented_angle, unoriented_error
from .sweep import DirectionField, SweepConfig, build_candidate_pool, candidate_pools, run, with_mode
from .synthetic import GraphModel, gen_evidence, gen_theory_instance, theory_draws
from .viewgraph import enumerate_triangles

logger = logging.getLogger(__name__)

VARIANTS = ("input", "point_only", "uniform", "static", "dynamic")


def _directions(x):
    if isinstance(x, DirectionField):
        return x.directions
    d = getattr(x, "directions", x)
    return np.asarray(d, dtype=float).reshape(-1, 3)


def edge_errors(est, truth):
    """Per-edge unoriented angular error in degrees."""
    a, b = _directions(est), _directions(truth)
    if a.shape != b.shape:
        raise InputMismatch(f"{len(a)} estimated edges vs {len(b)} truth edges")
    return unoriented_angle(a, b)


@dataclass(frozen=True)
class ErrorStats:
    mean: float
    median: float
    p90: float

    def as_tuple(self):
        return (self.mean, self.median, self.p90)


def nearest_rank(sorted_values, frac):
    """Order statistic at 0-based index ``floor(frac * n)``, clipped to the last element."""
    n = len(sorted_values)
    return float(sorted_values[min(int(math.floor(frac * n)), n - 1)])


def stats_from_errors(errors):
    e = np.sort(np.asarray(errors, dtype=float))
    if len(e) == 0:
        return ErrorStats(0.0, 0.0, 0.0)
    return ErrorStats(float(e.mean()), float(np.median(e)), nearest_rank(e, 0.9))


def direction_error_stats(est, truth):
    return stats_from_errors(edge_errors(est, truth))


def recovery_fraction(est, truth, tol_deg):
    if tol_deg < 0:
        raise ValueError("tolerance must be non-negative")
    err = edge_errors(est, truth)
    return float(np.mean(err <= tol_deg)) if len(err) else 1.0


# Ablation ---------------------------------------------------------------------


def ablation_run(graph, init, truth, variants=VARIANTS, config=None, tri=None):
    """ErrorStats per variant, all modes run from the same init and seed.

    ``input`` reports the initializer untouched; every other variant is a
    sweep mode name (``point-only`` is accepted for ``point_only``).
    """
    config = config or SweepConfig()
    tri = tri if tri is not None else enumerate_triangles(graph)
    rows = {}
    for v in variants:
        name = v.replace("-", "_")
        if name not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; expected one of {VARIANTS}")
        if name == "input":
            rows[name] = direction_error_stats(init, truth)
            continue
        out, _ = run(graph, tri, init, with_mode(config, name))
        rows[name] = direction_error_stats(out, truth)
    return rows


# Phase transition ---------------------------------------------------------------


@dataclass(frozen=True)
class PhasePoint:
    kind: str
    n: int
    p: float
    r: float
    q: float
    seeds: tuple
    fraction: float
    fraction_std: float
    mean_error: float
    failures: int = 0

    def __post_init__(self):
        if not (0.0 <= self.fraction <= 1.0 or math.isnan(self.fraction)):
            raise ValueError("recovery fraction must lie in [0, 1]")


@dataclass(frozen=True)
class PhaseSettings:
    sweeps: int = 1
    tol_deg: float = 1e-6
    n_matches: int = 80
    a_plus: float = 0.6
    a_minus: float = 0.1
    weak_inlier_frac: float = 0.2
    pool_contains_truth: bool = False
    config: SweepConfig = field(default_factory=SweepConfig)


def _phase_job(job):
    """All q values for one ``(model, seed)``; the scene and draws are shared."""
    model, q_grid, seed, settings = job
    try:
        draws = theory_draws(model, seed, settings.n_matches)
    except GenerationFailure as exc:
        logger.warning("generation failed for %s seed=%s: %s", model, seed, exc)
        return [None] * len(q_grid)
    if draws.graph.n_edges == 0:
        return [(1.0, 0.0)] * len(q_grid)
    tri = enumerate_triangles(draws.graph)
    out = []
    for q in q_grid:
        inst = gen_theory_instance(
            model,
            q,
            pool_contains_truth=settings.pool_contains_truth,
            a_plus=settings.a_plus,
            a_minus=settings.a_minus,
            seed=seed,
            n_matches=settings.n_matches,
            weak_inlier_frac=settings.weak_inlier_frac,
            sigma=settings.config.sigma,
            draws=draws,
        )
        field, _ = run(inst.graph, tri, inst.init, settings.config, sweeps=settings.sweeps)
        err = edge_errors(field, inst.truth)
        out.append((float(np.mean(err <= settings.tol_deg)), float(err.mean())))
    return out


def _map(fn, jobs, workers):
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [fn(j) for j in jobs]


def phase_sweep(models, q_grid, seeds, settings=None, workers=None):
    """Recovery fraction over seeds for every ``(model, q)``; ordered by grid index.

    ``models`` is a sequence of :class:`GraphModel`; ``seeds`` an iterable of
    ints. Generation failures are counted in ``failures`` and skipped.
    """
    settings = settings or PhaseSettings()
    models, q_grid, seeds = list(models), list(q_grid), tuple(int(s) for s in seeds)
    if not models or not q_grid or not seeds:
        raise ValueError("phase grids must be non-empty")
    q_grid = [float(q) for q in q_grid]
    jobs = [(m, q_grid, s, settings) for m in models for s in seeds]
    results = _map(_phase_job, jobs, workers)
    per = len(seeds)
    points = []
    for mi, m in enumerate(models):
        block = results[mi * per : (mi + 1) * per]
        for qi, q in enumerate(q_grid):
            done = [r[qi] for r in block if r[qi] is not None]
            fr = np.array([r[0] for r in done])
            me = np.array([r[1] for r in done])
            nan = float("nan")
            points.append(
                PhasePoint(
                    m.kind,
                    m.n,
                    m.p,
                    m.r,
                    q,
                    seeds,
                    float(fr.mean()) if len(done) else nan,
                    float(fr.std()) if len(done) else nan,
                    float(me.mean()) if len(done) else nan,
                    per - len(done),
                )
            )
    return points


def crossover(qs, fractions, level=0.5):
    """First ``q`` at which the recovery curve falls to ``level`` (linear interpolation).

    Returns the last grid value when the curve never reaches ``level``.
    """
    qs = np.asarray(qs, dtype=float)
    fr = np.asarray(fractions, dtype=float)
    if fr[0] <= level:
        return float(qs[0])
    for k in range(1, len(qs)):
        if fr[k] <= level:
            t = (fr[k - 1] - level) / (fr[k - 1] - fr[k])
            return float(qs[k - 1] + t * (qs[k] - qs[k - 1]))
    return float(qs[-1])


def count_inversions(values, slack=0.0):
    """Number of adjacent increases in a sequence that should be non-increasing."""
    v = np.asarray(values, dtype=float)
    return int(np.sum(np.diff(v) > slack))


# Theory certificate ---------------------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    a: float
    c_wd: float
    delta: float
    eta: float


def _c_wd_lower(g_star, normals, grid=3600):
    """Certified lower bound on ``min_h mean |h.n|`` over unit ``h`` orthogonal to ``g_star``.

    The mean is 1-Lipschitz in the angle of ``h`` and pi-periodic, so a grid of
    ``grid`` angles on [0, pi) loses at most half a grid step.
    """
    u1, u2 = orthonormal_complement(g_star)
    theta = np.arange(grid) * (math.pi / grid)
    h = np.cos(theta)[:, None] * u1 + np.sin(theta)[:, None] * u2
    vals = np.abs(h @ np.asarray(normals).T).mean(axis=1)
    return float(vals.min() - math.pi / (2 * grid))


def theory_certificate(instance, config=None, tri=None):
    """Realized witness density, well-distributedness, support gap and pool margin.

    ``a`` is the minimum over edges of the clean-clean witness fraction,
    ``c_wd`` a certified lower bound on the clean-clean normal spread, ``delta``
    the minimum gap between clean-clean and other witnesses' support sums, and
    ``eta`` the smallest error of any non-true candidate in the first sweep's
    pools. Edges without witnesses are skipped.
    """
    config = config or SweepConfig()
    graph = instance.graph
    tri = tri if tri is not None else enumerate_triangles(graph)
    first, second, mask = tri.padded
    clean = instance.clean
    support = 1.0 - instance.init.badness
    g_true = instance.truth.directions
    a_min, c_min, d_min = math.inf, math.inf, math.inf
    for e in range(graph.n_edges):
        f, s = first[e][mask[e]], second[e][mask[e]]
        if len(f) == 0:
            continue
        good = clean[f] & clean[s]
        a_min = min(a_min, float(good.mean()))
        if not good.any():
            c_min, d_min = 0.0, -math.inf
            continue
        n = np.cross(g_true[f[good]], g_true[s[good]])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        c_min = min(c_min, _c_wd_lower(g_true[e], n))
        h = support[f] + support[s]
        gap = h[good].min() - (h[~good].max() if (~good).any() else -math.inf)
        d_min = min(d_min, float(gap))
    pools, pmask = candidate_pools(graph, instance.init.directions, config, 0)
    err = unoriented_error(pools, g_true[:, None, :])
    non_true = pmask & (err > 1e-9)
    eta = float(err[non_true].min()) if non_true.any() else 1.0
    return Certificate(a_min, c_min, d_min, eta)


def default_phase_models(kind, n_grid, p=1.0, r=0.5):
    return [GraphModel(kind, int(n), p, r) for n in n_grid]


# Candidate recall -----------------------------------------------------------------

_RECALL_STREAM = 0x2EC4


def candidate_recall(budgets, trials=1000, inlier_frac=0.2, n_matches=80, tol_deg=2.0, seed=0, noise_deg=0.0):
    """Fraction of synthetic edges whose best sampled candidate lies within ``tol_deg`` of truth.

    The incumbent direction is excluded; only the ``B`` sampled pairs count.
    Each trial reuses one random stream for every budget, so the pairs drawn
    at budget ``B`` are a prefix of those at any larger budget.
    """
    budgets = [int(b) for b in budgets]
    hits = np.zeros(len(budgets))
    for t in range(trials):
        rng = np.random.default_rng([int(seed), _RECALL_STREAM, t])
        g_star = canonicalize(sample_sphere(rng, 1)[0])
        x = gen_evidence(g_star, n_matches, inlier_frac, noise_deg, rng)
        pair_seed = int(rng.integers(2**63))
        for k, b in enumerate(budgets):
            pool = build_candidate_pool(x, g_star, b, 1e-3, np.random.default_rng(pair_seed))[1:]
            if len(pool) and unoriented_angle(pool, g_star).min() <= tol_deg:
                hits[k] += 1
    return hits / trials
