"""Triangle-weighted direction refinement.

One sweep, for every edge: sample a candidate pool from pairs of its
correspondence normals, score each candidate against the normals of incident
triangles (built from the *previous* directions of the two supporting edges),
weight triangles by the badness of those supporting edges, keep the best
candidate and refresh the edge's badness from its own normals.

All edges read the previous field and write a fresh one, so the update is
synchronous. Randomness is drawn from a stream keyed by
``(seed, sweep index, edge id)``, so results do not depend on processing order
or on how edges are batched.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import canonicalize, normalize_rows, unoriented_angle

logger = logging.getLogger(__name__)

MODES = ("dynamic", "static", "uniform", "point_only")

_POOL_STREAM = 0x7F1DE
# Soft cap on elements in one scoring temporary.
_CHUNK_ELEMS = 2_000_000


@dataclass(frozen=True)
class SweepConfig:
    sigma: float = 1.0  # degrees
    n_cand: int = 25
    beta: float = 15.0
    a_min: float = 1e-3
    k_max: int = 4
    tau_stop: float = 1e-3  # degrees
    mode: str = "dynamic"
    seed: int = 0

    def __post_init__(self):
        mode = self.mode.replace("-", "_")
        object.__setattr__(self, "mode", mode)
        if mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.n_cand < 0:
            raise ValueError("n_cand must be non-negative")
        if not self.a_min > 0:
            raise ValueError("a_min must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.tau_stop < 0:
            raise ValueError("tau_stop must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def sigma_rad(self):
        return math.radians(self.sigma)


@dataclass(frozen=True, eq=False)
class DirectionField:
    """Per-edge unit directions and badness scores after ``t`` sweeps.

    ``initial_badness`` is the badness at sweep 0; the static-reliability
    mode weights triangles with it instead of the refreshed scores.
    """

    directions: np.ndarray
    badness: np.ndarray
    t: int = 0
    initial_badness: np.ndarray = None

    def __post_init__(self):
        d = np.array(self.directions, dtype=float).reshape(-1, 3)
        s = np.array(self.badness, dtype=float).reshape(-1)
        if len(d) != len(s):
            raise ValueError("directions and badness must have one entry per edge")
        s0 = s.copy() if self.initial_badness is None else np.array(self.initial_badness, dtype=float)
        for arr in (d, s, s0):
            arr.setflags(write=False)
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "badness", s)
        object.__setattr__(self, "initial_badness", s0)

    @classmethod
    def from_init(cls, init):
        return cls(init.directions, init.badness, 0, init.badness)


@dataclass
class SweepReport:
    deltas: list = field(default_factory=list)
    changed: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    evaluations: list = field(default_factory=list)

    @property
    def n_sweeps(self):
        return len(self.deltas)

    def to_dict(self):
        return {
            "n_sweeps": self.n_sweeps,
            "deltas_deg": [float(d) for d in self.deltas],
            "changed": [int(c) for c in self.changed],
            "evaluations": [int(c) for c in self.evaluations],
            "wall_time_s": [float(t) for t in self.wall_times],
        }


# Single-edge building blocks ------------------------------------------------


def point_support(g, evidence, sigma_rad):
    """Mean Gaussian kernel of the angular residuals of ``g`` against ``evidence``."""
    evidence = np.asarray(evidence, dtype=float).reshape(-1, 3)
    if len(evidence) == 0:
        logger.warning("point support requested on an edge with no evidence")
        return 0.0
    r = np.arcsin(np.clip(np.abs(evidence @ np.asarray(g, dtype=float)), 0.0, 1.0))
    return float(np.mean(np.exp(-(r * r) / (2.0 * sigma_rad * sigma_rad))))


def badness(g, evidence, sigma_rad):
    return 1.0 - point_support(g, evidence, sigma_rad)


def edge_rng(seed, sweep_index, edge_id):
    return np.random.default_rng([int(seed), _POOL_STREAM, int(sweep_index), int(edge_id)])


def sample_pairs(rng, n_e, n_cand):
    """``n_cand`` ordered index pairs ``r1 != r2``, uniform over ``n_e * (n_e - 1)`` pairs."""
    u = rng.random((n_cand, 2))
    r1 = np.floor(u[:, 0] * n_e).astype(np.int64)
    r2 = np.floor(u[:, 1] * (n_e - 1)).astype(np.int64)
    r2 += r2 >= r1
    return r1, r2


def build_candidate_pool(evidence, current, n_cand, a_min, rng):
    """Current direction followed by the unit cross products of sampled normal pairs.

    Pairs whose cross product has norm ``<= a_min`` are dropped without
    resampling, so the pool can be shorter than ``n_cand + 1``.
    """
    evidence = np.asarray(evidence, dtype=float).reshape(-1, 3)
    pool = [canonicalize(np.asarray(current, dtype=float))]
    if len(evidence) < 2 or n_cand == 0:
        return np.array(pool)
    r1, r2 = sample_pairs(rng, len(evidence), n_cand)
    unit, _, keep = normalize_rows(np.cross(evidence[r1], evidence[r2]), eps=a_min)
    pool.extend(canonicalize(unit[keep]))
    return np.array(pool)


def triangle_normal(ga, gb, a_min):
    """Unit normal of the plane of two supporting directions, or ``None`` if degenerate."""
    c = np.cross(ga, gb)
    n = np.linalg.norm(c)
    if n <= a_min:
        return None
    return canonicalize(c / n)


def triangle_weights(badness_pairs, beta):
    """Softmax of ``-beta * (s_a + s_b)`` over the incident triangles."""
    pairs = np.asarray(badness_pairs, dtype=float).reshape(-1, 2)
    logits = -beta * pairs.sum(axis=1)
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def score_candidate(c, normals, weights):
    normals = np.asarray(normals, dtype=float).reshape(-1, 3)
    return float(np.sum(np.asarray(weights) * np.abs(normals @ np.asarray(c, dtype=float))))


# Vectorized sweep -----------------------------------------------------------


def _support_batch(cands, evidence, ev_mask, counts, sigma_rad):
    """Point support of ``cands`` ``(c, K, 3)`` against padded evidence ``(c, n, 3)``."""
    dots = np.abs(np.einsum("ckx,cnx->ckn", cands, evidence))
    r = np.arcsin(np.clip(dots, 0.0, 1.0))
    kern = np.exp(-(r * r) / (2.0 * sigma_rad * sigma_rad))
    kern *= ev_mask[:, None, :]
    total = kern.sum(axis=2)
    safe = np.where(counts > 0, counts, 1)[:, None]
    return np.where(counts[:, None] > 0, total / safe, 0.0)


def candidate_pools(graph, directions, config, sweep_index):
    """Padded candidate pools for every edge: ``(m, n_cand + 1, 3)`` and a mask.

    Slot 0 holds the current direction; the remaining slots follow the
    sampling order of :func:`build_candidate_pool` with dropped pairs masked.
    """
    m = graph.n_edges
    k = config.n_cand + 1
    pools = np.zeros((m, k, 3))
    mask = np.zeros((m, k), dtype=bool)
    pools[:, 0] = canonicalize(directions)
    mask[:, 0] = True
    if config.n_cand == 0 or m == 0:
        return pools, mask
    counts = graph.evidence_counts
    evidence, _ = graph.padded_evidence
    r1 = np.zeros((m, config.n_cand), dtype=np.int64)
    r2 = np.zeros((m, config.n_cand), dtype=np.int64)
    sampled = counts >= 2
    for e in np.flatnonzero(sampled):
        rng = edge_rng(config.seed, sweep_index, e)
        r1[e], r2[e] = sample_pairs(rng, int(counts[e]), config.n_cand)
    rows = np.arange(m)[:, None]
    cross = np.cross(evidence[rows, r1], evidence[rows, r2])
    unit, _, ok = normalize_rows(cross, eps=config.a_min)
    ok &= sampled[:, None]
    pools[:, 1:] = np.where(ok[..., None], canonicalize(unit), 0.0)
    mask[:, 1:] = ok
    return pools, mask


def sweep_with_stats(graph, tri, field, config):
    """One synchronous sweep; returns ``(new_field, delta_deg, stats)``."""
    t0 = time.perf_counter()
    m = graph.n_edges
    sigma_rad = config.sigma_rad
    g = field.directions
    s = field.badness
    pools, pool_mask = candidate_pools(graph, g, config, field.t)
    evidence, ev_mask = graph.padded_evidence
    counts = graph.evidence_counts
    first, second, tri_mask = tri.padded

    if config.mode == "static":
        weight_badness = field.initial_badness
    else:
        weight_badness = s

    new_g = np.array(g)
    new_s = np.array(s)
    evaluations = 0
    k = pools.shape[1]
    width = max(first.shape[1], evidence.shape[1], 1)
    chunk = max(1, _CHUNK_ELEMS // (k * width))
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        sl = slice(lo, hi)
        cand = pools[sl]
        cmask = pool_mask[sl]
        if config.mode == "point_only":
            sup = _support_batch(cand, evidence[sl], ev_mask[sl], counts[sl], sigma_rad)
            cost = np.where(cmask, 1.0 - sup, np.inf)
            update = counts[sl] > 0
        else:
            ga = g[first[sl]]
            gb = g[second[sl]]
            normals, _, valid = normalize_rows(np.cross(ga, gb), eps=config.a_min)
            valid &= tri_mask[sl]
            update = valid.any(axis=1)
            if config.mode == "uniform":
                logits = np.zeros(valid.shape)
            else:
                logits = -config.beta * (weight_badness[first[sl]] + weight_badness[second[sl]])
            logits = np.where(valid, logits, -np.inf)
            top = np.max(logits, axis=1, keepdims=True)
            top = np.where(np.isfinite(top), top, 0.0)
            w = np.where(valid, np.exp(logits - top), 0.0)
            wsum = w.sum(axis=1, keepdims=True)
            w = w / np.where(wsum > 0, wsum, 1.0)
            dots = np.abs(np.einsum("ckx,cdx->ckd", cand, normals))
            cost = np.einsum("ckd,cd->ck", dots, w)
            cost = np.where(cmask, cost, np.inf)
            evaluations += int(np.sum(cmask.sum(axis=1) * valid.sum(axis=1) * update))
        best = np.argmin(cost, axis=1)
        chosen = cand[np.arange(hi - lo), best]
        rows = np.arange(lo, hi)[update]
        new_g[rows] = chosen[update]
        if len(rows):
            sup = _support_batch(
                chosen[update][:, None, :],
                evidence[rows],
                ev_mask[rows],
                counts[rows],
                sigma_rad,
            )[:, 0]
            new_s[rows] = 1.0 - sup

    moved = unoriented_angle(new_g, g) if m else np.zeros(0)
    delta = float(np.median(moved)) if m else 0.0
    out = DirectionField(new_g, new_s, field.t + 1, field.initial_badness)
    stats = {
        "changed": int(np.sum(moved > 0.0)),
        "evaluations": evaluations,
        "wall_time": time.perf_counter() - t0,
    }
    return out, delta, stats


def sweep(graph, tri, field, config):
    """One synchronous sweep; returns ``(new_field, delta_deg)``."""
    out, delta, _ = sweep_with_stats(graph, tri, field, config)
    return out, delta


def run(graph, tri, init, config, sweeps=None):
    """Repeat sweeps until ``k_max`` or until ``delta < tau_stop`` at ``t >= 1``.

    ``sweeps`` forces an exact number of sweeps with the stopping rule
    disabled (used by the one-sweep theory checks); ``0`` returns the input.
    """
    field = init if isinstance(init, DirectionField) else DirectionField.from_init(init)
    report = SweepReport()
    n_iter = config.k_max if sweeps is None else sweeps
    for t in range(n_iter):
        field, delta, stats = sweep_with_stats(graph, tri, field, config)
        report.deltas.append(delta)
        report.changed.append(stats["changed"])
        report.evaluations.append(stats["evaluations"])
        report.wall_times.append(stats["wall_time"])
        if sweeps is None and t >= 1 and delta < config.tau_stop:
            break
    return field, report


def with_mode(config, mode):
    return replace(config, mode=mode)
