"""Edge-local direction initializers (PCA, FMS, random) and initial badness."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InsufficientEvidence
from .geometry import canonicalize, sample_sphere, unoriented_angle
from .sweep import _support_batch

logger = logging.getLogger(__name__)

METHODS = ("pca", "fms", "random")

_INIT_STREAM = 0x1A17
EIG_TIE = 1e-12
FMS_DELTA = 1e-10
FMS_MAX_ITER = 100
FMS_TOL_RAD = 1e-7


@dataclass(frozen=True, eq=False)
class InitResult:
    directions: np.ndarray
    badness: np.ndarray
    method: str = "pca"

    def __post_init__(self):
        d = np.array(self.directions, dtype=float).reshape(-1, 3)
        s = np.array(self.badness, dtype=float).reshape(-1)
        d.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "badness", s)


def _smallest_eigvec(cov):
    """Unit eigenvector of the smallest eigenvalue of each symmetric 3x3 matrix.

    When the smallest eigenvalue is tied (within ``EIG_TIE``), the tied
    eigenvector with the lexicographically largest canonical form wins.
    """
    cov = np.asarray(cov, dtype=float)
    single = cov.ndim == 2
    cov = cov.reshape(-1, 3, 3)
    vals, vecs = np.linalg.eigh(cov)
    out = canonicalize(vecs[:, :, 0])
    tied = (vals[:, 1] - vals[:, 0]) <= EIG_TIE
    for b in np.flatnonzero(tied):
        cands = [canonicalize(vecs[b, :, i]) for i in range(3) if vals[b, i] - vals[b, 0] <= EIG_TIE]
        out[b] = max(cands, key=lambda v: tuple(np.round(v, 12)))
    return out[0] if single else out


def pca_direction(normals):
    x = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(x) < 2:
        raise InsufficientEvidence(f"PCA needs at least 2 normals, got {len(x)}")
    return _smallest_eigvec(x.T @ x / len(x))


def fms_direction(normals, max_iter=FMS_MAX_ITER, delta=FMS_DELTA):
    """Fast-median-subspace style estimate: PCA reweighted by ``1/max(|g.x|, delta)``.

    Starts from the PCA direction and stops after ``max_iter`` reweightings or
    once successive directions differ by less than 1e-7 rad.
    """
    x = np.asarray(normals, dtype=float).reshape(-1, 3)
    if len(x) < 2:
        raise InsufficientEvidence(f"FMS needs at least 2 normals, got {len(x)}")
    g = pca_direction(x)
    for _ in range(max_iter):
        w = 1.0 / np.maximum(np.abs(x @ g), delta)
        g_next = _smallest_eigvec((x * w[:, None]).T @ x / w.sum())
        step = math.radians(float(unoriented_angle(g, g_next)))
        g = g_next
        if step < FMS_TOL_RAD:
            break
    return g


def _fms_batch(evidence, mask, start, max_iter=FMS_MAX_ITER, delta=FMS_DELTA):
    g = start.copy()
    active = np.ones(len(g), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        x = evidence[idx]
        w = 1.0 / np.maximum(np.abs(np.einsum("enx,ex->en", x, g[idx])), delta)
        w *= mask[idx]
        cov = np.einsum("en,enx,eny->exy", w, x, x) / w.sum(axis=1)[:, None, None]
        g_next = _smallest_eigvec(cov)
        step = np.radians(unoriented_angle(g[idx], g_next))
        g[idx] = g_next
        active[idx[step < FMS_TOL_RAD]] = False
    return g


def init_rng(seed, edge_id):
    return np.random.default_rng([int(seed), _INIT_STREAM, int(edge_id)])


def random_direction(seed, edge_id):
    """Uniform direction on the sphere, fully determined by ``(seed, edge_id)``."""
    return canonicalize(sample_sphere(init_rng(seed, edge_id), 1)[0])


def _random_state(seed, edge_id):
    rng = init_rng(seed, edge_id)
    g = canonicalize(sample_sphere(rng, 1)[0])
    return g, float(rng.random())


def initialize(graph, method="pca", sigma=1.0, seed=0):
    """Per-edge initial directions and badness ``1 - point_support`` at scale ``sigma`` (deg).

    ``method="random"`` draws both the direction and the badness at random.
    PCA/FMS fall back to a random direction on edges with fewer than 2 normals.
    """
    if method not in METHODS:
        raise ValueError(f"unknown initializer {method!r}; expected one of {METHODS}")
    m = graph.n_edges
    counts = graph.evidence_counts
    evidence, mask = graph.padded_evidence
    directions = np.zeros((m, 3))
    random_badness = np.zeros(m)

    if method == "random":
        for e in range(m):
            directions[e], random_badness[e] = _random_state(seed, e)
        return InitResult(directions, random_badness, method)

    ok = counts >= 2
    for e in np.flatnonzero(~ok):
        logger.warning("edge %d has %d normals; falling back to a random direction", e, counts[e])
        directions[e] = random_direction(seed, e)
    if ok.any():
        x = evidence[ok]
        cov = np.einsum("enx,eny->exy", x, x) / counts[ok][:, None, None]
        g = _smallest_eigvec(cov)
        if method == "fms":
            g = _fms_batch(x, mask[ok], g)
        directions[ok] = g
    support = _support_batch(directions[:, None, :], evidence, mask, counts, math.radians(sigma))[:, 0]
    return InitResult(directions, 1.0 - support, method)
