"""Synthetic scenes, correspondence-normal evidence, corruption and theory instances.

Every per-edge random draw comes from a stream keyed by ``(seed, purpose,
edge id)``; generation is therefore independent of edge processing order and
nested in the corruption level (the edges corrupted at ``q`` are a subset of
those corrupted at any larger ``q`` for the same seed).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .exceptions import DegenerateVector, GenerationFailure
from .geometry import NORM_EPS, canonicalize, orthonormal_complement, orthonormal_complement_batch, sample_sphere
from .initializers import InitResult
from .sweep import _support_batch
from .viewgraph import ViewGraph

_SCENE_STREAM = 0x5CE7E
_EVIDENCE_STREAM = 0xE71D
_CORRUPT_STREAM = 0xC0DE
_CLEAN_STREAM = 0xC1EA
_WEAK_STREAM = 0x3EA4
_MAX_RETRIES = 20
# Guards ceil() against products like 0.7 * 10 = 7.000000000000001.
_CEIL_SLACK = 1e-9


def _ceil_count(frac, n):
    return int(math.ceil(frac * n - _CEIL_SLACK))


@dataclass(frozen=True)
class GraphModel:
    kind: str = "complete"
    n: int = 12
    p: float = 1.0
    r: float = 0.5

    def __post_init__(self):
        if self.kind not in ("complete", "er", "rgg"):
            raise ValueError(f"unknown graph model {self.kind!r}")
        if self.n < 0:
            raise ValueError("n must be non-negative")
        if self.kind == "er" and not 0.0 <= self.p <= 1.0:
            raise ValueError("ER edge probability must lie in [0, 1]")
        if self.kind == "rgg" and not self.r > 0:
            raise ValueError("RGG radius must be positive")


@dataclass(frozen=True)
class CorruptionSpec:
    edge_fraction: float = 0.0
    match_fraction: float = 0.8
    inlier_noise_deg: float = 0.0

    def __post_init__(self):
        for name in ("edge_fraction", "match_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.inlier_noise_deg < 0:
            raise ValueError("inlier noise must be non-negative")


@dataclass(frozen=True, eq=False)
class SceneTruth:
    locations: np.ndarray
    directions: np.ndarray


def true_directions(locations, edges):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    d = np.asarray(locations, dtype=float)[edges[:, 0]] - np.asarray(locations, dtype=float)[edges[:, 1]]
    n = np.linalg.norm(d, axis=1)
    if np.any(n <= NORM_EPS):
        raise DegenerateVector("coincident camera centers")
    return canonicalize(d / n[:, None])


def _model_edges(model, locations, rng):
    n = model.n
    iu, ju = np.triu_indices(n, k=1)
    if model.kind == "complete":
        keep = np.ones(len(iu), dtype=bool)
    elif model.kind == "er":
        keep = rng.random(len(iu)) < model.p
    else:
        keep = np.linalg.norm(locations[iu] - locations[ju], axis=1) <= model.r
    return np.stack([iu[keep], ju[keep]], axis=1)


def gen_scene(model, seed):
    """Cameras uniform in the unit cube and edges drawn from ``model``.

    Returns an evidence-free :class:`ViewGraph` and the matching truth.
    """
    rng = np.random.default_rng([int(seed), _SCENE_STREAM])
    for _ in range(_MAX_RETRIES):
        locations = rng.random((model.n, 3))
        edges = _model_edges(model, locations, rng)
        if len(edges) == 0:
            break
        gaps = np.linalg.norm(locations[edges[:, 0]] - locations[edges[:, 1]], axis=1)
        if np.all(gaps > 1e-9):
            break
    else:
        raise GenerationFailure(f"coincident cameras after {_MAX_RETRIES} attempts")
    graph = ViewGraph(model.n, edges, None)
    return graph, SceneTruth(locations, true_directions(locations, edges))


def _great_circle(g, count, rng):
    u1, u2 = orthonormal_complement(g)
    theta = rng.uniform(0.0, 2.0 * np.pi, count)
    return np.cos(theta)[:, None] * u1 + np.sin(theta)[:, None] * u2


def _perturb(x, noise_deg, rng):
    """Rotate each unit row of ``x`` by a folded-Gaussian angle towards a random tangent."""
    if noise_deg <= 0 or len(x) == 0:
        return x
    angle = np.abs(rng.normal(0.0, math.radians(noise_deg), len(x)))
    t = rng.standard_normal(x.shape)
    t -= np.sum(t * x, axis=1, keepdims=True) * x
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    return np.cos(angle)[:, None] * x + np.sin(angle)[:, None] * t


def gen_evidence(truth_dir, n_matches, inlier_frac, noise_deg, rng):
    """Correspondence normals for one edge.

    ``ceil(inlier_frac * n_matches)`` inliers lie on the great circle orthogonal
    to ``truth_dir`` (then perturbed by ``noise_deg``); the rest are uniform on
    the sphere. Rows are shuffled and sign-canonical.
    """
    if n_matches < 0:
        raise ValueError("n_matches must be non-negative")
    n_in = min(_ceil_count(inlier_frac, n_matches), n_matches)
    inliers = _perturb(_great_circle(truth_dir, n_in, rng), noise_deg, rng)
    outliers = sample_sphere(rng, n_matches - n_in)
    x = np.concatenate([inliers, outliers]).reshape(-1, 3)
    return canonicalize(x[rng.permutation(len(x))])


def corrupt(graph, spec, seed):
    """Replace a ``match_fraction`` of the normals on a random ``edge_fraction`` of edges.

    Returns the corrupted graph and the boolean per-edge corruption mask.
    """
    evidence = []
    mask = np.zeros(graph.n_edges, dtype=bool)
    for e, x in enumerate(graph.evidence):
        rng = np.random.default_rng([int(seed), _CORRUPT_STREAM, e])
        hit = rng.random() < spec.edge_fraction
        mask[e] = hit
        if not hit or len(x) == 0:
            evidence.append(x)
            continue
        k = min(_ceil_count(spec.match_fraction, len(x)), len(x))
        idx = rng.choice(len(x), size=k, replace=False)
        x = np.array(x)
        x[idx] = canonicalize(sample_sphere(rng, k))
        evidence.append(x)
    return graph.with_evidence(evidence), mask


@dataclass(frozen=True, eq=False)
class SyntheticInstance:
    graph: ViewGraph
    truth: SceneTruth
    corrupted: np.ndarray


def make_instance(model, n_matches=80, spec=None, seed=0, inlier_frac=1.0):
    """Scene with ``n_matches`` normals per edge (``inlier_frac`` of them inliers), corrupted by ``spec``."""
    spec = spec or CorruptionSpec()
    graph, truth = gen_scene(model, seed)
    evidence = [
        gen_evidence(
            g,
            n_matches,
            inlier_frac,
            spec.inlier_noise_deg,
            np.random.default_rng([int(seed), _EVIDENCE_STREAM, e]),
        )
        for e, g in enumerate(truth.directions)
    ]
    graph, mask = corrupt(graph.with_evidence(evidence), spec, seed)
    return SyntheticInstance(graph, truth, mask)


def stress_instance(q, seed, n_cam=12, n_matches=80, match_fraction=0.8, noise_deg=0.0):
    """The keypoint-corruption stress scene: complete graph, 80 matches, 80% replaced."""
    return make_instance(
        GraphModel("complete", n_cam),
        n_matches,
        CorruptionSpec(q, match_fraction, noise_deg),
        seed,
    )


# Theory instances ------------------------------------------------------------


def background_support_constant(sigma_rad):
    """Expected point support of a uniformly random normal at scale ``sigma_rad``."""
    if not sigma_rad > 0:
        raise ValueError("sigma must be positive")
    val, _ = integrate.quad(
        lambda a: math.exp(-a * a / (2.0 * sigma_rad * sigma_rad)) * math.cos(a),
        0.0,
        math.pi / 2,
        epsabs=1e-11,
        epsrel=1e-11,
        limit=200,
        points=[min(10 * sigma_rad, math.pi / 4)],
    )
    return val


def theory_bound(a, c_wd, beta, delta):
    """One-sweep error bound ``(1 - a) / (a * c_wd) * exp(-beta * delta)``."""
    if not 0 < a <= 1:
        raise ValueError("witness density a must lie in (0, 1]")
    if not c_wd > 0:
        raise ValueError("c_wd must be positive")
    if delta < 0:
        raise ValueError("support gap must be non-negative")
    return (1.0 - a) / (a * c_wd) * math.exp(-beta * delta)


def beta_threshold(a, c_wd, delta, eta):
    """Smallest sharpness above which the one-sweep bound drops below ``eta``."""
    ratio = (1.0 - a) / (a * c_wd * eta)
    if ratio <= 1.0:
        return 0.0
    return math.log(ratio) / delta


@dataclass(frozen=True, eq=False)
class TheoryInstance:
    graph: ViewGraph
    truth: SceneTruth
    init: InitResult
    clean: np.ndarray


def _inlier_fraction_for(support, b):
    return float(np.clip((support - b) / (1.0 - b), 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class TheoryDraws:
    """Scene and per-edge random numbers of a theory instance, independent of ``q``.

    Every edge consumes its stream identically whatever its class, so one set
    of draws serves a whole corruption grid and the instances are nested in q.
    """

    graph: ViewGraph
    truth: SceneTruth
    clean_u: np.ndarray
    u: np.ndarray
    z: np.ndarray
    perm: np.ndarray


def theory_draws(model, seed, n_matches=80):
    graph, truth = gen_scene(model, seed)
    m, n = graph.n_edges, int(n_matches)
    clean_u = np.zeros(m)
    u = np.zeros((m, n, 4))
    z = np.zeros((m, n + 1, 3))
    perm = np.zeros((m, n), dtype=np.int64)
    for e in range(m):
        clean_u[e] = np.random.default_rng([int(seed), _CLEAN_STREAM, e]).random()
        rng = np.random.default_rng([int(seed), _WEAK_STREAM, e])
        u[e] = rng.random((n, 4))
        z[e] = rng.standard_normal((n + 1, 3))
        perm[e] = rng.permutation(n)
    return TheoryDraws(graph, truth, clean_u, u, z, perm)


def gen_theory_instance(
    model,
    q,
    pool_contains_truth=False,
    a_plus=0.6,
    a_minus=0.1,
    seed=0,
    n_matches=80,
    weak_inlier_frac=0.2,
    sigma=1.0,
    draws=None,
):
    """Two-class instance: clean anchors at the truth, weak edges initialized at random.

    Clean edges get ``ceil(a_plus * n_matches)`` exact inliers and outliers
    kept at least ten kernel widths off the truth's great circle, so every
    clean anchor has the same support (to ~1e-20), about ``a_plus``. Weak
    edges get a random initial direction with about ``a_minus`` support (exact inliers planted on its great circle) and at
    least two exact truth inliers. With ``pool_contains_truth`` the remaining
    weak-edge normals are truth inliers and the planted ones sit on the line
    orthogonal to both the truth and the wrong direction, so every
    non-degenerate sampled pair reproduces the truth.

    ``draws`` (from :func:`theory_draws` with the same model, seed and match
    count) skips regenerating the q-independent randomness.
    """
    if not a_plus > a_minus:
        raise ValueError("a_plus must exceed a_minus")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    if draws is None:
        draws = theory_draws(model, seed, n_matches)
    graph, truth, u, z, perm = draws.graph, draws.truth, draws.u, draws.z, draws.perm
    sigma_rad = math.radians(sigma)
    pi_wrong = _inlier_fraction_for(a_minus, background_support_constant(sigma_rad))
    m, n = graph.n_edges, u.shape[1]
    n_in = min(_ceil_count(a_plus, n), n)
    n_true = min(max(2, _ceil_count(weak_inlier_frac, n)), n)
    n_wrong = min(int(round(pi_wrong * n)), n - n_true)
    clean = draws.clean_u >= q

    g_star = truth.directions
    g0 = canonicalize(z[:, 0] / np.linalg.norm(z[:, 0], axis=1, keepdims=True))
    s1, s2 = orthonormal_complement_batch(g_star)
    w1, w2 = orthonormal_complement_batch(g0)
    ang = 2.0 * np.pi * u[..., 0]
    on_star = np.cos(ang)[..., None] * s1[:, None] + np.sin(ang)[..., None] * s2[:, None]
    on_wrong = np.cos(ang)[..., None] * w1[:, None] + np.sin(ang)[..., None] * w2[:, None]
    # Uniform on the sphere conditioned on |x.g*| >= sin(10 sigma): the
    # height along g* is uniform, so sample it directly.
    floor = math.sin(min(10.0 * sigma_rad, math.pi / 2))
    h = (floor + (1.0 - floor) * u[..., 1]) * np.where(u[..., 2] < 0.5, -1.0, 1.0)
    phi = 2.0 * np.pi * u[..., 3]
    ring = np.cos(phi)[..., None] * s1[:, None] + np.sin(phi)[..., None] * s2[:, None]
    far = h[..., None] * g_star[:, None] + np.sqrt(1.0 - h * h)[..., None] * ring
    uniform = z[:, 1:] / np.linalg.norm(z[:, 1:], axis=2, keepdims=True)
    both = np.cross(g_star, g0)
    both /= np.linalg.norm(both, axis=1, keepdims=True)
    both = np.broadcast_to(both[:, None], (m, n, 3))

    r = np.arange(n)[None, :, None]
    clean_rows = np.where(r < n_in, on_star, far)
    if pool_contains_truth:
        weak_rows = np.where(r < n_wrong, both, on_star)
    else:
        weak_rows = np.where(r < n_wrong, on_wrong, np.where(r < n_wrong + n_true, on_star, uniform))
    x = np.where(clean[:, None, None], clean_rows, weak_rows)
    x = canonicalize(np.take_along_axis(x, perm[..., None], axis=1))
    directions = np.where(clean[:, None], g_star, g0)
    graph = graph.with_evidence(list(x))
    evidence, mask = graph.padded_evidence
    support = _support_batch(directions[:, None], evidence, mask, graph.evidence_counts, sigma_rad)[:, 0]
    init = InitResult(directions, 1.0 - support, "theory")
    return TheoryInstance(graph, truth, init, clean)
