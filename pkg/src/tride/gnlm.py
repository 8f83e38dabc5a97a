"""Determinant-enforcement baselines on the product of spheres.

Two diagnostics that treat triangle coplanarity as a continuous constraint:

* ``gn_step``: minimum-norm tangent correction that zeroes the linearized
  triple products (a KKT solve).
* ``lm_step``: damped Levenberg-Marquardt on Cauchy-weighted point residuals
  plus reliability-weighted triangle residuals.

Both work in per-edge 2D tangent coordinates and retract by normalization.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import DegenerateVector, SolveFailure
from .geometry import NORM_EPS, canonicalize, orthonormal_complement, orthonormal_complement_batch

logger = logging.getLogger(__name__)

# Above this KKT/normal-equation size the solves switch to sparse LU.
DENSE_LIMIT = 3000


def tangent_basis(g):
    """3x2 orthonormal basis of the plane orthogonal to ``g``."""
    u1, u2 = orthonormal_complement(g)
    return np.stack([u1, u2], axis=1)


def tangent_bases(directions):
    u1, u2 = orthonormal_complement_batch(directions)
    return np.stack([u1, u2], axis=2)


def retract(g, basis, z):
    v = np.asarray(g, dtype=float) + np.asarray(basis) @ np.asarray(z, dtype=float)
    n = np.linalg.norm(v)
    if n <= NORM_EPS:
        raise DegenerateVector("retraction landed on the origin")
    return canonicalize(v / n)


def _retract_all(directions, bases, z):
    v = directions + np.einsum("mij,mj->mi", bases, z.reshape(-1, 2))
    n = np.linalg.norm(v, axis=1)
    if np.any(n <= NORM_EPS):
        raise DegenerateVector("retraction landed on the origin")
    return canonicalize(v / n[:, None])


@dataclass(frozen=True, eq=False)
class TangentState:
    directions: np.ndarray
    bases: np.ndarray

    @classmethod
    def from_directions(cls, directions):
        d = canonicalize(np.array(directions, dtype=float).reshape(-1, 3))
        return cls(d, tangent_bases(d))

    def step(self, z):
        return TangentState.from_directions(_retract_all(self.directions, self.bases, np.asarray(z)))


@dataclass(frozen=True)
class TriangleRow:
    triangle: int
    residual: float
    blocks: dict
    gamma: float


@dataclass
class _DetSystem:
    triangles: np.ndarray  # retained triangle ids
    edges: np.ndarray  # (r, 3) edge ids (a, b, c)
    residuals: np.ndarray  # (r,)
    blocks: np.ndarray  # (r, 3, 2)
    gamma: np.ndarray  # (r,)

    def jacobian(self, m):
        r = len(self.residuals)
        rows = np.repeat(np.arange(r), 6)
        cols = (2 * self.edges[:, :, None] + np.arange(2)).reshape(-1)
        return sp.csr_matrix((self.blocks.reshape(-1), (rows, cols)), shape=(r, 2 * m))


def _det_system(state, tri, a_min, keep=None):
    edges = np.asarray(tri.triangle_edges)
    ids = np.arange(len(edges))
    if keep is not None:
        edges, ids = edges[keep], ids[keep]
    g = state.directions
    ga, gb, gc = g[edges[:, 0]], g[edges[:, 1]], g[edges[:, 2]]
    bc = np.cross(gb, gc)
    ca = np.cross(gc, ga)
    ab = np.cross(ga, gb)
    gamma = np.cbrt(np.linalg.norm(bc, axis=1) * np.linalg.norm(ca, axis=1) * np.linalg.norm(ab, axis=1))
    residuals = np.sum(ga * bc, axis=1)
    u = state.bases
    blocks = np.stack(
        [
            np.einsum("rx,rxk->rk", bc, u[edges[:, 0]]),
            np.einsum("rx,rxk->rk", ca, u[edges[:, 1]]),
            np.einsum("rx,rxk->rk", ab, u[edges[:, 2]]),
        ],
        axis=1,
    ).reshape(-1, 3, 2)
    ok = gamma > a_min if keep is None else np.ones(len(ids), dtype=bool)
    return _DetSystem(ids[ok], edges[ok], residuals[ok], blocks[ok], gamma[ok])


def build_det_system(state, tri, a_min=1e-3):
    """One :class:`TriangleRow` per triangle whose degeneracy score exceeds ``a_min``."""
    sysm = _det_system(state, tri, a_min)
    return [
        TriangleRow(
            int(t),
            float(d),
            {int(e): blk.copy() for e, blk in zip(edges, blocks)},
            float(gm),
        )
        for t, d, edges, blocks, gm in zip(sysm.triangles, sysm.residuals, sysm.edges, sysm.blocks, sysm.gamma)
    ]


def _kkt_solve(jac, d, rho):
    n = jac.shape[1]
    r = jac.shape[0]
    if n + r <= DENSE_LIMIT:
        c = jac.toarray()
        kkt = np.block([[np.eye(n), c.T], [c, -rho * np.eye(r)]])
        rhs = -np.concatenate([np.zeros(n), d])
        sol = scipy.linalg.solve(kkt, rhs, assume_a="sym")
    else:
        kkt = sp.bmat([[sp.identity(n), jac.T], [jac, -rho * sp.identity(r)]], format="csc")
        rhs = -np.concatenate([np.zeros(n), d])
        sol = spla.spsolve(kkt, rhs)
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("non-finite KKT solution")
    return sol[:n]


def gn_step(state, tri, rho=1e-8, a_min=1e-3):
    """Minimum-norm tangent step satisfying the linearized triple-product constraints."""
    m = len(state.directions)
    sysm = _det_system(state, tri, a_min)
    stats = {"rows": len(sysm.residuals), "empty": len(sysm.residuals) == 0, "rho": rho}
    if stats["empty"]:
        stats["z"] = np.zeros(2 * m)
        return state, stats
    jac = sysm.jacobian(m)
    try:
        z = _kkt_solve(jac, sysm.residuals, rho)
    except (np.linalg.LinAlgError, RuntimeError):
        if rho != 0:
            raise SolveFailure("KKT system is singular")
        logger.info("singular KKT system at rho=0; retrying with rho=1e-8")
        stats["rho"] = 1e-8
        try:
            z = _kkt_solve(jac, sysm.residuals, 1e-8)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise SolveFailure("KKT system is singular") from exc
    stats["z"] = z
    stats["linearized_residual"] = float(np.max(np.abs(sysm.residuals + jac @ z)))
    return state.step(z), stats


def max_det_residual(state, tri, a_min=1e-3):
    sysm = _det_system(state, tri, a_min)
    return float(np.max(np.abs(sysm.residuals))) if len(sysm.residuals) else 0.0


def run_gn(state, tri, iters=5, rho=1e-8, a_min=1e-3):
    """Fixed number of GN projections; returns ``(state, trace)`` of max |triple product|.

    A solve failure stops the loop early and returns the partial trace.
    """
    trace = [max_det_residual(state, tri, a_min)]
    for _ in range(iters):
        try:
            state, _ = gn_step(state, tri, rho, a_min)
        except SolveFailure:
            logger.warning("GN stopped early after %d iterations", len(trace) - 1)
            break
        trace.append(max_det_residual(state, tri, a_min))
    return state, trace


# Levenberg-Marquardt -------------------------------------------------------


@dataclass(frozen=True)
class LMConfig:
    k_pt: int = 50
    cauchy_c: float = 2.385
    lambda_tri: float = 1.0
    beta: float = 15.0
    mu: float = 1e-3
    mu_up: float = 10.0
    mu_down: float = 1.0 / 3.0
    iters: int = 10
    a_min: float = 1e-3
    scale_floor: float = 1e-6


@dataclass
class LMFrozen:
    """Quantities held fixed across an LM run so the objective is a fixed function.

    Point subsets, robust scales and triangle weights come from the state at
    the start of the run; the Cauchy weights are recomputed at every step.
    """

    subsets: list
    scales: np.ndarray
    triangles: np.ndarray
    tri_weights: np.ndarray
    extra: dict = field(default_factory=dict)


def lm_freeze(state, graph, tri, config):
    m = graph.n_edges
    subsets = []
    scales = np.zeros(m)
    small_mean = np.zeros(m)
    for e, x in enumerate(graph.evidence):
        if len(x) == 0:
            subsets.append(np.zeros(0, dtype=np.int64))
            scales[e] = config.scale_floor
            continue
        p = np.abs(x @ state.directions[e])
        idx = np.sort(np.argsort(p, kind="stable")[: config.k_pt])
        subsets.append(idx)
        scales[e] = max(1.4826 * float(np.median(p[idx])), config.scale_floor)
        small_mean[e] = float(np.mean(p[idx]))
    sysm = _det_system(state, tri, config.a_min)
    reliability = np.exp(-config.beta * small_mean)
    w = np.prod(reliability[sysm.edges], axis=1) if len(sysm.edges) else np.zeros(0)
    total = w.sum()
    w = w / total if total > 0 else np.full(len(w), 1.0 / max(len(w), 1))
    return LMFrozen(subsets, scales, sysm.triangles, w)


def _point_terms(state, graph, frozen):
    p_all, a_all, e_all = [], [], []
    for e, idx in enumerate(frozen.subsets):
        if len(idx) == 0:
            continue
        x = graph.evidence[e][idx]
        p_all.append(x @ state.directions[e])
        a_all.append(x @ state.bases[e])
        e_all.append(np.full(len(idx), e))
    if not p_all:
        return np.zeros(0), np.zeros((0, 2)), np.zeros(0, dtype=np.int64)
    return np.concatenate(p_all), np.concatenate(a_all), np.concatenate(e_all)


def lm_objective(state, graph, tri, config, frozen):
    p, _, edge = _point_terms(state, graph, frozen)
    c = config.cauchy_c
    point = 0.5 * c * c * np.sum(np.log1p((p / (c * frozen.scales[edge])) ** 2))
    if len(frozen.triangles):
        sysm = _det_system(state, tri, config.a_min, keep=frozen.triangles)
        tri_term = 0.5 * config.lambda_tri * np.sum(frozen.tri_weights * sysm.residuals**2)
    else:
        tri_term = 0.0
    return float(point + tri_term)


def _normal_equations(state, graph, tri, config, frozen):
    m = graph.n_edges
    p, a, edge = _point_terms(state, graph, frozen)
    sc = frozen.scales[edge]
    w = (1.0 / sc**2) / (1.0 + (p / (config.cauchy_c * sc)) ** 2)
    blocks = np.einsum("n,ni,nj->nij", w, a, a)
    block_sum = np.zeros((m, 2, 2))
    np.add.at(block_sum, edge, blocks)
    grad = np.zeros((m, 2))
    np.add.at(grad, edge, (w * p)[:, None] * a)
    rows = np.repeat(np.arange(2 * m), 2)
    cols = (2 * np.arange(m)[:, None, None] + np.array([0, 1])[None, None, :]).repeat(2, axis=1).reshape(-1)
    hess = sp.csr_matrix((block_sum.reshape(-1), (rows, cols)), shape=(2 * m, 2 * m))
    b = grad.reshape(-1)
    if len(frozen.triangles):
        sysm = _det_system(state, tri, config.a_min, keep=frozen.triangles)
        jac = sysm.jacobian(m)
        wt = config.lambda_tri * frozen.tri_weights
        hess = hess + jac.T @ sp.diags(wt) @ jac
        b = b + jac.T @ (wt * sysm.residuals)
    return hess.tocsc(), np.asarray(b).reshape(-1)


def lm_step(state, graph, tri, config, mu=None, frozen=None):
    """One damped LM step; returns ``(state, accepted, mu_next, info)``.

    A step is accepted when it strictly lowers the objective (or when the
    gradient is exactly zero, in which case the state is returned unchanged).
    """
    mu = config.mu if mu is None else mu
    frozen = frozen or lm_freeze(state, graph, tri, config)
    f0 = lm_objective(state, graph, tri, config, frozen)
    hess, b = _normal_equations(state, graph, tri, config, frozen)
    info = {"objective": f0, "objective_trial": f0}
    if not np.any(b):
        return state, True, mu * config.mu_down, info
    diag = hess.diagonal()
    floor = 1e-12 * max(float(diag.max()), 1.0)
    damped = hess + sp.diags(mu * diag + np.where(diag > 0, 0.0, floor))
    try:
        if damped.shape[0] <= DENSE_LIMIT:
            z = np.linalg.solve(damped.toarray(), -b)
        else:
            z = spla.spsolve(damped.tocsc(), -b)
        if not np.all(np.isfinite(z)):
            raise np.linalg.LinAlgError("non-finite LM step")
        trial = state.step(z)
    except (np.linalg.LinAlgError, DegenerateVector, RuntimeError):
        return state, False, mu * config.mu_up, info
    f1 = lm_objective(trial, graph, tri, config, frozen)
    info["objective_trial"] = f1
    if f1 < f0:
        return trial, True, mu * config.mu_down, info
    return state, False, mu * config.mu_up, info


def run_lm(state, graph, tri, config=None):
    """``config.iters`` LM steps with subsets and weights frozen at the start.

    Returns ``(state, trace)`` where ``trace`` lists the objective after every
    accepted step, preceded by the starting objective.
    """
    config = config or LMConfig()
    frozen = lm_freeze(state, graph, tri, config)
    mu = config.mu
    trace = [lm_objective(state, graph, tri, config, frozen)]
    for _ in range(config.iters):
        state, accepted, mu, info = lm_step(state, graph, tri, config, mu, frozen)
        if accepted:
            trace.append(lm_objective(state, graph, tri, config, frozen))
    return state, trace
