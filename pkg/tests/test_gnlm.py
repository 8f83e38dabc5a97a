import itertools

import numpy as np
import pytest

from tride import gnlm
from tride.exceptions import DegenerateVector, SolveFailure
from tride.geometry import canonicalize, triple_product, unoriented_angle
from tride.gnlm import (
    LMConfig,
    TangentState,
    build_det_system,
    gn_step,
    lm_freeze,
    lm_objective,
    lm_step,
    retract,
    run_gn,
    run_lm,
    tangent_basis,
)
from tride.initializers import initialize
from tride.synthetic import CorruptionSpec, GraphModel, make_instance
from tride.viewgraph import ViewGraph, enumerate_triangles

from conftest import complete_graph, random_unit

EX, EY, EZ = np.eye(3)


def toy(seed=0, n=5, corrupt=1):
    inst = make_instance(GraphModel("complete", n), 30, CorruptionSpec(0.0), seed=seed)
    d = inst.truth.directions.copy()
    rng = np.random.default_rng(seed)
    for e in rng.choice(len(d), corrupt, replace=False):
        d[e] = canonicalize(d[e] + 0.3 * random_unit(rng, 1)[0])
        d[e] /= np.linalg.norm(d[e])
    return inst, enumerate_triangles(inst.graph), TangentState.from_directions(d)


def dense_kkt(state, tri, rho, a_min=1e-3):
    rows = build_det_system(state, tri, a_min)
    m = len(state.directions)
    c = np.zeros((len(rows), 2 * m))
    d = np.array([r.residual for r in rows])
    for k, r in enumerate(rows):
        for e, blk in r.blocks.items():
            c[k, 2 * e : 2 * e + 2] = blk
    n = 2 * m
    kkt = np.zeros((n + len(rows), n + len(rows)))
    kkt[:n, :n] = np.eye(n)
    kkt[:n, n:] = c.T
    kkt[n:, :n] = c
    kkt[n:, n:] = -rho * np.eye(len(rows))
    rhs = np.concatenate([np.zeros(n), -d])
    return np.linalg.solve(kkt, rhs)[:n], c, d


def test_tangent_basis(rng):
    u = tangent_basis(EZ)
    assert np.allclose(u, np.stack([EX, EY], axis=1))
    for g in random_unit(rng, 50):
        u = tangent_basis(g)
        assert np.allclose(u.T @ g, 0, atol=1e-12)
        assert np.allclose(u.T @ u, np.eye(2), atol=1e-12)


def test_retract(rng):
    u = tangent_basis(EZ)
    assert np.allclose(retract(EZ, u, [0, 0]), EZ)
    assert np.allclose(retract(EZ, u, [1, 0]), np.array([1, 0, 1]) / np.sqrt(2))
    for g in random_unit(rng, 50):
        out = retract(g, tangent_basis(g), rng.standard_normal(2) * 3)
        assert abs(np.linalg.norm(out) - 1) < 1e-12
    with pytest.raises(DegenerateVector):
        retract(np.zeros(3), np.zeros((3, 2)), [0, 0])


def test_det_system_examples():
    graph = complete_graph(3)
    tri = enumerate_triangles(graph)
    # (ij, jk, ik) = edges 0, 2, 1
    state = TangentState.from_directions(np.array([EX, EZ, EY]))
    rows = build_det_system(state, tri)
    assert len(rows) == 1 and rows[0].residual == triple_product(EX, EY, EZ) == 1.0
    assert set(rows[0].blocks) == {0, 1, 2}
    coplanar = TangentState.from_directions(np.array([EX, (EX + EY) / np.sqrt(2), EY]))
    assert abs(build_det_system(coplanar, tri)[0].residual) < 1e-12
    # one nearly parallel pair: gamma = cbrt(1 * 1 * t) = 5e-4
    t = 1.25e-10
    nearly = TangentState.from_directions(np.array([EX, EZ, [np.cos(t), np.sin(t), 0]]))
    (gamma,) = [r.gamma for r in build_det_system(nearly, tri, a_min=1e-12)]
    assert gamma == pytest.approx(5e-4, rel=1e-3)
    assert build_det_system(nearly, tri, a_min=1e-3) == []


def _raw_retract(g, u, z):
    v = g + u @ z
    return v / np.linalg.norm(v)


@pytest.mark.parametrize("seed", range(100))
def test_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    graph = complete_graph(3)
    tri = enumerate_triangles(graph)
    state = TangentState.from_directions(random_unit(rng, 3))
    (row,) = build_det_system(state, tri, a_min=1e-6) or [None]
    if row is None:
        pytest.skip("degenerate draw")
    ij, jk, ik = tri.triangle_edges[0]
    order = (ij, jk, ik)
    h = 1e-6
    for e, blk in row.blocks.items():
        fd = np.zeros(2)
        for k in range(2):
            dz = np.zeros(2)
            dz[k] = h
            gp = state.directions.copy()
            gm = state.directions.copy()
            gp[e] = _raw_retract(state.directions[e], state.bases[e], dz)
            gm[e] = _raw_retract(state.directions[e], state.bases[e], -dz)
            fd[k] = (triple_product(*gp[list(order)]) - triple_product(*gm[list(order)])) / (2 * h)
        assert np.linalg.norm(blk - fd) <= 1e-5 * np.linalg.norm(blk) + 1e-10


def test_gn_step_matches_dense_kkt():
    inst, tri, state = toy(seed=1)
    z_ref, c, d = dense_kkt(state, tri, 1e-8)
    new, stats = gn_step(state, tri, rho=1e-8)
    assert np.max(np.abs(stats["z"] - z_ref)) < 1e-8
    expect = np.array([retract(state.directions[e], state.bases[e], z_ref[2 * e : 2 * e + 2]) for e in range(len(z_ref) // 2)])
    assert np.max(np.abs(new.directions - expect)) < 1e-8
    assert np.max(np.abs(d + c @ stats["z"])) < 1e-6


def test_gn_single_triangle_linearized_residual():
    graph = complete_graph(3)
    tri = enumerate_triangles(graph)
    g = np.array([EX, np.array([0, 0.1, 1]) / np.linalg.norm([0, 0.1, 1]), EY])
    state = TangentState.from_directions(g)
    (row,) = build_det_system(state, tri)
    assert abs(row.residual) > 0.05
    _, stats = gn_step(state, tri, rho=0.0)
    assert stats["linearized_residual"] <= 1e-10


def test_gn_minimum_norm(rng):
    inst, tri, state = toy(seed=2, corrupt=2)
    _, stats = gn_step(state, tri, rho=0.0)
    z = stats["z"]
    _, c, d = dense_kkt(state, tri, 0.0)
    proj = np.eye(c.shape[1]) - np.linalg.pinv(c) @ c
    for _ in range(20):
        other = z + proj @ rng.standard_normal(len(z))
        assert np.max(np.abs(c @ other + d)) < 1e-8
        assert np.linalg.norm(z) <= np.linalg.norm(other) + 1e-9


def test_gn_zero_and_empty():
    inst, tri, _ = toy()
    exact = TangentState.from_directions(inst.truth.directions)
    out, stats = gn_step(exact, tri)
    assert np.max(np.abs(stats["z"])) < 1e-12
    assert np.max(unoriented_angle(out.directions, exact.directions)) < 1e-9
    lone = TangentState.from_directions(np.array([EX]))
    out, stats = gn_step(lone, enumerate_triangles(ViewGraph(2, [[0, 1]], None)))
    assert stats["empty"] and out is lone


def test_gn_singular_retry_and_failure(monkeypatch):
    inst, tri, state = toy()
    calls = []
    real = gnlm._kkt_solve

    def flaky(jac, d, rho):
        calls.append(rho)
        if rho == 0:
            raise np.linalg.LinAlgError("singular")
        return real(jac, d, rho)

    monkeypatch.setattr(gnlm, "_kkt_solve", flaky)
    _, stats = gn_step(state, tri, rho=0.0)
    assert calls == [0.0, 1e-8] and stats["rho"] == 1e-8

    def broken(jac, d, rho):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setattr(gnlm, "_kkt_solve", broken)
    with pytest.raises(SolveFailure):
        gn_step(state, tri, rho=0.0)
    # run_gn stops early with a partial trace
    _, trace = run_gn(state, tri, iters=3)
    assert len(trace) == 1


def test_run_gn_traces():
    inst, tri, state = toy(seed=3)
    same, trace = run_gn(state, tri, iters=0)
    assert same is state and len(trace) == 1
    _, trace = run_gn(TangentState.from_directions(inst.truth.directions), tri, iters=3)
    assert max(trace) <= 1e-10
    _, trace = run_gn(state, tri, iters=5)
    assert all(b < a for a, b in zip(trace, trace[1:]) if a > 1e-12)


def test_lm_objective_monotone():
    for seed in range(3):
        inst = make_instance(GraphModel("complete", 5), 40, CorruptionSpec(0.5, 0.8), seed=seed)
        tri = enumerate_triangles(inst.graph)
        state = TangentState.from_directions(initialize(inst.graph, "random", seed=seed).directions)
        _, trace = run_lm(state, inst.graph, tri, LMConfig(iters=10))
        assert len(trace) > 1
        assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_lm_step_contracts(monkeypatch):
    # planar cameras and normals along e_z: every residual is exactly zero
    graph = complete_graph(4)
    ang = np.array([0.1, 1.3, 2.2, 4.0])
    loc = np.stack([np.cos(ang), np.sin(ang), np.zeros(4)], axis=1)
    d = loc[graph.edges[:, 0]] - loc[graph.edges[:, 1]]
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    graph = graph.with_evidence([np.tile(EZ, (10, 1))] * graph.n_edges)
    tri = enumerate_triangles(graph)
    state = TangentState.from_directions(d)
    cfg = LMConfig()
    out, accepted, mu, info = lm_step(state, graph, tri, cfg)
    assert accepted and out is state and mu == cfg.mu * cfg.mu_down

    inst, tri, state = toy(seed=4)
    frozen = lm_freeze(state, inst.graph, tri, cfg)
    out, accepted, mu, info = lm_step(state, inst.graph, tri, cfg, 1e-3, frozen)
    if accepted:
        assert info["objective_trial"] < info["objective"]
        assert lm_objective(out, inst.graph, tri, cfg, frozen) < info["objective"]
    # force a rejection: every trial state looks worse
    real = gnlm.lm_objective
    monkeypatch.setattr(gnlm, "lm_objective", lambda s, *a: real(s, *a) if s is state else np.inf)
    out, accepted, mu, _ = lm_step(state, inst.graph, tri, cfg, 1e-3, frozen)
    assert not accepted and out is state and mu == pytest.approx(1e-3 * cfg.mu_up)
