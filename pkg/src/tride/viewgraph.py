"""View-graph container, triangle enumeration and graph statistics."""

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True, eq=False)
class ViewGraph:
    """Cameras, undirected edges ``(i, j)`` with ``i < j``, and per-edge normals.

    ``evidence[e]`` is an ``(n_e, 3)`` array of unit correspondence normals.
    Arrays are made read-only on construction.
    """

    n_cam: int
    edges: np.ndarray
    evidence: tuple

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ValueError("edges must satisfy i < j (no self-loops)")
            if edges.min() < 0 or edges.max() >= self.n_cam:
                raise ValueError("edge endpoint out of range")
            if len({(int(i), int(j)) for i, j in edges}) != len(edges):
                raise ValueError("duplicate edge")
        edges.setflags(write=False)
        evidence = self.evidence
        if evidence is None:
            evidence = [np.zeros((0, 3))] * len(edges)
        if len(evidence) != len(edges):
            raise ValueError("need one evidence list per edge")
        frozen = []
        for x in evidence:
            x = np.array(x, dtype=float).reshape(-1, 3)
            x.setflags(write=False)
            frozen.append(x)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "evidence", tuple(frozen))

    @property
    def n_edges(self):
        return len(self.edges)

    @cached_property
    def edge_index(self):
        return {(int(i), int(j)): e for e, (i, j) in enumerate(self.edges)}

    @cached_property
    def evidence_counts(self):
        return np.array([len(x) for x in self.evidence], dtype=np.int64)

    @cached_property
    def padded_evidence(self):
        """``(m, n_max, 3)`` zero-padded normals and the matching validity mask."""
        n_max = int(self.evidence_counts.max()) if self.n_edges else 0
        padded = np.zeros((self.n_edges, max(n_max, 1), 3))
        mask = np.zeros((self.n_edges, max(n_max, 1)), dtype=bool)
        for e, x in enumerate(self.evidence):
            padded[e, : len(x)] = x
            mask[e, : len(x)] = True
        padded.setflags(write=False)
        mask.setflags(write=False)
        return padded, mask

    def with_evidence(self, evidence):
        return ViewGraph(self.n_cam, self.edges, tuple(evidence))


@dataclass(frozen=True, eq=False)
class TriangleIndex:
    """Graph triangles and their per-edge incidence.

    ``triangles`` holds camera triples ``i < j < k`` in lexicographic order;
    ``triangle_edges[t]`` the edge ids of ``(ij, jk, ik)``. ``incidence[e]``
    lists ``(triangle id, witness camera)`` in ascending triangle id.
    """

    triangles: np.ndarray
    triangle_edges: np.ndarray
    incidence: tuple
    n_edges: int

    @cached_property
    def degrees(self):
        return np.array([len(inc) for inc in self.incidence], dtype=np.int64)

    @cached_property
    def padded(self):
        """Per-edge ``(m, d_max)`` arrays of the two supporting edges and a mask.

        For target edge ``(i, j)`` and witness ``k`` the first supporting edge
        joins ``i`` and ``k``, the second joins ``j`` and ``k``.
        """
        d_max = max(int(self.degrees.max()) if self.n_edges else 0, 1)
        first = np.zeros((self.n_edges, d_max), dtype=np.int64)
        second = np.zeros((self.n_edges, d_max), dtype=np.int64)
        mask = np.zeros((self.n_edges, d_max), dtype=bool)
        te = np.asarray(self.triangle_edges).reshape(-1, 3)
        if len(te):
            ij, jk, ik = te.T
            t = np.arange(len(te))
            target = np.concatenate([ij, jk, ik])
            a = np.concatenate([ik, ij, ij])
            b = np.concatenate([jk, ik, jk])
            order = np.lexsort((np.tile(t, 3), target))
            target, a, b = target[order], a[order], b[order]
            starts = np.searchsorted(target, target, side="left")
            slot = np.arange(len(target)) - starts
            first[target, slot] = a
            second[target, slot] = b
            mask[target, slot] = True
        for arr in (first, second, mask):
            arr.setflags(write=False)
        return first, second, mask

    @property
    def n_triangles(self):
        return len(self.triangles)


def enumerate_triangles(graph):
    """All mutually adjacent camera triples, found by sorted neighbour intersection."""
    higher = [set() for _ in range(graph.n_cam)]
    for i, j in graph.edges:
        higher[int(i)].add(int(j))
    index = graph.edge_index
    triangles = []
    for i, j in sorted(index):
        for k in sorted(higher[i] & higher[j]):
            triangles.append((i, j, k))
    tri = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    edge_triples = [(index[(i, j)], index[(j, k)], index[(i, k)]) for i, j, k in triangles]
    tri_edges = np.array(edge_triples, dtype=np.int64).reshape(-1, 3)
    incidence = [[] for _ in range(graph.n_edges)]
    for t, ((i, j, k), (ij, jk, ik)) in enumerate(zip(triangles, edge_triples)):
        incidence[ij].append((t, k))
        incidence[jk].append((t, i))
        incidence[ik].append((t, j))
    tri.setflags(write=False)
    tri_edges.setflags(write=False)
    return TriangleIndex(
        triangles=tri,
        triangle_edges=tri_edges,
        incidence=tuple(tuple(inc) for inc in incidence),
        n_edges=graph.n_edges,
    )


def incident_triangles(tri, edge_id):
    if not 0 <= edge_id < tri.n_edges:
        raise IndexError(f"edge id {edge_id} out of range")
    return list(tri.incidence[edge_id])


@dataclass(frozen=True)
class GraphStats:
    n_cam: int
    n_edges: int
    n_triangles: int
    median_triangle_degree: int
    frac_edges_in_triangles: float
    median_evidence: int

    def as_tuple(self):
        return (
            self.n_cam,
            self.n_edges,
            self.n_triangles,
            self.median_triangle_degree,
            self.frac_edges_in_triangles,
            self.median_evidence,
        )


def _lower_median(values):
    if len(values) == 0:
        return 0
    values = np.sort(values)
    return int(values[(len(values) - 1) // 2])


def graph_stats(graph, tri):
    degrees = tri.degrees
    m = graph.n_edges
    return GraphStats(
        n_cam=graph.n_cam,
        n_edges=m,
        n_triangles=tri.n_triangles,
        median_triangle_degree=_lower_median(degrees),
        frac_edges_in_triangles=float(np.mean(degrees > 0)) if m else 0.0,
        median_evidence=_lower_median(graph.evidence_counts),
    )


# Scene files --------------------------------------------------------------


def scene_to_dict(graph, truth=None, corrupted=None, meta=None):
    out = {
        "n_cam": int(graph.n_cam),
        "edges": graph.edges.tolist(),
        "normals": [x.tolist() for x in graph.evidence],
    }
    if truth is not None or corrupted is not None:
        section = {}
        if truth is not None:
            section["locations"] = np.asarray(truth.locations).tolist()
        if corrupted is not None:
            section["corrupted"] = [bool(c) for c in corrupted]
        out["truth"] = section
    if meta:
        out["meta"] = meta
    return out


def scene_from_dict(data):
    """Parse a scene mapping; returns ``(graph, locations or None, corrupted or None)``."""
    try:
        n_cam = int(data["n_cam"])
        edges = np.asarray(data["edges"], dtype=np.int64).reshape(-1, 2)
        normals = data["normals"]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed scene: {exc}") from exc
    evidence = []
    for x in normals:
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(x)):
            raise ValueError("scene normals must be finite")
        evidence.append(x)
    graph = ViewGraph(n_cam, edges, tuple(evidence))
    locations = corrupted = None
    truth = data.get("truth")
    if truth:
        if "locations" in truth:
            locations = np.asarray(truth["locations"], dtype=float).reshape(-1, 3)
            if len(locations) != n_cam:
                raise ValueError("truth locations must have one row per camera")
        if "corrupted" in truth:
            corrupted = np.asarray(truth["corrupted"], dtype=bool)
    return graph, locations, corrupted


def save_scene(path, graph, truth=None, corrupted=None, meta=None):
    with open(path, "w") as fh:
        json.dump(scene_to_dict(graph, truth, corrupted, meta), fh)
        fh.write("\n")


def load_scene(path):
    with open(path) as fh:
        return scene_from_dict(json.load(fh))
