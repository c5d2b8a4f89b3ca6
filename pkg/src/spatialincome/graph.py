"""Area adjacency and precision-matrix algebra.

``Q(tau, lam) = tau I + lam W*`` with ``W* = diag(w_1..w_m) - W`` the graph
Laplacian. Because ``Q`` is a shifted, scaled Laplacian, its log-determinant
and the traces ``tr Q^-1`` and ``tr Q^-1 W*`` are evaluated from the Laplacian
spectrum, computed once per graph. ``Q*(tau, S)`` replaces the unit edge
weights by ``1/s_ij``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as spla

from .errors import FactorizationError, ValidationError


class AdjacencyGraph:
    """Undirected binary adjacency over ``m`` areas, edges stored once with ``i < j``."""

    def __init__(self, m: int, edges=()):
        m = int(m)
        if m < 1:
            raise ValidationError("graph needs at least one area")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(e):
            if np.any(e < 0) or np.any(e >= m):
                bad = e[np.any((e < 0) | (e >= m), axis=1)][0]
                raise ValidationError(f"edge references an area outside 0..{m - 1}", edges=[tuple(bad)])
            loops = e[e[:, 0] == e[:, 1]]
            if len(loops):
                raise ValidationError("self-loop in adjacency", edges=[tuple(loops[0])])
            e = np.sort(e, axis=1)
            uniq, counts = np.unique(e, axis=0, return_counts=True)
            if np.any(counts > 1):
                raise ValidationError("duplicate edge in adjacency", edges=[tuple(uniq[counts > 1][0])])
            e = uniq
        self.m = m
        self.edges = e
        self.edges.setflags(write=False)

    @classmethod
    def from_locations(cls, locations, radius: float) -> "AdjacencyGraph":
        """Edge iff the Euclidean distance between locations is strictly below ``radius``."""
        loc = np.asarray(locations, dtype=float)
        d = np.sqrt(((loc[:, None, :] - loc[None, :, :]) ** 2).sum(-1))
        i, j = np.nonzero(np.triu(d < radius, k=1))
        return cls(len(loc), np.column_stack([i, j]))

    def __repr__(self) -> str:
        return f"AdjacencyGraph(m={self.m}, delta={self.delta})"

    def __eq__(self, other) -> bool:
        return isinstance(other, AdjacencyGraph) and self.m == other.m and np.array_equal(self.edges, other.edges)

    @property
    def delta(self) -> int:
        return len(self.edges)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.m).astype(float)

    @cached_property
    def W(self) -> sparse.csr_matrix:
        return self.weighted_adjacency(np.ones(self.delta))

    @cached_property
    def Wstar(self) -> sparse.csr_matrix:
        return self.weighted_laplacian(np.ones(self.delta))

    def weighted_adjacency(self, weights) -> sparse.csr_matrix:
        i, j = self.edges[:, 0], self.edges[:, 1]
        w = np.asarray(weights, dtype=float)
        return sparse.csr_matrix(
            (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(self.m, self.m)
        )

    def weighted_laplacian(self, weights) -> sparse.csr_matrix:
        A = self.weighted_adjacency(weights)
        return (sparse.diags(np.asarray(A.sum(axis=1)).ravel()) - A).tocsr()

    @cached_property
    def incidence(self):
        """Per-node neighbour lists as CSR arrays ``(indptr, nbr, edge_id)``."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        eid = np.arange(self.delta)
        src = np.concatenate([i, j])
        dst = np.concatenate([j, i])
        ids = np.concatenate([eid, eid])
        order = np.lexsort((dst, src))
        indptr = np.concatenate([[0], np.cumsum(np.bincount(src, minlength=self.m))])
        return indptr, dst[order], ids[order]

    def neighbors(self, i: int) -> np.ndarray:
        indptr, nbr, _ = self.incidence
        return nbr[indptr[i]: indptr[i + 1]]

    @cached_property
    def laplacian_eigenvalues(self) -> np.ndarray:
        if self.delta == 0:
            return np.zeros(self.m)
        w = np.linalg.eigvalsh(self.Wstar.toarray())
        return np.maximum(w, 0.0)

    def coloring(self, nodes=None) -> list[np.ndarray]:
        """Greedy colouring of the subgraph induced by ``nodes``.

        Nodes sharing a colour are mutually non-adjacent, so their conditional
        updates given everything else are independent.
        """
        nodes = np.arange(self.m) if nodes is None else np.asarray(nodes, dtype=np.int64)
        member = np.zeros(self.m, dtype=bool)
        member[nodes] = True
        color = np.full(self.m, -1)
        for v in nodes:
            used = {color[u] for u in self.neighbors(v) if member[u] and color[u] >= 0}
            c = 0
            while c in used:
                c += 1
            color[v] = c
        if len(nodes) == 0:
            return []
        return [nodes[color[nodes] == c] for c in range(color[nodes].max() + 1)]

    def components(self) -> int:
        n, _ = csgraph.connected_components(self.W, directed=False)
        return int(n)


@dataclass
class EdgeScales:
    """Latent positive scale ``s_ij`` per edge (same order as ``graph.edges``)."""

    s: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        if np.any(~(self.s > 0)):
            raise ValidationError("edge scales must be strictly positive")

    @property
    def delta(self) -> int:
        return len(self.s)

    @property
    def inverse(self) -> np.ndarray:
        return 1.0 / self.s

    def tilde(self, graph: AdjacencyGraph) -> sparse.csr_matrix:
        """The symmetric matrix with ``1/s_ij`` on edges and zero elsewhere."""
        return graph.weighted_adjacency(self.inverse)

    def tilde_rowsums(self, graph: AdjacencyGraph) -> np.ndarray:
        return np.bincount(graph.edges.ravel(), weights=np.repeat(self.inverse, 2), minlength=graph.m)


def _check_tau(tau):
    if not np.all(np.asarray(tau) > 0):
        raise ValidationError("tau must be positive")


def precision_Q(graph: AdjacencyGraph, tau: float, lam: float) -> sparse.csr_matrix:
    _check_tau(tau)
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    return (tau * sparse.identity(graph.m, format="csr") + lam * graph.Wstar).tocsr()


def logdet_Q(graph: AdjacencyGraph, tau: float, lam: float) -> float:
    _check_tau(tau)
    return float(np.sum(np.log(tau + lam * graph.laplacian_eigenvalues)))


def trace_terms(graph: AdjacencyGraph, tau: float, lam: float) -> tuple[float, float]:
    """``(tr Q^-1, tr Q^-1 W*)``."""
    _check_tau(tau)
    w = graph.laplacian_eigenvalues
    d = tau + lam * w
    return float(np.sum(1.0 / d)), float(np.sum(w / d))


def precision_Qstar(graph: AdjacencyGraph, tau: float, scales: EdgeScales) -> sparse.csr_matrix:
    _check_tau(tau)
    if scales.delta != graph.delta:
        raise ValidationError("one scale per edge required")
    return (tau * sparse.identity(graph.m, format="csr") + graph.weighted_laplacian(scales.inverse)).tocsr()


def logdet_spd(A) -> float:
    """Log-determinant of a sparse symmetric positive-definite matrix via sparse LU."""
    A = sparse.csc_matrix(A)
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise FactorizationError(f"sparse factorization failed: {exc}", stage="logdet") from exc
    d = lu.U.diagonal()
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise FactorizationError("matrix is not positive definite", stage="logdet")
    return float(np.sum(np.log(d)))


def logdet_Qstar(graph: AdjacencyGraph, tau: float, scales: EdgeScales) -> float:
    return logdet_spd(precision_Qstar(graph, tau, scales))
