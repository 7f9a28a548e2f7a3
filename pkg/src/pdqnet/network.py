"""Communication graphs, consensus weight matrices, and blockwise consensus operators.

Stacked vectors over the network are represented as ``(n, p)`` arrays: row ``i``
is node ``i``'s block.  The mixing matrix ``Z`` (the block-Kronecker lift of the
``n x n`` weight matrix ``W``) is never materialized at ``np x np`` size; all
operators act blockwise on the ``(n, p)`` representation.  Dense lifts exist
only as test oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Topology",
    "WeightMatrix",
    "TopologyError",
    "WeightMatrixError",
    "make_topology",
    "build_d_regular_cycle",
    "metropolis_weights",
    "weight_matrix_from_entries",
    "validate_weight_matrix",
    "apply_laplacian",
    "apply_mixing",
    "laplacian_dense",
    "smallest_nonzero_laplacian_eigenvalue",
    "graph_distances",
    "topology_to_dict",
    "topology_from_dict",
    "weights_to_dict",
    "weights_from_dict",
]


class TopologyError(ValueError):
    """Raised for malformed or disconnected communication graphs."""


class WeightMatrixError(ValueError):
    """Raised when a weight matrix violates symmetry, stochasticity, sparsity,
    diagonal bounds, or connectivity conditions."""


@dataclass(frozen=True)
class Topology:
    """Undirected communication graph with self-inclusive neighborhoods.

    ``neighborhoods[i]`` is the sorted tuple of ``{i} | {j : (i, j) is an edge}``
    and ``sizes[i]`` its cardinality.  Edges are stored as sorted pairs with no
    self loops; self-inclusion lives only in the neighborhoods.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    neighborhoods: tuple[tuple[int, ...], ...]
    sizes: tuple[int, ...]

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Neighbors of ``i`` excluding ``i`` itself."""
        return tuple(j for j in self.neighborhoods[i] if j != i)


def make_topology(n: int, edges) -> Topology:
    """Build and validate a :class:`Topology` from an edge list."""
    if n < 1:
        raise TopologyError(f"node count must be positive, got {n}")
    norm = set()
    for i, j in edges:
        i, j = int(i), int(j)
        if i == j:
            raise TopologyError(f"self loop ({i}, {j}) not allowed in the edge set")
        if not (0 <= i < n and 0 <= j < n):
            raise TopologyError(f"edge ({i}, {j}) out of range for n={n}")
        norm.add((min(i, j), max(i, j)))
    nbrs = [{i} for i in range(n)]
    for i, j in norm:
        nbrs[i].add(j)
        nbrs[j].add(i)
    topo = Topology(
        n=n,
        edges=tuple(sorted(norm)),
        neighborhoods=tuple(tuple(sorted(s)) for s in nbrs),
        sizes=tuple(len(s) for s in nbrs),
    )
    if n > 1 and not _connected(topo):
        raise TopologyError("graph is disconnected")
    return topo


def _connected(t: Topology) -> bool:
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in t.neighborhoods[i]:
            if j not in seen:
                seen.add(j)
                frontier.append(j)
    return len(seen) == t.n


def graph_distances(t: Topology, source: int) -> list[int]:
    """Hop distances from ``source`` to every node (breadth-first)."""
    dist = [-1] * t.n
    dist[source] = 0
    queue = [source]
    while queue:
        nxt = []
        for i in queue:
            for j in t.neighbors(i):
                if dist[j] < 0:
                    dist[j] = dist[i] + 1
                    nxt.append(j)
        queue = nxt
    return dist


def build_d_regular_cycle(n: int, d: int) -> Topology:
    """Ring of ``n`` nodes, each connected to its ``d/2`` nearest neighbors on
    either side; every neighborhood has size ``d + 1``."""
    if d % 2 != 0:
        raise TopologyError(f"degree d must be even (got d={d})")
    if not 2 <= d <= n - 1:
        raise TopologyError(f"need 2 <= d <= n-1 (got d={d}, n={n})")
    edges = set()
    for i in range(n):
        for off in range(1, d // 2 + 1):
            j = (i + off) % n
            edges.add((min(i, j), max(i, j)))
    return make_topology(n, edges)


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric doubly stochastic weights on a topology.

    ``dense`` is the ``(n, n)`` matrix with ``w_ij > 0`` exactly on edges and
    the diagonal; ``delta``/``Delta`` are the measured min/max diagonal entries.
    """

    topology: Topology
    dense: np.ndarray
    delta: float
    Delta: float

    @property
    def n(self) -> int:
        return self.topology.n

    def row(self, i: int) -> np.ndarray:
        return self.dense[i]


def metropolis_weights(t: Topology) -> WeightMatrix:
    """Metropolis-Hastings weights: ``w_ij = 1/(1 + max(deg_i, deg_j))`` on
    edges, diagonal filled to make each row sum to one."""
    n = t.n
    deg = [t.sizes[i] - 1 for i in range(n)]
    W = np.zeros((n, n))
    for i, j in t.edges:
        W[i, j] = W[j, i] = 1.0 / (1 + max(deg[i], deg[j]))
    for i in range(n):
        W[i, i] = 1.0 - W[i].sum()
    return weight_matrix_from_entries(t, W)


def weight_matrix_from_entries(t: Topology, dense) -> WeightMatrix:
    """Wrap explicit weight entries, enforcing every weight-matrix condition."""
    W = np.asarray(dense, dtype=float).copy()
    wm = WeightMatrix(
        topology=t,
        dense=W,
        delta=float(W.diagonal().min()),
        Delta=float(W.diagonal().max()),
    )
    validate_weight_matrix(wm, t)
    W.flags.writeable = False
    return wm


def validate_weight_matrix(wm: WeightMatrix, t: Topology | None = None) -> dict:
    """Check symmetry, row stochasticity, sparsity, diagonal bounds, and
    connectivity of the spectrum; return the measured quantities.

    Returns ``{"delta", "Delta", "second_eigenvalue_modulus"}``.  Raises
    :class:`WeightMatrixError` listing every violated condition beyond 1e-12.
    """
    t = t or wm.topology
    W = np.asarray(wm.dense, dtype=float)
    n = t.n
    tol = 1e-12
    problems = []
    if W.shape != (n, n):
        raise WeightMatrixError(f"shape {W.shape} does not match n={n}")
    if not np.isfinite(W).all():
        problems.append("non-finite entries")
    asym = float(np.abs(W - W.T).max()) if n else 0.0
    if asym > tol:
        problems.append(f"asymmetry {asym:.3e} exceeds {tol:.0e}")
    rowerr = float(np.abs(W.sum(axis=1) - 1.0).max())
    if rowerr > tol:
        problems.append(f"row sums deviate from 1 by {rowerr:.3e}")
    allowed = np.eye(n, dtype=bool)
    for i, j in t.edges:
        allowed[i, j] = allowed[j, i] = True
    off_pattern = float(np.abs(W[~allowed]).max()) if (~allowed).any() else 0.0
    if off_pattern > tol:
        problems.append(f"nonzero weight off the graph pattern ({off_pattern:.3e})")
    edge_min = min((W[i, j] for i, j in t.edges), default=1.0)
    if t.edges and edge_min <= 0.0:
        problems.append("non-positive weight on an edge")
    delta = float(W.diagonal().min())
    Delta = float(W.diagonal().max())
    if delta <= 0.0:
        problems.append(f"diagonal lower bound delta={delta:.3e} <= 0")
    if Delta >= 1.0:
        problems.append(f"diagonal upper bound Delta={Delta:.3e} >= 1")
    eigs = np.linalg.eigvalsh((W + W.T) / 2.0)
    moduli = np.sort(np.abs(eigs))[::-1]
    second = float(moduli[1]) if n > 1 else 0.0
    if n > 1 and second >= 1.0 - tol:
        problems.append(
            f"second eigenvalue modulus {second:.12f} is not < 1 "
            "(null space of I - W larger than the consensus line)"
        )
    if problems:
        raise WeightMatrixError("; ".join(problems))
    return {"delta": delta, "Delta": Delta, "second_eigenvalue_modulus": second}


def apply_laplacian(wm: WeightMatrix, x: np.ndarray) -> np.ndarray:
    """Blockwise ``(I - Z) x``: block ``i`` is ``x_i - sum_j w_ij x_j`` over
    the self-inclusive neighborhood.  Zero exactly on consensus inputs."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != wm.n:
        raise ValueError(f"expected {wm.n} blocks, got {x.shape[0]}")
    return x - wm.dense @ x


def apply_mixing(wm: WeightMatrix, x: np.ndarray) -> np.ndarray:
    """Blockwise ``Z x``: block ``i`` is the weighted neighborhood average."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != wm.n:
        raise ValueError(f"expected {wm.n} blocks, got {x.shape[0]}")
    return wm.dense @ x


def laplacian_dense(wm: WeightMatrix, p: int) -> np.ndarray:
    """Dense ``(I - W) (x) I_p`` lift; test oracle for the blockwise operator."""
    n = wm.n
    return np.kron(np.eye(n) - wm.dense, np.eye(p))


def smallest_nonzero_laplacian_eigenvalue(wm: WeightMatrix, tol: float = 1e-10) -> float:
    """Smallest nonzero eigenvalue of ``I - W`` (dense eigendecomposition)."""
    eigs = np.linalg.eigvalsh(np.eye(wm.n) - wm.dense)
    positive = eigs[eigs > tol]
    if positive.size == 0:
        raise WeightMatrixError("I - W has no nonzero eigenvalue")
    return float(positive.min())


def topology_to_dict(t: Topology) -> dict:
    return {"n": t.n, "edges": [list(e) for e in t.edges]}


def topology_from_dict(d: dict) -> Topology:
    return make_topology(int(d["n"]), [tuple(e) for e in d["edges"]])


def weights_to_dict(wm: WeightMatrix) -> dict:
    return {
        "topology": topology_to_dict(wm.topology),
        "entries": np.asarray(wm.dense).tolist(),
    }


def weights_from_dict(d: dict) -> WeightMatrix:
    t = topology_from_dict(d["topology"])
    return weight_matrix_from_entries(t, np.array(d["entries"], dtype=float))
