"""Graph-level jigsaw puzzles.

The learned adjacency is partitioned into subgraphs by iterative removal
of the maximal edge-betweenness edge (Girvan-Newman, on the symmetrized
graph), then perturbed by swapping two subgraphs node-for-node in
descending density order (inter move) or rearranging one subgraph
internally (intra move). The classifier target is which move was made.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .errors import ConfigError, DegeneratePartition
from .graph import Adjacency
from .rng import RngStream


def _as_matrix(A) -> np.ndarray:
    if isinstance(A, Adjacency):
        return A.A
    return np.asarray(A)


def symmetrize(A) -> np.ndarray:
    """Undirected edge present iff either direction is present in A."""
    M = _as_matrix(A)
    S = ((M > 0) | (M.T > 0)).astype(np.float64)
    np.fill_diagonal(S, 0.0)
    return S


def _edge_set(S: np.ndarray) -> set[tuple[int, int]]:
    ks, ns = np.nonzero(np.triu(S, 1))
    return {(int(k), int(n)) for k, n in zip(ks, ns)}


def _components(n_nodes: int, edges: set[tuple[int, int]]) -> list[list[int]]:
    adj: list[list[int]] = [[] for _ in range(n_nodes)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = [False] * n_nodes
    comps = []
    for start in range(n_nodes):
        if seen[start]:
            continue
        comp = []
        dq = deque([start])
        seen[start] = True
        while dq:
            u = dq.popleft()
            comp.append(u)
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    dq.append(v)
        comps.append(sorted(comp))
    return comps


def edge_betweenness(n_nodes: int, edges: set[tuple[int, int]]) -> dict[tuple[int, int], float]:
    """Brandes accumulation of shortest-path counts per undirected edge."""
    bc = {e: 0.0 for e in edges}
    adj: list[list[int]] = [[] for _ in range(n_nodes)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    for nbrs in adj:
        nbrs.sort()

    for s in range(n_nodes):
        dist = [-1] * n_nodes
        sigma = [0.0] * n_nodes
        preds: list[list[int]] = [[] for _ in range(n_nodes)]
        dist[s] = 0
        sigma[s] = 1.0
        order = []
        dq = deque([s])
        while dq:
            v = dq.popleft()
            order.append(v)
            for w in adj[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    dq.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = [0.0] * n_nodes
        for w in reversed(order):
            for v in preds[w]:
                contrib = sigma[v] / sigma[w] * (1.0 + delta[w])
                key = (v, w) if v < w else (w, v)
                bc[key] += contrib
                delta[v] += contrib
    # every source/target ordered pair was visited once from each side
    return {e: val / 2.0 for e, val in bc.items()}


@dataclass
class Partition:
    """Node -> subgraph assignment with contiguous ids."""

    assignment: np.ndarray  # (K,) ints in [0, eta)
    eta: int

    @property
    def n_nodes(self) -> int:
        return self.assignment.shape[0]

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == c)

    def sizes(self) -> list[int]:
        return [int(np.sum(self.assignment == c)) for c in range(self.eta)]


def extract_subgraphs(A, eta: int) -> Partition:
    """Girvan-Newman on the symmetrized adjacency.

    Removes the maximal-betweenness edge (ties lexicographic) until exactly
    eta connected components remain; a graph that starts out more fragmented
    than eta has its smallest components merged instead.
    """
    S = symmetrize(A)
    K = S.shape[0]
    if not (2 <= eta <= K):
        raise ConfigError(f"eta must lie in [2, {K}], got {eta}")

    edges = _edge_set(S)
    comps = _components(K, edges)

    while len(comps) < eta:
        bc = edge_betweenness(K, edges)
        target = max(bc.items(), key=lambda kv: (kv[1], (-kv[0][0], -kv[0][1])))[0]
        edges.remove(target)
        comps = _components(K, edges)

    while len(comps) > eta:
        comps.sort(key=lambda c: (len(c), c[0]))
        merged = sorted(comps[0] + comps[1])
        comps = [merged] + comps[2:]

    comps.sort(key=lambda c: c[0])
    assignment = np.zeros(K, dtype=int)
    for cid, comp in enumerate(comps):
        assignment[comp] = cid
    return Partition(assignment=assignment, eta=eta)


def node_density(partition: Partition, A, node: int) -> int:
    """Count of symmetrized edges to other members of the node's subgraph."""
    S = symmetrize(A)
    mates = partition.members(int(partition.assignment[node]))
    mates = mates[mates != node]
    return int(S[node, mates].sum())


def class_count(kind: str, eta: int) -> int:
    if eta < 2:
        raise ConfigError(f"eta must be >= 2, got {eta}")
    if kind == "inter":
        return comb(eta, 2)
    if kind == "intra":
        return eta
    raise ConfigError(f"unknown puzzle kind {kind!r}")


@dataclass
class PuzzleMove:
    """One applied shuffle: the permutation, its class, and the evidence."""

    kind: str
    subgraphs: tuple[int, ...]
    perm: np.ndarray          # new index of each node
    class_id: int
    n_classes: int
    ordered_nodes: tuple[tuple[int, ...], ...]  # density-ranked members per chosen subgraph

    def apply(self, M: np.ndarray) -> np.ndarray:
        """Row-and-column permute M so entry (u, v) lands at (perm[u], perm[v])."""
        inv = np.argsort(self.perm)
        return np.asarray(M)[np.ix_(inv, inv)]

    def one_hot(self, dtype=np.float64) -> np.ndarray:
        p = np.zeros(self.n_classes, dtype=dtype)
        p[self.class_id] = 1.0
        return p


def _density_order(partition: Partition, S: np.ndarray, subgraph: int) -> list[int]:
    members = partition.members(subgraph)
    dens = {}
    for node in members:
        mates = members[members != node]
        dens[int(node)] = int(S[node, mates].sum())
    return sorted((int(n) for n in members), key=lambda n: (-dens[n], n))


def shuffle_inter(A, partition: Partition, rng: RngStream) -> tuple[np.ndarray, PuzzleMove]:
    """Swap two uniformly drawn subgraphs rank-by-rank in density order.

    Excess nodes of the larger subgraph keep their positions, so its
    internal coherence degrades after the swap -- that asymmetry is the
    point of the pretext task's difficulty.
    """
    if partition.eta < 2:
        raise ConfigError("inter shuffle needs at least 2 subgraphs")
    M = _as_matrix(A)
    S = symmetrize(M)
    pairs = list(combinations(range(partition.eta), 2))
    class_id = int(rng.integers(0, len(pairs) - 1))
    i, j = pairs[class_id]

    order_i = _density_order(partition, S, i)
    order_j = _density_order(partition, S, j)
    perm = np.arange(partition.n_nodes)
    for a, b in zip(order_i, order_j):
        perm[a], perm[b] = b, a

    move = PuzzleMove(
        kind="inter",
        subgraphs=(i, j),
        perm=perm,
        class_id=class_id,
        n_classes=len(pairs),
        ordered_nodes=(tuple(order_i), tuple(order_j)),
    )
    return move.apply(M), move


def shuffle_intra(A, partition: Partition, rng: RngStream) -> tuple[np.ndarray, PuzzleMove]:
    """Rearrange one subgraph internally with a uniform non-identity permutation."""
    if partition.eta < 2:
        raise ConfigError("intra shuffle needs at least 2 subgraphs")
    M = _as_matrix(A)
    sizes = partition.sizes()
    if max(sizes) < 2:
        raise DegeneratePartition("every subgraph is a singleton; no intra move exists")

    while True:
        c = int(rng.integers(0, partition.eta - 1))
        if sizes[c] >= 2:
            break
    members = np.sort(partition.members(c))
    while True:
        p = rng.permutation(len(members))
        if np.any(p != np.arange(len(members))):
            break
    perm = np.arange(partition.n_nodes)
    perm[members] = members[p]

    move = PuzzleMove(
        kind="intra",
        subgraphs=(c,),
        perm=perm,
        class_id=c,
        n_classes=partition.eta,
        ordered_nodes=(tuple(int(n) for n in members),),
    )
    return move.apply(M), move
