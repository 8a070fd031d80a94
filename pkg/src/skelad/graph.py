"""Learnable per-joint feature vectors and the sparse directed adjacency.

Each joint k carries a trainable D-vector; the graph connects k to the
top-delta most cosine-similar other joints. Selection is structural (no
gradient through the top-delta choice); gradients reach the embeddings
through the attention that consumes them downstream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation
from .rng import RngStream
from .tensor import Tensor


def init_node_embeddings(n_nodes: int, dim: int, rng: RngStream, dtype=np.float64) -> Tensor:
    """Zero-mean Gaussian rows, std 1/sqrt(dim); zero rows re-jittered."""
    V = rng.normal((n_nodes, dim)) / np.sqrt(dim)
    for k in range(n_nodes):
        while np.linalg.norm(V[k]) == 0.0:
            V[k] = rng.normal((dim,)) / np.sqrt(dim)
    return Tensor(V.astype(dtype), requires_grad=True)


def cosine_similarity(v_k: np.ndarray, v_n: np.ndarray) -> float:
    v_k = np.asarray(v_k, dtype=np.float64)
    v_n = np.asarray(v_n, dtype=np.float64)
    nk = np.linalg.norm(v_k)
    nn = np.linalg.norm(v_n)
    if nk == 0.0 or nn == 0.0:
        raise ContractViolation("cosine similarity undefined for zero-norm vectors")
    return float(np.dot(v_k, v_n) / (nk * nn))


def similarity_matrix(V: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities; diagonal forced to -inf so a node never
    appears in its own candidate set."""
    V = np.asarray(V, dtype=np.float64)
    norms = np.linalg.norm(V, axis=1)
    if np.any(norms == 0.0):
        raise ContractViolation("node embedding with zero norm")
    sim = (V @ V.T) / np.outer(norms, norms)
    np.fill_diagonal(sim, -np.inf)
    return sim


@dataclass
class Adjacency:
    """Directed binary graph with fixed out-degree."""

    A: np.ndarray        # (K, K) in {0, 1}
    delta: int
    sim: np.ndarray      # (K, K) cosine cache, diag -inf

    @property
    def n_nodes(self) -> int:
        return self.A.shape[0]

    def neighbors(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.A[k] > 0)


def build_adjacency(V, delta: int) -> Adjacency:
    """Connect each node to the delta most similar candidates.

    Ties break toward the lower node index, so the graph is a pure function
    of (V, delta).
    """
    values = V.data if isinstance(V, Tensor) else np.asarray(V)
    K = values.shape[0]
    if not (1 <= delta <= K - 1):
        raise ConfigError(f"delta must lie in [1, {K - 1}], got {delta}")
    sim = similarity_matrix(values)
    A = np.zeros((K, K))
    for k in range(K):
        # argsort is stable, so sorting by descending similarity with the
        # index appended as implicit secondary key keeps lower indices first.
        order = np.argsort(-sim[k], kind="stable")
        A[k, order[:delta]] = 1.0
    return Adjacency(A=A, delta=delta, sim=sim)
