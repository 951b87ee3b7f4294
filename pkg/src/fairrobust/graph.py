"""Bipartite adjacency construction, normalization, and edge perturbation.

The adjacency matrix is (|U|+|I|) x (|U|+|I|), symmetric, with nonzeros
only in the user x item blocks (items offset by |U|). Perturbations act on
an ordered candidate edge list through a trainable weight vector whose
sigmoid-binarized view selects the flipped edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    pass


@dataclass
class AdjacencyMatrix:
    """Symmetric bipartite adjacency; values are 0/1 or relaxed in [0, 1]."""

    n_users: int
    n_items: int
    matrix: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.n_users + self.n_items

    def value_at(self, user: int, item: int) -> float:
        return float(self.matrix[user, self.n_users + item])

    def user_item_block(self) -> np.ndarray:
        """Dense |U| x |I| view of the user-item block."""
        return self.matrix[: self.n_users, self.n_users :].toarray()

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def dump_coordinates(self) -> str:
        """Sorted (row, col, value) text, one triple per line."""
        coo = self.matrix.tocoo()
        triples = sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))
        return "\n".join(f"{r} {c} {v:.17g}" for r, c, v in triples)


@dataclass
class CandidateEdgeSet:
    """Ordered candidate edges; position j is the index into the weight vector."""

    kind: str  # "deletion" | "addition"
    edges: np.ndarray  # (m, 2) of (user_index, item_index)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.kind not in ("deletion", "addition"):
            raise GraphError(f"unknown perturbation kind {self.kind!r}")
        if len(self.edges) == 0:
            raise GraphError("empty candidate edge set")
        if len({(int(u), int(i)) for u, i in self.edges}) != len(self.edges):
            raise GraphError("duplicate candidate edges")

    def __len__(self) -> int:
        return len(self.edges)


@dataclass
class PerturbationVector:
    """Trainable real weights over candidate edges."""

    weights: np.ndarray
    kind: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.weights)


def build_adjacency(train_pairs, n_users: int, n_items: int) -> AdjacencyMatrix:
    """0/1 symmetric adjacency from (user_index, item_index) pairs."""
    pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2) if len(train_pairs) else np.empty((0, 2), dtype=np.int64)
    n = n_users + n_items
    if len(pairs):
        if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= n_users:
            raise GraphError("user index out of range")
        if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= n_items:
            raise GraphError("item index out of range")
    rows = np.concatenate([pairs[:, 0], n_users + pairs[:, 1]])
    cols = np.concatenate([n_users + pairs[:, 1], pairs[:, 0]])
    data = np.ones(len(rows), dtype=np.float64)
    mat = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    mat.data[:] = np.minimum(mat.data, 1.0)  # collapse accidental duplicates
    return AdjacencyMatrix(n_users, n_items, mat)


def normalize_adjacency(adj: AdjacencyMatrix) -> AdjacencyMatrix:
    """Symmetric degree normalization D^-1/2 A D^-1/2; zero degrees stay zero."""
    deg = np.asarray(adj.matrix.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        dinv = 1.0 / np.sqrt(deg)
    dinv[~np.isfinite(dinv)] = 0.0
    d = sp.diags(dinv)
    return AdjacencyMatrix(adj.n_users, adj.n_items, (d @ adj.matrix @ d).tocsr())


def candidate_edges(
    train_pairs,
    n_users: int,
    n_items: int,
    kind: str,
    cap: int | None = None,
    seed: int = 0,
) -> CandidateEdgeSet:
    """Candidate edges for perturbation.

    deletion: every training edge. addition: every user-item non-edge,
    optionally subsampled uniformly to ``cap`` with the given seed.
    Both orderings are canonical (sorted by (user, item)).
    """
    if cap is not None and cap < 1:
        raise GraphError("cap must be >= 1")
    pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2)
    existing = {(int(u), int(i)) for u, i in pairs}
    if kind == "deletion":
        edges = np.array(sorted(existing), dtype=np.int64)
    elif kind == "addition":
        present = np.zeros((n_users, n_items), dtype=bool)
        if len(pairs):
            present[pairs[:, 0], pairs[:, 1]] = True
        free_u, free_i = np.nonzero(~present)
        edges = np.stack([free_u, free_i], axis=1)
        if cap is not None and cap < len(edges):
            rng = np.random.default_rng(seed)
            pick = np.sort(rng.choice(len(edges), size=cap, replace=False))
            edges = edges[pick]
    else:
        raise GraphError(f"unknown perturbation kind {kind!r}")
    if len(edges) == 0:
        raise GraphError(f"no candidate edges for kind {kind!r}")
    return CandidateEdgeSet(kind, edges)


def init_perturbation(cands: CandidateEdgeSet, eps0: float = 0.1) -> PerturbationVector:
    """Initial weights that leave the adjacency untouched after binarization."""
    sign = 1.0 if cands.kind == "deletion" else -1.0
    return PerturbationVector(np.full(len(cands), sign * eps0), cands.kind)


def binarize(pvec: PerturbationVector) -> np.ndarray:
    """0/1 view: sigmoid(w) >= 0.5, i.e. w >= 0."""
    if not np.all(np.isfinite(pvec.weights)):
        raise GraphError("non-finite perturbation weight")
    return (pvec.weights >= 0.0).astype(np.float64)


def relax(pvec: PerturbationVector) -> np.ndarray:
    """Sigmoid view of the weights, for the differentiable forward pass."""
    return 1.0 / (1.0 + np.exp(-pvec.weights))


def apply_perturbation(adj: AdjacencyMatrix, cands: CandidateEdgeSet, values) -> AdjacencyMatrix:
    """Substitute candidate entries of A with ``values`` (0/1 or relaxed)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(cands),):
        raise GraphError(f"expected {len(cands)} values, got shape {values.shape}")
    mat = adj.matrix.tolil(copy=True)
    rows = cands.edges[:, 0]
    cols = adj.n_users + cands.edges[:, 1]
    mat[rows, cols] = values
    mat[cols, rows] = values
    out = mat.tocsr()
    out.eliminate_zeros()
    return AdjacencyMatrix(adj.n_users, adj.n_items, out)


def candidate_values(adj: AdjacencyMatrix, cands: CandidateEdgeSet) -> np.ndarray:
    """Current adjacency values at the candidate positions."""
    return np.asarray(
        adj.matrix[cands.edges[:, 0], adj.n_users + cands.edges[:, 1]]
    ).ravel()


def perturbation_distance(adj: AdjacencyMatrix, cands: CandidateEdgeSet, values) -> float:
    """L1 distance between A and its perturbed view, restricted to candidates.

    On binarized values this is exactly the number of flipped edges.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (len(cands),):
        raise GraphError(f"expected {len(cands)} values, got shape {values.shape}")
    orig = candidate_values(adj, cands)
    return float(np.abs(values - orig).sum())


def perturbation_distance_grad(
    adj: AdjacencyMatrix, cands: CandidateEdgeSet, pvec: PerturbationVector
) -> tuple[float, np.ndarray]:
    """Distance of the relaxed view and its gradient w.r.t. the raw weights."""
    relaxed = relax(pvec)
    orig = candidate_values(adj, cands)
    gamma = float(np.abs(relaxed - orig).sum())
    grad = np.sign(relaxed - orig) * relaxed * (1.0 - relaxed)
    return gamma, grad
