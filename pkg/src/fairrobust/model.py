"""LightGCN-style recommender: linear embedding propagation over the
normalized bipartite graph, BPR training, and top-k list generation.

The forward pass is linear in the adjacency, so the attack can
differentiate scores w.r.t. relaxed adjacency entries exactly (see
:func:`propagate_torch`). Inference-only paths stay in numpy/scipy.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .graph import AdjacencyMatrix, build_adjacency, normalize_adjacency
from .metrics import ndcg_at_k


class ModelError(ValueError):
    pass


@dataclass
class RecModelConfig:
    d: int = 16
    layers: int = 2
    lr: float = 0.05
    epochs: int = 30
    negatives: int = 1
    seed: int = 0
    k_eval: int = 10
    l2: float = 1e-4
    batch_size: int = 1024

    def __post_init__(self):
        if self.layers < 0:
            raise ModelError("layers must be >= 0")
        if self.k_eval < 1:
            raise ModelError("k_eval must be >= 1")


@dataclass
class ModelParams:
    user_embeddings: np.ndarray  # |U| x d
    item_embeddings: np.ndarray  # |I| x d

    def __post_init__(self):
        self.user_embeddings = np.asarray(self.user_embeddings, dtype=np.float64)
        self.item_embeddings = np.asarray(self.item_embeddings, dtype=np.float64)
        if not (np.isfinite(self.user_embeddings).all() and np.isfinite(self.item_embeddings).all()):
            raise ModelError("non-finite embedding entries")

    @property
    def d(self) -> int:
        return self.user_embeddings.shape[1]

    def stacked(self) -> np.ndarray:
        return np.vstack([self.user_embeddings, self.item_embeddings])


@dataclass
class RecommendationLists:
    """Per-user ranked item lists with scores, train items excluded."""

    items: list[np.ndarray]
    scores: list[np.ndarray]
    k: int
    short_users: list[int] = field(default_factory=list)  # users with < k eligible items


def init_params(n_users: int, n_items: int, cfg: RecModelConfig) -> ModelParams:
    """Seeded normal init with scale 0.1/sqrt(d)."""
    rng = np.random.default_rng(cfg.seed)
    scale = 0.1 / np.sqrt(cfg.d)
    return ModelParams(
        rng.normal(0.0, scale, size=(n_users, cfg.d)),
        rng.normal(0.0, scale, size=(n_items, cfg.d)),
    )


def propagate_torch(emb0: torch.Tensor, a_hat: torch.Tensor, layers: int) -> torch.Tensor:
    """Mean of the propagated layers E(0)..E(L); differentiable in both inputs."""
    out = emb0
    acc = emb0
    for _ in range(layers):
        out = a_hat @ out
        acc = acc + out
    return acc / (layers + 1)


def forward_scores(
    params: ModelParams,
    a_hat: AdjacencyMatrix,
    users=None,
    layers: int = 2,
) -> np.ndarray:
    """Score matrix (users x |I|) from propagated embeddings on ``a_hat``."""
    n_users, _ = params.user_embeddings.shape
    if a_hat.n != n_users + params.item_embeddings.shape[0]:
        raise ModelError("adjacency size does not match embedding tables")
    emb = params.stacked()
    out = emb
    acc = emb.copy()
    for _ in range(layers):
        out = a_hat.matrix @ out
        acc += out
    acc /= layers + 1
    user_final = acc[:n_users]
    item_final = acc[n_users:]
    if users is not None:
        user_final = user_final[np.asarray(users, dtype=np.int64)]
    return user_final @ item_final.T


def recommend_topk(
    params: ModelParams,
    a_hat: AdjacencyMatrix,
    k: int,
    exclude_pairs,
    layers: int = 2,
) -> RecommendationLists:
    """Top-k items per user by score, excluding train pairs, ties to lower index."""
    if k < 1:
        raise ModelError("k must be >= 1")
    scores = forward_scores(params, a_hat, layers=layers)
    return topk_from_scores(scores, k, exclude_pairs)


def topk_from_scores(scores: np.ndarray, k: int, exclude_pairs) -> RecommendationLists:
    """Deterministic top-k selection from a dense score matrix."""
    n_users, n_items = scores.shape
    eligible = np.ones((n_users, n_items), dtype=bool)
    pairs = np.asarray(exclude_pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs):
        eligible[pairs[:, 0], pairs[:, 1]] = False
    items, vals, short = [], [], []
    idx = np.arange(n_items)
    for u in range(n_users):
        mask = eligible[u]
        cand = idx[mask]
        order = np.lexsort((cand, -scores[u, mask]))
        take = cand[order[:k]]
        items.append(take)
        vals.append(scores[u, take])
        if len(take) < k:
            short.append(u)
    return RecommendationLists(items, vals, k, short)


def _ndcg_eval(lists: RecommendationLists, relevant_by_user: list[set], k: int) -> float:
    vals = [
        ndcg_at_k(lists.items[u], relevant_by_user[u], k)
        for u in range(len(lists.items))
        if relevant_by_user[u]
    ]
    return float(np.mean(vals)) if vals else 0.0


def relevance_sets(pairs, n_users: int) -> list[set]:
    """Per-user item sets from (user, item) pairs."""
    rel = [set() for _ in range(n_users)]
    for u, i in np.asarray(pairs, dtype=np.int64).reshape(-1, 2):
        rel[u].add(int(i))
    return rel


def bpr_train(split, cfg: RecModelConfig) -> ModelParams:
    """Train embeddings with BPR, keeping the params with best validation NDCG.

    Deterministic for a fixed seed: negatives come from a seeded numpy
    generator and all torch ops run on CPU in float64.
    """
    ds = split.dataset
    n_users, n_items = ds.n_users, ds.n_items
    if n_items < 2:
        raise ModelError("need at least 2 items for pairwise training")
    train_pairs = split.train_pairs()
    if len(train_pairs) == 0:
        raise ModelError("empty training set")
    adj = normalize_adjacency(build_adjacency(train_pairs, n_users, n_items))
    a_hat = _to_torch_sparse(adj)
    params0 = init_params(n_users, n_items, cfg)
    emb = torch.tensor(params0.stacked(), dtype=torch.float64, requires_grad=True)
    opt = torch.optim.Adam([emb], lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    pos_by_user = relevance_sets(train_pairs, n_users)
    val_rel = relevance_sets(split.validation_pairs(), n_users)
    has_val = any(val_rel)

    best_ndcg, best_emb = -1.0, emb.detach().clone()
    users_t = torch.tensor(train_pairs[:, 0], dtype=torch.long)
    pos_t = torch.tensor(train_pairs[:, 1], dtype=torch.long)
    n_pairs = len(train_pairs)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n_pairs)
        for start in range(0, n_pairs, cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            neg = _sample_negatives(rng, train_pairs[sel, 0], pos_by_user, n_items)
            final = propagate_torch(emb, a_hat, cfg.layers)
            u_f = final[users_t[sel]]
            i_pos = final[n_users + pos_t[sel]]
            i_neg = final[n_users + torch.tensor(neg, dtype=torch.long)]
            s_pos = (u_f * i_pos).sum(dim=1)
            s_neg = (u_f * i_neg).sum(dim=1)
            reg = emb[users_t[sel]].pow(2).sum() + i_pos.pow(2).sum() + i_neg.pow(2).sum()
            loss = -torch.nn.functional.logsigmoid(s_pos - s_neg).mean() + cfg.l2 * reg / len(sel)
            opt.zero_grad()
            loss.backward()
            opt.step()
        if has_val:
            cur = _validation_ndcg(emb.detach(), adj, n_users, train_pairs, val_rel, cfg)
            if cur > best_ndcg:
                best_ndcg, best_emb = cur, emb.detach().clone()
        else:
            best_emb = emb.detach().clone()
    final_np = best_emb.numpy()
    return ModelParams(final_np[:n_users].copy(), final_np[n_users:].copy())


def _sample_negatives(rng, users, pos_by_user, n_items: int) -> np.ndarray:
    neg = rng.integers(0, n_items, size=len(users))
    for j, u in enumerate(users):
        while int(neg[j]) in pos_by_user[u]:
            neg[j] = rng.integers(0, n_items)
    return neg


def _validation_ndcg(emb, adj, n_users, train_pairs, val_rel, cfg) -> float:
    final_np = emb.numpy()
    params = ModelParams(final_np[:n_users].copy(), final_np[n_users:].copy())
    lists = recommend_topk(params, adj, cfg.k_eval, train_pairs, layers=cfg.layers)
    return _ndcg_eval(lists, val_rel, cfg.k_eval)


def _to_torch_sparse(adj: AdjacencyMatrix) -> torch.Tensor:
    coo = adj.matrix.tocoo()
    idx = torch.tensor(np.vstack([coo.row, coo.col]), dtype=torch.long)
    val = torch.tensor(coo.data, dtype=torch.float64)
    return torch.sparse_coo_tensor(idx, val, size=(adj.n, adj.n), check_invariants=True).coalesce()


def save_checkpoint(params: ModelParams, cfg: RecModelConfig, out_dir) -> None:
    """Embedding tables as npz plus the config as JSON; round-trips bit-exact."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.savez(out_dir / "embeddings.npz", user=params.user_embeddings, item=params.item_embeddings)
    meta = {"schema_version": 1, "config": asdict(cfg)}
    (out_dir / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_checkpoint(in_dir) -> tuple[ModelParams, RecModelConfig]:
    in_dir = Path(in_dir)
    arrays = np.load(in_dir / "embeddings.npz")
    meta = json.loads((in_dir / "model.json").read_text())
    return ModelParams(arrays["user"], arrays["item"]), RecModelConfig(**meta["config"])
