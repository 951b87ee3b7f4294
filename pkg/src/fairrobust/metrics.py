"""Fairness metrics: exact evaluation (NDCG@k, P@k, Exposure, Visibility,
demographic parity) and the differentiable surrogates driving the attack.

Four operationalizations of demographic parity are supported:

* CP: disparity across consumer groups in NDCG@k (surrogate: smooth-rank NDCG)
* CS: disparity across consumer groups in Precision@k (surrogate: sigmoid+BCE)
* PE: disparity across provider groups in position-discounted exposure
  (surrogate: indicator replaced by sigmoid relevance, ranking detached)
* PV: disparity across provider groups in visibility (surrogate: BCE targeting
  group membership in the widened top-k)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import torch


class MetricError(ValueError):
    pass


CONSUMER_OPS = ("CP", "CS")
PROVIDER_OPS = ("PE", "PV")


@dataclass
class FairnessOperationalization:
    kind: str  # CP | CS | PE | PV
    k_eval: int = 10
    k_opt: int | None = None  # provider optimization cutoff; defaults to 10% of |I|
    tau: float = 1.0
    attribute: str | None = None  # consumer attribute name, for bookkeeping

    def __post_init__(self):
        self.kind = self.kind.upper()
        if self.kind not in CONSUMER_OPS + PROVIDER_OPS:
            raise MetricError(f"unknown operationalization {self.kind!r}")
        if self.tau <= 0:
            raise MetricError("tau must be positive")

    @property
    def stakeholder(self) -> str:
        return "consumer" if self.kind in CONSUMER_OPS else "provider"

    def resolve_k_opt(self, n_items: int) -> int:
        if self.k_opt is not None:
            return min(max(self.k_opt, self.k_eval), n_items)
        return min(max(self.k_eval, int(round(0.1 * n_items))), n_items)


@dataclass
class MetricReport:
    kind: str
    s_group1: float
    s_group2: float
    dp: float
    k_eval: int
    k_opt: int | None = None
    per_element: dict | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "S1": self.s_group1,
                "S2": self.s_group2,
                "DP": self.dp,
                "k_eval": self.k_eval,
                "k_opt": self.k_opt,
            },
            sort_keys=True,
        )

    @property
    def advantaged(self) -> int:
        return 1 if self.s_group1 >= self.s_group2 else 2


def ndcg_at_k(ranked_items, relevant, k: int) -> float:
    """Binary-gain NDCG with 1/log2(pos+1) discounts; 0 if nothing is relevant."""
    if k < 1:
        raise MetricError("k must be >= 1")
    relevant = set(int(i) for i in relevant)
    if not relevant:
        return 0.0
    dcg = sum(
        1.0 / math.log2(pos + 2)
        for pos, item in enumerate(ranked_items[:k])
        if int(item) in relevant
    )
    ideal = sum(1.0 / math.log2(pos + 2) for pos in range(min(k, len(relevant))))
    return dcg / ideal


def precision_at_k(ranked_items, relevant, k: int) -> float:
    if k < 1:
        raise MetricError("k must be >= 1")
    relevant = set(int(i) for i in relevant)
    hits = sum(1 for item in ranked_items[:k] if int(item) in relevant)
    return hits / k


def _position_discounts(length: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(length) + 2.0)


def exposure(lists, group, n_items: int) -> float:
    """Position-discounted, representation-normalized exposure of an item group.

    ``lists`` is a sequence of per-user ranked item arrays (top-k lists).
    """
    group = set(int(i) for i in group)
    if not group:
        raise MetricError("empty provider group")
    if not lists or all(len(lst) == 0 for lst in lists):
        raise MetricError("empty recommendation lists")
    total = 0.0
    for lst in lists:
        disc = _position_discounts(len(lst))
        hit = np.array([1.0 if int(i) in group else 0.0 for i in lst])
        total += float((hit * disc).sum() / disc.sum())
    return (n_items / len(group)) * total / len(lists)


def visibility(lists, group, n_items: int, k: int) -> float:
    """Position-agnostic counterpart of :func:`exposure` (slot-share ratio)."""
    group = set(int(i) for i in group)
    if not group:
        raise MetricError("empty provider group")
    if not lists or all(len(lst) == 0 for lst in lists):
        raise MetricError("empty recommendation lists")
    hits = sum(sum(1 for i in lst if int(i) in group) for lst in lists)
    return (n_items / len(group)) * hits / (len(lists) * k)


def demographic_parity(s1: float, s2: float) -> float:
    """Squared gap between the two group-level metric values; 0 means fair."""
    if not (math.isfinite(s1) and math.isfinite(s2)):
        raise MetricError("non-finite group metric values")
    return (s1 - s2) ** 2


# --- differentiable surrogates (torch) -------------------------------------


def smooth_ranks(scores: torch.Tensor, candidate_mask: torch.Tensor, tau: float) -> torch.Tensor:
    """Pairwise-preference ranks r(i) = 1 + sum_j sigmoid((s_j - s_i)/tau).

    ``scores``: (n_users, n_items); ``candidate_mask`` zeroes the contribution
    of non-candidate items (both as competitors and as ranked items).
    """
    diff = (scores.unsqueeze(2) - scores.unsqueeze(1)) / tau  # [u, j, i] = s_j - s_i
    pref = torch.sigmoid(diff)
    comp = candidate_mask.to(scores.dtype).unsqueeze(2)  # competitors j
    eye = torch.eye(scores.shape[1], dtype=scores.dtype, device=scores.device)
    ranks = 1.0 + ((pref * comp) * (1.0 - eye)).sum(dim=1)
    return ranks


def approx_ndcg(
    scores: torch.Tensor,
    relevant_mask: torch.Tensor,
    candidate_mask: torch.Tensor,
    tau: float = 1.0,
) -> torch.Tensor:
    """Smooth-rank NDCG per user over the full candidate set (no truncation).

    Approaches the exact (untruncated) NDCG of the induced ranking as
    tau -> 0. Users with no relevant items get 0.
    """
    ranks = smooth_ranks(scores, candidate_mask, tau)
    rel = (relevant_mask & candidate_mask).to(scores.dtype)
    dcg = (rel / torch.log2(ranks + 1.0)).sum(dim=1)
    n_rel = rel.sum(dim=1)
    max_rel = int(n_rel.max().item()) if len(n_rel) else 0
    if max_rel == 0:
        return torch.zeros_like(dcg)
    disc = 1.0 / torch.log2(torch.arange(max_rel, dtype=scores.dtype) + 2.0)
    cum = torch.cat([torch.zeros(1, dtype=scores.dtype), torch.cumsum(disc, 0)])
    ideal = cum[n_rel.long().clamp(max=max_rel)]
    out = torch.where(n_rel > 0, dcg / ideal.clamp(min=1e-12), torch.zeros_like(dcg))
    return out


def bce_topk_surrogate(
    scores: torch.Tensor,
    target_mask: torch.Tensor,
    candidate_mask: torch.Tensor,
) -> torch.Tensor:
    """Per-user mean BCE between sigmoid(scores) and the 0/1 target vector.

    Targets mark items that should appear in the top-k list; non-candidate
    items are excluded from the average.
    """
    if not bool(target_mask.any()):
        raise MetricError("empty surrogate target set")
    raw = torch.nn.functional.binary_cross_entropy_with_logits(
        scores, target_mask.to(scores.dtype), reduction="none"
    )
    cand = candidate_mask.to(scores.dtype)
    return (raw * cand).sum(dim=1) / cand.sum(dim=1).clamp(min=1.0)


def exposure_surrogate(
    scores: torch.Tensor,
    group_mask: torch.Tensor,
    k_opt: int,
    candidate_mask: torch.Tensor,
    n_items: int,
) -> torch.Tensor:
    """Exposure with the indicator replaced by sigmoid relevance.

    The top-k_opt ranking is detached (computed on masked scores with
    deterministic index tie-breaks); only the relevance terms carry gradient.
    """
    n_users = scores.shape[0]
    if k_opt > n_items:
        raise MetricError("k_opt exceeds the catalog size")
    group_size = int(group_mask.sum().item())
    if group_size == 0:
        raise MetricError("empty provider group")
    with torch.no_grad():
        masked = scores.clone()
        masked[~candidate_mask] = -np.inf
        # stable descending order with index tie-break
        order = torch.from_numpy(
            np.lexsort(
                (np.arange(n_items)[None, :].repeat(n_users, 0), -masked.numpy())
            )
        )
    top = order[:, :k_opt]  # [u, j] item ranked j-th
    disc = 1.0 / torch.log2(torch.arange(k_opt, dtype=scores.dtype) + 2.0)
    rel = torch.sigmoid(scores.gather(1, top))
    in_group = group_mask.to(scores.dtype)[top]
    num = (rel * in_group * disc).sum(dim=1)
    den = disc.sum()
    return (n_items / group_size) * (num / den).mean()


# --- group-level demographic parity ----------------------------------------


@dataclass
class ExactInputs:
    """What exact-mode group metrics consume."""

    lists: object  # RecommendationLists
    test_relevance: list[set]
    n_items: int


@dataclass
class SurrogateInputs:
    """What surrogate-mode group metrics consume (torch tensors)."""

    scores: torch.Tensor  # (|U|, |I|)
    relevant_mask: torch.Tensor  # bool, test items
    candidate_mask: torch.Tensor  # bool, non-train items
    n_items: int


def group_metric(op: FairnessOperationalization, mode: str, inputs, partition) -> object:
    """Group metric values and DP for one operationalization.

    ``mode``: "exact" returns a MetricReport; "surrogate" returns a
    differentiable (dp, s1, s2) tensor triple.
    """
    if partition.stakeholder != op.stakeholder:
        raise MetricError(
            f"partition stakeholder {partition.stakeholder!r} does not match {op.kind}"
        )
    if mode == "exact":
        return _group_metric_exact(op, inputs, partition)
    if mode == "surrogate":
        return _group_metric_surrogate(op, inputs, partition)
    raise MetricError(f"unknown mode {mode!r}")


def _group_metric_exact(op, inputs: ExactInputs, partition) -> MetricReport:
    lists = inputs.lists
    if op.kind in CONSUMER_OPS:
        metric = ndcg_at_k if op.kind == "CP" else precision_at_k
        per_user = np.full(len(lists.items), np.nan)
        for u in range(len(lists.items)):
            if inputs.test_relevance[u]:
                per_user[u] = metric(lists.items[u], inputs.test_relevance[u], op.k_eval)
        values = []
        for g in (1, 2):
            vals = per_user[partition.group(g)]
            vals = vals[~np.isnan(vals)]
            if len(vals) == 0:
                raise MetricError(f"group {g} has no users with evaluable lists")
            values.append(float(vals.mean()))
        s1, s2 = values
        per = {"per_user": per_user.tolist()}
    else:
        fn = (
            (lambda g: exposure(lists.items, g, inputs.n_items))
            if op.kind == "PE"
            else (lambda g: visibility(lists.items, g, inputs.n_items, lists.k))
        )
        s1, s2 = fn(partition.group(1)), fn(partition.group(2))
        per = None
    return MetricReport(
        op.kind, s1, s2, demographic_parity(s1, s2), op.k_eval,
        op.resolve_k_opt(inputs.n_items), per,
    )


def _group_user_mean(values: torch.Tensor, members: np.ndarray, valid: torch.Tensor) -> torch.Tensor:
    members_t = torch.tensor(members, dtype=torch.long)
    vals = values[members_t]
    mask = valid[members_t].to(values.dtype)
    if float(mask.sum()) == 0:
        raise MetricError("group has no users with evaluable lists")
    return (vals * mask).sum() / mask.sum()


def _group_metric_surrogate(op, inputs: SurrogateInputs, partition):
    scores, cand = inputs.scores, inputs.candidate_mask
    if op.kind == "CP":
        per_user = approx_ndcg(scores, inputs.relevant_mask, cand, op.tau)
        valid = (inputs.relevant_mask & cand).any(dim=1)
        s1 = _group_user_mean(per_user, partition.group(1), valid)
        s2 = _group_user_mean(per_user, partition.group(2), valid)
    elif op.kind == "CS":
        per_user = bce_topk_surrogate(scores, inputs.relevant_mask & cand, cand)
        valid = (inputs.relevant_mask & cand).any(dim=1)
        s1 = _group_user_mean(per_user, partition.group(1), valid)
        s2 = _group_user_mean(per_user, partition.group(2), valid)
    elif op.kind == "PE":
        k_opt = op.resolve_k_opt(inputs.n_items)
        s1 = exposure_surrogate(scores, _item_mask(partition.group(1), inputs.n_items), k_opt, cand, inputs.n_items)
        s2 = exposure_surrogate(scores, _item_mask(partition.group(2), inputs.n_items), k_opt, cand, inputs.n_items)
    else:  # PV
        s1 = _pv_group_loss(op, inputs, partition.group(1))
        s2 = _pv_group_loss(op, inputs, partition.group(2))
    dp = (s1 - s2) ** 2
    return dp, s1, s2


def _pv_group_loss(op, inputs: SurrogateInputs, members: np.ndarray) -> torch.Tensor:
    target = _item_mask(members, inputs.n_items).unsqueeze(0).expand_as(inputs.scores)
    return bce_topk_surrogate(inputs.scores, target, inputs.candidate_mask).mean()


def _item_mask(members: np.ndarray, n_items: int) -> torch.Tensor:
    mask = torch.zeros(n_items, dtype=torch.bool)
    mask[torch.tensor(np.asarray(members), dtype=torch.long)] = True
    return mask
