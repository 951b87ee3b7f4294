"""Gradient-guided edge perturbation against a frozen recommender.

The attack keeps the model weights fixed and trains only the perturbation
weights over candidate edges, substituting the perturbed adjacency at
inference time. The forward pass is relaxed (sigmoid entries, degrees
renormalized from the relaxed matrix) so gradients flow; reported fairness
values always come from the binarized perturbation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import graph as gr
from . import metrics as mt
from .model import ModelParams, propagate_torch, topk_from_scores


class AttackError(RuntimeError):
    pass


@dataclass
class AttackConfig:
    op: str = "CP"  # CP | CS | PE | PV
    kind: str = "deletion"  # deletion | addition
    attribute: str | None = None  # consumer attribute (CP/CS)
    lam: float = 0.01
    lr: float = 0.1
    max_epochs: int = 200
    patience: int = 15
    min_delta: float = 0.001
    gamma: int | None = None  # edge budget for best-iteration selection
    eps: float | None = None  # robustness threshold for the verdict
    eps0: float = 0.1
    tau: float = 1.0
    cap: int | None = None  # addition candidate cap
    seed: int = 0

    def __post_init__(self):
        self.op = self.op.upper()
        if self.lam < 0:
            raise AttackError("lambda must be >= 0")
        if self.max_epochs < 1 or self.patience < 1 or self.min_delta < 0:
            raise AttackError("invalid loop configuration")
        if self.kind not in ("deletion", "addition"):
            raise AttackError(f"unknown perturbation kind {self.kind!r}")


@dataclass
class IterationLog:
    epoch: int
    n_perturbed: int
    gamma: float  # distance on the binarized view (= flipped edge count)
    gamma_relaxed: float
    dp_surrogate: float
    dp_exact: float
    delta: float
    wall_time: float = 0.0


@dataclass
class AttackResult:
    logs: list[IterationLog]
    best: IterationLog | None
    perturbed_edges: np.ndarray  # (m, 2) edges flipped at the best iteration
    final_weights: np.ndarray
    m_original: float
    n_candidates: int
    no_effective_perturbation: bool = False
    config: AttackConfig | None = None


def objective(dp_surrogate: float, gamma: float, lam: float):
    """Minimization target: -DP + lambda * Gamma^2."""
    return -dp_surrogate + lam * gamma**2


def delta(m_perturbed: float, m_original: float) -> float:
    """Fairness gap between the perturbed and the original system."""
    return m_perturbed - m_original


def is_robust(delta_value: float, n_perturbed: int, eps: float, gamma: int) -> bool:
    """(gamma, eps)-robust: squared gap within eps under at most gamma flips."""
    return delta_value**2 <= eps and n_perturbed <= gamma


class AttackProblem:
    """Frozen-model attack state: tensors, candidate edges, and evaluators."""

    def __init__(self, split, params: ModelParams, cfg: AttackConfig, partition, model_cfg):
        ds = split.dataset
        self.cfg = cfg
        self.partition = partition
        self.layers = model_cfg.layers
        self.n_users, self.n_items = ds.n_users, ds.n_items
        self.op = mt.FairnessOperationalization(
            cfg.op, k_eval=model_cfg.k_eval, tau=cfg.tau, attribute=cfg.attribute
        )
        if self.op.stakeholder != partition.stakeholder:
            raise AttackError("partition does not match the operationalization")
        self.train_pairs = split.train_pairs()
        self.adj = gr.build_adjacency(self.train_pairs, self.n_users, self.n_items)
        self.cands = gr.candidate_edges(
            self.train_pairs, self.n_users, self.n_items, cfg.kind, cap=cfg.cap, seed=cfg.seed
        )
        self.orig_values = gr.candidate_values(self.adj, self.cands)

        # frozen tensors for the relaxed forward pass
        self.emb0 = torch.tensor(params.stacked(), dtype=torch.float64)
        self.base_dense = torch.tensor(self.adj.to_dense(), dtype=torch.float64)
        self.rows = torch.tensor(self.cands.edges[:, 0], dtype=torch.long)
        self.cols = torch.tensor(self.n_users + self.cands.edges[:, 1], dtype=torch.long)
        self.orig_t = torch.tensor(self.orig_values, dtype=torch.float64)

        cand_mask = np.ones((self.n_users, self.n_items), dtype=bool)
        if len(self.train_pairs):
            cand_mask[self.train_pairs[:, 0], self.train_pairs[:, 1]] = False
        rel_mask = np.zeros((self.n_users, self.n_items), dtype=bool)
        test_pairs = split.test_pairs()
        if len(test_pairs):
            rel_mask[test_pairs[:, 0], test_pairs[:, 1]] = True
        self.candidate_mask = torch.tensor(cand_mask)
        self.relevant_mask = torch.tensor(rel_mask)
        self.last_grad: np.ndarray | None = None
        self.test_relevance = [set(np.nonzero(rel_mask[u])[0].tolist()) for u in range(self.n_users)]
        self.m_original = self.exact_evaluate(gr.binarize(gr.init_perturbation(self.cands, cfg.eps0)))[0]

    def relaxed_adjacency(self, p_hat: torch.Tensor) -> torch.Tensor:
        relaxed = torch.sigmoid(p_hat)
        a_tilde = self.base_dense.clone()
        a_tilde[self.rows, self.cols] = relaxed
        a_tilde[self.cols, self.rows] = relaxed
        return a_tilde

    def relaxed_scores(self, p_hat: torch.Tensor) -> torch.Tensor:
        a_tilde = self.relaxed_adjacency(p_hat)
        deg = a_tilde.sum(dim=1)
        dinv = torch.where(deg > 0, deg.clamp(min=1e-300).pow(-0.5), torch.zeros_like(deg))
        a_hat = dinv.unsqueeze(1) * a_tilde * dinv.unsqueeze(0)
        final = propagate_torch(self.emb0, a_hat, self.layers)
        return final[: self.n_users] @ final[self.n_users :].T

    def relaxed_loss(self, p_hat: torch.Tensor):
        """Objective on the relaxed path; returns (loss, dp_surrogate, gamma)."""
        scores = self.relaxed_scores(p_hat)
        inputs = mt.SurrogateInputs(scores, self.relevant_mask, self.candidate_mask, self.n_items)
        dp, _, _ = mt.group_metric(self.op, "surrogate", inputs, self.partition)
        gamma = (torch.sigmoid(p_hat) - self.orig_t).abs().sum()
        return objective(dp, gamma, self.cfg.lam), dp, gamma

    def exact_evaluate(self, p_binary: np.ndarray) -> tuple[float, int]:
        """Exact DP of the binarized perturbation; returns (dp, flipped count)."""
        n_flipped = int(np.sum(p_binary != self.orig_values))
        a_tilde = gr.apply_perturbation(self.adj, self.cands, p_binary)
        a_hat = gr.normalize_adjacency(a_tilde)
        emb = self.emb0.numpy()
        params = ModelParams(emb[: self.n_users].copy(), emb[self.n_users :].copy())
        from .model import forward_scores

        scores = forward_scores(params, a_hat, layers=self.layers)
        lists = topk_from_scores(scores, self.op.k_eval, self.train_pairs)
        inputs = mt.ExactInputs(lists, self.test_relevance, self.n_items)
        report = mt.group_metric(self.op, "exact", inputs, self.partition)
        return report.dp, n_flipped

    def flipped_edges(self, p_binary: np.ndarray) -> np.ndarray:
        return self.cands.edges[p_binary != self.orig_values]

    def binarized(self, p_hat: torch.Tensor) -> np.ndarray:
        """Threshold the perturbation weights, projecting onto the edge budget.

        Without a budget this is the plain sign rule. With ``gamma`` set, only
        the gamma flips whose weights moved furthest past the threshold are
        kept, so every evaluated perturbation respects the budget.
        """
        with torch.no_grad():
            weights = p_hat.detach().numpy()
        p_binary = (weights >= 0).astype(np.float64)
        budget = self.cfg.gamma
        if budget is not None:
            flipped = np.nonzero(p_binary != self.orig_values)[0]
            if len(flipped) > budget:
                # rank candidate flips by gradient saliency; |p_hat| breaks ties
                score = np.abs(weights[flipped])
                if self.last_grad is not None:
                    score = np.abs(self.last_grad[flipped])
                keep = flipped[np.argsort(-score, kind="stable")[:budget]]
                p_binary = self.orig_values.copy()
                p_binary[keep] = 1.0 - self.orig_values[keep]
        return p_binary


def attack_step(problem: AttackProblem, p_hat: torch.Tensor, optimizer, epoch: int) -> IterationLog:
    """One gradient step on the perturbation weights plus exact evaluation."""
    t0 = time.perf_counter()
    loss, dp_surr, gamma_rel = problem.relaxed_loss(p_hat)
    optimizer.zero_grad()
    loss.backward()
    if not torch.isfinite(p_hat.grad).all():
        raise AttackError(f"non-finite gradient at epoch {epoch}")
    problem.last_grad = p_hat.grad.detach().numpy().copy()
    optimizer.step()
    dp_exact, n_flipped = problem.exact_evaluate(problem.binarized(p_hat))
    return IterationLog(
        epoch=epoch,
        n_perturbed=n_flipped,
        gamma=float(n_flipped),
        gamma_relaxed=float(gamma_rel.detach()),
        dp_surrogate=float(dp_surr.detach()),
        dp_exact=dp_exact,
        delta=delta(dp_exact, problem.m_original),
        wall_time=time.perf_counter() - t0,
    )


def _should_stop(deltas: list[float], patience: int, min_delta: float) -> bool:
    """Sliding-window early stop: no window improvement over the prior best."""
    if len(deltas) <= patience:
        return False
    best_before = max(deltas[: len(deltas) - patience])
    window_best = max(deltas[len(deltas) - patience :])
    return window_best - best_before < min_delta


def run_attack(split, params: ModelParams, cfg: AttackConfig, partition, model_cfg,
               step_fn=None) -> AttackResult:
    """Iterate attack steps with early stopping and best-iteration tracking.

    ``step_fn(epoch) -> IterationLog`` can replace the real step for protocol
    testing. The model parameters are never modified.
    """
    torch.manual_seed(cfg.seed)
    problem = AttackProblem(split, params, cfg, partition, model_cfg)
    pvec = gr.init_perturbation(problem.cands, cfg.eps0)
    p_hat = torch.tensor(pvec.weights, dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.Adam([p_hat], lr=cfg.lr)

    if step_fn is None:
        def step_fn(epoch):
            return attack_step(problem, p_hat, optimizer, epoch)

    logs: list[IterationLog] = []
    best: IterationLog | None = None
    best_edges = np.empty((0, 2), dtype=np.int64)
    deltas: list[float] = []
    for epoch in range(1, cfg.max_epochs + 1):
        log = step_fn(epoch)
        logs.append(log)
        deltas.append(log.delta)
        eligible = log.n_perturbed >= 1 and (cfg.gamma is None or log.n_perturbed <= cfg.gamma)
        if eligible and (best is None or abs(log.delta) > abs(best.delta)):
            best = log
            best_edges = problem.flipped_edges(problem.binarized(p_hat))
        if _should_stop(deltas, cfg.patience, cfg.min_delta):
            break
    return AttackResult(
        logs=logs,
        best=best,
        perturbed_edges=best_edges,
        final_weights=p_hat.detach().numpy().copy(),
        m_original=problem.m_original,
        n_candidates=len(problem.cands),
        no_effective_perturbation=best is None,
        config=cfg,
    )
