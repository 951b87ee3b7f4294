"""Post-attack analysis: relative fairness gaps, per-iteration trend data,
and edge-impact attribution of the perturbed edges to stakeholder groups.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attack import AttackResult, is_robust
from .data import GroupPartition

SCHEMA_VERSION = 1


class ReportError(RuntimeError):
    pass


@dataclass
class RobustnessReport:
    op: str
    kind: str
    m_original: float
    m_best: float | None
    delta: float | None
    relative_delta: float | None  # None when M_original == 0 (flagged undefined)
    robust: bool | None  # (gamma, eps) verdict when both are configured
    gamma: int | None
    eps: float | None
    n_perturbed_best: int | None
    no_effective_perturbation: bool

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "op": self.op,
            "kind": self.kind,
            "M_original": self.m_original,
            "M_best": self.m_best,
            "delta": self.delta,
            "relative_delta": self.relative_delta,
            "relative_delta_defined": self.relative_delta is not None,
            "robust": self.robust,
            "gamma": self.gamma,
            "eps": self.eps,
            "n_perturbed_best": self.n_perturbed_best,
            "no_effective_perturbation": self.no_effective_perturbation,
        }


@dataclass
class EdgeImpact:
    stakeholder: str
    ei_advantaged: float
    ei_disadvantaged: float
    delta_ei: float
    label_advantaged: str
    label_disadvantaged: str
    n_edges_advantaged: int
    n_edges_disadvantaged: int

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "stakeholder": self.stakeholder,
            "EI_adv": self.ei_advantaged,
            "EI_disadv": self.ei_disadvantaged,
            "delta_EI": self.delta_ei,
            "label_adv": self.label_advantaged,
            "label_disadv": self.label_disadvantaged,
            "n_edges_adv": self.n_edges_advantaged,
            "n_edges_disadv": self.n_edges_disadvantaged,
        }


def relative_delta(delta_value: float, m_original: float) -> float | None:
    """Delta scaled by the original fairness level; None when undefined."""
    if m_original == 0:
        return None
    return delta_value / m_original


def edge_impact(perturbed_edges, partition: GroupPartition, advantaged: int) -> EdgeImpact:
    """Share of perturbed edges on a group over the group's population share.

    Consumer partitions attribute each edge by its user endpoint, provider
    partitions by the item endpoint.
    """
    edges = np.asarray(perturbed_edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        raise ReportError("empty perturbation set")
    if advantaged not in (1, 2):
        raise ReportError("advantaged side must be 1 or 2")
    endpoints = edges[:, 0] if partition.stakeholder == "consumer" else edges[:, 1]
    n_total = len(edges)
    z_total = partition.size
    counts = {}
    for g in (1, 2):
        members = set(partition.group(g).tolist())
        counts[g] = int(sum(1 for e in endpoints if int(e) in members))
    if counts[1] + counts[2] != n_total:
        raise ReportError("edges with endpoints outside the partition")
    ei = {
        g: (counts[g] / n_total) / (len(partition.group(g)) / z_total)
        for g in (1, 2)
    }
    disadv = 2 if advantaged == 1 else 1
    labels = {1: partition.label_1, 2: partition.label_2}
    return EdgeImpact(
        stakeholder=partition.stakeholder,
        ei_advantaged=ei[advantaged],
        ei_disadvantaged=ei[disadv],
        delta_ei=ei[advantaged] - ei[disadv],
        label_advantaged=labels[advantaged],
        label_disadvantaged=labels[disadv],
        n_edges_advantaged=counts[advantaged],
        n_edges_disadvantaged=counts[disadv],
    )


def build_report(result: AttackResult) -> RobustnessReport:
    cfg = result.config
    best = result.best
    m_best = result.m_original + best.delta if best is not None else None
    d = best.delta if best is not None else None
    verdict = None
    if cfg is not None and cfg.gamma is not None and cfg.eps is not None:
        n_pert = best.n_perturbed if best is not None else 0
        verdict = is_robust(d if d is not None else 0.0, n_pert, cfg.eps, cfg.gamma)
    return RobustnessReport(
        op=cfg.op if cfg else "?",
        kind=cfg.kind if cfg else "?",
        m_original=result.m_original,
        m_best=m_best,
        delta=d,
        relative_delta=relative_delta(d, result.m_original) if d is not None else None,
        robust=verdict,
        gamma=cfg.gamma if cfg else None,
        eps=cfg.eps if cfg else None,
        n_perturbed_best=best.n_perturbed if best is not None else None,
        no_effective_perturbation=result.no_effective_perturbation,
    )


def trend_rows(result: AttackResult) -> list[dict]:
    """Per-epoch (fraction of candidates perturbed, DP, delta) trend data."""
    return [
        {
            "epoch": log.epoch,
            "fraction_perturbed": log.n_perturbed / result.n_candidates,
            "DP": log.dp_exact,
            "delta": log.delta,
        }
        for log in result.logs
    ]


def emit_report(
    result: AttackResult,
    out_dir,
    consumer_partition: GroupPartition | None = None,
    provider_partition: GroupPartition | None = None,
) -> dict:
    """Write the robustness report, trend CSV, and edge-impact attributions.

    Edge impact is emitted for every partition whose advantaged side is known,
    regardless of which stakeholder the attack targeted.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = build_report(result)
    (out_dir / "robustness_report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True)
    )
    with open(out_dir / "trend.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "fraction_perturbed", "DP", "delta"])
        writer.writeheader()
        for row in trend_rows(result):
            writer.writerow(row)
    impacts = {}
    if len(result.perturbed_edges):
        for name, part in (("consumer", consumer_partition), ("provider", provider_partition)):
            if part is not None and part.advantaged is not None:
                impacts[name] = edge_impact(result.perturbed_edges, part, part.advantaged)
    (out_dir / "edge_impact.json").write_text(
        json.dumps({k: v.to_dict() for k, v in impacts.items()}, indent=2, sort_keys=True)
    )
    return {"report": report, "edge_impact": impacts}
