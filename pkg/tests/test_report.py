import json

import numpy as np
import pytest

from fairrobust import attack as atk
from fairrobust import report as rpt
from fairrobust.data import GroupPartition

from oracles import brute_edge_impact


def make_result(logs, best, edges, m_original, n_candidates, cfg=None, **kw):
    return atk.AttackResult(
        logs=logs,
        best=best,
        perturbed_edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        final_weights=np.zeros(n_candidates),
        m_original=m_original,
        n_candidates=n_candidates,
        no_effective_perturbation=best is None,
        config=cfg or atk.AttackConfig(op="CP", attribute="group", **kw),
    )


class TestRelativeDelta:
    def test_example(self):
        assert rpt.relative_delta(0.11, 0.01) == pytest.approx(11.0)

    def test_zero_delta(self):
        assert rpt.relative_delta(0.0, 0.5) == 0.0

    def test_undefined_when_original_zero(self):
        assert rpt.relative_delta(0.2, 0.0) is None


class TestEdgeImpact:
    @pytest.fixture()
    def consumer_part(self):
        # 10 users: group 1 = {0..4} (advantaged), group 2 = {5..9}
        return GroupPartition(
            "consumer", np.arange(5), np.arange(5, 10), "g1", "g2", advantaged=1
        )

    def test_hand_example(self, consumer_part):
        # 5 edges, 4 touch advantaged users: EI_adv = (4/5)/(5/10) = 1.6
        edges = [(0, 0), (1, 1), (2, 2), (3, 3), (7, 4)]
        ei = rpt.edge_impact(edges, consumer_part, advantaged=1)
        assert ei.ei_advantaged == pytest.approx((4 / 5) / (5 / 10))
        assert ei.ei_disadvantaged == pytest.approx((1 / 5) / (5 / 10))
        assert ei.delta_ei == pytest.approx(1.2)
        assert ei.n_edges_advantaged + ei.n_edges_disadvantaged == len(edges)

    def test_provider_partition_uses_item_endpoint(self):
        # 10 items, head = {0, 1}; 5 edges with 4 on head items:
        # EI_head = (4/5)/(2/10) = 4.0
        part = GroupPartition(
            "provider", np.array([0, 1]), np.arange(2, 10), "short-head", "long-tail",
            advantaged=1,
        )
        edges = [(0, 0), (1, 0), (2, 1), (3, 1), (4, 5)]
        ei = rpt.edge_impact(edges, part, advantaged=1)
        assert ei.ei_advantaged == pytest.approx(4.0)
        assert ei.ei_disadvantaged == pytest.approx((1 / 5) / (8 / 10))

    def test_matches_brute_oracle(self, consumer_part):
        rng = np.random.default_rng(0)
        for _ in range(50):
            users = rng.integers(0, 10, size=rng.integers(1, 12))
            edges = [(int(u), 0) for u in users]
            if not {u for u, _ in edges} & set(range(5)):
                continue  # oracle shares the same zero-count value; keep it simple
            ei = rpt.edge_impact(edges, consumer_part, advantaged=1)
            assert ei.ei_advantaged == pytest.approx(
                brute_edge_impact(edges, range(5), 10, "user"), abs=1e-12
            )
            assert ei.ei_disadvantaged == pytest.approx(
                brute_edge_impact(edges, range(5, 10), 10, "user"), abs=1e-12
            )

    def test_proportional_attack_has_unit_impact(self, consumer_part):
        # one edge per user: both shares equal population shares
        edges = [(u, 0) for u in range(10)]
        ei = rpt.edge_impact(edges, consumer_part, advantaged=1)
        assert ei.ei_advantaged == pytest.approx(1.0)
        assert ei.delta_ei == pytest.approx(0.0)

    def test_all_on_disadvantaged(self, consumer_part):
        edges = [(7, 0), (8, 1), (9, 2)]
        ei = rpt.edge_impact(edges, consumer_part, advantaged=1)
        assert ei.ei_advantaged == 0.0
        assert ei.delta_ei < 0

    def test_representation_weighted_mean_is_one(self, consumer_part):
        rng = np.random.default_rng(1)
        for _ in range(30):
            edges = [(int(u), 0) for u in rng.integers(0, 10, size=rng.integers(1, 9))]
            ei = rpt.edge_impact(edges, consumer_part, advantaged=1)
            w1 = len(consumer_part.members_1) / consumer_part.size
            w2 = len(consumer_part.members_2) / consumer_part.size
            assert w1 * ei.ei_advantaged + w2 * ei.ei_disadvantaged == pytest.approx(
                1.0, abs=1e-12
            )

    def test_empty_edges_error(self, consumer_part):
        with pytest.raises(rpt.ReportError):
            rpt.edge_impact([], consumer_part, advantaged=1)

    def test_foreign_endpoint_error(self, consumer_part):
        with pytest.raises(rpt.ReportError):
            rpt.edge_impact([(42, 0)], consumer_part, advantaged=1)


class TestBuildReport:
    def test_delta_and_relative(self):
        best = atk.IterationLog(3, 2, 2.0, 2.0, 0.1, 0.12, 0.11)
        result = make_result([best], best, [(0, 0), (1, 1)], 0.01, 10)
        report = rpt.build_report(result)
        assert report.m_best == pytest.approx(0.12)
        assert report.delta == pytest.approx(0.11)
        assert report.relative_delta == pytest.approx(11.0)
        assert report.robust is None  # gamma/eps unset

    def test_verdict_not_robust(self):
        best = atk.IterationLog(1, 1, 1.0, 1.0, 0.1, 0.6, 0.5)
        result = make_result([best], best, [(0, 0)], 0.1, 10, gamma=3, eps=0.2)
        report = rpt.build_report(result)
        assert report.robust is False

    def test_verdict_robust_when_no_effective_perturbation(self):
        result = make_result([], None, np.empty((0, 2)), 0.1, 10, gamma=3, eps=0.2)
        report = rpt.build_report(result)
        assert report.robust is True
        assert report.no_effective_perturbation
        assert report.m_best is None

    def test_undefined_relative_flagged(self):
        best = atk.IterationLog(1, 1, 1.0, 1.0, 0.1, 0.2, 0.2)
        result = make_result([best], best, [(0, 0)], 0.0, 10)
        d = rpt.build_report(result).to_dict()
        assert d["relative_delta"] is None
        assert d["relative_delta_defined"] is False


class TestTrendAndEmit:
    def _result(self):
        logs = [
            atk.IterationLog(1, 0, 0.0, 0.4, 0.01, 0.01, 0.0),
            atk.IterationLog(2, 2, 2.0, 1.1, 0.02, 0.03, 0.02),
            atk.IterationLog(3, 4, 4.0, 2.0, 0.05, 0.06, 0.05),
        ]
        return make_result(logs, logs[2], [(0, 0), (1, 1), (5, 2), (6, 3)], 0.01, 8)

    def test_trend_rows(self):
        rows = rpt.trend_rows(self._result())
        assert len(rows) == 3
        assert rows[1]["fraction_perturbed"] == pytest.approx(2 / 8)
        assert rows[2]["DP"] == pytest.approx(0.06)

    def test_emit_round_trip(self, tmp_path):
        part = GroupPartition(
            "consumer", np.arange(5), np.arange(5, 10), "g1", "g2", advantaged=2
        )
        out = rpt.emit_report(self._result(), tmp_path, consumer_partition=part)
        data = json.loads((tmp_path / "robustness_report.json").read_text())
        assert data["delta"] == pytest.approx(0.05)
        assert data["relative_delta"] == pytest.approx(5.0)
        impact = json.loads((tmp_path / "edge_impact.json").read_text())
        assert "consumer" in impact
        # advantaged = group 2 (users 5..9) holds 2 of the 4 edges
        assert impact["consumer"]["EI_adv"] == pytest.approx((2 / 4) / (5 / 10))
        trend = (tmp_path / "trend.csv").read_text().splitlines()
        assert trend[0] == "epoch,fraction_perturbed,DP,delta"
        assert len(trend) == 4
        assert out["report"].delta == pytest.approx(0.05)

    def test_emit_skips_impact_without_advantaged(self, tmp_path):
        part = GroupPartition("consumer", np.arange(5), np.arange(5, 10), "g1", "g2")
        rpt.emit_report(self._result(), tmp_path, consumer_partition=part)
        impact = json.loads((tmp_path / "edge_impact.json").read_text())
        assert impact == {}
