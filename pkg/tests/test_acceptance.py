"""End-to-end acceptance gate.

Each test covers one release criterion and prints a single pass/fail line so
the suite output doubles as a checklist. Brute-force oracles live in
``oracles.py`` and are independent of the library code paths.
"""

import json
import os
import time

import numpy as np
import pytest
import torch

from fairrobust import attack as atk
from fairrobust import cli
from fairrobust import data as dt
from fairrobust import graph as gr
from fairrobust import metrics as mt
from fairrobust import model as mdl
from fairrobust import report as rpt

from oracles import (
    brute_dp,
    brute_edge_impact,
    brute_exposure,
    brute_ndcg,
    brute_precision,
    brute_visibility,
)


def _verdict(capfd, name, fn):
    try:
        fn()
    except BaseException:
        with capfd.disabled():
            print(f"[FAIL] {name}")
        raise
    with capfd.disabled():
        print(f"[PASS] {name}")


@pytest.fixture(scope="module")
def tiny_problem_factory(tiny_split, tiny_params):
    """AttackProblem builder on the 6-user x 8-item instance."""
    ds = tiny_split.dataset
    consumer = dt.partition_consumers(ds, "group")
    provider = dt.partition_providers_by_popularity(ds, tiny_split.train)

    def make(op, kind="deletion", lam=0.01, layers=2):
        part = consumer if op in mt.CONSUMER_OPS else provider
        mcfg = mdl.RecModelConfig(d=4, layers=layers, epochs=3, seed=1, k_eval=3)
        cfg = atk.AttackConfig(op=op, kind=kind, attribute="group", lam=lam, cap=20, seed=0)
        return atk.AttackProblem(tiny_split, tiny_params, cfg, part, mcfg)

    return make


def test_identity_zero_perturbation(capfd, tiny_problem_factory):
    def check():
        t0 = time.perf_counter()
        for kind in ("deletion", "addition"):
            problem = tiny_problem_factory("CP", kind=kind)
            p0 = gr.binarize(gr.init_perturbation(problem.cands, 0.1))
            a_tilde = gr.apply_perturbation(problem.adj, problem.cands, p0)
            assert (a_tilde.matrix != problem.adj.matrix).nnz == 0  # A-tilde == A
            dp0, n0 = problem.exact_evaluate(p0)
            assert n0 == 0
            assert dp0 - problem.m_original == 0.0  # exact
        assert time.perf_counter() - t0 < 1.0

    _verdict(capfd, "identity: initialized perturbation leaves the graph and gap unchanged", check)


def test_gradient_correctness(capfd, tiny_problem_factory):
    def check():
        h = 1e-5
        rng = np.random.default_rng(0)
        for op in ("CP", "CS", "PE", "PV"):
            for layers in (1, 2):
                for lam in (0.0, 0.01):
                    problem = tiny_problem_factory(op, lam=lam, layers=layers)
                    w = rng.normal(scale=0.4, size=len(problem.cands))
                    p_hat = torch.tensor(w, dtype=torch.float64, requires_grad=True)
                    loss, _, _ = problem.relaxed_loss(p_hat)
                    loss.backward()
                    grad = p_hat.grad.numpy()
                    for j in range(len(w)):
                        wp, wm = w.copy(), w.copy()
                        wp[j] += h
                        wm[j] -= h
                        lp = float(problem.relaxed_loss(torch.tensor(wp, dtype=torch.float64))[0])
                        lm = float(problem.relaxed_loss(torch.tensor(wm, dtype=torch.float64))[0])
                        fd = (lp - lm) / (2 * h)
                        scale = max(abs(fd), abs(grad[j]), 1e-8)
                        assert abs(grad[j] - fd) / scale < 1e-4, (op, layers, lam, j)

    _verdict(capfd, "gradients: all four surrogate objectives match finite differences (<1e-4)", check)


def test_metric_oracles(capfd):
    def check():
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n_items = int(rng.integers(4, 15))
            k = int(rng.integers(1, n_items))
            ranked = rng.permutation(n_items)[:k]
            relevant = set(rng.choice(n_items, size=int(rng.integers(0, n_items)), replace=False).tolist())
            assert abs(mt.ndcg_at_k(ranked, relevant, k) - brute_ndcg(ranked, relevant, k)) <= 1e-12
            assert abs(mt.precision_at_k(ranked, relevant, k) - brute_precision(ranked, relevant, k)) <= 1e-12

            n_users = int(rng.integers(1, 6))
            lists = [rng.permutation(n_items)[:k] for _ in range(n_users)]
            g_size = int(rng.integers(1, n_items))
            group = rng.choice(n_items, size=g_size, replace=False)
            assert abs(mt.exposure(lists, group, n_items) - brute_exposure(lists, group, n_items)) <= 1e-12
            assert abs(mt.visibility(lists, group, n_items, k) - brute_visibility(lists, group, n_items, k)) <= 1e-12

            s1, s2 = rng.random(2)
            assert abs(mt.demographic_parity(s1, s2) - brute_dp(s1, s2)) <= 1e-12

            n_u = int(rng.integers(4, 10))
            split_at = int(rng.integers(1, n_u - 1))
            part = dt.GroupPartition("consumer", np.arange(split_at), np.arange(split_at, n_u),
                                     "g1", "g2", advantaged=1)
            edges = [(int(u), 0) for u in rng.integers(0, n_u, size=int(rng.integers(1, 9)))]
            ei = rpt.edge_impact(edges, part, advantaged=1)
            assert abs(ei.ei_advantaged - brute_edge_impact(edges, range(split_at), n_u, "user")) <= 1e-12
            assert abs(ei.ei_disadvantaged - brute_edge_impact(edges, range(split_at, n_u), n_u, "user")) <= 1e-12
            assert abs(ei.delta_ei - (ei.ei_advantaged - ei.ei_disadvantaged)) <= 1e-12

    _verdict(capfd, "oracles: ndcg/precision/exposure/visibility/DP/EI match brute force on 1000 instances", check)


def test_saturation_bounds(capfd):
    def check():
        n_items, k = 10, 2
        group = np.array([0, 1])  # |I1| = |I| / 5
        lists = [np.array([0, 1]) for _ in range(6)]
        assert abs(mt.exposure(lists, group, n_items) - 5.0) <= 1e-12
        assert abs(mt.visibility(lists, group, n_items, k) - 5.0) <= 1e-12

    _verdict(capfd, "saturation: fully captured top-k reaches exposure = visibility = |I|/|I1| = 5", check)


@pytest.fixture(scope="module")
def efficacy_setup():
    ds = dt.synth_generate(11, 200, 110, mean_interactions=12, group_bias=0.8, popularity_skew=1.2)
    split = dt.temporal_split(ds)
    mcfg = mdl.RecModelConfig(d=16, layers=2, epochs=10, seed=1, k_eval=10)
    params = mdl.bpr_train(split, mcfg)
    part = dt.partition_consumers(ds, "group")
    return split, params, part, mcfg


def test_directional_attack_efficacy(capfd, efficacy_setup):
    def check():
        split, params, part, mcfg = efficacy_setup
        assert split.dataset.n_users >= 200 and split.dataset.n_items >= 100
        t0 = time.perf_counter()
        cfg = atk.AttackConfig(op="CP", kind="deletion", attribute="group", lam=0.0,
                               lr=0.1, max_epochs=200)
        result = atk.run_attack(split, params, cfg, part, mcfg)
        best = result.best
        assert best is not None and best.delta > 0
        assert result.m_original > 0
        assert best.delta / result.m_original >= 0.5  # relative gap grows >= +50%

        sparse_cfg = atk.AttackConfig(op="CP", kind="deletion", attribute="group",
                                      lam=10.0, lr=0.1, max_epochs=200)
        sparse = atk.run_attack(split, params, sparse_cfg, part, mcfg)
        n_sparse = sparse.best.n_perturbed if sparse.best is not None else 0
        assert n_sparse < best.n_perturbed
        assert time.perf_counter() - t0 < 300

    _verdict(capfd, "efficacy: deletion attack widens the consumer gap >= +50%; "
                    "heavy sparsity penalty perturbs fewer edges", check)


def test_exhaustive_oracle_dominance(capfd):
    def check():
        t0 = time.perf_counter()
        ds = dt.synth_generate(2, 5, 6, mean_interactions=4, group_bias=1.5)
        split = dt.temporal_split(ds)
        mcfg = mdl.RecModelConfig(d=4, layers=2, epochs=5, seed=1, k_eval=3)
        params = mdl.bpr_train(split, mcfg)
        part = dt.partition_consumers(ds, "group")

        base_cfg = atk.AttackConfig(op="CP", attribute="group", lam=0.0)
        problem = atk.AttackProblem(split, params, base_cfg, part, mcfg)
        single_deltas = []
        for j in range(len(problem.cands)):
            p = problem.orig_values.copy()
            p[j] = 0.0
            dp, _ = problem.exact_evaluate(p)
            single_deltas.append(dp - problem.m_original)

        cfg = atk.AttackConfig(op="CP", kind="deletion", attribute="group",
                               lam=0.0, lr=0.1, gamma=1, max_epochs=100)
        result = atk.run_attack(split, params, cfg, part, mcfg)
        assert result.best is not None and result.best.n_perturbed == 1
        assert result.best.delta >= float(np.mean(single_deltas))
        assert time.perf_counter() - t0 < 60

    _verdict(capfd, "dominance: budget-1 attack beats the mean over all single-edge deletions", check)


def test_protocol_fidelity(capfd, tiny_split, tiny_params, tiny_dataset):
    def check():
        part = dt.partition_consumers(tiny_dataset, "group")
        mcfg = mdl.RecModelConfig(d=4, layers=2, epochs=3, seed=1, k_eval=3)
        cfg = atk.AttackConfig(op="CP", attribute="group", max_epochs=200, patience=15,
                               min_delta=0.001)

        def constant(epoch):
            return atk.IterationLog(epoch, 0, 0.0, 0.0, 0.1, 0.1, 0.0)

        flat = atk.run_attack(tiny_split, tiny_params, cfg, part, mcfg, step_fn=constant)
        assert len(flat.logs) == 16  # patience + 1

        def increasing(epoch):
            return atk.IterationLog(epoch, 1, 1.0, 1.0, 0.1, 0.1, 0.01 * epoch)

        rising = atk.run_attack(tiny_split, tiny_params, cfg, part, mcfg, step_fn=increasing)
        assert len(rising.logs) == 200

    _verdict(capfd, "protocol: flat gap stops at epoch 16, rising gap runs all 200", check)


def test_edge_impact_accounting(capfd):
    def check():
        # hand example: 4 of 5 edges on a 40%-representation group
        part = dt.GroupPartition("consumer", np.arange(4), np.arange(4, 10),
                                 "g1", "g2", advantaged=1)
        edges = [(0, 0), (1, 1), (2, 2), (3, 3), (8, 4)]
        ei = rpt.edge_impact(edges, part, advantaged=1)
        assert abs(ei.ei_advantaged - 2.0) <= 1e-12

        rng = np.random.default_rng(3)
        for _ in range(200):
            n_u = int(rng.integers(4, 12))
            split_at = int(rng.integers(1, n_u - 1))
            p = dt.GroupPartition("consumer", np.arange(split_at), np.arange(split_at, n_u),
                                  "g1", "g2", advantaged=1)
            e = [(int(u), 0) for u in rng.integers(0, n_u, size=int(rng.integers(1, 10)))]
            impact = rpt.edge_impact(e, p, advantaged=1)
            w1 = split_at / n_u
            weighted = w1 * impact.ei_advantaged + (1 - w1) * impact.ei_disadvantaged
            assert abs(weighted - 1.0) <= 1e-12

    _verdict(capfd, "edge impact: hand example gives EI = 2.0; representation-weighted mean is 1", check)


DETERMINISM_CFG = """
dataset.synthetic = true
dataset.seed = 3
dataset.n_users = 30
dataset.n_items = 20
dataset.mean_interactions = 10
dataset.group_bias = 1.0
consumer.attribute = group
model.d = 8
model.epochs = 4
model.k_eval = 5
attack.lambda = 0.0
attack.max_epochs = 10
attack.patience = 5
"""


def test_determinism(capfd, tmp_path):
    def check():
        outputs = []
        for run in ("a", "b"):
            root = tmp_path / run
            cfg_path = root / "run.cfg"
            root.mkdir()
            cfg_path.write_text(DETERMINISM_CFG + f"out = {root / 'runs'}\n")
            assert cli.main(["prepare", "--config", str(cfg_path)]) == 0
            assert cli.main(["train", "--config", str(cfg_path)]) == 0
            assert cli.main(["attack", "--config", str(cfg_path), "--op", "cp",
                             "--kind", "del", "--seed", "0"]) == 0
            run_dir = root / "runs" / "attack_cp_deletion"
            outputs.append(
                ((run_dir / "iterations.csv").read_bytes(), (run_dir / "result.json").read_bytes())
            )
        assert outputs[0][0] == outputs[1][0]
        assert outputs[0][1] == outputs[1][1]

    _verdict(capfd, "determinism: repeated pipeline runs give byte-identical iteration and result files", check)


@pytest.mark.skipif("ML1M_RATINGS" not in os.environ,
                    reason="set ML1M_RATINGS to the ratings TSV to run this long check")
def test_real_data_ranking_quality(capfd, tmp_path):
    """Informative, not gating: test NDCG@10 on the large real dataset."""

    def check():
        ds = dt.load_interactions(os.environ["ML1M_RATINGS"])
        ds = dt.filter_min_interactions(ds, 5)
        split = dt.temporal_split(ds)
        mcfg = mdl.RecModelConfig(d=64, layers=2, epochs=30, seed=0, k_eval=10)
        params = mdl.bpr_train(split, mcfg)
        from fairrobust.graph import build_adjacency, normalize_adjacency

        adj = normalize_adjacency(build_adjacency(split.train_pairs(), ds.n_users, ds.n_items))
        lists = mdl.recommend_topk(params, adj, 10, split.train_pairs(), layers=2)
        rel = mdl.relevance_sets(split.test_pairs(), ds.n_users)
        scores = [mt.ndcg_at_k(lists.items[u], rel[u], 10) for u in range(ds.n_users) if rel[u]]
        ndcg = float(np.mean(scores))
        assert 0.09 <= ndcg <= 0.16, ndcg

    _verdict(capfd, "real data: test NDCG@10 falls in the published range", check)
