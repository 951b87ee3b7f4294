"""Train a graph collaborative-filtering model and inspect group fairness.

Generates a synthetic dataset whose group-1 users concentrate on popular
items, trains the embedding-propagation model with BPR, and reports the
four fairness operationalizations on the unperturbed system:

  CP / CS  consumer-side gaps in NDCG@k / Precision@k
  PE / PV  provider-side gaps in exposure / visibility
"""

import numpy as np

from fairrobust import (
    ExactInputs,
    FairnessOperationalization,
    RecModelConfig,
    bpr_train,
    build_adjacency,
    group_metric,
    normalize_adjacency,
    partition_consumers,
    partition_providers_by_popularity,
    recommend_topk,
    synth_generate,
    temporal_split,
)

ds = synth_generate(seed=11, n_users=200, n_items=110, mean_interactions=12,
                    popularity_skew=1.2, group_bias=0.8)
split = temporal_split(ds)
print(f"{ds.n_users} users, {ds.n_items} items, {len(ds.interactions)} interactions")
print(f"split sizes: train={len(split.train)} val={len(split.validation)} test={len(split.test)}")

cfg = RecModelConfig(d=16, layers=2, epochs=10, seed=1, k_eval=10)
params = bpr_train(split, cfg)

a_hat = normalize_adjacency(build_adjacency(split.train_pairs(), ds.n_users, ds.n_items))
lists = recommend_topk(params, a_hat, cfg.k_eval, split.train_pairs(), layers=cfg.layers)
test_rel = [set() for _ in range(ds.n_users)]
for u, i in split.test_pairs():
    test_rel[u].add(int(i))
inputs = ExactInputs(lists, test_rel, ds.n_items)

consumer = partition_consumers(ds, "group")
provider = partition_providers_by_popularity(ds, split.train)

print("\noriginal-system fairness (S1, S2, squared gap):")
for kind in ("CP", "CS", "PE", "PV"):
    part = consumer if kind in ("CP", "CS") else provider
    op = FairnessOperationalization(kind, k_eval=cfg.k_eval)
    rep = group_metric(op, "exact", inputs, part)
    print(f"  {kind}: S1={rep.s_group1:.4f}  S2={rep.s_group2:.4f}  DP={rep.dp:.6f}"
          f"  (advantaged: group {rep.advantaged})")
