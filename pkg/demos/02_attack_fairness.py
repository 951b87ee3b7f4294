"""Attack the fairness of a trained recommender by deleting graph edges.

Trains the model, freezes its weights, then optimizes a relaxed edge-level
perturbation that widens the consumer NDCG gap (CP). Prints the per-epoch
trend and the best perturbation found, plus a comparison run with a heavy
sparsity penalty (large lambda) that perturbs far fewer edges.
"""

from fairrobust import (
    AttackConfig,
    RecModelConfig,
    bpr_train,
    partition_consumers,
    run_attack,
    synth_generate,
    temporal_split,
)

ds = synth_generate(seed=11, n_users=200, n_items=110, mean_interactions=12,
                    popularity_skew=1.2, group_bias=0.8)
split = temporal_split(ds)
mcfg = RecModelConfig(d=16, layers=2, epochs=10, seed=1, k_eval=10)
params = bpr_train(split, mcfg)
part = partition_consumers(ds, "group")

cfg = AttackConfig(op="CP", kind="deletion", attribute="group", lam=0.0, lr=0.1,
                   max_epochs=200)
result = run_attack(split, params, cfg, part, mcfg)

print(f"original gap M = {result.m_original:.6f}, {result.n_candidates} candidate edges")
print("epoch  flips  DP(exact)   delta")
for log in result.logs[:: max(1, len(result.logs) // 10)]:
    print(f"{log.epoch:5d}  {log.n_perturbed:5d}  {log.dp_exact:.6f}  {log.delta:+.6f}")

best = result.best
print(f"\nbest: epoch {best.epoch}, {best.n_perturbed} deleted edges, "
      f"delta = {best.delta:+.6f} ({best.delta / result.m_original:+.1%} relative)")

sparse_cfg = AttackConfig(op="CP", kind="deletion", attribute="group", lam=10.0,
                          lr=0.1, max_epochs=200)
sparse = run_attack(split, params, sparse_cfg, part, mcfg)
n = sparse.best.n_perturbed if sparse.best is not None else 0
print(f"with lambda=10 the sparsity penalty keeps the perturbation to {n} edges")
