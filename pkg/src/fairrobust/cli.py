"""Command-line pipeline: prepare data, train the model, run attacks, report.

Commands are re-runnable from their on-disk artifacts; a run directory is
the only state. Config files are flat ``key = value`` text with dotted
keys (see ``demos/synthetic.cfg``); flags override file values.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import attack as atk
from . import data as dt
from . import metrics as mt
from . import model as mdl
from . import report as rpt

USAGE_ERROR, DATA_ERROR, RUNTIME_ERROR = 1, 2, 3

SWEEP_OPS = ("CP", "CS", "PE", "PV")
SWEEP_KINDS = ("deletion", "addition")


class UsageError(ValueError):
    pass


def parse_config(path) -> dict:
    """Flat key = value config; '#' starts a comment; keys are dotted."""
    cfg: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _get(cfg, key, default=None, cast=str):
    if key not in cfg or cfg[key] == "":
        return default
    raw = cfg[key]
    if cast is bool:
        return raw.lower() in ("1", "true", "yes")
    return cast(raw)


def _build_dataset(cfg) -> dt.Dataset:
    if _get(cfg, "dataset.synthetic", False, bool):
        ds = dt.synth_generate(
            seed=_get(cfg, "dataset.seed", 0, int),
            n_users=_get(cfg, "dataset.n_users", 100, int),
            n_items=_get(cfg, "dataset.n_items", 50, int),
            mean_interactions=_get(cfg, "dataset.mean_interactions", 20.0, float),
            popularity_skew=_get(cfg, "dataset.popularity_skew", 1.0, float),
            group_fraction=_get(cfg, "dataset.group_fraction", 0.5, float),
            group_bias=_get(cfg, "dataset.group_bias", 0.0, float),
            attribute=_get(cfg, "consumer.attribute", "group"),
        )
    else:
        path = _get(cfg, "dataset.path")
        if path is None:
            raise UsageError("config must set dataset.path or dataset.synthetic")
        ds = dt.load_interactions(
            path,
            delimiter=_get(cfg, "dataset.delimiter", "\t").replace("\\t", "\t"),
            user_col=_get(cfg, "dataset.user_col", "user"),
            item_col=_get(cfg, "dataset.item_col", "item"),
            time_col=_get(cfg, "dataset.time_col", "timestamp"),
            attribute_path=_get(cfg, "dataset.attribute_path"),
        )
    min_inter = _get(cfg, "dataset.min_interactions", 5, int)
    return dt.filter_min_interactions(ds, min_inter)


def _split_ratios(cfg) -> tuple[int, int, int]:
    raw = _get(cfg, "split.ratios", "7,1,2")
    parts = tuple(int(x) for x in raw.split(","))
    if len(parts) != 3:
        raise UsageError(f"split.ratios must have 3 entries, got {raw!r}")
    return parts


def _model_config(cfg, seed_override=None) -> mdl.RecModelConfig:
    return mdl.RecModelConfig(
        d=_get(cfg, "model.d", 16, int),
        layers=_get(cfg, "model.layers", 2, int),
        lr=_get(cfg, "model.lr", 0.05, float),
        epochs=_get(cfg, "model.epochs", 30, int),
        negatives=_get(cfg, "model.negatives", 1, int),
        seed=seed_override if seed_override is not None else _get(cfg, "model.seed", 0, int),
        k_eval=_get(cfg, "model.k_eval", 10, int),
        l2=_get(cfg, "model.l2", 1e-4, float),
        batch_size=_get(cfg, "model.batch_size", 1024, int),
    )


def _attack_config(cfg, args) -> atk.AttackConfig:
    return atk.AttackConfig(
        op=(args.op or _get(cfg, "attack.op", "CP")).upper(),
        kind=_expand_kind(args.kind or _get(cfg, "attack.kind", "deletion")),
        attribute=_get(cfg, "consumer.attribute"),
        lam=args.lam if args.lam is not None else _get(cfg, "attack.lambda", 0.01, float),
        lr=_get(cfg, "attack.lr", 0.1, float),
        max_epochs=args.epochs if args.epochs is not None else _get(cfg, "attack.max_epochs", 200, int),
        patience=args.patience if args.patience is not None else _get(cfg, "attack.patience", 15, int),
        min_delta=args.min_delta if args.min_delta is not None else _get(cfg, "attack.min_delta", 0.001, float),
        gamma=args.gamma if args.gamma is not None else _get(cfg, "attack.gamma", None, int),
        eps=_get(cfg, "attack.eps", None, float),
        eps0=_get(cfg, "attack.eps0", 0.1, float),
        tau=_get(cfg, "attack.tau", 1.0, float),
        cap=_get(cfg, "attack.cap", None, int),
        seed=args.seed if args.seed is not None else _get(cfg, "attack.seed", 0, int),
    )


def _expand_kind(kind: str) -> str:
    return {"add": "addition", "del": "deletion"}.get(kind, kind)


def _out_dir(cfg, args) -> Path:
    out = args.out or _get(cfg, "out", "runs/default")
    return Path(out)


def _save_split(split: dt.SplitDataset, data_dir: Path) -> None:
    ds = split.dataset
    for name, records in (("train", split.train), ("val", split.validation), ("test", split.test)):
        lines = [
            f"{ds.user_index[r.user_id]}\t{ds.item_index[r.item_id]}\t{r.timestamp}"
            for r in records
        ]
        (data_dir / f"{name}.tsv").write_text("\n".join(lines) + ("\n" if lines else ""))
    (data_dir / "split.json").write_text(json.dumps({"ratios": list(split.ratios)}))


def _load_split(data_dir: Path, ds: dt.Dataset) -> dt.SplitDataset:
    parts = {}
    for name in ("train", "val", "test"):
        records = []
        for line in (data_dir / f"{name}.tsv").read_text().splitlines():
            if not line.strip():
                continue
            u, i, t = line.split("\t")
            records.append(dt.InteractionRecord(ds.users[int(u)], ds.items[int(i)], int(t)))
        parts[name] = records
    ratios = tuple(json.loads((data_dir / "split.json").read_text())["ratios"])
    return dt.SplitDataset(ds, parts["train"], parts["val"], parts["test"], ratios)


def _partitions(ds: dt.Dataset, split: dt.SplitDataset, cfg) -> dict[str, dt.GroupPartition]:
    parts = {}
    attribute = _get(cfg, "consumer.attribute")
    if attribute is not None:
        parts["consumer"] = dt.partition_consumers(ds, attribute)
    parts["provider"] = dt.partition_providers_by_popularity(ds, split.train)
    return parts


def cmd_prepare(cfg, args) -> int:
    out = _out_dir(cfg, args)
    ds = _build_dataset(cfg)
    split = dt.temporal_split(ds, _split_ratios(cfg))
    parts = _partitions(ds, split, cfg)
    data_dir = out / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    dt.save_dataset(ds, data_dir, parts)
    _save_split(split, data_dir)
    print(f"prepared {ds.n_users} users, {ds.n_items} items, "
          f"{len(ds.interactions)} interactions -> {data_dir}")
    return 0


def cmd_train(cfg, args) -> int:
    out = _out_dir(cfg, args)
    data_dir = out / "data"
    ds, _ = dt.load_dataset(data_dir)
    split = _load_split(data_dir, ds)
    mcfg = _model_config(cfg, args.seed)
    params = mdl.bpr_train(split, mcfg)
    model_dir = out / "model"
    mdl.save_checkpoint(params, mcfg, model_dir)
    a_hat = _normalized_train_adjacency(split)
    lists = mdl.recommend_topk(params, a_hat, mcfg.k_eval, split.train_pairs(), layers=mcfg.layers)
    evaluation = {"schema_version": 1}
    for name, pairs in (("validation", split.validation_pairs()), ("test", split.test_pairs())):
        rel = mdl.relevance_sets(pairs, ds.n_users)
        ndcgs = [mt.ndcg_at_k(lists.items[u], rel[u], mcfg.k_eval) for u in range(ds.n_users) if rel[u]]
        precs = [mt.precision_at_k(lists.items[u], rel[u], mcfg.k_eval) for u in range(ds.n_users) if rel[u]]
        evaluation[name] = {
            f"ndcg@{mcfg.k_eval}": float(np.mean(ndcgs)) if ndcgs else 0.0,
            f"precision@{mcfg.k_eval}": float(np.mean(precs)) if precs else 0.0,
        }
    (model_dir / "validation.json").write_text(json.dumps(evaluation, indent=2, sort_keys=True))
    print(f"trained model -> {model_dir}; test N@{mcfg.k_eval} = "
          f"{evaluation['test'][f'ndcg@{mcfg.k_eval}']:.4f}")
    return 0


def _normalized_train_adjacency(split):
    from .graph import build_adjacency, normalize_adjacency

    ds = split.dataset
    return normalize_adjacency(build_adjacency(split.train_pairs(), ds.n_users, ds.n_items))


def _original_reports(split, params, mcfg, parts):
    """Exact metric reports on the unperturbed system; fills advantaged sides."""
    ds = split.dataset
    a_hat = _normalized_train_adjacency(split)
    lists = mdl.recommend_topk(params, a_hat, mcfg.k_eval, split.train_pairs(), layers=mcfg.layers)
    test_rel = [set() for _ in range(ds.n_users)]
    for u, i in split.test_pairs():
        test_rel[u].add(int(i))
    inputs = mt.ExactInputs(lists, test_rel, ds.n_items)
    reports = {}
    if "consumer" in parts:
        rep = mt.group_metric(mt.FairnessOperationalization("CP", k_eval=mcfg.k_eval),
                              "exact", inputs, parts["consumer"])
        parts["consumer"].advantaged = rep.advantaged
        reports["consumer"] = rep
    rep = mt.group_metric(mt.FairnessOperationalization("PE", k_eval=mcfg.k_eval),
                          "exact", inputs, parts["provider"])
    parts["provider"].advantaged = rep.advantaged
    reports["provider"] = rep
    return reports


def cmd_attack(cfg, args) -> int:
    out = _out_dir(cfg, args)
    acfg = _attack_config(cfg, args)
    ds, parts = dt.load_dataset(out / "data")
    split = _load_split(out / "data", ds)
    params, mcfg = mdl.load_checkpoint(out / "model")
    if params.user_embeddings.shape[0] != ds.n_users:
        raise UsageError("checkpoint does not match the prepared dataset")
    stakeholder = "consumer" if acfg.op in mt.CONSUMER_OPS else "provider"
    if stakeholder == "consumer" and "consumer" not in parts:
        raise dt.DataError("consumer operationalization needs consumer.attribute and attribute data")
    _original_reports(split, params, mcfg, parts)
    result = atk.run_attack(split, params, acfg, parts[stakeholder], mcfg)
    run_dir = out / f"attack_{acfg.op.lower()}_{acfg.kind}"
    _write_attack_artifacts(result, acfg, run_dir)
    rpt.emit_report(result, run_dir, parts.get("consumer"), parts["provider"])
    status = "no effective perturbation found" if result.no_effective_perturbation else (
        f"best delta = {result.best.delta:+.6g} with {result.best.n_perturbed} edges"
    )
    print(f"{acfg.op} {acfg.kind}: {status} -> {run_dir}")
    return 0


def _write_attack_artifacts(result: atk.AttackResult, acfg: atk.AttackConfig, run_dir: Path):
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(asdict(acfg), indent=2, sort_keys=True))
    # wall times are excluded so identical runs are byte-identical
    header = "epoch,n_perturbed,gamma,gamma_relaxed,dp_surrogate,dp_exact,delta"
    rows = [
        f"{l.epoch},{l.n_perturbed},{l.gamma!r},{l.gamma_relaxed!r},"
        f"{l.dp_surrogate!r},{l.dp_exact!r},{l.delta!r}"
        for l in result.logs
    ]
    (run_dir / "iterations.csv").write_text("\n".join([header] + rows) + "\n")
    lines = [f"{u} {i} {acfg.kind}" for u, i in result.perturbed_edges]
    (run_dir / "perturbed_edges.txt").write_text("\n".join(lines) + ("\n" if lines else ""))
    summary = {
        "schema_version": 1,
        "config": asdict(acfg),
        "m_original": result.m_original,
        "n_candidates": result.n_candidates,
        "best_epoch": result.best.epoch if result.best else None,
        "best_delta": result.best.delta if result.best else None,
        "best_n_perturbed": result.best.n_perturbed if result.best else None,
        "no_effective_perturbation": result.no_effective_perturbation,
    }
    (run_dir / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True))


def _load_attack_result(run_dir: Path) -> atk.AttackResult:
    summary = json.loads((run_dir / "result.json").read_text())
    acfg = atk.AttackConfig(**summary["config"])
    logs = []
    lines = (run_dir / "iterations.csv").read_text().splitlines()
    for line in lines[1:]:
        e, n, g, gr_, dps, dpe, d = line.split(",")
        logs.append(atk.IterationLog(int(e), int(n), float(g), float(gr_),
                                     float(dps), float(dpe), float(d)))
    edges = []
    for line in (run_dir / "perturbed_edges.txt").read_text().splitlines():
        if line.strip():
            u, i, _ = line.split()
            edges.append((int(u), int(i)))
    best = None
    if summary["best_epoch"] is not None:
        best = next(l for l in logs if l.epoch == summary["best_epoch"])
    return atk.AttackResult(
        logs=logs,
        best=best,
        perturbed_edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
        final_weights=np.array([]),
        m_original=summary["m_original"],
        n_candidates=summary["n_candidates"],
        no_effective_perturbation=summary["no_effective_perturbation"],
        config=acfg,
    )


def cmd_report(cfg, args) -> int:
    out = _out_dir(cfg, args)
    acfg = _attack_config(cfg, args)
    run_dir = out / f"attack_{acfg.op.lower()}_{acfg.kind}"
    if not (run_dir / "result.json").exists():
        raise UsageError(f"no attack artifacts in {run_dir}")
    ds, parts = dt.load_dataset(out / "data")
    result = _load_attack_result(run_dir)
    rpt.emit_report(result, run_dir, parts.get("consumer"), parts.get("provider"))
    print(f"report regenerated -> {run_dir}")
    return 0


def _sweep_one(payload) -> int:
    cfg, args_dict, op, kind = payload
    args = argparse.Namespace(**args_dict)
    args.op, args.kind = op, kind
    return cmd_attack(cfg, args)


def cmd_sweep(cfg, args) -> int:
    combos = [(op, kind) for op in SWEEP_OPS for kind in SWEEP_KINDS]
    args_dict = vars(args).copy()
    payloads = [(cfg, args_dict, op, kind) for op, kind in combos]
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            list(pool.map(_sweep_one, payloads))
    else:
        for payload in payloads:
            _sweep_one(payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairrobust",
                                     description="fairness-robustness attacks on graph recommenders")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("prepare", "train", "attack", "sweep", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--op", choices=["cp", "cs", "pe", "pv"], default=None)
        p.add_argument("--kind", choices=["add", "del", "addition", "deletion"], default=None)
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--patience", type=int, default=None)
        p.add_argument("--min-delta", dest="min_delta", type=float, default=None)
        p.add_argument("--gamma", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)
    return parser


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        cfg = parse_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except dt.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
