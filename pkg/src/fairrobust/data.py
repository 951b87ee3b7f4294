"""Interaction data: loading, filtering, temporal splitting, group partitions.

All functions are pure; a Dataset is never mutated after construction.
Dense user/item indices are assigned by first appearance in the input so
that reloading the same file always yields the same index maps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or degenerate input data."""


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise DataError("user_id and item_id must be non-empty")
        if self.timestamp < 0:
            raise DataError("timestamp must be >= 0")


@dataclass
class Dataset:
    """Deduplicated interactions with dense, deterministic index maps."""

    users: list[str]
    items: list[str]
    interactions: list[InteractionRecord]
    user_attributes: dict[str, dict[str, str]] = field(default_factory=dict)

    def __post_init__(self):
        self.user_index = {u: k for k, u in enumerate(self.users)}
        self.item_index = {i: k for k, i in enumerate(self.items)}
        if len(self.user_index) != len(self.users) or len(self.item_index) != len(self.items):
            raise DataError("duplicate user or item ids")
        for rec in self.interactions:
            if rec.user_id not in self.user_index or rec.item_id not in self.item_index:
                raise DataError(f"interaction references unknown node: {rec}")

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def interaction_pairs(self) -> np.ndarray:
        """(|E|, 3) int array of (user_index, item_index, timestamp)."""
        if not self.interactions:
            return np.empty((0, 3), dtype=np.int64)
        return np.array(
            [
                (self.user_index[r.user_id], self.item_index[r.item_id], r.timestamp)
                for r in self.interactions
            ],
            dtype=np.int64,
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.users == other.users
            and self.items == other.items
            and self.interactions == other.interactions
            and self.user_attributes == other.user_attributes
        )


@dataclass
class SplitDataset:
    dataset: Dataset
    train: list[InteractionRecord]
    validation: list[InteractionRecord]
    test: list[InteractionRecord]
    ratios: tuple[int, int, int] = (7, 1, 2)

    def _pairs(self, records) -> np.ndarray:
        ds = self.dataset
        if not records:
            return np.empty((0, 2), dtype=np.int64)
        return np.array(
            [(ds.user_index[r.user_id], ds.item_index[r.item_id]) for r in records],
            dtype=np.int64,
        )

    def train_pairs(self) -> np.ndarray:
        return self._pairs(self.train)

    def validation_pairs(self) -> np.ndarray:
        return self._pairs(self.validation)

    def test_pairs(self) -> np.ndarray:
        return self._pairs(self.test)


@dataclass
class GroupPartition:
    """Binary split of consumers (by attribute) or providers (by popularity).

    ``advantaged`` is filled after the original system has been evaluated:
    1 or 2, naming the group with the higher metric value.
    """

    stakeholder: str  # "consumer" | "provider"
    members_1: np.ndarray
    members_2: np.ndarray
    label_1: str
    label_2: str
    advantaged: int | None = None

    def __post_init__(self):
        self.members_1 = np.asarray(self.members_1, dtype=np.int64)
        self.members_2 = np.asarray(self.members_2, dtype=np.int64)
        if self.stakeholder not in ("consumer", "provider"):
            raise DataError(f"unknown stakeholder {self.stakeholder!r}")
        if len(self.members_1) == 0 or len(self.members_2) == 0:
            raise DataError("both partition groups must be nonempty")
        if np.intersect1d(self.members_1, self.members_2).size > 0:
            raise DataError("partition groups must be disjoint")

    @property
    def size(self) -> int:
        return len(self.members_1) + len(self.members_2)

    def group(self, which: int) -> np.ndarray:
        return self.members_1 if which == 1 else self.members_2

    def membership_of(self, index: int) -> int:
        return 1 if index in set(self.members_1.tolist()) else 2


def _build_dataset(records, attributes=None) -> Dataset:
    """Assign dense indices by first appearance and collapse duplicate pairs."""
    users: list[str] = []
    items: list[str] = []
    seen_u: dict[str, int] = {}
    seen_i: dict[str, int] = {}
    # (u, i) -> position in `dedup`, keeping latest timestamp
    pair_pos: dict[tuple[str, str], int] = {}
    dedup: list[InteractionRecord] = []
    for rec in records:
        if rec.user_id not in seen_u:
            seen_u[rec.user_id] = len(users)
            users.append(rec.user_id)
        if rec.item_id not in seen_i:
            seen_i[rec.item_id] = len(items)
            items.append(rec.item_id)
        key = (rec.user_id, rec.item_id)
        if key in pair_pos:
            j = pair_pos[key]
            if rec.timestamp > dedup[j].timestamp:
                dedup[j] = rec
        else:
            pair_pos[key] = len(dedup)
            dedup.append(rec)
    return Dataset(users, items, dedup, attributes or {})


def load_interactions(
    path,
    delimiter: str = "\t",
    user_col: str = "user",
    item_col: str = "item",
    time_col: str = "timestamp",
    attribute_path=None,
) -> Dataset:
    """Read a delimited interaction file with a header row.

    Duplicate (user, item) pairs are collapsed keeping the latest timestamp.
    An optional attribute file has columns (user_id, attribute_name, label).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise DataError(f"empty file: {path}")
    header = lines[0].split(delimiter)
    try:
        cu, ci, ct = header.index(user_col), header.index(item_col), header.index(time_col)
    except ValueError as exc:
        raise DataError(f"missing column in header {header}: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(delimiter)
        if len(parts) <= max(cu, ci, ct):
            raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(parts)}")
        try:
            records.append(InteractionRecord(parts[cu], parts[ci], int(float(parts[ct]))))
        except (ValueError, DataError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not records:
        raise DataError(f"no interactions in {path}")
    attributes: dict[str, dict[str, str]] = {}
    if attribute_path is not None:
        for lineno, line in enumerate(Path(attribute_path).read_text().splitlines()[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(delimiter)
            if len(parts) < 3:
                raise DataError(f"{attribute_path}:{lineno}: expected 3 columns")
            attributes.setdefault(parts[0], {})[parts[1]] = parts[2]
    return _build_dataset(records, attributes)


def filter_min_interactions(ds: Dataset, min_count: int) -> Dataset:
    """Drop users with fewer than ``min_count`` interactions, then orphan items."""
    if min_count < 1:
        raise DataError("min_count must be >= 1")
    counts: dict[str, int] = {}
    for rec in ds.interactions:
        counts[rec.user_id] = counts.get(rec.user_id, 0) + 1
    keep = {u for u, c in counts.items() if c >= min_count}
    records = [r for r in ds.interactions if r.user_id in keep]
    if not records:
        raise DataError("filtering left an empty dataset")
    attrs = {u: a for u, a in ds.user_attributes.items() if u in keep}
    return _build_dataset(records, attrs)


def temporal_split(ds: Dataset, ratios: tuple[int, int, int] = (7, 1, 2)) -> SplitDataset:
    """Per-user chronological split.

    With fractions (ft, fv) from the ratios: train = floor(ft*n) (at least 1),
    val = floor(fv*n), test = the remainder. Ties in timestamp keep the stable
    input order.
    """
    total = sum(ratios)
    if total <= 0 or any(r < 0 for r in ratios):
        raise DataError(f"invalid split ratios {ratios}")
    ft, fv = ratios[0] / total, ratios[1] / total
    by_user: dict[str, list[InteractionRecord]] = {}
    for rec in ds.interactions:
        by_user.setdefault(rec.user_id, []).append(rec)
    train, val, test = [], [], []
    for user in ds.users:
        recs = sorted(by_user.get(user, []), key=lambda r: r.timestamp)  # stable
        n = len(recs)
        if n == 0:
            continue
        n_train = max(1, math.floor(ft * n))
        n_val = math.floor(fv * n)
        if n_train + n_val > n:
            n_val = n - n_train
        train.extend(recs[:n_train])
        val.extend(recs[n_train : n_train + n_val])
        test.extend(recs[n_train + n_val :])
    return SplitDataset(ds, train, val, test, tuple(ratios))


def partition_consumers(ds: Dataset, attribute: str) -> GroupPartition:
    """Partition users by a binary attribute; group 1 takes the lower sorted label."""
    labels: dict[str, list[int]] = {}
    for idx, user in enumerate(ds.users):
        attrs = ds.user_attributes.get(user, {})
        if attribute not in attrs:
            raise DataError(f"user {user!r} is missing attribute {attribute!r}")
        labels.setdefault(attrs[attribute], []).append(idx)
    if len(labels) != 2:
        raise DataError(
            f"attribute {attribute!r} must have exactly 2 labels, got {sorted(labels)}"
        )
    l1, l2 = sorted(labels)
    return GroupPartition("consumer", np.array(labels[l1]), np.array(labels[l2]), l1, l2)


def partition_providers_by_popularity(ds: Dataset, train=None) -> GroupPartition:
    """Short-head / long-tail item split with |I1| = round(|I|/5).

    Popularity is the training interaction count (falls back to all
    interactions); ties go to the lower item index.
    """
    n_items = ds.n_items
    if n_items < 5:
        raise DataError("need at least 5 items for a 1:4 provider split")
    records = train if train is not None else ds.interactions
    counts = np.zeros(n_items, dtype=np.int64)
    for rec in records:
        counts[ds.item_index[rec.item_id]] += 1
    order = np.lexsort((np.arange(n_items), -counts))
    n1 = max(1, int(round(n_items / 5)))
    head = np.sort(order[:n1])
    tail = np.sort(order[n1:])
    return GroupPartition("provider", head, tail, "short-head", "long-tail")


def synth_generate(
    seed: int,
    n_users: int,
    n_items: int,
    mean_interactions: float = 20.0,
    popularity_skew: float = 1.0,
    group_fraction: float = 0.5,
    group_bias: float = 0.0,
    attribute: str = "group",
) -> Dataset:
    """Deterministic synthetic dataset with controllable skew and group gap.

    Item popularity follows a power law with exponent ``popularity_skew``.
    Users are split into two attribute groups ("g1" fraction
    ``group_fraction``); ``group_bias`` >= 0 sharpens group-1 users'
    concentration on popular items, creating a utility gap a trained model
    will reproduce (group-1 behaviour is easier to predict).
    """
    if n_users < 2 or n_items < 2:
        raise DataError("need at least 2 users and 2 items")
    if mean_interactions <= 0:
        raise DataError("mean_interactions must be positive")
    rng = np.random.default_rng(seed)
    base = (np.arange(1, n_items + 1, dtype=np.float64)) ** (-popularity_skew)
    perm = rng.permutation(n_items)  # decouple popularity from item index
    records = []
    attributes: dict[str, dict[str, str]] = {}
    n_g1 = int(round(group_fraction * n_users))
    group_of = np.array([1] * n_g1 + [2] * (n_users - n_g1))
    rng.shuffle(group_of)
    for u in range(n_users):
        g = group_of[u]
        sharp = 1.0 + (group_bias if g == 1 else 0.0)
        weights = base**sharp
        weights = weights / weights.sum()
        n_u = max(5, int(rng.poisson(mean_interactions)))
        n_u = min(n_u, n_items)
        chosen = rng.choice(n_items, size=n_u, replace=False, p=weights)
        times = rng.integers(0, 1_000_000, size=n_u)
        uid = f"u{u}"
        attributes[uid] = {attribute: "g1" if g == 1 else "g2"}
        for i, t in zip(chosen, times):
            records.append(InteractionRecord(uid, f"i{perm[i]}", int(t)))
    if not records:
        raise DataError("degenerate synthetic settings produced no interactions")
    return _build_dataset(records, attributes)


def save_dataset(ds: Dataset, out_dir, partitions: dict[str, GroupPartition] | None = None) -> None:
    """Canonical dump: one interaction per line (dense indices) + JSON sidecar."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"{ds.user_index[r.user_id]}\t{ds.item_index[r.item_id]}\t{r.timestamp}"
        for r in ds.interactions
    ]
    (out_dir / "interactions.tsv").write_text("\n".join(lines) + "\n")
    sidecar = {
        "schema_version": 1,
        "users": ds.users,
        "items": ds.items,
        "user_attributes": ds.user_attributes,
        "partitions": {
            name: {
                "stakeholder": p.stakeholder,
                "members_1": p.members_1.tolist(),
                "members_2": p.members_2.tolist(),
                "label_1": p.label_1,
                "label_2": p.label_2,
                "advantaged": p.advantaged,
            }
            for name, p in (partitions or {}).items()
        },
    }
    (out_dir / "dataset.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_dataset(in_dir) -> tuple[Dataset, dict[str, GroupPartition]]:
    """Inverse of :func:`save_dataset`; round-trips to an equal Dataset."""
    in_dir = Path(in_dir)
    sidecar = json.loads((in_dir / "dataset.json").read_text())
    users, items = sidecar["users"], sidecar["items"]
    records = []
    for lineno, line in enumerate((in_dir / "interactions.tsv").read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            u, i, t = line.split("\t")
            records.append(InteractionRecord(users[int(u)], items[int(i)], int(t)))
        except (ValueError, IndexError) as exc:
            raise DataError(f"interactions.tsv:{lineno}: {exc}") from exc
    ds = Dataset(users, items, records, sidecar.get("user_attributes", {}))
    partitions = {
        name: GroupPartition(
            p["stakeholder"],
            np.array(p["members_1"]),
            np.array(p["members_2"]),
            p["label_1"],
            p["label_2"],
            p.get("advantaged"),
        )
        for name, p in sidecar.get("partitions", {}).items()
    }
    return ds, partitions
