"""Tabular data model, CSV ingestion and federated partitioning.

A :class:`Dataset` holds features, binary labels and dense protected-group
ids. Partitioners turn it into a :class:`FederatedSplit`, which also carries
the global per-group and per-(group, label) counts every client needs to
normalise its share of a fairness constraint.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Hashable, Sequence

import numpy as np

NUM_LABELS = 2


class DatasetError(ValueError):
    """Base class for data construction problems."""


class SchemaError(DatasetError):
    pass


class ParseError(DatasetError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ValidationError(DatasetError):
    pass


class PartitionError(DatasetError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Examples ``(x_i, y_i, a_i)`` stored column-wise.

    ``X`` is ``(N, p)`` float64, ``y`` is ``(N,)`` in {0, 1} and ``a`` holds
    group ids in ``[0, num_groups)``. ``client_keys`` is optional and only
    set when the source carried a natural partition column.
    """

    X: np.ndarray
    y: np.ndarray
    a: np.ndarray
    num_groups: int
    group_names: tuple[str, ...] = ()
    feature_names: tuple[str, ...] = ()
    client_keys: tuple[Hashable, ...] | None = None

    def __post_init__(self) -> None:
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.asarray(self.y).astype(np.int64)
        a = np.asarray(self.a).astype(np.int64)
        if X.ndim != 2:
            raise ValidationError(f"X must be 2-D, got shape {X.shape}")
        n = X.shape[0]
        if n == 0:
            raise ValidationError("dataset is empty")
        if y.shape != (n,) or a.shape != (n,):
            raise ValidationError("X, y and a must have matching lengths")
        if not np.all(np.isfinite(X)):
            raise ValidationError("features must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise ValidationError("label not in {0,1}")
        if self.num_groups < 1 or a.min() < 0 or a.max() >= self.num_groups:
            raise ValidationError("group id out of range")
        present = np.bincount(a, minlength=self.num_groups)
        if np.any(present == 0):
            missing = np.flatnonzero(present == 0).tolist()
            raise ValidationError(f"groups {missing} have no examples")
        if self.client_keys is not None and len(self.client_keys) != n:
            raise ValidationError("client_keys length does not match dataset")
        for arr in (X, y, a):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        if not self.group_names:
            object.__setattr__(
                self, "group_names", tuple(str(g) for g in range(self.num_groups))
            )
        if not self.feature_names:
            object.__setattr__(
                self, "feature_names", tuple(f"x{j}" for j in range(X.shape[1]))
            )

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def num_features(self) -> int:
        return self.X.shape[1]

    @property
    def num_labels(self) -> int:
        return NUM_LABELS

    def group_counts(self) -> np.ndarray:
        return np.bincount(self.a, minlength=self.num_groups)

    def cell_counts(self) -> np.ndarray:
        """Counts ``m_{a,y}`` as a ``(num_groups, 2)`` integer array."""
        flat = np.bincount(self.a * NUM_LABELS + self.y,
                           minlength=self.num_groups * NUM_LABELS)
        return flat.reshape(self.num_groups, NUM_LABELS)


@dataclass(frozen=True, eq=False)
class ClientShard:
    """One client's local data; ``indices`` point back into the dataset."""

    X: np.ndarray
    y: np.ndarray
    a: np.ndarray
    indices: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]

    @cached_property
    def Xb(self) -> np.ndarray:
        """Features with a trailing constant column for the bias weight."""
        out = np.hstack([self.X, np.ones((self.X.shape[0], 1))])
        out.setflags(write=False)
        return out

    def design(self, bias: bool) -> np.ndarray:
        return self.Xb if bias else self.X


@dataclass(frozen=True, eq=False)
class FederatedSplit:
    shards: tuple[ClientShard, ...]
    num_groups: int
    group_counts: np.ndarray = field(repr=False)
    cell_counts: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.shards)

    @property
    def num_examples(self) -> int:
        return int(sum(len(s) for s in self.shards))

    @property
    def num_features(self) -> int:
        return self.shards[0].X.shape[1]

    def merged(self) -> FederatedSplit:
        """The same examples held by a single client (the centralised view)."""
        X = np.vstack([s.X for s in self.shards])
        y = np.concatenate([s.y for s in self.shards])
        a = np.concatenate([s.a for s in self.shards])
        idx = np.concatenate([s.indices for s in self.shards])
        return FederatedSplit(
            (ClientShard(X, y, a, idx),), self.num_groups,
            self.group_counts, self.cell_counts,
        )

    def as_dataset(self) -> Dataset:
        m = self.merged().shards[0]
        order = np.argsort(m.indices, kind="stable")
        return Dataset(m.X[order], m.y[order], m.a[order], self.num_groups)


def split_from_assignment(ds: Dataset, assignment: Sequence[np.ndarray]) -> FederatedSplit:
    """Build a split from per-client index arrays (kept in the given order)."""
    shards = []
    for idx in assignment:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            raise PartitionError("empty shard")
        shard = ClientShard(ds.X[idx], ds.y[idx], ds.a[idx], idx)
        for arr in (shard.X, shard.y, shard.a, shard.indices):
            arr.setflags(write=False)
        shards.append(shard)
    total = sum(len(s) for s in shards)
    if total != len(ds):
        raise PartitionError(f"assignment covers {total} of {len(ds)} examples")
    gc = ds.group_counts()
    cc = ds.cell_counts()
    gc.setflags(write=False)
    cc.setflags(write=False)
    return FederatedSplit(tuple(shards), ds.num_groups, gc, cc)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

_TRUE = {"1", "1.0", "true", "yes"}
_FALSE = {"0", "0.0", "false", "no"}


def _parse_label(raw: str, row: int) -> int:
    s = raw.strip().lower()
    if s in _TRUE:
        return 1
    if s in _FALSE:
        return 0
    try:
        v = float(s)
    except ValueError:
        raise ParseError(f"label {raw!r} not in {{0,1}}", row) from None
    if v == 0.0:
        return 0
    if v == 1.0:
        return 1
    raise ParseError(f"label not in {{0,1}} (got {raw!r})", row)


def load_csv(
    path: str | Path,
    label_column: str,
    group_column: str,
    client_column: str | None = None,
    include_group: bool = False,
) -> Dataset:
    """Read a header-first CSV into a :class:`Dataset`.

    Every column other than the label, group and (optional) client columns is
    parsed as a numeric feature. Group values are re-indexed densely in order
    of first appearance. With ``include_group=True`` the dense group id is also
    appended as the last feature.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        header = [h.strip() for h in header]
        for col in (label_column, group_column, client_column):
            if col is not None and col not in header:
                raise SchemaError(f"{path}: column {col!r} not in header {header}")
        special = {label_column, group_column, client_column}
        feat_cols = [j for j, h in enumerate(header) if h not in special]
        li = header.index(label_column)
        gi = header.index(group_column)
        ci = header.index(client_column) if client_column is not None else None

        rows_x: list[list[float]] = []
        labels: list[int] = []
        groups: list[int] = []
        keys: list[str] = []
        group_ids: dict[str, int] = {}
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", row_no)
            feats = []
            for j in feat_cols:
                try:
                    v = float(row[j])
                except ValueError:
                    raise ParseError(
                        f"non-numeric value {row[j]!r} in column {header[j]!r}",
                        row_no) from None
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value in column {header[j]!r}", row_no)
                feats.append(v)
            rows_x.append(feats)
            labels.append(_parse_label(row[li], row_no))
            g = row[gi].strip()
            groups.append(group_ids.setdefault(g, len(group_ids)))
            if ci is not None:
                keys.append(row[ci].strip())

    if not rows_x:
        raise ValidationError(f"{path}: no data rows")
    X = np.asarray(rows_x, dtype=np.float64).reshape(len(rows_x), len(feat_cols))
    a = np.asarray(groups, dtype=np.int64)
    names = tuple(header[j] for j in feat_cols)
    if include_group:
        X = np.hstack([X, a[:, None].astype(np.float64)])
        names = names + (group_column,)
    return Dataset(
        X, np.asarray(labels), a, len(group_ids),
        group_names=tuple(group_ids), feature_names=names,
        client_keys=tuple(keys) if ci is not None else None,
    )


def save_csv(
    ds: Dataset,
    path: str | Path,
    label_column: str = "label",
    group_column: str = "group",
    client_column: str | None = None,
    client_keys: Sequence[Hashable] | None = None,
) -> None:
    """Write ``ds`` so that :func:`load_csv` recovers it exactly.

    Floats are written with ``repr`` (shortest round-tripping form).
    """
    keys = client_keys if client_keys is not None else ds.client_keys
    if client_column is not None and keys is None:
        raise SchemaError("client_column given but no client keys available")
    header = list(ds.feature_names) + [label_column, group_column]
    if client_column is not None:
        header.append(client_column)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            row = [repr(float(v)) for v in ds.X[i]]
            row += [str(int(ds.y[i])), ds.group_names[ds.a[i]]]
            if client_column is not None:
                row.append(str(keys[i]))
            w.writerow(row)


# ---------------------------------------------------------------------------
# Partitioners
# ---------------------------------------------------------------------------

def partition_by_key(ds: Dataset, keys: Sequence[Hashable] | None = None) -> FederatedSplit:
    """One shard per distinct key, shards ordered by first appearance."""
    if keys is None:
        keys = ds.client_keys
    if keys is None:
        raise PartitionError("no client keys given and dataset carries none")
    if len(keys) != len(ds):
        raise PartitionError("need exactly one key per example")
    buckets: dict[Hashable, list[int]] = {}
    for i, k in enumerate(keys):
        buckets.setdefault(k, []).append(i)
    return split_from_assignment(ds, [np.asarray(v) for v in buckets.values()])


def partition_dirichlet(
    ds: Dataset, K: int, alpha: float, seed: int, max_retries: int = 100
) -> FederatedSplit:
    """Non-IID split: client proportions drawn per (group, label) cell.

    For every cell the examples are shuffled and cut according to a
    ``Dirichlet(alpha * 1_K)`` draw. If some client ends up empty the whole
    assignment is redrawn with ``seed + 1``, ``seed + 2``, ...
    """
    if K < 1:
        raise PartitionError("K must be >= 1")
    if not alpha > 0:
        raise PartitionError("alpha must be > 0")
    if len(ds) < K:
        raise PartitionError(f"cannot split {len(ds)} examples over {K} clients")
    if K == 1:
        return split_from_assignment(ds, [np.arange(len(ds))])

    cells = ds.a * NUM_LABELS + ds.y
    for attempt in range(max_retries):
        rng = np.random.default_rng(seed + attempt)
        parts: list[list[np.ndarray]] = [[] for _ in range(K)]
        for c in np.unique(cells):
            idx = np.flatnonzero(cells == c)
            rng.shuffle(idx)
            props = rng.dirichlet(np.full(K, alpha))
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(np.int64)
            for k, chunk in enumerate(np.split(idx, cuts)):
                parts[k].append(chunk)
        assignment = [np.sort(np.concatenate(p)) for p in parts]
        if all(x.size > 0 for x in assignment):
            return split_from_assignment(ds, assignment)
    raise PartitionError(
        f"could not produce {K} nonempty shards with alpha={alpha} after "
        f"{max_retries} draws; use a larger alpha or fewer clients"
    )


# ---------------------------------------------------------------------------
# Synthetic heterogeneous data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeteroGenerator:
    """Two-group federated data whose group mixture drifts across clients.

    The first ``round(minority_share * K)`` clients, spread evenly over the
    client ids, have home group 1 and the rest home group 0; an example
    belongs to its client's home group with probability ``(1 + skew) / 2``.
    Each group has its own feature mean, and each (client, group) pair adds a
    private offset so the group-conditional distributions also differ between
    clients. Labels follow a linear rule plus Gaussian noise whose scale
    depends on the group; group 1's rule is the group-0 rule rotated by
    ``rule_angle`` radians.

    The population parameters depend only on ``seed``; :meth:`sample` takes a
    separate stream id so train and test sets share the same clients.
    """

    K: int
    p: int
    skew: float
    seed: int
    group_sep: float = 1.0
    client_shift: float = 1.0
    label_noise: tuple[float, float] = (0.3, 1.0)
    feature_scale: float = 1.0
    rule_angle: float = 0.0
    minority_share: float = 0.5

    def __post_init__(self) -> None:
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.p < 2:
            raise ValueError("p must be >= 2")
        if not 0.0 <= self.skew <= 1.0:
            raise ValueError("skew must lie in [0, 1]")
        if not 0.0 < self.minority_share < 1.0:
            raise ValueError("minority_share must lie in (0, 1)")

    @cached_property
    def _population(self) -> dict[str, np.ndarray]:
        rng = np.random.default_rng([self.seed, 0])
        w_true = rng.standard_normal(self.p)
        w_true /= np.linalg.norm(w_true)
        direction = rng.standard_normal(self.p)
        direction -= direction @ w_true * w_true
        direction /= np.linalg.norm(direction)
        tilt = rng.standard_normal(self.p)
        tilt -= tilt @ w_true * w_true
        tilt /= np.linalg.norm(tilt)
        rules = np.stack([w_true, math.cos(self.rule_angle) * w_true
                          + math.sin(self.rule_angle) * tilt])
        group_mean = np.stack([-0.5 * self.group_sep * direction,
                               0.5 * self.group_sep * direction])
        offsets = self.client_shift * rng.standard_normal((self.K, 2, self.p))
        n1 = min(max(round(self.minority_share * self.K), 1), self.K - 1)
        homes = np.zeros(self.K, dtype=np.int64)
        homes[(np.arange(1, n1 + 1) * self.K) // n1 - 1] = 1
        return {"rules": rules, "group_mean": group_mean, "offsets": offsets,
                "homes": homes}

    def home_fraction(self) -> float:
        return 0.5 * (1.0 + self.skew)

    @property
    def home_groups(self) -> np.ndarray:
        return self._population["homes"]

    def sample(self, n_per_client: int, stream: int = 0) -> tuple[Dataset, FederatedSplit]:
        pop = self._population
        rng = np.random.default_rng([self.seed, 1, stream])
        Xs, ys, as_, keys = [], [], [], []
        for k in range(self.K):
            home = pop["homes"][k]
            in_home = rng.random(n_per_client) < self.home_fraction()
            a = np.where(in_home, home, 1 - home)
            X = (pop["group_mean"][a] + pop["offsets"][k, a]
                 + rng.standard_normal((n_per_client, self.p)))
            noise = np.asarray(self.label_noise)[a] * rng.standard_normal(n_per_client)
            margin = np.einsum("ij,ij->i", X, pop["rules"][a])
            y = (margin + noise > 0).astype(np.int64)
            Xs.append(self.feature_scale * X)
            ys.append(y)
            as_.append(a)
            keys.extend([k] * n_per_client)
        X = np.vstack(Xs)
        a = np.concatenate(as_)
        if np.bincount(a, minlength=2).min() == 0:
            # skew=1 with K=2 can never lack a group, but tiny n can
            raise ValidationError("sample lacks one of the groups; increase n_per_client")
        ds = Dataset(X, np.concatenate(ys), a, 2, group_names=("0", "1"),
                     client_keys=tuple(keys))
        return ds, partition_by_key(ds)


def make_synthetic_hetero(
    K: int, n_per_client: int, p: int, skew: float, seed: int, **kwargs
) -> tuple[Dataset, FederatedSplit]:
    """Training sample of :class:`HeteroGenerator` (stream 0)."""
    return HeteroGenerator(K, p, skew, seed, **kwargs).sample(n_per_client, stream=0)
