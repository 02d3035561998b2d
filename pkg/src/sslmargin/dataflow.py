"""Synthetic point-cloud datasets, the labeled/unlabeled/erroneous split and batch plans."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, List, Sequence

import numpy as np

from .nncore import ConfigurationError


class Split(str, Enum):
    LABELED = "labeled"
    UNLABELED = "unlabeled"
    ERRONEOUS = "erroneous"
    TEST = "test"
    UNASSIGNED = "unassigned"

    def __str__(self) -> str:
        return self.value


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent named rng stream, e.g. ``stream(0, "augment")``."""
    tag = int.from_bytes(name.encode()[:8].ljust(8, b"\0"), "little")
    return np.random.default_rng([int(seed), tag, *map(int, extra)])


@dataclass(frozen=True)
class SslDataset:
    features: np.ndarray  # (n, d)
    gold_labels: np.ndarray  # (n,), 0-based task classes
    split: np.ndarray  # (n,) of Split values
    ids: np.ndarray  # (n,) stable identifiers
    n_classes: int

    def __post_init__(self) -> None:
        n = len(self.features)
        if not (len(self.gold_labels) == len(self.split) == len(self.ids) == n):
            raise ConfigurationError("features, labels, split and ids must have equal length")
        if len(np.unique(self.ids)) != n:
            raise ConfigurationError("example ids must be unique")

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def indices(self, tag: Split) -> np.ndarray:
        return np.flatnonzero(self.split == tag)

    def sizes(self) -> dict:
        return {s.value: int(np.sum(self.split == s)) for s in Split if s is not Split.UNASSIGNED}

    def training_view(self) -> "TrainingView":
        labels = np.full(self.n, -1, dtype=np.int64)
        lab = self.indices(Split.LABELED)
        labels[lab] = self.gold_labels[lab]
        train = self.split != Split.TEST
        return TrainingView(
            features=self.features,
            split=self.split,
            ids=self.ids,
            n_classes=self.n_classes,
            labels=labels,
            train_mask=train,
        )


@dataclass(frozen=True)
class TrainingView:
    """What the training loop may see: labels exist only for labeled examples.

    Erroneous examples carry no label here; their training target is always
    the virtual class ``n_classes``.
    """

    features: np.ndarray
    split: np.ndarray
    ids: np.ndarray
    n_classes: int
    labels: np.ndarray  # -1 everywhere except labeled rows
    train_mask: np.ndarray

    @property
    def virtual_class(self) -> int:
        return self.n_classes

    def indices(self, tag: Split) -> np.ndarray:
        return np.flatnonzero(self.split == tag)

    def target(self, idx: np.ndarray) -> np.ndarray:
        """Training targets for labeled or erroneous rows."""
        idx = np.asarray(idx)
        out = self.labels[idx].copy()
        out[self.split[idx] == Split.ERRONEOUS] = self.virtual_class
        if np.any(out < 0):
            raise ConfigurationError("no training target for unlabeled/test rows")
        return out


def _dataset(features: np.ndarray, labels: np.ndarray, n_classes: int) -> SslDataset:
    n = len(features)
    return SslDataset(
        features=np.asarray(features, dtype=np.float64),
        gold_labels=np.asarray(labels, dtype=np.int64),
        split=np.full(n, Split.UNASSIGNED.value, dtype="<U10"),
        ids=np.arange(n, dtype=np.int64),
        n_classes=n_classes,
    )


def _balanced_counts(n: int, c: int) -> List[int]:
    return [n // c + (1 if i < n % c else 0) for i in range(c)]


def gen_two_moons(n: int, noise_sd: float, seed: int) -> SslDataset:
    """Two interleaved unit half-circles; class 0 gets the extra point when n is odd."""
    if n < 2:
        raise ConfigurationError("two moons needs n >= 2")
    rng = stream(seed, "data-gen")
    n0, n1 = _balanced_counts(n, 2)
    a0 = rng.uniform(0.0, math.pi, n0)
    a1 = rng.uniform(0.0, math.pi, n1)
    upper = np.column_stack([np.cos(a0), np.sin(a0)])
    lower = np.column_stack([1.0 - np.cos(a1), 0.5 - np.sin(a1)])
    x = np.vstack([upper, lower])
    if noise_sd > 0:
        x = x + rng.normal(0.0, noise_sd, x.shape)
    y = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    return _dataset(x, y, 2)


def gen_blobs(n: int, n_classes: int, spread: float, seed: int, radius: float = 3.0) -> SslDataset:
    """Isotropic Gaussian clusters whose centers sit evenly on a circle."""
    if n < n_classes or n_classes < 2:
        raise ConfigurationError("blobs needs n >= n_classes >= 2")
    rng = stream(seed, "data-gen")
    xs, ys = [], []
    for c, count in enumerate(_balanced_counts(n, n_classes)):
        angle = 2.0 * math.pi * c / n_classes
        center = radius * np.array([math.cos(angle), math.sin(angle)])
        xs.append(center + (rng.normal(0.0, spread, (count, 2)) if spread > 0 else np.zeros((count, 2))))
        ys.append(np.full(count, c, np.int64))
    return _dataset(np.vstack(xs), np.concatenate(ys), n_classes)


def gen_rings(n: int, n_classes: int, noise_sd: float, seed: int) -> SslDataset:
    """Concentric annuli; class c has nominal radius c + 1."""
    if n < n_classes or n_classes < 2:
        raise ConfigurationError("rings needs n >= n_classes >= 2")
    rng = stream(seed, "data-gen")
    xs, ys = [], []
    for c, count in enumerate(_balanced_counts(n, n_classes)):
        theta = rng.uniform(0.0, 2.0 * math.pi, count)
        pts = (c + 1.0) * np.column_stack([np.cos(theta), np.sin(theta)])
        if noise_sd > 0:
            pts = pts + rng.normal(0.0, noise_sd, pts.shape)
        xs.append(pts)
        ys.append(np.full(count, c, np.int64))
    return _dataset(np.vstack(xs), np.concatenate(ys), n_classes)


GENERATORS = {"two_moons", "blobs", "rings"}


def generate(name: str, n: int, n_classes: int, noise: float, seed: int) -> SslDataset:
    if name == "two_moons":
        if n_classes != 2:
            raise ConfigurationError("two_moons always has 2 classes")
        return gen_two_moons(n, noise, seed)
    if name == "blobs":
        return gen_blobs(n, n_classes, noise, seed)
    if name == "rings":
        return gen_rings(n, n_classes, noise, seed)
    raise ConfigurationError(f"unknown dataset {name!r}; expected one of {sorted(GENERATORS)}")


def split_ssl(
    ds: SslDataset,
    labels_per_class: int,
    erroneous_frac: float,
    test_frac: float,
    seed: int,
) -> SslDataset:
    """Tag every example Labeled / Unlabeled / Erroneous / Test.

    The test set is drawn first (stratified, floor of ``test_frac`` per class),
    then ``labels_per_class`` labeled examples per class. Of the remaining pool
    of size u, ``floor(erroneous_frac * u)`` examples become erroneous.
    """
    if not 0.0 < erroneous_frac < 1.0:
        raise ConfigurationError("erroneous_frac must lie in (0, 1); the erroneous set cannot be empty")
    if not 0.0 <= test_frac < 1.0:
        raise ConfigurationError("test_frac must lie in [0, 1)")
    if labels_per_class < 1:
        raise ConfigurationError("labels_per_class must be >= 1")
    rng = stream(seed, "split")
    split = np.full(ds.n, Split.UNLABELED.value, dtype="<U10")
    for c in range(ds.n_classes):
        members = rng.permutation(np.flatnonzero(ds.gold_labels == c))
        n_test = int(math.floor(test_frac * len(members)))
        if n_test + labels_per_class > len(members):
            raise ConfigurationError(
                f"class {c} has {len(members)} examples; cannot take {n_test} test "
                f"+ {labels_per_class} labeled"
            )
        split[members[:n_test]] = Split.TEST
        split[members[n_test : n_test + labels_per_class]] = Split.LABELED
    pool = np.flatnonzero(split == Split.UNLABELED)
    n_err = int(math.floor(erroneous_frac * len(pool)))
    if n_err < 1:
        raise ConfigurationError(f"erroneous set would be empty (pool of {len(pool)})")
    if n_err >= len(pool):
        raise ConfigurationError("erroneous set would leave no unlabeled examples")
    split[rng.choice(pool, size=n_err, replace=False)] = Split.ERRONEOUS
    return replace(ds, split=split)


def inject_label_noise(ds: SslDataset, frac: float, seed: int) -> SslDataset:
    """Reassign the gold label of ``floor(frac * pool)`` unlabeled-pool examples.

    The features are untouched, so these points become examples whose
    geometry says one class while their gold label says another.
    """
    if frac <= 0:
        return ds
    rng = stream(seed, "label-noise")
    pool = np.flatnonzero((ds.split == Split.UNLABELED) | (ds.split == Split.ERRONEOUS))
    chosen = rng.choice(pool, size=int(math.floor(frac * len(pool))), replace=False)
    gold = ds.gold_labels.copy()
    shift = rng.integers(1, ds.n_classes, size=len(chosen))
    gold[chosen] = (gold[chosen] + shift) % ds.n_classes
    return replace(ds, gold_labels=gold)


@dataclass(frozen=True)
class BatchPlan:
    labeled: np.ndarray
    unlabeled: np.ndarray
    erroneous: np.ndarray


class _Cycler:
    """Draw without replacement, reshuffling whenever the pool runs dry."""

    def __init__(self, pool: np.ndarray, rng: np.random.Generator) -> None:
        self.pool = np.asarray(pool)
        self.rng = rng
        self.order = rng.permutation(self.pool)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pos == len(self.order):
                self.order = self.rng.permutation(self.pool)
                self.pos = 0
            m = min(k, len(self.order) - self.pos)
            out.append(self.order[self.pos : self.pos + m])
            self.pos += m
            k -= m
        return np.concatenate(out) if out else np.empty(0, dtype=self.pool.dtype)


def batches(
    view,
    batch_size: int,
    ratio: int,
    seed: int,
    epoch: int,
    with_erroneous: bool = True,
) -> List[BatchPlan]:
    """One epoch of batch plans: every unlabeled example appears exactly once.

    The unlabeled set is cut into chunks of ``ratio * batch_size``; a ragged
    final chunk of size s gets ``ceil(s / ratio)`` labeled and erroneous rows.
    Row indices (not ids) are returned.
    """
    if batch_size < 1 or ratio < 1:
        raise ConfigurationError("batch size and unlabeled ratio must be >= 1")
    unl = np.flatnonzero(view.split == Split.UNLABELED)
    lab = np.flatnonzero(view.split == Split.LABELED)
    err = np.flatnonzero(view.split == Split.ERRONEOUS)
    if len(unl) == 0:
        raise ConfigurationError("no unlabeled examples to iterate over")
    if len(lab) == 0:
        raise ConfigurationError("no labeled examples")
    rng = stream(seed, "batches", epoch)
    order = rng.permutation(unl)
    lab_cycle = _Cycler(lab, rng)
    # a separate stream keeps labeled and unlabeled batches independent of whether E is drawn
    err_rng = stream(seed, "batches-erroneous", epoch)
    err_cycle = _Cycler(err, err_rng) if with_erroneous and len(err) else None
    chunk = ratio * batch_size
    plans = []
    for start in range(0, len(order), chunk):
        u = order[start : start + chunk]
        k = -(-len(u) // ratio)
        e = err_cycle.take(k) if err_cycle is not None else np.empty(0, dtype=np.int64)
        plans.append(BatchPlan(lab_cycle.take(k), u, e))
    return plans


def write_csv(ds: SslDataset, path: Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *[f"x_{j + 1}" for j in range(ds.dim)], "gold_label", "split"])
        for i in range(ds.n):
            w.writerow(
                [int(ds.ids[i]), *[repr(float(v)) for v in ds.features[i]],
                 int(ds.gold_labels[i]), Split(ds.split[i]).value]
            )


def read_csv(path: Path, n_classes: int | None = None) -> SslDataset:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = sum(1 for h in header if h.startswith("x_"))
    ids = np.array([int(r[0]) for r in body], dtype=np.int64)
    x = np.array([[float(v) for v in r[1 : 1 + d]] for r in body], dtype=np.float64).reshape(len(body), d)
    y = np.array([int(r[1 + d]) for r in body], dtype=np.int64)
    split = np.array([Split(r[2 + d]).value for r in body], dtype="<U10")
    if n_classes is None:
        n_classes = int(y.max()) + 1 if len(y) else 0
    return SslDataset(x, y, split, ids, n_classes)


def iter_split_membership(ds: SslDataset) -> Iterator[Sequence]:
    for i in range(ds.n):
        yield int(ds.ids[i]), Split(ds.split[i]).value
