"""Per-example training-dynamics accounting.

A :class:`MarginLedger` keeps, for every example, a vector of accumulated
pseudo-margins over all ``C + 1`` outputs. The accumulator is either the plain
arithmetic mean of every recorded margin or the decaying-weight average

    apm_t = pm_t * delta / (1 + t) + apm_{t-1} * (1 - delta / (1 + t))

with ``apm_0 = 0`` and ``t`` the epoch index (1-based). ``Combine.DECAY`` is
the constant-rate alternative ``apm_t = delta * apm_{t-1} + (1 - delta) * pm_t``,
under which a margin recorded ``k`` epochs ago carries weight ``delta**k``.
"""

from __future__ import annotations

from enum import Enum

import numpy as np


class Combine(str, Enum):
    MEAN = "mean"
    EMA = "ema"
    DECAY = "decay"


class Measure(str, Enum):
    MARGIN = "margin"
    CONFIDENCE = "confidence"
    ENTROPY = "entropy"


class LedgerError(RuntimeError):
    pass


def pseudo_margin(z: np.ndarray, c: int) -> float:
    """Logit of class ``c`` minus the largest other logit."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ValueError("need at least two logits")
    return float(z[c] - np.max(np.delete(z, c)))


def pseudo_margins(z: np.ndarray) -> np.ndarray:
    """Pseudo-margins for every class at once; ``z`` is (..., K)."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ValueError("need at least two logits")
    top2 = -np.partition(-z, 1, axis=-1)[..., :2]
    first, second = top2[..., :1], top2[..., 1:2]
    other_max = np.where(z == first, second, first)
    # Ties for the max: every tied class sees the other tied logit as "largest other".
    return z - other_max


def confidence_score(probs: np.ndarray) -> np.ndarray:
    return np.max(np.asarray(probs, dtype=np.float64), axis=-1)


def entropy_score(probs: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -np.sum(terms, axis=-1)


class _RunningTable:
    """Per-row running average over epochs, one update per row per epoch."""

    def __init__(self, n_rows: int, width: int, combine: Combine, delta: float) -> None:
        combine = Combine(combine)
        if combine is not Combine.MEAN and not 0.0 < delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        self.combine = combine
        self.delta = float(delta)
        self.values = np.zeros((n_rows, width))
        self.count = np.zeros(n_rows, dtype=np.int64)
        self.last_epoch = np.zeros(n_rows, dtype=np.int64)

    def _record(self, rows: np.ndarray, x: np.ndarray, epoch: int) -> None:
        rows = np.asarray(rows, dtype=np.int64)
        if epoch < 1:
            raise LedgerError("epochs are 1-based")
        if len(np.unique(rows)) != len(rows):
            raise LedgerError("an example was updated twice in one call")
        stale = self.last_epoch[rows] >= epoch
        if np.any(stale):
            raise LedgerError(
                f"example(s) {rows[stale][:5].tolist()} already updated at epoch >= {epoch}"
            )
        x = np.asarray(x, dtype=np.float64).reshape(len(rows), -1)
        if self.combine is Combine.EMA:
            w = self.delta / (1.0 + epoch)
            self.values[rows] = x * w + self.values[rows] * (1.0 - w)
        elif self.combine is Combine.DECAY:
            self.values[rows] = self.values[rows] * self.delta + x * (1.0 - self.delta)
        else:
            n = self.count[rows][:, None]
            self.values[rows] = self.values[rows] + (x - self.values[rows]) / (n + 1)
        self.count[rows] += 1
        self.last_epoch[rows] = epoch

    def seen(self, rows: np.ndarray) -> np.ndarray:
        return self.count[np.asarray(rows, dtype=np.int64)] > 0


class MarginLedger(_RunningTable):
    """Accumulated pseudo-margins for every class of every tracked example."""

    def __init__(self, n_rows: int, n_outputs: int, combine: Combine = Combine.EMA, delta: float = 0.997):
        super().__init__(n_rows, n_outputs, combine, delta)
        self.n_outputs = n_outputs

    def update(self, rows: np.ndarray, logits: np.ndarray, epoch: int) -> np.ndarray:
        """Record the margins of ``logits`` (one row per example); returns them."""
        pm = pseudo_margins(logits)
        self._record(rows, pm, epoch)
        return pm

    def query(self, rows, classes) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        classes = np.asarray(classes, dtype=np.int64)
        if np.any(classes < 0) or np.any(classes >= self.n_outputs):
            raise IndexError(f"class index out of range [0, {self.n_outputs})")
        return self.values[rows, classes]

    def apm(self, rows) -> np.ndarray:
        return self.values[np.asarray(rows, dtype=np.int64)]


class ScoreTracker(_RunningTable):
    """Confidence or entropy accumulated with the same recurrence as the margins.

    Confidence is tracked per class (the probability of each output), so it can
    be read at the pseudo-label for unlabeled rows and at the virtual class for
    erroneous rows, exactly like the margins. Entropy has no class and is a
    single column. :meth:`trust` orients scores so larger means more
    trustworthy (entropy is negated).
    """

    def __init__(
        self,
        n_rows: int,
        n_outputs: int,
        measure: Measure,
        combine: Combine = Combine.EMA,
        delta: float = 0.997,
    ) -> None:
        measure = Measure(measure)
        if measure is Measure.MARGIN:
            raise ValueError("use MarginLedger for margins")
        super().__init__(n_rows, n_outputs if measure is Measure.CONFIDENCE else 1, combine, delta)
        self.measure = measure

    def update(self, rows: np.ndarray, probs: np.ndarray, epoch: int) -> np.ndarray:
        p = np.asarray(probs, dtype=np.float64)
        s = p if self.measure is Measure.CONFIDENCE else entropy_score(p)[:, None]
        self._record(rows, s, epoch)
        return s

    def score(self, rows, classes=None) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        if self.measure is Measure.ENTROPY:
            return self.values[rows, 0]
        return self.values[rows, np.asarray(classes, dtype=np.int64)]

    def trust(self, rows, classes=None) -> np.ndarray:
        s = self.score(rows, classes)
        return -s if self.measure is Measure.ENTROPY else s
