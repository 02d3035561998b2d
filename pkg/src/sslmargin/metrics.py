"""Pseudo-label quality accounting and the per-epoch metrics file.

This is the only module that reads gold labels of unlabeled examples.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import IO, List, Optional, Sequence

import numpy as np

from .sslloss import MaskDecision


@dataclass
class EpochMetrics:
    epoch: int
    method: str
    seed: int
    lr: float
    loss_s: float
    loss_u: float
    loss_e: float
    mask_rate: float
    impurity: Optional[float]
    test_error: float
    gamma: float
    err_apm_mean: Optional[float]
    err_apm_p50: Optional[float]
    err_apm_p95: Optional[float]
    included: int
    presentations: int
    flex_thresholds: str


COLUMNS = [f.name for f in fields(EpochMetrics)]
_INT = {"epoch", "seed", "included", "presentations"}
_STR = {"method", "flex_thresholds"}


def mask_rate(decisions: Sequence[MaskDecision]) -> float:
    if not decisions:
        raise ValueError("mask rate needs at least one decision")
    masked = sum(1 for d in decisions if not d.included)
    return masked / len(decisions)


class PurityAuditor:
    """Holds the hidden gold labels and scores pseudo-labels against them."""

    def __init__(self, gold_labels: np.ndarray, ids: np.ndarray) -> None:
        self._gold = {int(i): int(g) for i, g in zip(ids, gold_labels)}

    def impurity(self, decisions: Sequence[MaskDecision]) -> Optional[float]:
        kept = [d for d in decisions if d.included]
        if not kept:
            return None
        wrong = 0
        for d in kept:
            if d.example_id not in self._gold:
                raise KeyError(f"unknown example id {d.example_id}")
            wrong += d.pseudo_label != self._gold[d.example_id]
        return wrong / len(kept)


def impurity(decisions: Sequence[MaskDecision], gold: dict) -> Optional[float]:
    """Fraction of included decisions whose pseudo-label differs from ``gold[id]``."""
    ids = np.fromiter(gold.keys(), dtype=np.int64)
    labels = np.fromiter(gold.values(), dtype=np.int64)
    return PurityAuditor(labels, ids).impurity(decisions)


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "-inf" if v < 0 else "inf"
        return repr(v)
    return str(v)


def _parse(name: str, raw: str):
    if name in _STR:
        return raw
    if name in _INT:
        return int(raw)
    if raw == "":
        return None
    return float(raw)


class MetricsWriter:
    """Append-only CSV sink, flushed after every row."""

    def __init__(self, fh: IO[str]) -> None:
        self.fh = fh
        self.writer = csv.writer(fh, lineterminator="\n")
        self.writer.writerow(COLUMNS)
        fh.flush()

    def append_epoch(self, m: EpochMetrics) -> None:
        row = asdict(m)
        self.writer.writerow([format_value(row[c]) for c in COLUMNS])
        self.fh.flush()


def read_metrics(path: Path) -> List[EpochMetrics]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"unexpected metrics header {reader.fieldnames}")
        return [EpochMetrics(**{k: _parse(k, v) for k, v in row.items()}) for row in reader]


def _tail_mean(values: Sequence[Optional[float]], k: int = 10) -> Optional[float]:
    tail = [v for v in values[-k:] if v is not None]
    return float(np.mean(tail)) if tail else None


def summarize(history: Sequence[EpochMetrics], config: dict, version: str) -> dict:
    last = history[-1] if history else None
    return {
        "version": version,
        "epochs": len(history),
        "final_test_error": last.test_error if last else None,
        "final_gamma": format_value(last.gamma) if last else None,
        "last10_mask_rate": _tail_mean([m.mask_rate for m in history]),
        "last10_impurity": _tail_mean([m.impurity for m in history]),
        "config": config,
    }


def dump_summary(summary: dict, path: Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
