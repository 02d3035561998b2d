"""Loss terms and masking rules for the supervised, unlabeled and erroneous batches.

The supervised loss is a batch mean while the unlabeled and erroneous losses
are plain sums. The trainer's ``normalize_sums`` option divides both sums by
the unlabeled batch size, so one erroneous example weighs as much as one
unlabeled example.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .nncore import log_softmax


@dataclass(frozen=True)
class MaskDecision:
    example_id: int
    pseudo_label: int
    confidence: float
    conf_gate: bool
    apm_gate: bool
    included: bool


def _ce_rows(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    rows = np.arange(len(p))
    with np.errstate(divide="ignore"):
        return -np.log(p[rows, np.asarray(targets, dtype=np.int64)])


def supervised_loss(weak_probs: np.ndarray, labels: Sequence[int]) -> float:
    """Mean cross-entropy of the weak-view predictions on the labeled batch."""
    return float(np.mean(_ce_rows(weak_probs, labels)))


def mask_fixed(confidence, tau: float):
    return np.asarray(confidence) > tau


def mask_flex(confidence, pseudo_label, flex: np.ndarray):
    return np.asarray(confidence) > np.asarray(flex)[np.asarray(pseudo_label)]


def mask_margin(confidence, pseudo_label, flex: np.ndarray, apm, gamma: float):
    """Both gates: accumulated margin of the pseudo-label above gamma and
    confidence above that class's flexible threshold."""
    return (np.asarray(apm) > gamma) & mask_flex(confidence, pseudo_label, flex)


def decide(
    ids: np.ndarray,
    weak_probs: np.ndarray,
    *,
    method: str,
    tau: float,
    flex: np.ndarray,
    virtual_class: int,
    trust: Optional[np.ndarray] = None,
    gamma: float = -math.inf,
) -> List[MaskDecision]:
    """Mask decisions for one unlabeled batch.

    ``trust`` is the accumulated score of each example (its APM for the
    pseudo-label, or a confidence/entropy tracker value) and is only used by
    ``marginmatch``. A pseudo-label equal to the virtual class is never kept.
    """
    probs = np.asarray(weak_probs, dtype=np.float64)
    pseudo = np.argmax(probs, axis=1)
    conf = probs[np.arange(len(probs)), pseudo]
    legal = pseudo != virtual_class
    if method in ("pseudolabel", "fixmatch"):
        conf_gate = mask_fixed(conf, tau) & legal
    else:
        conf_gate = mask_flex(conf, pseudo, flex) & legal
    if method == "marginmatch":
        apm_gate = np.asarray(trust) > gamma
    else:
        apm_gate = np.ones(len(probs), dtype=bool)
    included = conf_gate & apm_gate
    return [
        MaskDecision(int(i), int(p), float(c), bool(g1), bool(g2), bool(inc))
        for i, p, c, g1, g2, inc in zip(ids, pseudo, conf, conf_gate, apm_gate, included)
    ]


def unlabeled_loss(decisions: Sequence[MaskDecision], strong_probs: np.ndarray) -> float:
    """Summed cross-entropy of strong views against hard pseudo-labels, over kept examples."""
    keep = np.array([d.included for d in decisions], dtype=bool)
    if not keep.any():
        return 0.0
    labels = np.array([d.pseudo_label for d in decisions])[keep]
    return float(np.sum(_ce_rows(np.asarray(strong_probs)[keep], labels)))


def erroneous_loss(strong_probs: np.ndarray, virtual_class: int) -> float:
    p = np.asarray(strong_probs, dtype=np.float64)
    return float(np.sum(_ce_rows(p, np.full(len(p), virtual_class))))


def total_loss(loss_s: float, loss_u: float, loss_e: float, lam: float = 1.0) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return loss_s + lam * (loss_u + loss_e)


def ce_from_logits(z: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy straight from logits (no probability round-trip)."""
    lp = log_softmax(z)
    return -lp[np.arange(len(lp)), np.asarray(targets, dtype=np.int64)]
