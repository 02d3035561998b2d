"""Class-wise flexible confidence thresholds and the erroneous-cohort APM threshold."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nncore import ConfigurationError


def learning_status(confidences, predicted, tau: float, n_outputs: int) -> np.ndarray:
    """Count, per class, the recorded predictions whose confidence exceeds ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError("tau must lie in [0, 1]")
    conf = np.asarray(confidences, dtype=np.float64)
    pred = np.asarray(predicted, dtype=np.int64)
    return np.bincount(pred[conf > tau], minlength=n_outputs)[:n_outputs].astype(np.int64)


def flexible_thresholds(alpha, tau: float) -> np.ndarray:
    """``T_c = alpha_c / max(alpha) * tau``; all ``tau`` when nothing is confident yet."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha < 0):
        raise ConfigurationError("learning-status counts must be non-negative")
    top = alpha.max() if alpha.size else 0.0
    if top == 0:
        return np.full(alpha.shape, float(tau))
    return alpha / top * tau


def apm_threshold(values, q: float = 0.95) -> float:
    """Nearest-rank percentile: the ``ceil(q * n)``-th smallest value (1-based)."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ConfigurationError("cannot take a percentile of an empty erroneous set")
    if not 0.0 < q <= 1.0:
        raise ConfigurationError("percentile q must lie in (0, 1]")
    # round first so 0.95 * 20 is rank 19, not 20
    rank = max(1, math.ceil(round(q * v.size, 9)))
    return float(v[rank - 1])


@dataclass
class ThresholdState:
    tau: float = 0.95
    q: float = 0.95
    n_outputs: int = 2
    flex: np.ndarray = field(default=None)
    gamma: float = -math.inf

    def __post_init__(self) -> None:
        if self.flex is None:
            self.flex = np.full(self.n_outputs, float(self.tau))

    def refresh_flex(self, confidences, predicted) -> np.ndarray:
        alpha = learning_status(confidences, predicted, self.tau, self.n_outputs)
        self.flex = flexible_thresholds(alpha, self.tau)
        return alpha

    def refresh_gamma(self, erroneous_scores) -> float:
        self.gamma = apm_threshold(erroneous_scores, self.q)
        return self.gamma
