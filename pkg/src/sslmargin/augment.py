"""Weak and strong feature perturbations.

The noise levels in :class:`AugmentSpec` are fractions of each feature's
standard deviation; :meth:`AugmentSpec.absolute` turns them into per-feature
sd vectors for a particular dataset.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .nncore import ConfigurationError

Scale = Union[float, np.ndarray]


@dataclass(frozen=True)
class AugmentSpec:
    weak_noise_sd: Scale = 0.05
    strong_noise_sd: Scale = 0.25
    strong_dropout_p: float = 0.2
    strong_scale_range: Tuple[float, float] = (0.7, 1.3)

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.weak_noise_sd) < 0) or np.any(np.asarray(self.strong_noise_sd) < 0):
            raise ConfigurationError("noise sd must be non-negative")
        if np.any(np.asarray(self.strong_noise_sd) < np.asarray(self.weak_noise_sd)):
            raise ConfigurationError("strong_noise_sd must be >= weak_noise_sd")
        if not 0.0 <= self.strong_dropout_p <= 1.0:
            raise ConfigurationError("strong_dropout_p must be a probability")
        lo, hi = self.strong_scale_range
        if lo > hi:
            raise ConfigurationError("strong_scale_range must be (low, high) with low <= high")

    def absolute(self, feature_sd: np.ndarray) -> "AugmentSpec":
        sd = np.asarray(feature_sd, dtype=np.float64)
        return AugmentSpec(
            weak_noise_sd=np.asarray(self.weak_noise_sd) * sd,
            strong_noise_sd=np.asarray(self.strong_noise_sd) * sd,
            strong_dropout_p=self.strong_dropout_p,
            strong_scale_range=tuple(self.strong_scale_range),
        )


def weak(x: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian jitter. Works on a single vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    sd = np.asarray(spec.weak_noise_sd, dtype=np.float64)
    if not np.any(sd > 0):
        return x.copy()
    return x + rng.normal(0.0, 1.0, x.shape) * sd


def strong(x: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Random global scale, then coordinate dropout, then Gaussian noise."""
    x = np.asarray(x, dtype=np.float64)
    batch_shape = x.shape[:-1] + (1,)
    lo, hi = spec.strong_scale_range
    out = x * (rng.uniform(lo, hi, batch_shape) if hi > lo else lo)
    if spec.strong_dropout_p > 0:
        out = out * (rng.random(x.shape) >= spec.strong_dropout_p)
    sd = np.asarray(spec.strong_noise_sd, dtype=np.float64)
    if np.any(sd > 0):
        out = out + rng.normal(0.0, 1.0, x.shape) * sd
    return out
