"""Dense ReLU network with analytic gradients, momentum SGD and the cosine schedule.

Everything runs in float64 so finite-difference checks are decisive. The output
layer emits ``C + 1`` raw logits: the task classes plus the virtual class that
erroneous examples are trained towards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np


class ConfigurationError(ValueError):
    """Raised when shapes or hyperparameters are inconsistent."""


class NonFiniteError(FloatingPointError):
    """Raised when a gradient, loss or parameter stops being finite."""


@dataclass
class NetworkParams:
    layer_sizes: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def arrays(self) -> List[np.ndarray]:
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(layer_sizes: Sequence[int], rng: np.random.Generator) -> NetworkParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigurationError(f"layer_sizes must be >= 2 positive ints, got {sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(sizes, weights, biases)


@dataclass
class Trace:
    """Activations cached by :func:`forward` for the backward pass."""

    inputs: List[np.ndarray]  # input to each layer
    pre: List[np.ndarray]  # pre-activation of each layer


def forward(params: NetworkParams, inputs: np.ndarray) -> Tuple[np.ndarray, Trace]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != params.layer_sizes[0]:
        raise ConfigurationError(
            f"input dim {x.shape[1]} does not match layer_sizes[0]={params.layer_sizes[0]}"
        )
    trace = Trace([], [])
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        trace.inputs.append(h)
        z = h @ w + b
        trace.pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return h, trace


def logits(params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    return forward(params, inputs)[0]


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax_ce(logit_vec: np.ndarray, target: int) -> Tuple[float, np.ndarray]:
    """Cross-entropy of one logit vector against a hard target (0-based index).

    Returns ``(loss, d loss / d logits)``.
    """
    z = np.asarray(logit_vec, dtype=np.float64)
    if not 0 <= target < z.shape[-1]:
        raise IndexError(f"target {target} out of range for {z.shape[-1]} logits")
    loss = -float(log_softmax(z)[target])
    grad = softmax(z)
    grad[target] -= 1.0
    return loss, grad


def loss_and_grads(
    params: NetworkParams,
    inputs: np.ndarray,
    targets: np.ndarray,
    weights: np.ndarray,
    return_terms: bool = False,
):
    """Weighted sum of per-row cross-entropies and its exact gradient.

    Each row of ``inputs`` is one term (already augmented); ``weights`` must be
    non-negative and a zero weight removes the term entirely. Gradients come
    back in :meth:`NetworkParams.arrays` order. With ``return_terms`` the
    unweighted per-row cross-entropies are returned as a third value (NaN for
    dropped rows).
    """
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ConfigurationError("term weights must be non-negative")
    grads = [np.zeros_like(a) for a in params.arrays()]
    keep = weights > 0
    terms = np.full(len(weights), np.nan)
    if not np.any(keep):
        return (0.0, grads, terms) if return_terms else (0.0, grads)
    x = np.asarray(inputs, dtype=np.float64)[keep]
    t, w = targets[keep], weights[keep]
    n_out = params.n_outputs
    if np.any(t < 0) or np.any(t >= n_out):
        raise IndexError(f"targets must lie in [0, {n_out})")

    z, trace = forward(params, x)
    rows = np.arange(len(t))
    logp = log_softmax(z)
    ce = -logp[rows, t]
    loss = float(np.sum(w * ce))
    terms[keep] = ce

    delta = np.exp(logp)
    delta[rows, t] -= 1.0
    delta *= w[:, None]
    for i in range(len(params.weights) - 1, -1, -1):
        grads[2 * i] = trace.inputs[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (trace.pre[i - 1] > 0)
    return (loss, grads, terms) if return_terms else (loss, grads)


@dataclass
class OptimizerState:
    momentum: float = 0.9
    buffers: List[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    @classmethod
    def for_params(cls, params: NetworkParams, momentum: float = 0.9) -> "OptimizerState":
        return cls(momentum, [np.zeros_like(a) for a in params.arrays()], 0)


def sgd_step(
    params: NetworkParams,
    grads: Sequence[np.ndarray],
    opt: OptimizerState,
    lr: float,
) -> None:
    """Classical momentum in place: ``v <- m*v + g``, ``p <- p - lr*v``."""
    arrays = params.arrays()
    if len(grads) != len(arrays) or len(opt.buffers) != len(arrays):
        raise ConfigurationError("gradient/buffer count does not match parameters")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient at optimizer step {opt.step_count}")
    for p, g, v in zip(arrays, grads, opt.buffers):
        if p.shape != g.shape or p.shape != v.shape:
            raise ConfigurationError(f"shape mismatch {p.shape} / {g.shape} / {v.shape}")
    # overflow is reported below as NonFiniteError rather than as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for p, g, v in zip(arrays, grads, opt.buffers):
            v *= opt.momentum
            v += g
            p -= lr * v
    opt.step_count += 1
    if not params.all_finite():
        raise NonFiniteError(f"parameters became non-finite at optimizer step {opt.step_count}")


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 0.03
    total_steps: int = 1

    def __post_init__(self) -> None:
        if self.base_lr <= 0 or self.total_steps < 1:
            raise ConfigurationError("base_lr must be > 0 and total_steps >= 1")


def cosine_lr(k: int, sched: LrSchedule) -> float:
    """``base_lr * cos(7*pi*k / (16*K))``; steps past K are clamped to K."""
    k = min(max(int(k), 0), sched.total_steps)
    return sched.base_lr * math.cos(7.0 * math.pi * k / (16.0 * sched.total_steps))
