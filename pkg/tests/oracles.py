"""Independent reference implementations used to check the package.

Nothing here imports the code under test; each function is written from the
defining formula with plain loops or a different numerical route.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import List, Sequence, Tuple

import numpy as np


def mlp_loss(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], x, targets, term_w) -> Tuple[float, list]:
    """Weighted summed cross-entropy of a ReLU MLP; also returns the ReLU masks."""
    h = np.asarray(x, dtype=np.float64)
    masks = []
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        if i < len(weights) - 1:
            masks.append(z > 0)
            h = np.where(z > 0, z, 0.0)
        else:
            h = z
    total = 0.0
    for row, t, wt in zip(h, targets, term_w):
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += wt * (lse - row[t])
    return total, masks


def central_differences(weights, biases, x, targets, term_w, h: float = 1e-5):
    """Numerical gradient per parameter array (order W0, b0, W1, b1, ...).

    Coordinates whose perturbation flips a ReLU on or off are reported in a
    parallel boolean mask so callers can skip them.
    """
    arrays = []
    for w, b in zip(weights, biases):
        arrays.extend((w, b))
    grads, kinks = [], []
    _, base_masks = mlp_loss(weights, biases, x, targets, term_w)
    for a in arrays:
        g = np.zeros_like(a)
        k = np.zeros(a.shape, dtype=bool)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            fp, mp = mlp_loss(weights, biases, x, targets, term_w)
            a[idx] = old - h
            fm, mm = mlp_loss(weights, biases, x, targets, term_w)
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
            k[idx] = any(np.any(p != q) for p, q in zip(mp, base_masks)) or any(
                np.any(p != q) for p, q in zip(mm, base_masks)
            )
        grads.append(g)
        kinks.append(k)
    return grads, kinks


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


def flex_thresholds_bruteforce(alpha: Sequence[int], tau: float) -> List[float]:
    top = 0
    for a in alpha:
        if a > top:
            top = a
    if top == 0:
        return [tau for _ in alpha]
    return [a / top * tau for a in alpha]


def pseudo_margin_direct(z: Sequence[float], c: int) -> float:
    best_other = -math.inf
    for i, v in enumerate(z):
        if i != c and v > best_other:
            best_other = v
    return z[c] - best_other


def nearest_rank(values: Sequence[float], q: float) -> float:
    """Smallest v such that at least q*n of the values are <= v."""
    s = sorted(values)
    n = len(s)
    for v in s:
        # exact rational comparison avoids float rounding in q*n
        if Fraction(sum(1 for u in s if u <= v)) >= Fraction(str(q)) * n:
            return v
    return s[-1]


def ema_replay(margins: Sequence[float], delta: float) -> float:
    apm = 0.0
    for t, pm in enumerate(margins, start=1):
        w = delta / (1 + t)
        apm = pm * w + apm * (1 - w)
    return apm


def margin_gate_predicate(apm: float, gamma: float, conf: float, flex_c: float, is_virtual: bool) -> bool:
    return (not is_virtual) and apm > gamma and conf > flex_c
