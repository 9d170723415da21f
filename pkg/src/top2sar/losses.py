"""Top-2 smooth loss, cross-entropy and the cost-sensitive combination of both.

Every loss here works on a single score vector ``s`` (shape ``(n,)``) or on a
batch of them (shape ``(B, n)`` with one label per row).  Values and
gradients w.r.t. the scores are returned together.

The top-2 loss enumerates the ``n(n-1)/2`` unordered label pairs.  Pairs that
contain the true label carry no margin, so the loss reduces to

    tau * log(1 + exp(LSE_noncontaining - LSE_containing))

(a softplus of the log-ratio), which is nonnegative by construction and keeps
full relative precision when the loss is tiny.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class LossError(ValueError):
    """Invalid input to a loss function (bad label, scores, temperature or shape)."""


class InvalidStatsError(LossError):
    pass


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.2
    tau: float = 1.0
    mu: float = 0.25

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise LossError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.tau > 0.0:
            raise LossError(f"tau must be > 0, got {self.tau}")
        if not self.mu >= 0.0:
            raise LossError(f"mu must be >= 0, got {self.mu}")


@dataclass
class LossValueGrad:
    value: float | np.ndarray
    grad: np.ndarray


def class_weights(counts) -> np.ndarray:
    """Per-class cost weights ``(1 - N_y / N) / (n - 1)``; they sum to one.

    Rare classes get weights close to ``1 / (n - 1)``, a class holding all
    samples gets zero.
    """
    counts = np.asarray(counts)
    if counts.ndim != 1 or counts.size < 2:
        raise InvalidStatsError("class weights need counts for at least 2 classes")
    if np.any(counts < 0) or not np.all(np.isfinite(counts)):
        raise InvalidStatsError("class counts must be finite and nonnegative")
    total = counts.sum()
    if total <= 0:
        raise InvalidStatsError("total sample count is zero")
    n = counts.size
    return (1.0 - counts / total) / (n - 1)


@lru_cache(maxsize=64)
def _pairs(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    first, second = np.triu_indices(n, k=1)
    # incidence[p, m] = 1 when class m belongs to pair p
    incidence = np.zeros((first.size, n))
    incidence[np.arange(first.size), first] = 1.0
    incidence[np.arange(first.size), second] = 1.0
    return first, second, incidence


def _check_scores(s, y):
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    s2 = s[None, :] if single else s
    if s2.ndim != 2:
        raise LossError(f"scores must be 1-D or 2-D, got shape {s.shape}")
    n = s2.shape[1]
    if n < 2:
        raise LossError("need at least 2 classes")
    if not np.all(np.isfinite(s2)):
        raise LossError("scores must be finite")
    y2 = np.atleast_1d(np.asarray(y))
    if y2.shape != (s2.shape[0],):
        raise LossError(f"expected {s2.shape[0]} labels, got shape {np.shape(y)}")
    if not np.issubdtype(y2.dtype, np.integer):
        if not np.all(np.equal(np.mod(y2, 1), 0)):
            raise LossError("labels must be integers")
        y2 = y2.astype(np.int64)
    if np.any(y2 < 0) or np.any(y2 >= n):
        raise LossError(f"label out of range [0, {n})")
    return s2, y2, single


def _masked_lse(z: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise log-sum-exp of ``z`` over ``mask`` and the matching softmax weights.

    Rows with an empty mask give ``-inf`` and all-zero weights.
    """
    zm = np.where(mask, z, -np.inf)
    m = zm.max(axis=1, keepdims=True)
    safe_m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(zm - safe_m)
    tot = e.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore"):
        lse = (safe_m + np.log(tot))[:, 0]
    w = np.divide(e, tot, out=np.zeros_like(e), where=tot > 0)
    return lse, w


def top2_smooth_loss(s, y, tau: float = 1.0) -> LossValueGrad:
    """Temperature-smoothed top-2 loss and its gradient w.r.t. the scores."""
    if not (np.isfinite(tau) and tau > 0):
        raise LossError(f"tau must be finite and > 0, got {tau}")
    s2, y2, single = _check_scores(s, y)
    value, grad = _top2(s2, y2, tau)
    if single:
        return LossValueGrad(float(value[0]), grad[0])
    return LossValueGrad(value, grad)


def _top2(s2, y2, tau):
    n = s2.shape[1]
    first, second, incidence = _pairs(n)
    half_sum = 0.5 * (s2[:, first] + s2[:, second])
    contains = (first[None, :] == y2[:, None]) | (second[None, :] == y2[:, None])
    margin = (~contains).astype(np.float64)

    # containing pairs have zero margin, so they appear identically in both sums
    z = (half_sum + margin) / tau
    lse_in, w_in = _masked_lse(z, contains)
    lse_out, w_out = _masked_lse(z, ~contains)
    ratio_log = lse_out - lse_in
    softplus = np.logaddexp(0.0, ratio_log)
    value = tau * softplus

    # softmax over all pairs = sigma * (out weights) + (1 - sigma) * (in weights)
    sigma = np.exp(ratio_log - softplus)
    grad = 0.5 * (sigma[:, None] * (w_out - w_in)) @ incidence
    return value, grad


def top2_hard_reference(s, y) -> float | np.ndarray:
    """Zero-temperature limit of the top-2 smooth loss (max instead of log-sum-exp)."""
    s2, y2, single = _check_scores(s, y)
    first, second, _ = _pairs(s2.shape[1])
    half_sum = 0.5 * (s2[:, first] + s2[:, second])
    contains = (first[None, :] == y2[:, None]) | (second[None, :] == y2[:, None])
    all_max = (half_sum + (~contains)).max(axis=1)
    in_max = np.where(contains, half_sum, -np.inf).max(axis=1)
    value = all_max - in_max
    return float(value[0]) if single else value


def cross_entropy(s, y) -> LossValueGrad:
    s2, y2, single = _check_scores(s, y)
    value, grad = _ce(s2, y2)
    if single:
        return LossValueGrad(float(value[0]), grad[0])
    return LossValueGrad(value, grad)


def _ce(s2, y2):
    rows = np.arange(s2.shape[0])
    d = s2 - s2[rows, y2][:, None]
    m = d.max(axis=1)
    e = np.exp(d - m[:, None])
    tot = e.sum(axis=1)
    # when the true class is the argmax, log1p of the off-label mass is exact
    off = np.where(np.arange(s2.shape[1]) == y2[:, None], 0.0, e).sum(axis=1)
    value = np.where(m <= 0.0, np.log1p(off), m + np.log(tot))
    grad = e / tot[:, None]
    grad[rows, y2] -= 1.0
    return value, grad


def combined_data_loss(s, y, w, cfg: LossConfig = LossConfig()) -> LossValueGrad:
    """``(1 - lam) * CE + w_y * lam * top2``; the L2 term lives with the network."""
    s2, y2, single = _check_scores(s, y)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (s2.shape[1],):
        raise LossError(f"class weights have shape {w.shape}, expected ({s2.shape[1]},)")
    if cfg.lam == 0.0:
        out = LossValueGrad(*_ce(s2, y2))
    elif cfg.lam == 1.0:
        value, grad = _top2(s2, y2, cfg.tau)
        wy = w[y2]
        out = LossValueGrad(wy * value, wy[:, None] * grad)
    else:
        ce_value, ce_grad = _ce(s2, y2)
        t2_value, t2_grad = _top2(s2, y2, cfg.tau)
        coef = cfg.lam * w[y2]
        out = LossValueGrad(
            (1.0 - cfg.lam) * ce_value + coef * t2_value,
            (1.0 - cfg.lam) * ce_grad + coef[:, None] * t2_grad,
        )
    if single:
        return LossValueGrad(float(out.value[0]), out.grad[0])
    return out
