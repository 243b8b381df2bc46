"""Classification and alignment losses with analytic gradients.

Binary losses follow the convention y in {+1, -1} with ``p`` the estimated
probability of the +1 class. Probabilities are clamped to
``[EPS, 1 - EPS]`` at the loss entry points unless ``strict=True``, in
which case out-of-range inputs raise ``ValueError``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp

EPS = 1e-12
BLANK = 10
NUM_SYMBOLS = 11


class InfeasibleTargetError(ValueError):
    pass


@dataclass(frozen=True)
class BinarySample:
    y: int
    p: float

    def __post_init__(self):
        if self.y not in (1, -1):
            raise ValueError("y must be +1 or -1")
        if not 0.0 < self.p < 1.0:
            raise ValueError("p must lie in (0, 1)")


@dataclass(frozen=True)
class FocalParams:
    alpha_t: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.alpha_t <= 1.0:
            raise ValueError("alpha_t must lie in [0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


def _prob(p, strict):
    p = np.asarray(p, dtype=np.float64)
    if strict:
        if np.any((p <= 0) | (p >= 1)):
            raise ValueError("probability outside (0, 1)")
        return p
    return np.clip(p, EPS, 1.0 - EPS)


def p_t(p, y):
    """p where y = +1, 1 - p elsewhere."""
    return np.where(np.asarray(y) == 1, p, 1.0 - np.asarray(p))


def cross_entropy(p, y, strict=True):
    return -np.log(p_t(_prob(p, strict), y))


def focal_loss(p, y, alpha_t=1.0, gamma=2.0, strict=True):
    """-alpha_t * (1 - p_t)**gamma * log(p_t)."""
    pt = p_t(_prob(p, strict), y)
    return -alpha_t * (1.0 - pt) ** gamma * np.log(pt)


def focal_grad(p, y, alpha_t=1.0, gamma=2.0, strict=True):
    """d focal_loss / d p."""
    p = _prob(p, strict)
    pt = p_t(p, y)
    sign = np.where(np.asarray(y) == 1, 1.0, -1.0)
    one_m = 1.0 - pt
    mod = one_m ** gamma
    # d/dpt (1 - pt)^gamma, with gamma = 0 kept clear of 0 * inf
    dmod = gamma * one_m ** (gamma - 1.0) if gamma > 0 else 0.0
    d_pt = -alpha_t * (mod / pt - dmod * np.log(pt))
    return d_pt * sign


def detection_alpha(y, alpha=0.25):
    """Class-balanced weight: alpha for positives, 1 - alpha for negatives."""
    return np.where(np.asarray(y) == 1, alpha, 1.0 - alpha)


def multiclass_ce(distribution, target: int, strict=True):
    dist = np.asarray(distribution, dtype=np.float64)
    if not 0 <= target < dist.shape[-1]:
        raise IndexError(f"target {target} out of range for {dist.shape[-1]} classes")
    if abs(dist.sum() - 1.0) > 1e-6:
        raise ValueError("distribution must sum to 1")
    return float(-np.log(_prob(dist[target], strict)))


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean CE over rows of ``logits`` (N, K) and its gradient w.r.t. logits."""
    logits = np.asarray(logits)
    targets = np.asarray(targets, dtype=int)
    logp = log_softmax(logits.astype(np.float64), axis=-1)
    n = logits.shape[0]
    loss = -logp[np.arange(n), targets].mean()
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    return loss, (grad / n).astype(logits.dtype)


def binary_objectness_loss(logits, y, kind="focal", alpha=0.25, gamma=2.0):
    """Per-element objectness loss on logits and its gradient w.r.t. logits.

    ``kind`` is ``"focal"`` (alpha-balanced focal loss) or ``"ce"``.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y)
    p = np.clip(1.0 / (1.0 + np.exp(-np.clip(z, -60, 60))), EPS, 1.0 - EPS)
    if kind == "ce":
        a, g = 1.0, 0.0
    elif kind == "focal":
        a, g = detection_alpha(y, alpha), gamma
    else:
        raise ValueError(f"unknown objectness loss {kind!r}")
    loss = focal_loss(p, y, a, g, strict=False)
    grad = focal_grad(p, y, a, g, strict=False) * p * (1.0 - p)
    return loss, grad


def _extend(target):
    ext = [BLANK]
    for ch in target:
        ext += [int(ch), BLANK]
    return ext


def _check_feasible(target, frames):
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    if len(target) + repeats > frames:
        raise InfeasibleTargetError(
            f"target of length {len(target)} needs {len(target) + repeats} frames, have {frames}"
        )


def _forward_backward(logp, ext):
    """Log-space alpha/beta recursions over the blank-extended target."""
    t_len, s_len = logp.shape[0], len(ext)
    ext = np.asarray(ext)
    neg = -np.inf
    skip = np.zeros(s_len, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])
    emit = logp[:, ext]  # (T, S)

    alpha = np.full((t_len, s_len), neg)
    alpha[0, 0] = emit[0, 0]
    if s_len > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        a1 = np.concatenate([[neg], prev[:-1]])
        a2 = np.where(skip, np.concatenate([[neg, neg], prev[:-2]]), neg)
        alpha[t] = np.logaddexp(np.logaddexp(prev, a1), a2) + emit[t]

    beta = np.full((t_len, s_len), neg)
    beta[-1, -1] = emit[-1, -1]
    if s_len > 1:
        beta[-1, -2] = emit[-1, -2]
    skip_fwd = np.zeros(s_len, dtype=bool)
    skip_fwd[:-2] = skip[2:]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        b1 = np.concatenate([nxt[1:], [neg]])
        b2 = np.where(skip_fwd, np.concatenate([nxt[2:], [neg, neg]]), neg)
        beta[t] = np.logaddexp(np.logaddexp(nxt, b1), b2) + emit[t]

    tail = [alpha[-1, -1]] + ([alpha[-1, -2]] if s_len > 1 else [])
    log_total = logsumexp(tail)
    return alpha, beta, emit, log_total


def sequence_loss_logp(logp, target):
    """Negative log-probability of ``target`` under per-frame log-probs (T, 11).

    Sums over every frame labelling that collapses to ``target`` (repeats
    merged, then blanks removed). Returns ``(loss, grad)`` with ``grad`` the
    derivative of the loss w.r.t. ``logp``.
    """
    logp = np.asarray(logp, dtype=np.float64)
    target = [int(c) for c in target]
    _check_feasible(target, logp.shape[0])
    ext = _extend(target)
    alpha, beta, emit, log_total = _forward_backward(logp, ext)
    if not np.isfinite(log_total):
        raise InfeasibleTargetError("target has zero probability under the given frames")
    # occupancy of each extended position: alpha*beta/emit (emit counted twice)
    occ = alpha + beta - emit - log_total
    grad = np.zeros_like(logp)
    for s, sym in enumerate(ext):
        grad[:, sym] -= np.exp(occ[:, s])
    return float(-log_total), grad


def sequence_loss(frames, target, strict=False):
    """Alignment loss on per-frame probability vectors (T, 11).

    Returns ``(loss, grad)`` where ``grad`` is w.r.t. the frame log-probabilities.
    """
    frames = _prob(np.asarray(frames, dtype=np.float64), strict)
    return sequence_loss_logp(np.log(frames), target)


def sequence_loss_logits(logits, target):
    """Alignment loss on raw per-frame scores; gradient w.r.t. the scores."""
    logp = log_softmax(np.asarray(logits, dtype=np.float64), axis=-1)
    loss, g = sequence_loss_logp(logp, target)
    # chain through log-softmax: dL/dz = g - softmax * sum(g)
    return loss, g - np.exp(logp) * g.sum(axis=-1, keepdims=True)
