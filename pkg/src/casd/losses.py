"""Task and distillation objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, DimensionError, DomainError

PROB_FLOOR = 1e-12
LOG2 = math.log(2.0)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.1
    temperature: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be non-negative")
        if not self.temperature > 0:
            raise ConfigError("temperature must be positive")


def _as_batch(x: Tensor) -> Tensor:
    return ad.reshape(x, (1, x.shape[0])) if x.ndim == 1 else x


def ce_loss(logits: Tensor, labels) -> Tensor:
    """Batch-mean ``-log softmax(logits)[label]``."""
    logits = _as_batch(logits)
    labels = np.atleast_1d(np.asarray(labels))
    C = logits.shape[-1]
    if labels.shape != (logits.shape[0],):
        raise DimensionError(f"{len(labels)} labels for {logits.shape[0]} logit rows")
    if np.any(labels < 0) or np.any(labels >= C) or labels.dtype.kind not in "iu":
        raise DataError(f"labels must be integers in [0, {C})")
    return -ad.mean(ad.pick(ad.log_softmax(logits), labels))


def kl_div(p, q) -> float:
    """``sum p log(p/q)`` with ``0 log 0 = 0`` and ``q`` floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    for name, d in (("p", p), ("q", q)):
        if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
            raise DomainError(f"{name} is not a probability distribution")
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(np.maximum(q[nz], PROB_FLOOR)))))


def js_logits_loss(y_student: Tensor, y_teacher, temperature: float = 1.0) -> Tensor:
    """Jensen-Shannon divergence between softened student and teacher outputs.

    Teacher logits are treated as constants. Returns the batch mean.
    """
    y_student = _as_batch(y_student)
    tape = y_student.tape
    yt = np.asarray(y_teacher.data if isinstance(y_teacher, Tensor) else y_teacher, dtype=np.float64)
    yt = yt.reshape(y_student.shape)
    # teacher side in plain numpy: no gradient flows there
    zt = yt / temperature
    zt = zt - zt.max(axis=-1, keepdims=True)
    log_pb = zt - np.log(np.exp(zt).sum(axis=-1, keepdims=True))
    pb = np.exp(log_pb)

    log_pa = ad.log_softmax(y_student, temperature)
    pa = ad.exp(log_pa)
    # log M = shift + log((exp(log_pa - shift) + pb / exp(shift)) / 2) with a
    # constant shift >= both logs; exact for any constant, so no floor is needed
    shift = np.maximum(log_pa.data, log_pb)
    log_m = ad.log((ad.exp(log_pa - shift) + np.exp(log_pb - shift)) * 0.5) + shift
    kl_a = ad.sum(pa * (log_pa - log_m), axis=-1)
    kl_b = ad.sum(tape.const(pb) * (tape.const(log_pb) - log_m), axis=-1)
    # rounding can push a row a few ulps outside [0, log 2]; the clamps only
    # bind at the saturated ends, where the true gradient is already ~0
    row = ad.minimum(ad.clamp_min((kl_a + kl_b) * 0.5, 0.0), LOG2)
    return ad.mean(row)


def uncertainty_consistency_loss(U_s: Tensor, U_t) -> Tensor:
    """Squared difference of uncertainty scores, averaged over batch and elements."""
    ut = np.asarray(U_t.data if isinstance(U_t, Tensor) else U_t, dtype=np.float64)
    if not isinstance(U_s, Tensor):
        raise TypeError("student uncertainty must be a Tensor")
    if ut.shape != U_s.shape:
        raise DimensionError(f"uncertainty shapes differ: {U_s.shape} vs {ut.shape}")
    return ad.mean(ad.square(U_s - ut))


def total_loss(ce, logits_l, unc_l, w: LossWeights):
    return ce + w.alpha * logits_l + w.beta * unc_l

