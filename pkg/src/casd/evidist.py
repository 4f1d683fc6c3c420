"""Normal-Inverse-Gamma evidence and the Student's-t predictive it induces.

``gamma`` and ``beta`` are per-element maps over ``[..., T, d]``; ``delta`` and
``alpha`` are one value per modality and sample, shaped ``[..., 1, 1]`` so they
broadcast over the feature map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class NIGParams:
    gamma: Tensor
    beta: Tensor
    delta: Tensor
    alpha: Tensor


@dataclass
class StudentT:
    """Location ``u``, squared scale ``o`` and degrees of freedom ``v``."""

    u: Tensor
    o: Tensor
    v: Tensor


def nig_to_student(p: NIGParams) -> StudentT:
    o = p.beta * (1.0 + p.delta) / (p.delta * p.alpha)
    return StudentT(u=p.gamma, o=o, v=2.0 * p.alpha)


def aleatoric(p: NIGParams) -> Tensor:
    """Expected noise variance ``beta / (alpha - 1)``."""
    return p.beta / (p.alpha - 1.0)


def epistemic(p: NIGParams) -> Tensor:
    """Variance of the mean, ``beta / (delta (alpha - 1))``."""
    return p.beta / (p.delta * (p.alpha - 1.0))


def sample_standard_t(v, rng: np.random.Generator, size=None):
    """Draw from St(0, 1, v) as ``z / sqrt(g / v)`` with ``g ~ chi2(v)``.

    ``v`` may be an array broadcastable to ``size``; ``inf`` yields a normal draw.
    The normal draws are taken before the chi-square draws, so a fixed seed
    gives a fixed stream.
    """
    v = np.asarray(v, dtype=np.float64)
    if np.any(v <= 0):
        raise ValueError("degrees of freedom must be positive")
    shape = np.broadcast_shapes(v.shape, () if size is None else tuple(np.atleast_1d(size)))
    z = rng.standard_normal(shape)
    finite = np.isfinite(v)
    vv = np.broadcast_to(np.where(finite, v, 1.0), shape)
    g = rng.gamma(vv / 2.0, 2.0)
    t = np.where(np.broadcast_to(finite, shape), z / np.sqrt(g / vv), z)
    if size is None and t.ndim == 0:
        return float(t)
    return t


def _values(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def student_logpdf(d: StudentT, x) -> np.ndarray:
    """Element-wise log-density of the location-scale t with squared scale ``o``."""
    u, o, v, x = (_values(a) for a in (d.u, d.o, d.v, x))
    r2 = (x - u) ** 2 / o
    return (
        gammaln((v + 1.0) / 2.0)
        - gammaln(v / 2.0)
        - 0.5 * np.log(v * math.pi * o)
        - (v + 1.0) / 2.0 * np.log1p(r2 / v)
    )


def nig_from_arrays(tape: ad.Tape, gamma, beta, delta, alpha) -> NIGParams:
    """Wrap raw arrays as constant NIG parameters (diagnostics and tests)."""
    return NIGParams(*(tape.const(np.asarray(a, dtype=np.float64)) for a in (gamma, beta, delta, alpha)))
