"""Confidence-aware fusion of the (language, audio, vision) Student's-t embeddings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, DomainError
from .evidist import StudentT, sample_standard_t

UF_EPS = 1e-3


@dataclass
class FusedStudentT:
    u_F: Tensor
    sigma_F: Tensor
    v_F: Tensor
    weights: Tuple[Tensor, Tensor, Tensor]
    U_F: Tensor


def _values(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def confidence_weights(v1, v2, v3, normalized: bool = False):
    """Per-modality confidence from degrees of freedom.

    ``C1 = v1/(v1+v2)``, ``C2 = v2/(v1+v2)``, ``C3 = v3/(v1+v2+v3)``. The three
    do not sum to one; ``normalized=True`` divides them by their sum.
    Works on floats as well as tensors.
    """
    for v in (v1, v2, v3):
        if np.any(_values(v) <= 0):
            raise DomainError("degrees of freedom must be positive")
    c1 = v1 / (v1 + v2)
    c2 = v2 / (v1 + v2)
    c3 = v3 / (v1 + v2 + v3)
    if normalized:
        total = c1 + c2 + c3
        c1, c2, c3 = c1 / total, c2 / total, c3 / total
    return c1, c2, c3


def uncertainty_score(sigma_F: Tensor, v_F: Tensor) -> Tensor:
    """``sigma_F * v_F / max(v_F - 3, 1e-3)``."""
    return sigma_F * v_F / ad.clamp_min(v_F - 3.0, UF_EPS)


def _check(d1: StudentT, d2: StudentT, d3: StudentT) -> None:
    shapes = {d.u.shape for d in (d1, d2, d3)} | {d.o.shape for d in (d1, d2, d3)}
    if len(shapes) != 1:
        raise DimensionError(f"modality shapes differ: {sorted(shapes)}")
    for d in (d1, d2, d3):
        if np.any(_values(d.v) <= 2.0):
            raise DomainError("fusion needs every degree of freedom above 2")


def fuse(d1: StudentT, d2: StudentT, d3: StudentT, normalized: bool = False) -> FusedStudentT:
    """Fuse three t-distributions; modality 1 is the scale reference."""
    _check(d1, d2, d3)
    v1, v2, v3 = d1.v, d2.v, d3.v
    c1, c2, c3 = confidence_weights(v1, v2, v3, normalized=normalized)
    v_F = ad.minimum(v1, v2, v3)
    u_F = c1 * d1.u + c2 * d2.u + c3 * d3.u
    r2 = v2 * (v1 - 2.0) / (v1 * (v2 - 2.0))
    r3 = v3 * (v1 - 2.0) / (v1 * (v3 - 2.0))
    sigma_F = (d1.o + r2 * d2.o + r3 * d3.o) * (1.0 / 3.0)
    return FusedStudentT(u_F, sigma_F, v_F, (c1, c2, c3), uncertainty_score(sigma_F, v_F))


def mean_fuse(d1: StudentT, d2: StudentT, d3: StudentT) -> FusedStudentT:
    """Ablation baseline: plain averages of locations and scales."""
    _check(d1, d2, d3)
    third = 1.0 / 3.0
    u_F = (d1.u + d2.u + d3.u) * third
    sigma_F = (d1.o + d2.o + d3.o) * third
    v_F = ad.minimum(d1.v, d2.v, d3.v)
    w = (third, third, third)
    return FusedStudentT(u_F, sigma_F, v_F, w, uncertainty_score(sigma_F, v_F))


def draw_noise(f: FusedStudentT, rng: np.random.Generator) -> np.ndarray:
    """One standard-t draw per element of ``u_F`` with dof ``v_F`` of its sample."""
    return sample_standard_t(f.v_F.data, rng, size=f.u_F.shape)


def rrm_sample(
    f: FusedStudentT,
    rng: Optional[np.random.Generator] = None,
    mode: str = "train",
    t: Optional[np.ndarray] = None,
) -> Tensor:
    """Reparameterized draw ``u_F + sqrt(sigma_F) * t``; ``infer`` returns ``u_F``.

    ``t`` is treated as a constant of the step. Pass it explicitly to freeze
    the sample (gradient checks); otherwise it is drawn from ``rng``.
    """
    if mode == "infer":
        return f.u_F
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    if t is None:
        if rng is None:
            raise ValueError("train mode needs an rng or a frozen t")
        t = draw_noise(f, rng)
    return f.u_F + ad.sqrt(f.sigma_F) * t
