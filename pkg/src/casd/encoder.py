"""Per-modality encoders, evidential heads and the shared classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import DimensionError
from .evidist import NIGParams, StudentT, nig_to_student
from .fusion import FusedStudentT, draw_noise, fuse, mean_fuse, rrm_sample

MODALITIES = ("L", "A", "V")

BETA_FLOOR = 1e-4
DELTA_FLOOR = 1e-3
ALPHA_FLOOR = 1e-3


@dataclass(frozen=True)
class EncoderConfig:
    d_in: Tuple[int, int, int] = (12, 8, 8)
    d_model: int = 16
    T: int = 16
    n_classes: int = 2
    alpha_min: float = 2.0

    def __post_init__(self):
        if len(self.d_in) != 3 or min(self.d_in) < 1:
            raise DimensionError(f"d_in must be three positive extents, got {self.d_in}")
        if self.d_model < 1 or self.T < 1:
            raise DimensionError("d_model and T must be positive")
        if self.n_classes < 2:
            raise DimensionError("n_classes must be at least 2")
        if self.alpha_min < 1.0:
            raise DimensionError("alpha_min must be at least 1")


@dataclass
class ModalityEncoder:
    conv_w: object
    conv_b: object
    W_Q: object
    W_K: object
    W_V: object
    W_O: object
    W_gamma: object
    b_gamma: object
    W_beta: object
    b_beta: object
    w_delta: object
    b_delta: object
    w_alpha: object
    b_alpha: object


@dataclass
class Classifier:
    W: object
    bias: object


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(rng: np.random.Generator, d_in: int, d: int) -> ModalityEncoder:
    sq = lambda: _glorot(rng, (d, d), d, d)  # noqa: E731
    return ModalityEncoder(
        conv_w=_glorot(rng, (3, d_in, d), 3 * d_in, d),
        conv_b=np.zeros(d),
        W_Q=sq(),
        W_K=sq(),
        W_V=sq(),
        W_O=sq(),
        W_gamma=sq(),
        b_gamma=np.zeros(d),
        W_beta=sq(),
        b_beta=np.zeros(d),
        w_delta=_glorot(rng, (d, 1), d, 1),
        b_delta=np.zeros(1),
        w_alpha=_glorot(rng, (d, 1), d, 1),
        b_alpha=np.zeros(1),
    )


def param_shapes(c: EncoderConfig) -> Dict[str, Tuple[int, ...]]:
    d = c.d_model
    shapes = {}
    for m, d_in in zip(MODALITIES, c.d_in):
        shapes.update({
            f"{m}.conv_w": (3, d_in, d), f"{m}.conv_b": (d,),
            f"{m}.W_Q": (d, d), f"{m}.W_K": (d, d), f"{m}.W_V": (d, d), f"{m}.W_O": (d, d),
            f"{m}.W_gamma": (d, d), f"{m}.b_gamma": (d,),
            f"{m}.W_beta": (d, d), f"{m}.b_beta": (d,),
            f"{m}.w_delta": (d, 1), f"{m}.b_delta": (1,),
            f"{m}.w_alpha": (d, 1), f"{m}.b_alpha": (1,),
        })
    shapes["cls.W"] = (c.n_classes, d)
    shapes["cls.bias"] = (c.n_classes,)
    return shapes


@dataclass
class Model:
    """Three modality encoders and a classifier; teacher and student share this type."""

    config: EncoderConfig
    encoders: Dict[str, ModalityEncoder]
    classifier: Classifier

    @classmethod
    def init(cls, config: EncoderConfig, rng: np.random.Generator) -> "Model":
        encoders = {m: init_encoder(rng, d, config.d_model) for m, d in zip(MODALITIES, config.d_in)}
        W = _glorot(rng, (config.n_classes, config.d_model), config.d_model, config.n_classes)
        return cls(config, encoders, Classifier(W=W, bias=np.zeros(config.n_classes)))

    def state(self) -> Dict[str, np.ndarray]:
        out = {}
        for m in MODALITIES:
            for f in fields(ModalityEncoder):
                out[f"{m}.{f.name}"] = getattr(self.encoders[m], f.name)
        out["cls.W"] = self.classifier.W
        out["cls.bias"] = self.classifier.bias
        return out

    @classmethod
    def from_state(cls, config: EncoderConfig, state: Dict[str, object]) -> "Model":
        encoders = {
            m: ModalityEncoder(**{f.name: state[f"{m}.{f.name}"] for f in fields(ModalityEncoder)})
            for m in MODALITIES
        }
        return cls(config, encoders, Classifier(W=state["cls.W"], bias=state["cls.bias"]))

    def bind(self, tape: Tape) -> "Model":
        """Register every parameter on ``tape`` and return a tensor-valued view."""
        return Model.from_state(self.config, {k: tape.param(k, v) for k, v in self.state().items()})

    def copy(self) -> "Model":
        return Model.from_state(self.config, {k: np.array(v, copy=True) for k, v in self.state().items()})


# ----------------------------------------------------------------------------
# forward pieces
# ----------------------------------------------------------------------------


def attention(enc: ModalityEncoder, F: Tensor) -> Tuple[Tensor, Tensor]:
    """Single-head scaled dot-product self-attention over time.

    Returns the projected output and the ``[..., T, T]`` weight matrix.
    """
    d = F.shape[-1]
    Q = F @ enc.W_Q
    K = F @ enc.W_K
    V = F @ enc.W_V
    scores = (Q @ ad.swap_last(K)) * (1.0 / math.sqrt(d))
    weights = ad.softmax(scores, axis=-1)
    return (weights @ V) @ enc.W_O, weights


def encode(enc: ModalityEncoder, x: Tensor) -> Tensor:
    F = ad.conv1d_same(x, enc.conv_w, enc.conv_b)
    out, _ = attention(enc, F)
    return F + out


def evidential_head(enc: ModalityEncoder, feat: Tensor, alpha_min: float = 1.0) -> NIGParams:
    gamma = feat @ enc.W_gamma + enc.b_gamma
    beta = ad.softplus(feat @ enc.W_beta + enc.b_beta) + BETA_FLOOR
    pooled = ad.mean(feat, axis=-2, keepdims=True)  # [..., 1, d]
    delta = ad.softplus(pooled @ enc.w_delta + enc.b_delta) + DELTA_FLOOR
    alpha = ad.softplus(pooled @ enc.w_alpha + enc.b_alpha) + (alpha_min + ALPHA_FLOOR)
    return NIGParams(gamma=gamma, beta=beta, delta=delta, alpha=alpha)


def classify(cls: Classifier, s: Tensor) -> Tensor:
    """Logits ``[..., C]`` from the time-averaged representation."""
    g = ad.mean_pool(s)
    if g.ndim == 1:
        return ad.reshape(ad.reshape(g, (1, -1)) @ ad.swap_last(cls.W), (-1,)) + cls.bias
    return g @ ad.swap_last(cls.W) + cls.bias


@dataclass
class ForwardResult:
    logits: Tensor
    fused: FusedStudentT
    dists: List[StudentT]
    nig: List[NIGParams]
    s: Tensor
    noise: Optional[np.ndarray] = None


def forward(
    model: Model,
    xs: Sequence,
    *,
    fusion: str = "confidence",
    normalized: bool = False,
    sample: bool = True,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> ForwardResult:
    """Run a tensor-bound model on ``(x_L, x_A, x_V)`` batches of shape ``[B, T, d_m]``.

    With ``sample`` the classifier sees a reparameterized draw from the fused
    distribution; otherwise it sees the fused location.
    """
    tape = model.classifier.W.tape
    c = model.config
    nig, dists = [], []
    for m, x, d_in in zip(MODALITIES, xs, c.d_in):
        x = x if isinstance(x, Tensor) else tape.const(x)
        if x.shape[-2:] != (c.T, d_in):
            raise DimensionError(f"modality {m}: expected [..., {c.T}, {d_in}], got {x.shape}")
        p = evidential_head(model.encoders[m], encode(model.encoders[m], x), c.alpha_min)
        nig.append(p)
        dists.append(nig_to_student(p))
    if fusion == "confidence":
        fused = fuse(*dists, normalized=normalized)
    elif fusion == "mean":
        fused = mean_fuse(*dists)
    else:
        raise ValueError(f"unknown fusion {fusion!r}")
    if sample:
        if noise is None:
            if rng is None:
                raise ValueError("sampling needs rng or noise")
            noise = draw_noise(fused, rng)
        s = rrm_sample(fused, mode="train", t=noise)
    else:
        s = rrm_sample(fused, mode="infer")
    return ForwardResult(classify(model.classifier, s), fused, dists, nig, s, noise)
