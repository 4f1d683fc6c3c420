"""Teacher pretraining, teacher-student co-training and missing-modality evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import accuracy_score, f1_score

from . import autodiff as ad
from .autodiff import Tape
from .data import Dataset
from .encoder import EncoderConfig, Model, forward
from .errors import ConfigError, DataError, NumericError, TrainingError
from .losses import LossWeights, ce_loss, js_logits_loss, total_loss, uncertainty_consistency_loss

log = logging.getLogger(__name__)

Mask = FrozenSet[str]

ALL_MASKS: Tuple[Mask, ...] = tuple(
    frozenset(c) for k in (1, 2, 3) for c in combinations("lav", k)
)
PARTIAL_MASKS: Tuple[Mask, ...] = ALL_MASKS[:6]
FULL_MASK: Mask = frozenset("lav")


def mask_name(mask: Mask) -> str:
    return "{" + ",".join(m for m in "lav" if m in mask) + "}"


def parse_mask(name: str) -> Mask:
    body = name.strip().strip("{}").replace(" ", "")
    letters = [c for c in body.split(",") if c] if "," in body else list(body)
    mask = frozenset(letters)
    if not mask or not mask <= FULL_MASK or len(letters) != len(mask):
        raise ConfigError(f"invalid modality mask {name!r}")
    return mask


@dataclass(frozen=True)
class MRMConfig:
    p_intra: float = 0.3
    inter_patterns: Tuple[Mask, ...] = ALL_MASKS

    def __post_init__(self):
        if not 0.0 <= self.p_intra <= 1.0:
            raise ConfigError(f"p_intra must lie in [0, 1], got {self.p_intra}")
        if not self.inter_patterns:
            raise ConfigError("inter_patterns is empty")
        for m in self.inter_patterns:
            if not m or not m <= FULL_MASK:
                raise ConfigError(f"invalid training mask {sorted(m)}")


@dataclass(frozen=True)
class TrainConfig:
    epochs_teacher: int = 30
    epochs_cotrain: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-2
    momentum: float = 0.9
    clip_norm: float = 5.0
    seed: int = 0
    loss: LossWeights = field(default_factory=LossWeights)
    mrm: MRMConfig = field(default_factory=MRMConfig)
    fusion: str = "confidence"
    normalized_weights: bool = False
    rrm: bool = True
    freeze_teacher: bool = True

    def __post_init__(self):
        if self.epochs_teacher < 0 or self.epochs_cotrain < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.batch_size < 1 or not self.learning_rate > 0 or not self.clip_norm > 0:
            raise ConfigError("batch_size, learning_rate and clip_norm must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.fusion not in ("confidence", "mean"):
            raise ConfigError(f"fusion must be 'confidence' or 'mean', got {self.fusion!r}")


@dataclass
class TeacherStudentPair:
    teacher: Model
    student: Model

    @classmethod
    def init(cls, config: EncoderConfig, seed: int) -> "TeacherStudentPair":
        t_seq, s_seq = np.random.SeedSequence([seed, 1]).spawn(2)
        return cls(Model.init(config, np.random.default_rng(t_seq)),
                   Model.init(config, np.random.default_rng(s_seq)))


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent generator per (seed, purpose) pair."""
    tag = {"teacher": 2, "cotrain": 3, "eval": 4}[purpose]
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


# ----------------------------------------------------------------------------
# corruption
# ----------------------------------------------------------------------------


def apply_mask(xs: Sequence[np.ndarray], mask: Mask) -> Tuple[np.ndarray, ...]:
    return tuple(x if m in mask else np.zeros_like(x) for m, x in zip("lav", xs))


def drop_frames(xs: Sequence[np.ndarray], p: float, rng: np.random.Generator) -> Tuple[np.ndarray, ...]:
    """Zero each frame of each modality independently with probability ``p``."""
    out = []
    for x in xs:
        keep = rng.random(x.shape[:-1]) >= p
        out.append(x * keep[..., None])
    return tuple(out)


def mrm_corrupt(xs: Sequence[np.ndarray], cfg: MRMConfig, rng: np.random.Generator) -> Tuple[np.ndarray, ...]:
    """Random inter- and intra-modality missingness for a batch ``[B, T, d_m]``.

    A single sample ``[T, d_m]`` is treated as a batch of one. Each sample gets
    one availability mask drawn uniformly from ``cfg.inter_patterns``; frames of
    the available modalities are then dropped with probability ``p_intra``.
    """
    single = xs[0].ndim == 2
    if single:
        xs = [x[None] for x in xs]
    B = xs[0].shape[0]
    choice = rng.integers(len(cfg.inter_patterns), size=B)
    avail = np.array([[m in cfg.inter_patterns[c] for m in "lav"] for c in choice])
    out = []
    for j, x in enumerate(xs):
        keep = rng.random(x.shape[:-1]) >= cfg.p_intra
        keep &= avail[:, j : j + 1]
        out.append(np.where(keep[..., None], x, 0.0))
    return tuple(o[0] for o in out) if single else tuple(out)


# ----------------------------------------------------------------------------
# optimisation
# ----------------------------------------------------------------------------


class SGD:
    """Momentum SGD with global gradient-norm clipping."""

    def __init__(self, lr: float, momentum: float = 0.9, clip_norm: Optional[float] = 5.0):
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, model: Model, grads: Dict[str, np.ndarray]) -> Model:
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        new = {}
        for k, p in model.state().items():
            v = self.momentum * self.velocity.get(k, 0.0) + scale * grads[k]
            self.velocity[k] = v
            new[k] = p - self.lr * v
        return Model.from_state(model.config, new)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i : i + batch_size]


def _xs(data: Dataset, idx) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return data.L[idx], data.A[idx], data.V[idx]


def _check_finite(value: float, what: str, epoch: int, step: int) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what} at epoch {epoch}, step {step}")


def _fwd(model: Model, xs, cfg: TrainConfig, rng, sample: Optional[bool] = None):
    return forward(model, xs, fusion=cfg.fusion, normalized=cfg.normalized_weights,
                   sample=cfg.rrm if sample is None else sample, rng=rng)


# ----------------------------------------------------------------------------
# training
# ----------------------------------------------------------------------------


def train_ce(
    model: Model,
    data: Dataset,
    cfg: TrainConfig,
    epochs: int,
    rng: np.random.Generator,
    corrupt: bool = False,
) -> Tuple[Model, List[dict]]:
    """Cross-entropy training, optionally on MRM-corrupted inputs."""
    opt = SGD(cfg.learning_rate, cfg.momentum, cfg.clip_norm)
    history = []
    for epoch in range(1, epochs + 1):
        losses, U = [], []
        for step, idx in enumerate(_batches(len(data), cfg.batch_size, rng)):
            xs = _xs(data, idx)
            if corrupt:
                xs = mrm_corrupt(xs, cfg.mrm, rng)
            try:
                tape = Tape()
                out = _fwd(model.bind(tape), xs, cfg, rng)
                loss = ce_loss(out.logits, data.labels[idx])
                grads = ad.backward(tape, loss)
            except NumericError as e:
                raise TrainingError(f"epoch {epoch}, step {step}: {e}") from e
            _check_finite(float(loss.data), "loss", epoch, step)
            model = opt.step(model, grads)
            losses.append(float(loss.data))
            U.append(float(out.fused.U_F.data.mean()))
        history.append({"epoch": epoch, "ce": float(np.mean(losses)), "U": float(np.mean(U))})
        log.info("ce epoch %d: loss %.4f", epoch, history[-1]["ce"])
    return model, history


def pretrain_teacher(pair: TeacherStudentPair, data: Dataset, cfg: TrainConfig) -> Tuple[Model, List[dict]]:
    """Train the teacher on complete-modality samples with cross-entropy only."""
    teacher, history = train_ce(pair.teacher, data, cfg, cfg.epochs_teacher, stream(cfg.seed, "teacher"))
    pair.teacher = teacher
    return teacher, history


def cotrain(pair: TeacherStudentPair, data: Dataset, cfg: TrainConfig) -> Tuple[Model, List[dict]]:
    """Distil the teacher into a student that sees MRM-corrupted inputs.

    Per batch the teacher runs on the complete sample (fused location, no
    sampling, no gradient) and the student on the corrupted one. The student
    minimises ``CE + alpha * JS(logits) + beta * MSE(U_F)``.
    """
    rng = stream(cfg.seed, "cotrain")
    w = cfg.loss
    opt = SGD(cfg.learning_rate, cfg.momentum, cfg.clip_norm)
    t_opt = SGD(cfg.learning_rate, cfg.momentum, cfg.clip_norm)
    need_teacher = w.alpha > 0 or w.beta > 0
    student, teacher = pair.student, pair.teacher
    history = []
    for epoch in range(1, cfg.epochs_cotrain + 1):
        acc = {k: [] for k in ("ce", "logits", "unc", "total", "U_student", "U_teacher", "U_gap")}
        for step, idx in enumerate(_batches(len(data), cfg.batch_size, rng)):
            xs = _xs(data, idx)
            labels = data.labels[idx]
            corrupted = mrm_corrupt(xs, cfg.mrm, rng)
            try:
                t_out = None
                if need_teacher or not cfg.freeze_teacher:
                    t_tape = Tape()
                    t_out = _fwd(teacher.bind(t_tape), xs, cfg, None, sample=False)
                tape = Tape()
                out = _fwd(student.bind(tape), corrupted, cfg, rng)
                ce = ce_loss(out.logits, labels)
                l_logits = js_logits_loss(out.logits, t_out.logits.data, w.temperature) if w.alpha > 0 else 0.0
                l_unc = uncertainty_consistency_loss(out.fused.U_F, t_out.fused.U_F.data) if w.beta > 0 else 0.0
                loss = total_loss(ce, l_logits, l_unc, w) if need_teacher else ce
                grads = ad.backward(tape, loss)
                if not cfg.freeze_teacher:
                    t_loss = ce_loss(t_out.logits, labels)
                    t_grads = ad.backward(t_tape, t_loss)
            except NumericError as e:
                raise TrainingError(f"epoch {epoch}, step {step}: {e}") from e
            _check_finite(float(loss.data), "loss", epoch, step)
            student = opt.step(student, grads)
            if not cfg.freeze_teacher:
                teacher = t_opt.step(teacher, t_grads)
            U_s = out.fused.U_F.data
            U_t = t_out.fused.U_F.data if t_out is not None else np.full_like(U_s, np.nan)
            acc["ce"].append(float(ce.data))
            acc["logits"].append(float(getattr(l_logits, "data", l_logits)))
            acc["unc"].append(float(getattr(l_unc, "data", l_unc)))
            acc["total"].append(float(loss.data))
            acc["U_student"].append(float(U_s.mean()))
            acc["U_teacher"].append(float(U_t.mean()))
            acc["U_gap"].append(float(np.abs(U_s - U_t).mean()))
        history.append({"epoch": epoch, **{k: float(np.mean(v)) for k, v in acc.items()}})
        log.info("cotrain epoch %d: total %.4f, U gap %.4f", epoch, history[-1]["total"], history[-1]["U_gap"])
    pair.student, pair.teacher = student, teacher
    return student, history


# ----------------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------------

Condition = Union[Mask, float]


def condition_name(cond: Condition) -> str:
    return f"p={cond:.1f}" if isinstance(cond, float) else mask_name(cond)


def predict(model: Model, xs, cfg: TrainConfig) -> np.ndarray:
    out = _fwd(model.bind(Tape()), xs, cfg, None, sample=False)
    return np.argmax(out.logits.data, axis=-1)


def evaluate(model: Model, data: Dataset, condition: Condition, cfg: TrainConfig, eval_seed: int = 0) -> dict:
    """Metrics of ``model`` on ``data`` under an availability mask or a frame-drop ratio."""
    if len(data) == 0:
        raise DataError("empty test set")
    xs = data.modalities
    if isinstance(condition, float):
        p_tag = int(round(condition * 1000))
        xs = drop_frames(xs, condition, np.random.default_rng(np.random.SeedSequence([eval_seed, 4, p_tag])))
    else:
        xs = apply_mask(xs, condition)
    pred = predict(model, xs, cfg)
    y = data.labels
    labels = list(range(model.config.n_classes))
    per_class = f1_score(y, pred, labels=labels, average=None, zero_division=0)
    return {
        "condition": condition_name(condition),
        "accuracy": float(accuracy_score(y, pred)),
        "macro_f1": float(f1_score(y, pred, labels=labels, average="macro", zero_division=0)),
        "weighted_f1": float(f1_score(y, pred, labels=labels, average="weighted", zero_division=0)),
        "per_class_f1": [float(v) for v in per_class],
    }


def evaluate_masks(model: Model, data: Dataset, cfg: TrainConfig) -> Dict[str, dict]:
    """All six partial masks, their average macro F1 as ``Avg.``, and the full mask."""
    rows = {mask_name(m): evaluate(model, data, m, cfg) for m in PARTIAL_MASKS}
    avg = float(np.mean([rows[mask_name(m)]["macro_f1"] for m in PARTIAL_MASKS]))
    rows["Avg."] = {"condition": "Avg.", "macro_f1": avg}
    rows[mask_name(FULL_MASK)] = evaluate(model, data, FULL_MASK, cfg)
    return rows


def run_casd(
    train: Dataset,
    enc_cfg: EncoderConfig,
    cfg: TrainConfig,
    teacher: Optional[Model] = None,
) -> Tuple[TeacherStudentPair, List[dict], List[dict]]:
    """Full pipeline: pretrain a teacher (unless given) and co-train a student."""
    pair = TeacherStudentPair.init(enc_cfg, cfg.seed)
    t_hist: List[dict] = []
    if teacher is not None:
        pair.teacher = teacher
    elif cfg.loss.alpha > 0 or cfg.loss.beta > 0:
        _, t_hist = pretrain_teacher(pair, train, cfg)
    _, s_hist = cotrain(pair, train, cfg)
    return pair, t_hist, s_hist


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    loss_kw = {k: kw.pop(k) for k in ("alpha", "beta", "temperature") if k in kw}
    if loss_kw:
        kw["loss"] = replace(cfg.loss, **loss_kw)
    return replace(cfg, **kw)
