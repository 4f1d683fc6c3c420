"""Synthetic three-modality sequences and JSONL ingestion."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, IngestionError

MODALITY_KEYS = ("L", "A", "V")


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 2
    n_train: int = 600
    n_val: int = 100
    n_test: int = 300
    T: int = 16
    d_in: Tuple[int, int, int] = (12, 8, 8)
    snr: Tuple[float, float, float] = (3.0, 1.5, 1.0)
    proto_scale: float = 0.12
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("n_classes must be at least 2")
        if min(self.n_train, self.n_val, self.n_test) < 1 or self.T < 1 or min(self.d_in) < 1:
            raise ConfigError("split sizes, T and d_in must be positive")
        if min(self.snr) < 0:
            raise ConfigError("snr values must be non-negative")
        if self.proto_scale < 0:
            raise ConfigError("proto_scale must be non-negative")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Sample:
    x_L: np.ndarray
    x_A: np.ndarray
    x_V: np.ndarray
    label: int


@dataclass
class Dataset:
    """Stacked modality arrays ``[N, T, d_m]`` with integer labels ``[N]``."""

    L: np.ndarray
    A: np.ndarray
    V: np.ndarray
    labels: np.ndarray
    split: str = "train"
    provenance: str = ""

    def __post_init__(self):
        n = len(self.labels)
        if n == 0:
            raise DataError("dataset is empty")
        if not (len(self.L) == len(self.A) == len(self.V) == n):
            raise DataError("modality arrays and labels disagree in length")
        if len({self.L.shape[1], self.A.shape[1], self.V.shape[1]}) != 1:
            raise DataError("modalities must share the sequence length T")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.L[i], self.A[i], self.V[i], int(self.labels[i]))

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def modalities(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.L, self.A, self.V

    @property
    def T(self) -> int:
        return self.L.shape[1]

    def subset(self, idx, split: Optional[str] = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.L[idx], self.A[idx], self.V[idx], self.labels[idx],
                       split or self.split, self.provenance)


def _smoothed_noise(rng: np.random.Generator, n: int, T: int, d: int) -> np.ndarray:
    raw = rng.standard_normal((n, T + 2, d))
    # 3-tap moving average, rescaled back to unit variance
    return (raw[:, :-2] + raw[:, 1:-1] + raw[:, 2:]) / np.sqrt(3.0)


def _make_split(rng, spec: SyntheticSpec, protos, n: int, name: str) -> Dataset:
    labels = np.arange(n) % spec.n_classes
    rng.shuffle(labels)
    arrays = []
    for proto, d, snr in zip(protos, spec.d_in, spec.snr):
        signal = snr * proto[labels][:, None, :]
        arrays.append(signal + _smoothed_noise(rng, n, spec.T, d))
    return Dataset(*arrays, labels.astype(np.int64), split=name, provenance=f"synthetic:{spec.digest()}")


def generate(spec: SyntheticSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Train/val/test splits drawn from fixed per-class modality prototypes.

    Each frame is ``snr_m * prototype + noise`` with temporally smoothed unit
    noise, so ``snr_m = 0`` leaves a modality with no label information.
    """
    rng = np.random.default_rng(spec.seed)
    protos = [spec.proto_scale * rng.standard_normal((spec.n_classes, d)) for d in spec.d_in]
    return tuple(
        _make_split(rng, spec, protos, n, name)
        for n, name in ((spec.n_train, "train"), (spec.n_val, "val"), (spec.n_test, "test"))
    )


def split(dataset: Dataset, ratios: Sequence[float], seed: int) -> Tuple[Dataset, Dataset, Dataset]:
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(dataset)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError(f"ratios {tuple(ratios)} leave an empty split for {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    bounds = (0, n_train, n_train + n_val, n)
    return tuple(
        dataset.subset(perm[bounds[i]: bounds[i + 1]], split=name)
        for i, name in enumerate(("train", "val", "test"))
    )


def export_jsonl(dataset: Dataset, path) -> None:
    with open(path, "w") as fh:
        for i in range(len(dataset)):
            rec = {"label": int(dataset.labels[i])}
            for k, arr in zip(MODALITY_KEYS, dataset.modalities):
                rec[k] = arr[i].tolist()
            fh.write(json.dumps(rec) + "\n")


def _align(frames: np.ndarray, T: int) -> np.ndarray:
    if len(frames) >= T:
        return frames[:T]
    out = np.zeros((T, frames.shape[1]))
    out[: len(frames)] = frames
    return out


def load_jsonl(
    path,
    T: int,
    d_in: Sequence[int],
    n_classes: int,
    split_name: str = "train",
) -> Dataset:
    """Read one record per line; sequences are truncated or zero-padded to ``T``."""
    path = Path(path)
    labels, mods = [], ([], [], [])
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise IngestionError(f"invalid JSON ({e.msg})", lineno) from None
            if not isinstance(rec, dict):
                raise IngestionError("record is not an object", lineno)
            for key in ("label",) + MODALITY_KEYS:
                if key not in rec:
                    raise IngestionError(f"missing field '{key}'", lineno)
            label = rec["label"]
            if isinstance(label, bool) or not isinstance(label, int) or not 0 <= label < n_classes:
                raise IngestionError(f"unknown label {label!r}", lineno)
            for key, d, bucket in zip(MODALITY_KEYS, d_in, mods):
                frames = rec[key]
                if not isinstance(frames, list) or not frames:
                    raise IngestionError(f"field '{key}' must be a non-empty list of frames", lineno)
                if any(not isinstance(f, list) or len(f) != d for f in frames):
                    raise IngestionError(f"ragged dimensions in '{key}': every frame needs {d} values", lineno)
                try:
                    arr = np.asarray(frames, dtype=np.float64)
                except (TypeError, ValueError):
                    raise IngestionError(f"non-numeric values in '{key}'", lineno) from None
                if not np.isfinite(arr).all():
                    raise IngestionError(f"non-finite values in '{key}'", lineno)
                bucket.append(_align(arr, T))
            labels.append(label)
    if not labels:
        raise IngestionError(f"{path} contains no records")
    return Dataset(*(np.stack(b) for b in mods), np.asarray(labels, dtype=np.int64),
                   split=split_name, provenance=str(path))
