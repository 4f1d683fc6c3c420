"""Plain-text checkpoints: a config snapshot followed by named tensors.

Layout::

    casd-checkpoint 1
    config <n>
    <n lines of key = value>
    tensor <name> <d0>x<d1>...
    <values, space separated>
    ...

Values use ``repr`` so a save/load round trip is bit-exact.
"""

from __future__ import annotations

from pathlib import Path
from typing import Tuple

import numpy as np

from .config import Settings, coerce, parse_text
from .encoder import Model, param_shapes
from .errors import DataError

MAGIC = "casd-checkpoint 1"


def save_checkpoint(path, model: Model, settings: Settings) -> None:
    cfg_lines = settings.to_text().splitlines()
    lines = [MAGIC, f"config {len(cfg_lines)}", *cfg_lines]
    for name, value in model.state().items():
        value = np.asarray(value, dtype=np.float64)
        lines.append(f"tensor {name} {'x'.join(map(str, value.shape))}")
        lines.append(" ".join(repr(float(x)) for x in value.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> Tuple[Model, Settings]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from None
    if not lines or lines[0] != MAGIC:
        raise DataError(f"{path} is not a checkpoint")
    try:
        n_cfg = int(lines[1].split()[1])
        settings = Settings(**coerce(parse_text("\n".join(lines[2 : 2 + n_cfg])))).validate()
    except (IndexError, ValueError) as e:
        raise DataError(f"{path}: malformed config block ({e})") from None
    state = {}
    i = 2 + n_cfg
    while i < len(lines):
        head = lines[i].split()
        if len(head) != 3 or head[0] != "tensor":
            raise DataError(f"{path}:{i + 1}: expected a tensor header")
        shape = tuple(int(d) for d in head[2].split("x") if d)
        values = np.array([float(x) for x in lines[i + 1].split()], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise DataError(f"{path}: tensor {head[1]} has {values.size} values for shape {shape}")
        state[head[1]] = values.reshape(shape)
        i += 2
    config = settings.encoder_config()
    expected = param_shapes(config)
    if set(state) != set(expected):
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        raise DataError(f"{path}: tensor names do not match the config (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if state[name].shape != shape:
            raise DataError(f"{path}: tensor {name} has shape {state[name].shape}, config expects {shape}")
    return Model.from_state(config, state), settings
