import numpy as np
import pytest

from casd.checkpoint import load_checkpoint, save_checkpoint
from casd.config import Settings
from casd.encoder import Model
from casd.errors import DataError


def test_round_trip_is_bit_exact(tmp_path, rng):
    s = Settings(d_model=4, T=3)
    m = Model.init(s.encoder_config(), rng)
    save_checkpoint(tmp_path / "m.ckpt", m, s)
    back, s2 = load_checkpoint(tmp_path / "m.ckpt")
    assert s2 == s
    for k, v in m.state().items():
        np.testing.assert_array_equal(back.state()[k], v)


def test_shape_mismatch_is_rejected(tmp_path, rng):
    s = Settings(d_model=4, T=3)
    save_checkpoint(tmp_path / "m.ckpt", Model.init(s.encoder_config(), rng), s)
    text = (tmp_path / "m.ckpt").read_text().replace("d_model = 4", "d_model = 5")
    (tmp_path / "m.ckpt").write_text(text)
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "m.ckpt")


def test_garbage_is_rejected(tmp_path):
    (tmp_path / "x").write_text("hello\n")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "x")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing")
