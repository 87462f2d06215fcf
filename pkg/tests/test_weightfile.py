import struct

import numpy as np
import pytest

from ecs_engine.errors import WeightError
from ecs_engine.model import ModelConfig, forward, init_weights
from ecs_engine.weightfile import MAGIC, generate_weight_file, load_weights, save_weights

CFG = ModelConfig(num_layers=2, hidden_dim=8, num_heads=2, vocab_size=32, max_context=16)


def test_round_trip_is_exact(tmp_path):
    w = init_weights(CFG, 9)
    save_weights(tmp_path / "w.bin", CFG, w)
    cfg2, w2 = load_weights(tmp_path / "w.bin")
    assert cfg2 == CFG
    for (n1, a1), (n2, a2) in zip(w.arrays(), w2.arrays()):
        assert n1 == n2 and a1.tobytes() == a2.tobytes()


@pytest.mark.parametrize("positions", ["rotary", "learned-absolute", "none"])
def test_round_trip_forward_identical(tmp_path, positions):
    cfg = ModelConfig(num_layers=1, hidden_dim=8, num_heads=2, vocab_size=32, max_context=16,
                      positional_scheme=positions)
    generate_weight_file(tmp_path / "w.bin", 3, cfg)
    cfg2, w2 = load_weights(tmp_path / "w.bin")
    a = forward([1, 2, 3], cfg, init_weights(cfg, 3)).logits
    b = forward([1, 2, 3], cfg2, w2).logits
    assert a.tobytes() == b.tobytes()


def test_same_seed_same_bytes(tmp_path):
    generate_weight_file(tmp_path / "a.bin", 11, CFG)
    generate_weight_file(tmp_path / "b.bin", 11, CFG)
    generate_weight_file(tmp_path / "c.bin", 12, CFG)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.bin").read_bytes() != (tmp_path / "c.bin").read_bytes()


@pytest.fixture
def good_file(tmp_path):
    path = tmp_path / "w.bin"
    generate_weight_file(path, 0, CFG)
    return path


def _expect_error(path, fragment):
    with pytest.raises(WeightError, match=fragment) as info:
        load_weights(path)
    assert str(path) in str(info.value)


def test_bad_magic(good_file):
    good_file.write_bytes(b"XXXX" + good_file.read_bytes()[4:])
    _expect_error(good_file, "magic")


def test_truncated(good_file):
    good_file.write_bytes(good_file.read_bytes()[:-8])
    _expect_error(good_file, "truncated")


def test_trailing_bytes(good_file):
    good_file.write_bytes(good_file.read_bytes() + b"\0" * 8)
    _expect_error(good_file, "trailing")


def test_bad_version(good_file):
    blob = good_file.read_bytes()
    good_file.write_bytes(MAGIC + struct.pack("<I", 99) + blob[8:])
    _expect_error(good_file, "version")


def test_nan_weight_rejected(good_file):
    blob = bytearray(good_file.read_bytes())
    blob[-8:] = np.array([np.nan], dtype="<f8").tobytes()
    good_file.write_bytes(bytes(blob))
    _expect_error(good_file, "non-finite")


def test_missing_file(tmp_path):
    _expect_error(tmp_path / "nope.bin", "cannot read")
