import numpy as np
import pytest

from vcr import checkpoint
from vcr.model import init_model
from vcr.tensor import Rng


@pytest.mark.parametrize("unit", ["elman", "gru", "vcrnn", "vcgru"])
def test_round_trip_byte_identical(tmp_path, unit):
    mdl = init_model(unit, 6, 4, Rng(2), lam=0.30000000000000004, use_bias=unit == "elman")
    path = tmp_path / "m.ckpt"
    blob = checkpoint.save(path, mdl, epoch=3, seed=7, vocab=("a", "\n", "é", "<unk>"),
                           level="char", eval_streams=5)
    back, meta = checkpoint.load(path)
    assert meta == {"epoch": 3, "seed": 7, "vocab": ("a", "\n", "é", "<unk>"),
                    "level": "char", "eval_streams": 5}
    assert back.lam == mdl.lam and back.unit == unit and back.use_bias == mdl.use_bias
    assert all(np.array_equal(back.params[k], mdl.params[k]) for k in mdl.params)
    again = checkpoint.encode(back, **meta)
    assert again == blob == path.read_bytes()


def test_header_is_readable_text():
    blob = checkpoint.encode(init_model("vcgru", 3, 2, Rng(0)))
    head = blob[:blob.index(b"end_header")].decode("ascii")
    for key in ("version=1", "unit=vcgru", "hidden=3", "input_width=2", "vocab_size=2", "lambda=0.1",
                "epoch=0", "seed=0"):
        assert key in head.splitlines()


@pytest.mark.parametrize("cut", [10, 200, -1, -8])
def test_truncated_rejected(cut):
    blob = checkpoint.encode(init_model("vcrnn", 4, 3, Rng(0)))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(blob[:cut])


def test_trailing_bytes_and_bad_magic():
    blob = checkpoint.encode(init_model("gru", 3, 2, Rng(0)))
    with pytest.raises(checkpoint.CheckpointError, match="trailing"):
        checkpoint.decode(blob + b"\0" * 8)
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(b"not-a-ckpt" + blob)


def test_tensor_list_must_match_unit():
    blob = checkpoint.encode(init_model("gru", 3, 2, Rng(0)))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(blob.replace(b"unit=gru", b"unit=vcg", 1))
