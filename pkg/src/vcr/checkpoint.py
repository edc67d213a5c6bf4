"""Checkpoint files: a text header followed by raw little-endian float64 tensors.

Layout::

    vcr-checkpoint
    version=1
    unit=vcgru
    ...
    tensors=U_r:64x64,U_z:64x64,...
    end_header
    <float64 LE data for each tensor, in the order listed>

Header values are written so that reading and re-writing a file reproduces
it byte for byte.
"""

import json

import numpy as np

from vcr.model import Model, param_names

MAGIC = "vcr-checkpoint"
VERSION = 1
END = "end_header"
_KEYS = ("version", "unit", "hidden", "input_width", "vocab_size", "lambda", "epsilon",
         "epoch", "seed", "use_bias", "eval_streams", "level", "vocab", "tensors")


class CheckpointError(ValueError):
    """Malformed, truncated or inconsistent checkpoint file."""


def _shape_str(shape):
    return "x".join(str(n) for n in shape)


def encode(model: Model, *, epoch=0, seed=0, vocab=(), level="generic", eval_streams=1):
    order = param_names(model.unit, model.use_bias)
    header = {
        "version": str(VERSION),
        "unit": model.unit,
        "hidden": str(model.hidden),
        "input_width": str(model.input_width),
        "vocab_size": str(model.vocab_size),
        "lambda": repr(float(model.lam)),
        "epsilon": repr(float(model.epsilon)),
        "epoch": str(int(epoch)),
        "seed": str(int(seed)),
        "use_bias": "1" if model.use_bias else "0",
        "eval_streams": str(int(eval_streams)),
        "level": level,
        "vocab": json.dumps(list(vocab), ensure_ascii=True),
        "tensors": ",".join(f"{n}:{_shape_str(model.params[n].shape)}" for n in order),
    }
    text = MAGIC + "\n" + "".join(f"{k}={header[k]}\n" for k in _KEYS) + END + "\n"
    body = b"".join(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes() for n in order)
    return text.encode("ascii") + body


def save(path, model, **meta):
    blob = encode(model, **meta)
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def decode(blob: bytes):
    """Returns ``(model, meta)`` where meta holds epoch, seed, vocab, level, eval_streams."""
    marker = ("\n" + END + "\n").encode("ascii")
    cut = blob.find(marker)
    if not blob.startswith((MAGIC + "\n").encode("ascii")) or cut < 0:
        raise CheckpointError("not a checkpoint file (missing magic line or header terminator)")
    try:
        lines = blob[:cut].decode("ascii").split("\n")[1:]
    except UnicodeDecodeError as exc:
        raise CheckpointError("header is not ASCII") from exc
    header = {}
    for line in lines:
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed header line {line!r}")
        header[key] = value
    missing = [k for k in _KEYS if k not in header]
    if missing:
        raise CheckpointError(f"header missing keys {missing}")
    if header["version"] != str(VERSION):
        raise CheckpointError(f"unsupported checkpoint version {header['version']}")
    body = memoryview(blob)[cut + len(marker):]
    params = {}
    offset = 0
    for item in header["tensors"].split(","):
        name, _, shape_s = item.partition(":")
        shape = tuple(int(n) for n in shape_s.split("x"))
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(body):
            raise CheckpointError(f"checkpoint truncated inside tensor {name!r}")
        params[name] = np.frombuffer(body[offset:offset + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{len(body) - offset} trailing bytes after last tensor")
    unit = header["unit"]
    use_bias = header["use_bias"] == "1"
    try:
        expected = param_names(unit, use_bias)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    if list(params) != expected:
        raise CheckpointError(f"tensor list {list(params)} does not match unit {unit!r}")
    model = Model(unit, int(header["hidden"]), int(header["vocab_size"]), params,
                  lam=float(header["lambda"]), epsilon=float(header["epsilon"]), use_bias=use_bias)
    if int(header["input_width"]) != model.input_width:
        raise CheckpointError("input width does not match vocabulary size")
    meta = {
        "epoch": int(header["epoch"]),
        "seed": int(header["seed"]),
        "vocab": tuple(json.loads(header["vocab"])),
        "level": header["level"],
        "eval_streams": int(header["eval_streams"]),
    }
    return model, meta


def load(path):
    with open(path, "rb") as fh:
        return decode(fh.read())
