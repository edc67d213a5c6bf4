"""Multiplication counts, the equivalent-RNN dimension, and scheduler traces.

Counts cover the recurrent matrix-vector products only; the output softmax
costs the same for every model being compared and is left out. This is an
operation count, not a wall-clock estimate.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

_GATED = {"gru": 3, "vcgru": 3, "elman": 1, "vcrnn": 1}


def step_ops(d, D, D_in, unit_kind):
    """Multiplications for one step with ``d`` active hidden dims."""
    if unit_kind not in _GATED:
        raise ValueError(f"unknown unit kind {unit_kind!r}")
    if not 0 <= d <= D:
        raise ValueError(f"active dims {d} outside [0, {D}]")
    ops = _GATED[unit_kind] * (d * d + d * min(d, D_in))
    if unit_kind.startswith("vc"):
        ops += D + D_in
    return ops


def step_ops_array(d, D, D_in, unit_kind):
    d = np.asarray(d, dtype=np.int64)
    ops = _GATED[unit_kind] * (d * d + d * np.minimum(d, D_in))
    if unit_kind.startswith("vc"):
        ops = ops + (D + D_in)
    return ops


@dataclass
class SchedulerTrace:
    token: np.ndarray
    m: np.ndarray
    active_dims: np.ndarray
    ops: np.ndarray
    unit_kind: str
    D: int
    D_in: int

    @classmethod
    def build(cls, tokens, m, active_dims, unit_kind, D, D_in):
        active_dims = np.asarray(active_dims, dtype=np.int64)
        return cls(np.asarray(tokens, dtype=np.int64), np.asarray(m, dtype=np.float64),
                   active_dims, step_ops_array(active_dims, D, D_in, unit_kind),
                   unit_kind, D, D_in)

    def __len__(self):
        return len(self.m)

    @property
    def t(self):
        return np.arange(len(self.m))


@dataclass
class CostReport:
    total_ops: int
    mean_m: float
    mean_m_sq: float
    equivalent_dim: float
    steps: int
    class_means: dict = field(default_factory=dict)

    def to_text(self):
        lines = [
            f"steps: {self.steps}",
            f"total_ops: {self.total_ops}",
            f"mean_m: {self.mean_m:.6g}",
            f"mean_m_sq: {self.mean_m_sq:.6g}",
            f"equivalent_dim: {self.equivalent_dim:.6g}",
        ]
        for name in sorted(self.class_means):
            on, off = self.class_means[name]
            lines.append(f"mean_m[{name}=1]: {_fmt(on)}")
            lines.append(f"mean_m[{name}=0]: {_fmt(off)}")
        return "\n".join(lines) + "\n"


def _fmt(x):
    return "nan" if x is None or math.isnan(x) else f"{x:.6g}"


def rms(values):
    """Root mean square, scaled by the max so a constant input returns itself exactly."""
    values = np.abs(np.asarray(values, dtype=np.float64))
    top = values.max()
    if top == 0.0:
        return 0.0
    return float(top * math.sqrt(np.mean((values / top) ** 2)))


def equivalent_rnn_dim(trace):
    """Hidden size of a constant Elman unit with the same mean quadratic cost: D * rms(m)."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    return rms(trace.m) * trace.D


def aggregate_by_annotation(trace, annotations=None):
    n = len(trace)
    if n == 0:
        raise ValueError("empty trace")
    class_means = {}
    if annotations is not None:
        if annotations.length != n:
            raise ValueError(f"annotations length {annotations.length} != trace length {n}")
        for name, flag in annotations.flags.items():
            flag = np.asarray(flag, dtype=bool)
            on = float(trace.m[flag].mean()) if flag.any() else float("nan")
            off = float(trace.m[~flag].mean()) if (~flag).any() else float("nan")
            class_means[name] = (on, off)
    return CostReport(
        total_ops=int(trace.ops.sum()),
        mean_m=float(trace.m.mean()),
        mean_m_sq=float(np.mean(trace.m ** 2)),
        equivalent_dim=equivalent_rnn_dim(trace),
        steps=n,
        class_means=class_means,
    )


def phase_means(m, period=8, offset=0):
    """Mean of ``m`` grouped by ``(position + offset) mod period``."""
    m = np.asarray(m, dtype=np.float64)
    phase = (np.arange(len(m)) + offset) % period
    return np.array([m[phase == k].mean() for k in range(period)])


def export_trace(trace, path, annotations=None):
    names = annotations.names if annotations is not None else []
    if annotations is not None and annotations.length != len(trace):
        raise ValueError(f"annotations length {annotations.length} != trace length {len(trace)}")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "token", "m", "active_dims", "ops"] + names)
            for i in range(len(trace)):
                row = [i, int(trace.token[i]), f"{trace.m[i]:.6g}",
                       int(trace.active_dims[i]), int(trace.ops[i])]
                row += [int(bool(annotations.flags[n][i])) for n in names]
                w.writerow(row)
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc.strerror}") from exc


def read_trace(path, unit_kind, D, D_in):
    """Parse an exported trace CSV; returns (trace, flags dict)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    cols = list(zip(*rows)) if rows else [()] * len(header)
    data = dict(zip(header, cols))
    trace = SchedulerTrace(
        token=np.array(data["token"], dtype=np.int64),
        m=np.array(data["m"], dtype=np.float64),
        active_dims=np.array(data["active_dims"], dtype=np.int64),
        ops=np.array(data["ops"], dtype=np.int64),
        unit_kind=unit_kind, D=D, D_in=D_in,
    )
    flags = {k: np.array(v, dtype=np.int64).astype(bool) for k, v in data.items()
             if k not in ("t", "token", "m", "active_dims", "ops")}
    return trace, flags
