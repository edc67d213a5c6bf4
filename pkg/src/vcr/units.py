"""Single-step forward semantics of the four recurrent units.

These are the reference definitions, written against ``tensor.matvec`` and
operating on one hidden vector at a time. The batched training engine in
``vcr.model`` is checked against them.
"""

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from vcr.tensor import matvec, sigmoid, tanh

DEFAULT_EPSILON = 0.01


@dataclass(frozen=True)
class ElmanParams:
    U: np.ndarray
    V: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        D = self.U.shape[0]
        if self.U.shape != (D, D):
            raise ValueError(f"U must be square, got {self.U.shape}")
        if self.V.ndim != 2 or self.V.shape[0] != D:
            raise ValueError(f"V must have {D} rows, got {self.V.shape}")
        if self.bias is not None and self.bias.shape != (D,):
            raise ValueError(f"bias must have shape ({D},), got {self.bias.shape}")

    @property
    def hidden(self):
        return self.U.shape[0]

    @property
    def input_width(self):
        return self.V.shape[1]


@dataclass(frozen=True)
class GruParams:
    U_r: np.ndarray
    U_z: np.ndarray
    U: np.ndarray
    V_r: np.ndarray
    V_z: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        D = self.U.shape[0]
        for name in ("U_r", "U_z", "U"):
            if getattr(self, name).shape != (D, D):
                raise ValueError(f"{name} must be {D}x{D}, got {getattr(self, name).shape}")
        D_in = self.V.shape[1]
        for name in ("V_r", "V_z", "V"):
            if getattr(self, name).shape != (D, D_in):
                raise ValueError(f"{name} must be {D}x{D_in}, got {getattr(self, name).shape}")

    @property
    def hidden(self):
        return self.U.shape[0]

    @property
    def input_width(self):
        return self.V.shape[1]


@dataclass(frozen=True)
class SchedulerParams:
    u: np.ndarray
    v: np.ndarray
    b: float = 0.0


@dataclass(frozen=True)
class GateConfig:
    lam: float
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"sharpness must be positive, got {self.lam}")
        if not 0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 0.5), got {self.epsilon}")


@dataclass(frozen=True)
class GateVector:
    e: np.ndarray
    m: float
    active_count: int
    lam: float
    epsilon: float


@dataclass(frozen=True)
class VcUnitParams:
    inner: Union[ElmanParams, GruParams]
    scheduler: SchedulerParams
    gate: GateConfig

    def __post_init__(self):
        if self.scheduler.u.shape != (self.inner.hidden,):
            raise ValueError(
                f"scheduler u has shape {self.scheduler.u.shape}, unit hidden size is {self.inner.hidden}"
            )
        if self.scheduler.v.shape != (self.inner.input_width,):
            raise ValueError(
                f"scheduler v has shape {self.scheduler.v.shape}, unit input width is {self.inner.input_width}"
            )


@dataclass(frozen=True)
class StepTrace:
    m: float
    gate: GateVector
    input_gate: np.ndarray


def _check_shapes(p, h_prev, x):
    if h_prev.shape != (p.hidden,) or x.shape != (p.input_width,):
        raise ValueError(
            f"shape mismatch: unit expects h ({p.hidden},) and x ({p.input_width},), "
            f"got h {h_prev.shape} and x {x.shape}"
        )


def elman_step(p: ElmanParams, h_prev, x):
    _check_shapes(p, h_prev, x)
    pre = matvec(p.U, h_prev) + matvec(p.V, x)
    if p.bias is not None:
        pre = pre + p.bias
    return tanh(pre)


def gru_step(p: GruParams, h_prev, x):
    _check_shapes(p, h_prev, x)
    r = sigmoid(matvec(p.U_r, h_prev) + matvec(p.V_r, x))
    z = sigmoid(matvec(p.U_z, h_prev) + matvec(p.V_z, x))
    h_tilde = tanh(matvec(p.U, r * h_prev) + matvec(p.V, x))
    return z * h_tilde + (1.0 - z) * h_prev


def scheduler_m(s: SchedulerParams, h_prev, x):
    if h_prev.shape != s.u.shape or x.shape != s.v.shape:
        raise ValueError(
            f"shape mismatch: scheduler expects h {s.u.shape} and x {s.v.shape}, "
            f"got h {h_prev.shape} and x {x.shape}"
        )
    return float(sigmoid(np.dot(s.u, h_prev) + np.dot(s.v, x) + s.b))


def threshold(values, epsilon):
    """Snap values above ``1 - epsilon`` to 1 and below ``epsilon`` to 0."""
    out = np.where(values > 1.0 - epsilon, 1.0, values)
    return np.where(values < epsilon, 0.0, out)


def soft_mask(m, width, lam, epsilon=DEFAULT_EPSILON):
    idx = np.arange(1, width + 1, dtype=np.float64)
    return threshold(sigmoid(lam * (m * width - idx)), epsilon)


def gate_vector(m, D, g: GateConfig) -> GateVector:
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"m must lie in [0, 1], got {m}")
    if D < 1:
        raise ValueError(f"D must be at least 1, got {D}")
    e = soft_mask(m, D, g.lam, g.epsilon)
    return GateVector(e=e, m=float(m), active_count=int(np.count_nonzero(e)),
                      lam=g.lam, epsilon=g.epsilon)


def mask_width_bound(lam, epsilon=DEFAULT_EPSILON):
    """Distance from ``m*D`` beyond which soft-mask entries are snapped."""
    return math.log((1.0 - epsilon) / epsilon) / lam


def _vc_masks(p: VcUnitParams, h_prev, x, e, e_in):
    m = scheduler_m(p.scheduler, h_prev, x)
    gate = gate_vector(m, p.inner.hidden, p.gate)
    if e is None:
        e = gate.e
    else:
        e = np.asarray(e, dtype=np.float64)
        gate = GateVector(e=e, m=m, active_count=int(np.count_nonzero(e)),
                          lam=p.gate.lam, epsilon=p.gate.epsilon)
    if e_in is None:
        if p.inner.input_width == p.inner.hidden:
            e_in = e
        else:
            e_in = soft_mask(m, p.inner.input_width, p.gate.lam, p.gate.epsilon)
    return m, gate, e, np.asarray(e_in, dtype=np.float64)


def vcrnn_step(p: VcUnitParams, h_prev, x, e=None, e_in=None):
    """Variable-computation Elman step.

    ``e`` / ``e_in`` override the hidden and input masks (used to force the
    gate open or shut); by default both come from the scheduler.
    """
    _check_shapes(p.inner, h_prev, x)
    m, gate, e, e_in = _vc_masks(p, h_prev, x, e, e_in)
    candidate = elman_step(p.inner, e * h_prev, e_in * x)
    h = e * candidate + (1.0 - e) * h_prev
    return h, StepTrace(m=m, gate=gate, input_gate=e_in)


def vcgru_step(p: VcUnitParams, h_prev, x, e=None, e_in=None):
    _check_shapes(p.inner, h_prev, x)
    m, gate, e, e_in = _vc_masks(p, h_prev, x, e, e_in)
    q = p.inner
    h_bar = e * h_prev
    x_bar = e_in * x
    r = sigmoid(matvec(q.U_r, h_bar) + matvec(q.V_r, x_bar))
    z = e * sigmoid(matvec(q.U_z, h_bar) + matvec(q.V_z, x_bar))
    h_tilde = tanh(matvec(q.U, r * h_bar) + matvec(q.V, x_bar))
    h = z * h_tilde + (1.0 - z) * h_prev
    return h, StepTrace(m=m, gate=gate, input_gate=e_in)


def hard_partial_update(d, p, h_prev, x, d_in=None):
    """Update only the first ``d`` hidden dims using top-left sub-matrices.

    Input columns beyond ``d_in`` (default ``min(d, input width)``) are
    ignored; hidden dims past ``d`` are copied from ``h_prev``.
    """
    _check_shapes(p, h_prev, x)
    D = p.hidden
    if not 1 <= d <= D:
        raise ValueError(f"d must lie in [1, {D}], got {d}")
    if d_in is None:
        d_in = min(d, p.input_width)
    h_d, x_d = h_prev[:d], x[:d_in]
    if isinstance(p, ElmanParams):
        sub = ElmanParams(U=p.U[:d, :d], V=p.V[:d, :d_in],
                          bias=None if p.bias is None else p.bias[:d])
        new = elman_step(sub, h_d, x_d)
    elif isinstance(p, GruParams):
        sub = GruParams(*(getattr(p, n)[:d, :d] for n in ("U_r", "U_z", "U")),
                        *(getattr(p, n)[:d, :d_in] for n in ("V_r", "V_z", "V")))
        new = gru_step(sub, h_d, x_d)
    else:
        raise TypeError(f"unsupported unit parameters {type(p).__name__}")
    out = h_prev.copy()
    out[:d] = new
    return out
