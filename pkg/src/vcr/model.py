"""Batched sequence model: a recurrent unit, optional scheduler, softmax output.

The forward pass processes ``B`` parallel streams of one-hot token inputs
and keeps every intermediate needed for backpropagation through time.
Gradients are of the *summed* objective (nats summed over all predictions
plus the scheduler penalty); callers normalise as they see fit.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from vcr import units
from scipy.special import expit as sigmoid

from vcr.tensor import Rng, init_uniform

UNIT_KINDS = ("elman", "gru", "vcrnn", "vcgru")
VC_KINDS = ("vcrnn", "vcgru")


class NumericError(RuntimeError):
    """Raised when a NaN or infinity shows up in a forward or backward pass."""


def param_names(unit, use_bias=False):
    if unit in ("elman", "vcrnn"):
        names = ["U", "V"] + (["bias"] if use_bias else [])
    elif unit in ("gru", "vcgru"):
        names = ["U_r", "U_z", "U", "V_r", "V_z", "V"]
    else:
        raise ValueError(f"unknown unit kind {unit!r}; expected one of {UNIT_KINDS}")
    if unit in VC_KINDS:
        names += ["u", "v", "b"]
    return names + ["O", "bias_o"]


@dataclass
class Model:
    unit: str
    hidden: int
    vocab_size: int
    params: dict
    lam: float = 0.1
    epsilon: float = units.DEFAULT_EPSILON
    use_bias: bool = False

    @property
    def is_vc(self):
        return self.unit in VC_KINDS

    @property
    def input_width(self):
        return self.vocab_size

    def copy(self):
        return Model(self.unit, self.hidden, self.vocab_size,
                     {k: v.copy() for k, v in self.params.items()},
                     self.lam, self.epsilon, self.use_bias)

    def num_parameters(self):
        return sum(p.size for p in self.params.values())

    def unit_params(self):
        """Reference-unit view of the recurrent parameters (see ``vcr.units``)."""
        p = self.params
        if self.unit in ("elman", "vcrnn"):
            inner = units.ElmanParams(p["U"], p["V"], p.get("bias"))
        else:
            inner = units.GruParams(p["U_r"], p["U_z"], p["U"], p["V_r"], p["V_z"], p["V"])
        if not self.is_vc:
            return inner
        return units.VcUnitParams(
            inner=inner,
            scheduler=units.SchedulerParams(p["u"], p["v"], float(p["b"][0])),
            gate=units.GateConfig(self.lam, self.epsilon),
        )


def init_model(unit, hidden, vocab_size, rng: Rng, scale=None, scheduler_bias=0.0,
               lam=0.1, epsilon=units.DEFAULT_EPSILON, use_bias=False):
    if unit not in UNIT_KINDS:
        raise ValueError(f"unknown unit kind {unit!r}; expected one of {UNIT_KINDS}")
    if scale is None:
        scale = 1.0 / np.sqrt(hidden)
    D, V = hidden, vocab_size
    shapes = {
        "U": (D, D), "V": (D, V), "bias": (D,),
        "U_r": (D, D), "U_z": (D, D), "V_r": (D, V), "V_z": (D, V),
        "u": (D,), "v": (V,), "b": (1,),
        "O": (V, D), "bias_o": (V,),
    }
    params = {}
    for name in param_names(unit, use_bias):
        shape = shapes[name]
        if name in ("bias", "bias_o"):
            params[name] = np.zeros(shape)
        elif name == "b":
            params[name] = np.full(shape, float(scheduler_bias))
        else:
            sub = rng.split(name)
            rows, cols = (shape + (1,))[:2]
            params[name] = init_uniform(sub, rows, cols, scale).reshape(shape)
    return Model(unit, hidden, vocab_size, params, lam, epsilon, use_bias)


def mask_and_slope(m, width, lam, epsilon):
    """Soft mask over ``width`` positions for a batch of ``m`` and its derivative in m.

    Snapped (thresholded) entries get zero derivative.
    """
    idx = np.arange(1, width + 1, dtype=m.dtype)
    s = sigmoid(lam * (m[:, None] * width - idx))
    high = s > 1.0 - epsilon
    low = s < epsilon
    e = np.where(high, 1.0, np.where(low, 0.0, s))
    slope = np.where(high | low, 0.0, lam * width * s * (1.0 - s))
    return e, slope


def log_softmax(logits):
    shift = logits - logits.max(axis=-1, keepdims=True)
    return shift - np.log(np.exp(shift).sum(axis=-1, keepdims=True))


@dataclass
class PassResult:
    loss: float
    omega: float
    grads: Optional[dict]
    m: np.ndarray
    active: np.ndarray
    h_last: np.ndarray
    count: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def objective(self):
        return self.loss + self.omega


def _check(arr, t, what):
    # a sum is non-finite iff some entry is (entries here are bounded)
    if not math.isfinite(arr.sum()):
        raise NumericError(f"non-finite {what} at timestep {t}")


def run(model: Model, inputs, targets=None, penalty=None, h0=None, grad=True, keep_states=False):
    """Forward (and optionally backward) pass over a (T, B) block of token ids.

    ``targets`` may be None for a pure forward pass (scheduler tracing).
    ``penalty`` is a ``vcr.training.PenaltyConfig`` or None. With
    ``keep_states`` the (T, B, D) hidden states land in ``extras["h"]``.
    """
    inputs = np.asarray(inputs)
    if inputs.ndim != 2:
        raise ValueError(f"inputs must be (T, B), got shape {inputs.shape}")
    T, B = inputs.shape
    D, Vsz = model.hidden, model.vocab_size
    p = model.params
    vc, gru = model.is_vc, model.unit in ("gru", "vcgru")
    lam, eps = model.lam, model.epsilon
    if targets is None:
        grad = False
    else:
        targets = np.asarray(targets)
        if targets.shape != inputs.shape:
            raise ValueError(f"targets shape {targets.shape} != inputs shape {inputs.shape}")
    if np.any(inputs < 0) or np.any(inputs >= Vsz):
        raise ValueError(f"input token id out of range for vocabulary of size {Vsz}")
    dtype = p["O"].dtype
    h = np.zeros((B, D), dtype) if h0 is None else np.array(h0, dtype=dtype)
    rows = np.arange(B)
    eye = np.eye(Vsz, dtype=dtype)
    pen_w = None
    if penalty is not None and vc:
        pen_w = penalty.position_weights(inputs.shape)

    caches = []
    states = []
    m_all = np.ones((T, B), dtype)
    active = np.full((T, B), D, dtype=np.int64)
    loss = dtype.type(0.0)
    omega = dtype.type(0.0)
    for t in range(T):
        tok = inputs[t]
        x = eye[tok]
        c = {"h_prev": h, "tok": tok, "x": x}
        if vc:
            a = h @ p["u"] + p["v"][tok] + p["b"][0]
            m = sigmoid(a)
            e, e_slope = mask_and_slope(m, D, lam, eps)
            if Vsz == D:
                e_in, ein_slope = e, e_slope
            else:
                e_in, ein_slope = mask_and_slope(m, Vsz, lam, eps)
            h_bar = e * h
            x_bar = e_in * x
            m_all[t] = m
            active[t] = np.count_nonzero(e, axis=1)
            c.update(m=m, e=e, e_slope=e_slope, e_in=e_in, ein_slope=ein_slope)
        else:
            h_bar, x_bar = h, x
        c.update(h_bar=h_bar, x_bar=x_bar)
        if gru:
            r = sigmoid(h_bar @ p["U_r"].T + x_bar @ p["V_r"].T)
            zs = sigmoid(h_bar @ p["U_z"].T + x_bar @ p["V_z"].T)
            z = c["e"] * zs if vc else zs
            q = r * h_bar
            ht = np.tanh(q @ p["U"].T + x_bar @ p["V"].T)
            h_new = z * ht + (1.0 - z) * h
            c.update(r=r, zs=zs, z=z, q=q, ht=ht)
        else:
            pre = h_bar @ p["U"].T + x_bar @ p["V"].T
            if "bias" in p:
                pre = pre + p["bias"]
            cand = np.tanh(pre)
            h_new = c["e"] * cand + (1.0 - c["e"]) * h if vc else cand
            c["cand"] = cand
        _check(h_new, t, "hidden state")
        if targets is not None:
            logp = log_softmax(h_new @ p["O"].T + p["bias_o"])
            _check(logp, t, "log-probability")
            loss -= logp[rows, targets[t]].sum()
            c["logp"] = logp
        c["h"] = h_new
        h = h_new
        if grad:
            caches.append(c)
        if keep_states:
            states.append(h_new)
    if pen_w is not None:
        omega = penalty.value(m_all, pen_w)

    result = PassResult(loss=loss, omega=omega, grads=None, m=m_all,
                        active=active, h_last=h, count=T * B)
    if keep_states:
        result.extras["h"] = np.stack(states) if states else np.zeros((0, B, D), dtype)
    if grad:
        result.grads = _backward(model, caches, targets, penalty, pen_w, m_all)
    return result


def _backward(model, caches, targets, penalty, pen_w, m_all):
    p = model.params
    D = model.hidden
    vc, gru = model.is_vc, model.unit in ("gru", "vcgru")
    g = {k: np.zeros_like(v) for k, v in p.items()}
    rows = np.arange(m_all.shape[1])
    dm_pen = penalty.grad(m_all, pen_w) if pen_w is not None else None
    dh_next = np.zeros((m_all.shape[1], D), m_all.dtype)
    for t in range(len(caches) - 1, -1, -1):
        c = caches[t]
        h_prev, x, x_bar, h_bar = c["h_prev"], c["x"], c["x_bar"], c["h_bar"]
        probs = np.exp(c["logp"])
        probs[rows, targets[t]] -= 1.0
        dlogits = probs
        g["O"] += dlogits.T @ c["h"]
        g["bias_o"] += dlogits.sum(axis=0)
        dh = dlogits @ p["O"] + dh_next

        if gru:
            z, ht, zs, r, q = c["z"], c["ht"], c["zs"], c["r"], c["q"]
            dz = dh * (ht - h_prev)
            dh_prev = dh * (1.0 - z)
            dah = dh * z * (1.0 - ht * ht)
            g["U"] += dah.T @ q
            g["V"] += dah.T @ x_bar
            dq = dah @ p["U"]
            dx_bar = dah @ p["V"]
            dh_bar = dq * r
            dr = dq * h_bar
            if vc:
                de = dz * zs
                dzs = dz * c["e"]
            else:
                dzs = dz
            daz = dzs * zs * (1.0 - zs)
            g["U_z"] += daz.T @ h_bar
            g["V_z"] += daz.T @ x_bar
            dh_bar += daz @ p["U_z"]
            dx_bar += daz @ p["V_z"]
            dar = dr * r * (1.0 - r)
            g["U_r"] += dar.T @ h_bar
            g["V_r"] += dar.T @ x_bar
            dh_bar += dar @ p["U_r"]
            dx_bar += dar @ p["V_r"]
        else:
            cand = c["cand"]
            if vc:
                e = c["e"]
                de = dh * (cand - h_prev)
                dcand = dh * e
                dh_prev = dh * (1.0 - e)
            else:
                dcand = dh
                dh_prev = 0.0
            dpre = dcand * (1.0 - cand * cand)
            g["U"] += dpre.T @ h_bar
            g["V"] += dpre.T @ x_bar
            if "bias" in g:
                g["bias"] += dpre.sum(axis=0)
            dh_bar = dpre @ p["U"]
            dx_bar = dpre @ p["V"] if vc else None

        if vc:
            e, e_in = c["e"], c["e_in"]
            dh_prev = dh_prev + dh_bar * e
            de = de + dh_bar * h_prev
            dm = (de * c["e_slope"]).sum(axis=1)
            de_in = dx_bar * x
            dm += (de_in * c["ein_slope"]).sum(axis=1)
            if dm_pen is not None:
                dm += dm_pen[t]
            m = c["m"]
            da = dm * m * (1.0 - m)
            g["u"] += da @ h_prev
            np.add.at(g["v"], c["tok"], da)
            g["b"][0] += da.sum()
            dh_prev = dh_prev + da[:, None] * p["u"]
        else:
            dh_prev = dh_prev + dh_bar
        _check(dh_prev, t, "hidden-state gradient")
        dh_next = dh_prev
    return g
