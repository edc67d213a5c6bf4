"""Stand-alone forward evaluator over stacks of parameter sets.

Every parameter carries a leading axis P, so one call evaluates the
objective (summed NLL plus scheduler penalty) for P different parameter
vectors at once. It shares no code with ``vcr.model`` and is used as the
function side of the finite-difference gradient check.
"""

import numpy as np


def _sig(a):
    with np.errstate(over="ignore"):
        return 1 / (1 + np.exp(-a))


def _snap(s, eps):
    out = np.where(s > 1 - eps, 1, s)
    return np.where(s < eps, 0, out)


def _mask(m, width, lam, eps):
    # m: (P, B) -> (P, B, width)
    i = np.arange(1, width + 1)
    return _snap(_sig(lam * (m[..., None] * width - i)), eps)


def _mv(W, v):
    # W: (P, r, c), v: (P, B, c) -> (P, B, r)
    return np.einsum("prc,pbc->pbr", W, v)


def stacked_objective(unit, stack, inputs, targets, lam, eps, penalty=None):
    """Objective for each of the P stacked parameter sets; returns shape (P,)."""
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    if inputs.ndim == 1:
        inputs, targets = inputs[:, None], targets[:, None]
    T, B = inputs.shape
    O = stack["O"]
    P, Vsz, D = O.shape
    dt = O.dtype
    vc = unit in ("vcrnn", "vcgru")
    gru = unit in ("gru", "vcgru")
    h = np.zeros((P, B, D), dt)
    total = np.zeros(P, dt)
    ms = []
    for t in range(T):
        x = np.zeros((P, B, Vsz), dt)
        x[:, np.arange(B), inputs[t]] = 1
        if vc:
            a = np.einsum("pd,pbd->pb", stack["u"], h) + stack["v"][:, inputs[t]] + stack["b"][:, :1]
            m = _sig(a)
            ms.append(m)
            e = _mask(m, D, lam, eps)
            e_in = _mask(m, Vsz, lam, eps)
            hb, xb = e * h, e_in * x
        else:
            e = 1
            hb, xb = h, x
        if gru:
            r = _sig(_mv(stack["U_r"], hb) + _mv(stack["V_r"], xb))
            z = e * _sig(_mv(stack["U_z"], hb) + _mv(stack["V_z"], xb))
            cand = np.tanh(_mv(stack["U"], r * hb) + _mv(stack["V"], xb))
            h = z * cand + (1 - z) * h
        else:
            pre = _mv(stack["U"], hb) + _mv(stack["V"], xb)
            if "bias" in stack:
                pre = pre + stack["bias"][:, None, :]
            h = e * np.tanh(pre) + (1 - e) * h
        logits = np.einsum("pvd,pbd->pbv", O, h) + stack["bias_o"][:, None, :]
        top = logits.max(axis=-1, keepdims=True)
        lse = top[..., 0] + np.log(np.exp(logits - top).sum(axis=-1))
        picked = logits[:, np.arange(B), targets[t]]
        total += (lse - picked).sum(axis=1)
    if vc and penalty is not None:
        m = np.stack(ms)  # (T, P, B)
        w = penalty.position_weights((T, B))[:, None, :]
        dev = m - penalty.m_bar
        if penalty.mode == "l1_symmetric":
            terms = np.abs(dev)
        elif penalty.mode == "l1_above_target":
            terms = np.maximum(dev, 0)
        else:
            terms = dev * dev
        total += penalty.weight * (w * terms).sum(axis=(0, 2))
    return total


def central_differences(unit, params, inputs, targets, lam, eps, penalty=None,
                        step=1e-5, dtype=np.longdouble, chunk=512):
    """Central-difference gradient of the objective for every scalar parameter."""
    base = {k: np.asarray(v, dtype=dtype) for k, v in params.items()}
    index = [(k, i) for k, v in base.items() for i in range(v.size)]
    grads = {k: np.zeros(v.shape) for k, v in base.items()}
    for lo in range(0, len(index), chunk):
        part = index[lo:lo + chunk]
        n = len(part)
        stack = {k: np.repeat(v[None], 2 * n, axis=0) for k, v in base.items()}
        widths = np.empty(n, dtype)
        for j, (k, i) in enumerate(part):
            up = stack[k][2 * j].reshape(-1)
            down = stack[k][2 * j + 1].reshape(-1)
            up[i] += step
            down[i] -= step
            widths[j] = up[i] - down[i]
        f = stacked_objective(unit, stack, inputs, targets, lam, eps, penalty)
        num = (f[0::2] - f[1::2]) / widths
        for j, (k, i) in enumerate(part):
            grads[k].reshape(-1)[i] = num[j]
    return grads
