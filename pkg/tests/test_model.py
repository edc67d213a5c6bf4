"""The batched training engine against the single-step reference units."""

import numpy as np
import pytest

from vcr import model as engine
from vcr import units
from vcr.model import NumericError, init_model, param_names
from vcr.tensor import Rng


def reference_rollout(mdl, tokens):
    """Step the reference units one token at a time; returns hidden states and m."""
    p = mdl.unit_params()
    h = np.zeros(mdl.hidden)
    hs, ms = [], []
    for tok in tokens:
        x = np.zeros(mdl.vocab_size)
        x[tok] = 1.0
        if mdl.unit == "elman":
            h = units.elman_step(p, h, x)
        elif mdl.unit == "gru":
            h = units.gru_step(p, h, x)
        elif mdl.unit == "vcrnn":
            h, tr = units.vcrnn_step(p, h, x)
            ms.append(tr.m)
        else:
            h, tr = units.vcgru_step(p, h, x)
            ms.append(tr.m)
        hs.append(h)
    return np.array(hs), np.array(ms)


@pytest.mark.parametrize("unit", engine.UNIT_KINDS)
@pytest.mark.parametrize("lam", [0.3, 2.0, 1e6])
def test_engine_matches_reference_units(unit, lam):
    r = Rng(5)
    mdl = init_model(unit, 7, 5, r.split("m"), scale=0.8, lam=lam)
    x = r.integers(0, 5, (9, 3))
    res = engine.run(mdl, x, None, keep_states=True)
    for b in range(3):
        hs, ms = reference_rollout(mdl, x[:, b])
        assert np.max(np.abs(res.extras["h"][:, b] - hs)) < 1e-12
        if mdl.is_vc:
            assert np.max(np.abs(res.m[:, b] - ms)) < 1e-14


def test_loss_matches_log_softmax_sum():
    r = Rng(2)
    mdl = init_model("vcgru", 6, 4, r, scale=0.9)
    x, y = r.integers(0, 4, (5, 2)), r.integers(0, 4, (5, 2))
    res = engine.run(mdl, x, y, grad=False, keep_states=True)
    h = res.extras["h"]
    logits = h @ mdl.params["O"].T + mdl.params["bias_o"]
    ls = engine.log_softmax(logits)
    expected = -sum(ls[t, b, y[t, b]] for t in range(5) for b in range(2))
    assert abs(res.loss - expected) < 1e-12
    assert res.count == 10


def test_state_carryover_splits_cleanly():
    r = Rng(3)
    mdl = init_model("vcrnn", 5, 3, r, scale=0.9)
    x, y = r.integers(0, 3, (10, 2)), r.integers(0, 3, (10, 2))
    whole = engine.run(mdl, x, y, grad=False)
    a = engine.run(mdl, x[:4], y[:4], grad=False)
    b = engine.run(mdl, x[4:], y[4:], h0=a.h_last, grad=False)
    assert np.array_equal(whole.h_last, b.h_last)
    assert abs(whole.loss - (a.loss + b.loss)) < 1e-12


def test_output_bias_gradient_identity():
    mdl = init_model("elman", 3, 4, Rng(0))
    mdl.params = {k: np.zeros_like(v) for k, v in mdl.params.items()}
    res = engine.run(mdl, np.array([[1]]), np.array([[2]]))
    assert np.allclose(res.grads["bias_o"], [0.25, 0.25, -0.75, 0.25], atol=0, rtol=0)


def test_saturated_gate_has_zero_scheduler_gradient():
    r = Rng(9)
    mdl = init_model("vcrnn", 8, 8, r, scale=0.5, lam=1e6)
    mdl.params["u"][:] = 0.0
    mdl.params["v"][:] = 0.0
    mdl.params["b"][:] = np.log(0.3 / 0.7)  # m*D = 2.4, well away from integers
    x, y = r.integers(0, 8, (6, 2)), r.integers(0, 8, (6, 2))
    res = engine.run(mdl, x, y)
    for name in ("u", "v", "b"):
        assert np.all(res.grads[name] == 0.0)


def test_nan_names_timestep():
    mdl = init_model("gru", 4, 3, Rng(0))
    mdl.params["V"][0, 2] = np.nan
    x = np.array([[0], [1], [2], [0]])
    # NaN * 0 is NaN, so the one-hot product poisons the very first step
    with pytest.raises(NumericError, match="hidden state at timestep 0"):
        engine.run(mdl, x, x, grad=False)
    mdl = init_model("gru", 4, 3, Rng(0))
    mdl.params["O"][1, 0] = np.inf
    with pytest.raises(NumericError, match="log-probability at timestep 0"):
        engine.run(mdl, x, x, grad=False)


def test_param_names_and_counts():
    assert param_names("vcrnn", use_bias=True) == ["U", "V", "bias", "u", "v", "b", "O", "bias_o"]
    mdl = init_model("vcgru", 4, 3, Rng(0))
    assert mdl.num_parameters() == 3 * 16 + 3 * 12 + 4 + 3 + 1 + 12 + 3
    with pytest.raises(ValueError):
        param_names("lstm")


def test_init_deterministic_and_copy_independent():
    a = init_model("vcgru", 5, 3, Rng(11))
    b = init_model("vcgru", 5, 3, Rng(11))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    c = a.copy()
    c.params["U"][0, 0] += 1.0
    assert a.params["U"][0, 0] != c.params["U"][0, 0]


def test_hidden_states_bounded():
    r = Rng(4)
    for unit in engine.UNIT_KINDS:
        mdl = init_model(unit, 6, 3, r.split(unit), scale=3.0)
        res = engine.run(mdl, r.integers(0, 3, (30, 2)), None, keep_states=True)
        assert np.all(np.abs(res.extras["h"]) <= 1.0)
