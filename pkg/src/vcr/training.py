"""Objective, penalty, gradient checking, SGD and the truncated-BPTT loop."""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from vcr import model as engine
from vcr import oracle
from vcr.cost import SchedulerTrace, aggregate_by_annotation
from vcr.model import NumericError

log = logging.getLogger(__name__)

PENALTY_MODES = ("l1_symmetric", "l1_above_target", "l2_symmetric")
LN2 = math.log(2.0)


@dataclass(frozen=True)
class PenaltyConfig:
    m_bar: float
    weight: float
    mode: str = "l1_symmetric"
    per_position_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in PENALTY_MODES:
            raise ValueError(f"unknown penalty mode {self.mode!r}; expected one of {PENALTY_MODES}")
        if not 0.0 <= self.m_bar <= 1.0:
            raise ValueError(f"target m_bar must lie in [0, 1], got {self.m_bar}")
        if not (math.isfinite(self.weight) and self.weight >= 0):
            raise ValueError(f"penalty weight must be finite and non-negative, got {self.weight}")

    def position_weights(self, shape):
        if self.per_position_weights is None:
            return np.ones(shape)
        w = np.asarray(self.per_position_weights)
        if w.shape == shape:
            return w
        if w.ndim == 1 and shape == (len(w), 1):
            return w[:, None]
        raise ValueError(f"per-position weights have shape {w.shape}, sequence is {shape}")

    def value(self, m, w):
        dev = m - self.m_bar
        if self.mode == "l1_symmetric":
            terms = np.abs(dev)
        elif self.mode == "l1_above_target":
            terms = np.maximum(dev, 0.0)
        else:
            terms = dev * dev
        return self.weight * np.sum(w * terms)

    def grad(self, m, w):
        dev = m - self.m_bar
        if self.mode == "l1_symmetric":
            d = np.sign(dev)
        elif self.mode == "l1_above_target":
            d = (dev > 0).astype(np.float64)
        else:
            d = 2.0 * dev
        return self.weight * w * d


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    grad_clip: float = 5.0
    epochs: int = 10
    bptt_len: int = 64
    batch_size: int = 32
    lambda_start: float = 0.1
    lambda_step_per_epoch: float = 0.1
    lambda_max: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.grad_clip > 0):
            raise ValueError("learning_rate and grad_clip must be positive")
        if self.epochs < 0 or self.bptt_len < 1 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0, bptt_len and batch_size >= 1")
        if not 0 < self.lambda_start <= self.lambda_max:
            raise ValueError("need 0 < lambda_start <= lambda_max")
        if self.lambda_step_per_epoch < 0:
            raise ValueError("lambda_step_per_epoch must be non-negative")


def nll_loss(logits_seq, targets):
    """Summed negative log-likelihood in nats."""
    logits_seq = [np.asarray(l, dtype=np.float64) for l in logits_seq]
    if len(logits_seq) == 0:
        raise ValueError("empty sequence")
    if len(logits_seq) != len(targets):
        raise ValueError(f"{len(logits_seq)} logit vectors but {len(targets)} targets")
    total = 0.0
    for logits, y in zip(logits_seq, targets):
        if not 0 <= y < len(logits):
            raise ValueError(f"target {y} out of range for {len(logits)} classes")
        total -= engine.log_softmax(logits)[y]
    return float(total)


def bits_per_token(nats, count):
    return nats / (count * LN2)


def penalty_omega(m_seq, cfg: PenaltyConfig):
    m = np.asarray(m_seq, dtype=np.float64)
    if np.any((m < 0) | (m > 1)):
        raise ValueError("scheduler values must lie in [0, 1]")
    return cfg.value(m, cfg.position_weights(m.shape))


def _as_block(inputs, targets):
    inputs = np.asarray(inputs)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
        targets = None if targets is None else np.asarray(targets)[:, None]
    return inputs, targets


def forward_backward(model, inputs, targets, penalty: Optional[PenaltyConfig] = None, h0=None):
    """Loss, penalty, gradients of (loss + penalty) and the scheduler trace.

    ``inputs``/``targets`` are equal-length token id sequences (1-d) or
    (T, B) blocks. The sharpness ``model.lam`` is held fixed for the call.
    """
    x, y = _as_block(inputs, targets)
    if x.shape[0] < 1:
        raise ValueError("sequence must have at least one step")
    res = engine.run(model, x, y, penalty=penalty, h0=h0, grad=True)
    trace = SchedulerTrace.build(x.T.ravel(), res.m.T.ravel(), res.active.T.ravel(),
                                 model.unit, model.hidden, model.input_width)
    return res.loss, res.omega, res.grads, trace


def objective(model, inputs, targets, penalty=None, h0=None):
    x, y = _as_block(inputs, targets)
    return engine.run(model, x, y, penalty=penalty, h0=h0, grad=False).objective


def relative_error(analytic, numeric):
    """Worst ``|a - n| / max(|a|, |n|, 1e-8)`` over matching arrays."""
    worst = 0.0
    for name, a in analytic.items():
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(numeric[name], dtype=np.float64)
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


def max_relative_error(fn, params, analytic, step):
    """Central differences of a scalar ``fn()`` against ``analytic``.

    ``fn`` re-reads ``params``, whose arrays are perturbed in place one
    scalar at a time.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    numeric = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)
        out = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi, up = flat[i], fn()
            flat[i] = orig - step
            lo, down = flat[i], fn()
            flat[i] = orig
            out[i] = (up - down) / (hi - lo)
        numeric[name] = out.reshape(arr.shape)
    return relative_error(analytic, numeric)


def finite_diff_check(model, inputs, targets, penalty=None, step=1e-5):
    """Worst relative error between analytic gradients and central differences.

    The differenced objective comes from ``vcr.oracle`` evaluated in extended
    precision (``np.longdouble``) so roundoff does not swamp tiny gradients.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    _, _, grads, _ = forward_backward(model, inputs, targets, penalty)
    numeric = oracle.central_differences(model.unit, model.params, inputs, targets,
                                         model.lam, model.epsilon, penalty, step)
    return relative_error(grads, numeric)


def grad_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def sgd_step(params, grads, lr, clip):
    """Global-norm clipping to ``clip`` followed by a plain gradient step."""
    if not (lr > 0 and clip > 0):
        raise ValueError("lr and clip must be positive")
    norm = grad_norm(grads)
    if not math.isfinite(norm):
        raise NumericError("non-finite gradient")
    scale = clip / norm if norm > clip else 1.0
    return {k: p - lr * (scale * grads[k]) for k, p in params.items()}


def anneal_lambda(epoch, cfg: TrainConfig):
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    # rounding keeps 0.1 + 2 * 0.1 from printing as 0.30000000000000004
    return min(round(cfg.lambda_start + epoch * cfg.lambda_step_per_epoch, 12), cfg.lambda_max)


def batchify(tokens, streams):
    """Lay ``tokens`` out as ``streams`` contiguous columns of next-token pairs.

    Column b reads positions ``b*L .. b*L+L-1`` and predicts the following
    token; trailing tokens that do not fill a column are dropped.
    """
    tokens = np.asarray(tokens)
    n_pred = len(tokens) - 1
    if n_pred < 1:
        raise ValueError("need at least two tokens to form a prediction")
    streams = max(1, min(streams, n_pred))
    L = n_pred // streams
    idx = np.arange(streams)[None, :] * L + np.arange(L)[:, None]
    return tokens[idx], tokens[idx + 1], idx


@dataclass
class EvalResult:
    bits_per_token: float
    nats: float
    count: int
    trace: SchedulerTrace
    positions: np.ndarray

    def cost_report(self, annotations=None):
        ann = None
        if annotations is not None:
            ann = annotations.slice(0, annotations.length)
            ann = type(ann)({k: np.asarray(v)[self.positions] for k, v in ann.flags.items()},
                            len(self.positions))
        return aggregate_by_annotation(self.trace, ann)


def evaluate(model, tokens, streams=1):
    """Bits per token over a split, processed as ``streams`` parallel columns."""
    x, y, idx = batchify(tokens, streams)
    res = engine.run(model, x, y, grad=False)
    order = idx.T.ravel()
    trace = SchedulerTrace.build(x.T.ravel(), res.m.T.ravel(), res.active.T.ravel(),
                                 model.unit, model.hidden, model.input_width)
    return EvalResult(bits_per_token(res.loss, res.count), res.loss, res.count, trace, order)


def run_forward(model, tokens):
    """Single-stream forward pass over every token (no targets); returns the trace."""
    x = np.asarray(tokens)[:, None]
    res = engine.run(model, x, None, grad=False)
    return SchedulerTrace.build(x[:, 0], res.m[:, 0], res.active[:, 0],
                                model.unit, model.hidden, model.input_width)


def train_epochs(model, corpus, t_cfg: TrainConfig, p_cfg: Optional[PenaltyConfig] = None,
                 on_epoch=None):
    """Truncated BPTT over ``corpus``'s train split with hidden-state carry-over.

    Each epoch runs at a fixed sharpness from ``anneal_lambda`` and ends with
    a clean evaluation pass over train and valid. ``on_epoch(model, row)`` is
    called after each epoch. Returns the model and the list of metric rows.
    """
    metrics = []
    if t_cfg.epochs == 0:
        return model, metrics
    train = corpus.split("train")
    valid = corpus.split("valid")
    x_all, y_all, idx = batchify(train.tokens, t_cfg.batch_size)
    w_all = None
    if p_cfg is not None and p_cfg.per_position_weights is not None:
        lo, _ = corpus.splits["train"]
        w_all = np.asarray(p_cfg.per_position_weights, dtype=np.float64)[lo:][idx]
    L, B = x_all.shape
    for epoch in range(t_cfg.epochs):
        model.lam = anneal_lambda(epoch, t_cfg)
        h = np.zeros((B, model.hidden))
        for step, start in enumerate(range(0, L, t_cfg.bptt_len)):
            stop = min(start + t_cfg.bptt_len, L)
            pen = p_cfg
            if w_all is not None:
                pen = replace(p_cfg, per_position_weights=w_all[start:stop])
            try:
                res = engine.run(model, x_all[start:stop], y_all[start:stop],
                                 penalty=pen if model.is_vc else None, h0=h)
                grads = {k: g / res.count for k, g in res.grads.items()}
                model.params = sgd_step(model.params, grads, t_cfg.learning_rate, t_cfg.grad_clip)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch + 1}, step {step + 1}: {exc}") from exc
            h = res.h_last
        tr = evaluate(model, train.tokens, t_cfg.batch_size)
        va = evaluate(model, valid.tokens, t_cfg.batch_size)
        report = va.cost_report()
        row = {
            "epoch": epoch + 1,
            "lambda": model.lam,
            "train_bpt": tr.bits_per_token,
            "valid_bpt": va.bits_per_token,
            "mean_m": report.mean_m,
            "mean_m_sq": report.mean_m_sq,
            "equivalent_dim": report.equivalent_dim,
        }
        log.info("epoch %d lambda %.2f train %.4f valid %.4f mean_m %.3f",
                 row["epoch"], row["lambda"], row["train_bpt"], row["valid_bpt"], row["mean_m"])
        metrics.append(row)
        if on_epoch is not None:
            on_epoch(model, row)
    return model, metrics
