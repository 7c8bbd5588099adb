"""Deterministic tensor kernels with explicit forward and backward passes.

Everything operates on plain 2-D numpy arrays (rows = sequence positions,
cols = feature dimension). Each forward returns its output together with an
opaque cache; the matching ``*_backward`` consumes the upstream gradient and
the cache and returns gradients for inputs and parameters. There is no
autodiff graph: the detector composes these pairs by hand, which keeps the
accumulation order fixed and runs bit-identical across repeats.

Training runs in float32; the gradient-checking oracle re-instantiates
parameters in float64, which every kernel supports because dtypes follow the
inputs.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np

from .errors import DimensionMismatch, NonFiniteInput

Array = np.ndarray

GELU_COEFF = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715


# --- parameter store ----------------------------------------------------------

class ParamStore:
    """Named map tensor-name -> 2-D array, with a parallel gradient map.

    Insertion order is the canonical parameter order used by checkpoints, so
    construction code must add tensors in a fixed sequence.
    """

    def __init__(self) -> None:
        self._params: dict[str, Array] = {}
        self.grads: dict[str, Array] = {}

    def add(self, name: str, value: Array) -> None:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        value = np.ascontiguousarray(value)
        if value.ndim != 2:
            raise ValueError(f"parameter {name!r} must be 2-D, got shape {value.shape}")
        self._params[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> Array:
        return self._params[name]

    def __setitem__(self, name: str, value: Array) -> None:
        if name not in self._params:
            raise KeyError(name)
        self._params[name] = np.ascontiguousarray(value)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def accumulate(self, name: str, grad: Array) -> None:
        self.grads[name] += grad

    def subset(self, prefix: str) -> dict[str, Array]:
        """Parameters under ``prefix.`` with the prefix stripped."""
        head = prefix + "."
        return {k[len(head):]: v for k, v in self._params.items() if k.startswith(head)}

    def accumulate_subset(self, prefix: str, grads: Mapping[str, Array]) -> None:
        for short, grad in grads.items():
            self.grads[f"{prefix}.{short}"] += grad

    def astype(self, dtype) -> "ParamStore":
        clone = ParamStore()
        for name, value in self._params.items():
            clone.add(name, value.astype(dtype))
        return clone

    def copy_values(self) -> dict[str, Array]:
        return {name: value.copy() for name, value in self._params.items()}

    def load_values(self, values: Mapping[str, Array]) -> None:
        for name, value in values.items():
            self[name] = value.copy()


# --- elementwise pieces ---------------------------------------------------------

def linear(x: Array, w: Array, b: Array) -> tuple[Array, tuple]:
    """y = x @ w + b. ``b`` has shape (1, cols_out)."""
    return x @ w + b, (x, w)


def linear_backward(dy: Array, cache: tuple) -> tuple[Array, Array, Array]:
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0, keepdims=True)


def layer_norm(x: Array, gain: Array, bias: Array, eps: float = 1e-5) -> tuple[Array, tuple]:
    """Per-row normalisation to mean 0 / population variance 1, then affine."""
    if not np.isfinite(x).all():
        raise NonFiniteInput("layer_norm received non-finite input")
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    return x_hat * gain + bias, (x_hat, inv_std, gain)


def layer_norm_backward(dy: Array, cache: tuple) -> tuple[Array, Array, Array]:
    x_hat, inv_std, gain = cache
    dgain = (dy * x_hat).sum(axis=0, keepdims=True)
    dbias = dy.sum(axis=0, keepdims=True)
    dx_hat = dy * gain
    dx = inv_std * (
        dx_hat
        - dx_hat.mean(axis=1, keepdims=True)
        - x_hat * (dx_hat * x_hat).mean(axis=1, keepdims=True)
    )
    return dx, dgain, dbias


def softmax_rows(x: Array) -> Array:
    """Row softmax with max-subtraction for stability."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_backward(dy: Array, y: Array) -> Array:
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def gelu(x: Array) -> tuple[Array, tuple]:
    """tanh-approximation GELU."""
    u = GELU_COEFF * (x + GELU_CUBIC * x ** 3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy: Array, cache: tuple) -> Array:
    x, t = cache
    du_dx = GELU_COEFF * (1.0 + 3.0 * GELU_CUBIC * x ** 2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du_dx)


# --- attention ------------------------------------------------------------------

ATTN_PARAM_NAMES = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")


def multi_head_attention(
    q_in: Array,
    kv_in: Array,
    params: Mapping[str, Array],
    num_heads: int,
) -> tuple[Array, Array, tuple]:
    """Scaled dot-product attention, per-head scale 1/sqrt(d/num_heads).

    ``q_in`` and ``kv_in`` may differ (cross-attention) or be the same array
    (self-attention). Returns (output, weights, cache) where ``weights`` has
    shape (num_heads, n_q, n_kv) and every row sums to 1.
    """
    d = q_in.shape[1]
    if d % num_heads != 0:
        raise DimensionMismatch(num_heads, d, "model dim not divisible by num_heads")
    if kv_in.shape[1] != d:
        raise DimensionMismatch(d, kv_in.shape[1], "key/value dim")
    if kv_in.shape[0] < 1:
        raise DimensionMismatch(1, 0, "key/value rows")
    head_dim = d // num_heads
    scale = 1.0 / math.sqrt(head_dim)

    q, cq = linear(q_in, params["wq"], params["bq"])
    k, ck = linear(kv_in, params["wk"], params["bk"])
    v, cv = linear(kv_in, params["wv"], params["bv"])

    n_q, n_kv = q_in.shape[0], kv_in.shape[0]
    weights = np.empty((num_heads, n_q, n_kv), dtype=q.dtype)
    head_out = np.empty((n_q, d), dtype=q.dtype)
    for h in range(num_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        scores = (q[:, lo:hi] @ k[:, lo:hi].T) * scale
        weights[h] = softmax_rows(scores)
        head_out[:, lo:hi] = weights[h] @ v[:, lo:hi]

    out, co = linear(head_out, params["wo"], params["bo"])
    cache = (cq, ck, cv, co, q, k, v, weights, num_heads, head_dim, scale)
    return out, weights, cache


def multi_head_attention_backward(
    dout: Array, cache: tuple
) -> tuple[Array, Array, dict[str, Array]]:
    """Returns (d_q_in, d_kv_in, parameter gradients keyed wq, bq, ...)."""
    cq, ck, cv, co, q, k, v, weights, num_heads, head_dim, scale = cache

    d_head_out, dwo, dbo = linear_backward(dout, co)

    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    for h in range(num_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        a = weights[h]
        d_o = d_head_out[:, lo:hi]
        da = d_o @ v[:, lo:hi].T
        dv[:, lo:hi] = a.T @ d_o
        dscores = softmax_rows_backward(da, a) * scale
        dq[:, lo:hi] = dscores @ k[:, lo:hi]
        dk[:, lo:hi] = dscores.T @ q[:, lo:hi]

    d_q_in, dwq, dbq = linear_backward(dq, cq)
    d_kv_k, dwk, dbk = linear_backward(dk, ck)
    d_kv_v, dwv, dbv = linear_backward(dv, cv)
    grads = {
        "wq": dwq, "bq": dbq,
        "wk": dwk, "bk": dbk,
        "wv": dwv, "bv": dbv,
        "wo": dwo, "bo": dbo,
    }
    return d_q_in, d_kv_k + d_kv_v, grads


# --- transformer encoder block ---------------------------------------------------

def encoder_block(x: Array, params: Mapping[str, Array], num_heads: int) -> tuple[Array, tuple]:
    """Pre-norm block: x + MHA(LN(x)), then x + FFN(LN(x)) with GELU."""
    attn_params = {n: params[f"attn.{n}"] for n in ATTN_PARAM_NAMES}
    h1, c_ln1 = layer_norm(x, params["ln1.gain"], params["ln1.bias"])
    attn_out, _, c_attn = multi_head_attention(h1, h1, attn_params, num_heads)
    x1 = x + attn_out

    h2, c_ln2 = layer_norm(x1, params["ln2.gain"], params["ln2.bias"])
    f1, c_f1 = linear(h2, params["ffn.w1"], params["ffn.b1"])
    act, c_act = gelu(f1)
    f2, c_f2 = linear(act, params["ffn.w2"], params["ffn.b2"])
    out = x1 + f2
    return out, (c_ln1, c_attn, c_ln2, c_f1, c_act, c_f2)


def encoder_block_backward(dout: Array, cache: tuple) -> tuple[Array, dict[str, Array]]:
    c_ln1, c_attn, c_ln2, c_f1, c_act, c_f2 = cache
    grads: dict[str, Array] = {}

    # out = x1 + f2
    d_act, grads["ffn.w2"], grads["ffn.b2"] = linear_backward(dout, c_f2)
    d_f1 = gelu_backward(d_act, c_act)
    d_h2, grads["ffn.w1"], grads["ffn.b1"] = linear_backward(d_f1, c_f1)
    d_x1, grads["ln2.gain"], grads["ln2.bias"] = layer_norm_backward(d_h2, c_ln2)
    d_x1 = d_x1 + dout

    # x1 = x + attn_out
    d_q_in, d_kv_in, attn_grads = multi_head_attention_backward(d_x1, c_attn)
    for name, grad in attn_grads.items():
        grads[f"attn.{name}"] = grad
    d_h1 = d_q_in + d_kv_in
    d_x, grads["ln1.gain"], grads["ln1.bias"] = layer_norm_backward(d_h1, c_ln1)
    return d_x + d_x1, grads


# --- gradient-checking oracle ------------------------------------------------------

def grad_check(
    f: Callable[[Mapping[str, Array]], tuple[float, Mapping[str, Array]]],
    point: Mapping[str, Array],
    h: float = 1e-4,
    loss_fn: Callable[[Mapping[str, Array]], float] | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` maps a named set of float64 tensors to (scalar loss, analytic
    gradients of the loss w.r.t. every tensor). The numeric gradient is
    (f(x+h) - f(x-h)) / 2h per coordinate; the relative error denominator is
    max(|analytic|, |numeric|, 1e-8). ``loss_fn``, when given, evaluates the
    loss without the backward pass and is used for the difference quotients.
    """
    point = {name: np.array(value, dtype=np.float64) for name, value in point.items()}
    _, analytic = f(point)
    analytic = {name: np.array(grad, dtype=np.float64) for name, grad in analytic.items()}
    evaluate = loss_fn if loss_fn is not None else (lambda p: f(p)[0])

    worst = 0.0
    for name, tensor in point.items():
        flat = tensor.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            loss_plus = evaluate(point)
            flat[i] = orig - h
            loss_minus = evaluate(point)
            flat[i] = orig
            numeric[i] = (loss_plus - loss_minus) / (2.0 * h)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        err = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
        worst = max(worst, err)
    return worst
