"""The consistency-fusion detection network.

Pipeline per instance: encode the reasoning trajectory with a CLS-pooled
transformer encoder, contextualise the three internal-state vectors with
segment-aware self-attention, compute a sigmoid gate from the contextualised
states, scale the trajectory representation by the gate, probe it with
cross-attention (internal states as queries), and classify the fused result
with a small MLP under focal loss.

Forward and backward are composed by hand from the kernels module; the
backward pass accumulates into ``ParamStore.grads`` in a fixed order, so a
whole training run is bit-reproducible from its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DetectorConfig
from .embeddings import EmbeddingSequence, InternalStateSet
from .errors import DimensionMismatch, TooManyUnits
from .kernels import (
    ATTN_PARAM_NAMES,
    Array,
    ParamStore,
    encoder_block,
    encoder_block_backward,
    layer_norm,
    layer_norm_backward,
    linear,
    linear_backward,
    multi_head_attention,
    multi_head_attention_backward,
)

INIT_STD = 0.02

SEGMENT_QUERY = 0
SEGMENT_ANSWER = 1
SEGMENT_REVERSE = 2


# --- parameters -----------------------------------------------------------------

def _add_attention(store: ParamStore, prefix: str, d: int, rng, dtype) -> None:
    for name in ATTN_PARAM_NAMES:
        if name.startswith("w"):
            store.add(f"{prefix}.{name}", rng.normal(0.0, INIT_STD, (d, d)).astype(dtype))
        else:
            store.add(f"{prefix}.{name}", np.zeros((1, d), dtype=dtype))


def init_params(config: DetectorConfig, dtype=np.float32) -> ParamStore:
    """Seed-controlled parameter initialisation in canonical (checkpoint) order."""
    config.validate()
    d = config.hidden_dim
    f = config.ffn_multiplier * d
    h2 = max(d // 2, 1)
    rng = np.random.default_rng(config.seed)

    store = ParamStore()
    store.add("cls_token", rng.normal(0.0, INIT_STD, (1, d)).astype(dtype))
    store.add("positional_table", rng.normal(0.0, INIT_STD, (config.max_units + 1, d)).astype(dtype))
    for i in range(config.encoder_layers):
        store.add(f"encoder{i}.ln1.gain", np.ones((1, d), dtype=dtype))
        store.add(f"encoder{i}.ln1.bias", np.zeros((1, d), dtype=dtype))
        _add_attention(store, f"encoder{i}.attn", d, rng, dtype)
        store.add(f"encoder{i}.ln2.gain", np.ones((1, d), dtype=dtype))
        store.add(f"encoder{i}.ln2.bias", np.zeros((1, d), dtype=dtype))
        store.add(f"encoder{i}.ffn.w1", rng.normal(0.0, INIT_STD, (d, f)).astype(dtype))
        store.add(f"encoder{i}.ffn.b1", np.zeros((1, f), dtype=dtype))
        store.add(f"encoder{i}.ffn.w2", rng.normal(0.0, INIT_STD, (f, d)).astype(dtype))
        store.add(f"encoder{i}.ffn.b2", np.zeros((1, d), dtype=dtype))
    store.add("segment_table", rng.normal(0.0, INIT_STD, (3, d)).astype(dtype))
    store.add("main_ln.gain", np.ones((1, d), dtype=dtype))
    store.add("main_ln.bias", np.zeros((1, d), dtype=dtype))
    _add_attention(store, "main_attn", d, rng, dtype)
    store.add("gate.w1", rng.normal(0.0, INIT_STD, (d, d)).astype(dtype))
    store.add("gate.b1", np.zeros((1, d), dtype=dtype))
    store.add("gate.w2", rng.normal(0.0, INIT_STD, (d, 1)).astype(dtype))
    store.add("gate.b2", np.zeros((1, 1), dtype=dtype))
    _add_attention(store, "cross_attn", d, rng, dtype)
    store.add("classifier.w1", rng.normal(0.0, INIT_STD, (d, h2)).astype(dtype))
    store.add("classifier.b1", np.zeros((1, h2), dtype=dtype))
    store.add("classifier.w2", rng.normal(0.0, INIT_STD, (h2, 2)).astype(dtype))
    store.add("classifier.b2", np.zeros((1, 2), dtype=dtype))
    return store


def param_names(config: DetectorConfig) -> list[str]:
    names = ["cls_token", "positional_table"]
    for i in range(config.encoder_layers):
        names += [f"encoder{i}.ln1.gain", f"encoder{i}.ln1.bias"]
        names += [f"encoder{i}.attn.{n}" for n in ATTN_PARAM_NAMES]
        names += [f"encoder{i}.ln2.gain", f"encoder{i}.ln2.bias"]
        names += [f"encoder{i}.ffn.w1", f"encoder{i}.ffn.b1", f"encoder{i}.ffn.w2", f"encoder{i}.ffn.b2"]
    names += ["segment_table", "main_ln.gain", "main_ln.bias"]
    names += [f"main_attn.{n}" for n in ATTN_PARAM_NAMES]
    names += ["gate.w1", "gate.b1", "gate.w2", "gate.b2"]
    names += [f"cross_attn.{n}" for n in ATTN_PARAM_NAMES]
    names += ["classifier.w1", "classifier.b1", "classifier.w2", "classifier.b2"]
    return names


# --- outputs ----------------------------------------------------------------------

@dataclass
class DetectionOutput:
    logits: Array           # (2,)
    p_halluc: float         # softmax(logits)[1]
    gate: float             # sigmoid gate in (0, 1)
    cross_attention: Array  # (3, n_kv): head-averaged cross-attention weights
    h_cot: Array            # (d,) CLS-pooled trajectory vector
    fused: Array            # (d,) mean-pooled fused representation Z


# --- forward pieces ---------------------------------------------------------------

def encode_trajectory(
    units: EmbeddingSequence, params: ParamStore, config: DetectorConfig
) -> tuple[Array, Array]:
    """CLS-pooled trajectory vector plus per-unit encoder states."""
    (h_cot, unit_states), _ = _encode_trajectory_fwd(units, params, config)
    return h_cot[0], unit_states


def _encode_trajectory_fwd(units, params, config):
    m, d = units.length, units.dim
    if d != config.hidden_dim:
        raise DimensionMismatch(config.hidden_dim, d, "unit embedding dim")
    if m > config.max_units:
        raise TooManyUnits(m, config.max_units)

    dtype = params["cls_token"].dtype
    seq = np.concatenate([params["cls_token"], units.vectors.astype(dtype)], axis=0)
    if config.positional_encoding:
        seq = seq + params["positional_table"][: m + 1]
    caches = []
    h = seq
    for i in range(config.encoder_layers):
        h, cache = encoder_block(h, params.subset(f"encoder{i}"), config.num_heads)
        caches.append(cache)
    return (h[0:1], h[1:]), (caches, m)


def fuse_main(states: InternalStateSet, params: ParamStore, config: DetectorConfig) -> Array:
    """Segment-aware self-attention over [E_Q; E_A_dir; E_Q_rev], with residual."""
    (h_main, _weights), _ = _fuse_main_fwd(states, params, config)
    return h_main


def _fuse_main_fwd(states, params, config):
    if states.dim != config.hidden_dim:
        raise DimensionMismatch(config.hidden_dim, states.dim, "internal state dim")
    dtype = params["segment_table"].dtype
    x = states.stacked().astype(dtype)
    x_seg = x + params["segment_table"]
    ln_out, c_ln = layer_norm(x_seg, params["main_ln.gain"], params["main_ln.bias"])
    attn_out, weights, c_attn = multi_head_attention(
        ln_out, ln_out, params.subset("main_attn"), config.num_heads
    )
    h_main = x + attn_out
    return (h_main, weights), (c_ln, c_attn)


def apply_gate(
    h_main: Array,
    h_cot: Array,
    params: ParamStore,
    unit_states: Array | None = None,
    force_gate: float | None = None,
) -> tuple[float, Array, Array | None]:
    """Sigmoid gate from mean-pooled contextual states; scales the trajectory."""
    (g, h_hat, units_hat), _ = _apply_gate_fwd(h_main, h_cot, params, unit_states, force_gate)
    return g, h_hat, units_hat


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _apply_gate_fwd(h_main, h_cot, params, unit_states, force_gate):
    pooled = h_main.mean(axis=0, keepdims=True)
    hid_pre, c1 = linear(pooled, params["gate.w1"], params["gate.b1"])
    hid = np.tanh(hid_pre)
    raw, c2 = linear(hid, params["gate.w2"], params["gate.b2"])
    g_learned = _sigmoid(float(raw[0, 0]))
    g = g_learned if force_gate is None else float(force_gate)
    h_hat = g * h_cot
    units_hat = g * unit_states if unit_states is not None else None
    cache = (c1, hid, c2, g_learned, force_gate is not None)
    return (g, h_hat, units_hat), cache


def cross_modal_fuse(
    h_main: Array,
    h_hat: Array,
    units_hat: Array | None,
    params: ParamStore,
    config: DetectorConfig,
) -> tuple[Array, Array]:
    """Probe the gated trajectory with the contextual states as queries."""
    (z, weights), _ = _cross_modal_fuse_fwd(h_main, h_hat, units_hat, params, config)
    return z, weights


def _cross_modal_fuse_fwd(h_main, h_hat, units_hat, params, config):
    if config.cross_attention_mode == "full_trajectory":
        if units_hat is None:
            raise DimensionMismatch(1, 0, "full_trajectory mode requires gated unit states")
        kv = np.concatenate([h_hat, units_hat], axis=0)
    else:
        kv = h_hat
    attn_out, head_weights, c_attn = multi_head_attention(
        h_main, kv, params.subset("cross_attn"), config.num_heads
    )
    z = h_main + attn_out
    return (z, head_weights.mean(axis=0)), (c_attn, kv.shape[0])


def classify(z: Array, params: ParamStore) -> Array:
    """Mean-pool the fused rows, then a d -> d/2 (tanh) -> 2 MLP."""
    logits, _ = _classify_fwd(z, params)
    return logits


def _classify_fwd(z, params):
    pooled = z.mean(axis=0, keepdims=True)
    hid_pre, c1 = linear(pooled, params["classifier.w1"], params["classifier.b1"])
    hid = np.tanh(hid_pre)
    logits, c2 = linear(hid, params["classifier.w2"], params["classifier.b2"])
    return logits[0], (c1, hid, c2)


# --- full forward / backward ------------------------------------------------------

def forward(
    states: InternalStateSet,
    units: EmbeddingSequence,
    params: ParamStore,
    config: DetectorConfig,
    force_gate: float | None = None,
    want_cache: bool = False,
):
    """Run the whole network on one instance.

    ``force_gate`` is a test hook that overrides the learned gate value
    (e.g. 0.0 severs the trajectory path entirely).
    """
    (h_cot, unit_states), traj_cache = _encode_trajectory_fwd(units, params, config)
    (h_main, _), main_cache = _fuse_main_fwd(states, params, config)

    gated_units = unit_states if config.cross_attention_mode == "full_trajectory" else None
    (g, h_hat, units_hat), gate_cache = _apply_gate_fwd(
        h_main, h_cot, params, gated_units, force_gate
    )
    (z, cross_weights), cross_cache = _cross_modal_fuse_fwd(h_main, h_hat, units_hat, params, config)
    logits, cls_cache = _classify_fwd(z, params)

    p = _softmax2(logits)
    output = DetectionOutput(
        logits=logits,
        p_halluc=float(p[1]),
        gate=g,
        cross_attention=cross_weights,
        h_cot=h_cot[0].copy(),
        fused=z.mean(axis=0),
    )
    if not want_cache:
        return output
    cache = (traj_cache, main_cache, gate_cache, cross_cache, cls_cache,
             h_cot, unit_states, h_main, g)
    return output, cache


def backward(dlogits: Array, cache: tuple, params: ParamStore, config: DetectorConfig) -> None:
    """Accumulate d(loss)/d(params) into ``params.grads`` for one instance."""
    (traj_cache, main_cache, gate_cache, cross_cache, cls_cache,
     h_cot, unit_states, h_main, g) = cache
    enc_caches, m = traj_cache
    c_mln, c_mattn = main_cache
    c_g1, gate_hid, c_g2, g_learned, forced = gate_cache
    c_cattn, n_kv = cross_cache
    c_c1, cls_hid, c_c2 = cls_cache
    full_mode = config.cross_attention_mode == "full_trajectory"

    # classifier
    d_hid = dlogits.reshape(1, 2)
    d_hid, dw2, db2 = linear_backward(d_hid, c_c2)
    params.accumulate("classifier.w2", dw2)
    params.accumulate("classifier.b2", db2)
    d_pre = d_hid * (1.0 - cls_hid * cls_hid)
    d_pooled, dw1, db1 = linear_backward(d_pre, c_c1)
    params.accumulate("classifier.w1", dw1)
    params.accumulate("classifier.b1", db1)
    dz = np.repeat(d_pooled / 3.0, 3, axis=0)

    # Z = H_main + CrossAttn(H_main, KV)
    d_q, d_kv, cross_grads = multi_head_attention_backward(dz, c_cattn)
    params.accumulate_subset("cross_attn", cross_grads)
    d_h_main = dz + d_q

    # KV = [h_hat] or [h_hat; units_hat], with h_hat = g * h_cot
    d_h_hat = d_kv[0:1]
    dg = float((d_h_hat * h_cot).sum())
    d_h_cot = g * d_h_hat
    if full_mode:
        d_units_hat = d_kv[1:]
        dg += float((d_units_hat * unit_states).sum())
        d_unit_states = g * d_units_hat
    else:
        d_unit_states = np.zeros_like(unit_states)

    # gate FFN (skipped when the gate was forced: g is then a constant)
    if not forced:
        d_raw = dg * g_learned * (1.0 - g_learned)
        d_gate_hid, dgw2, dgb2 = linear_backward(np.array([[d_raw]], dtype=d_kv.dtype), c_g2)
        params.accumulate("gate.w2", dgw2)
        params.accumulate("gate.b2", dgb2)
        d_gate_pre = d_gate_hid * (1.0 - gate_hid * gate_hid)
        d_gate_pooled, dgw1, dgb1 = linear_backward(d_gate_pre, c_g1)
        params.accumulate("gate.w1", dgw1)
        params.accumulate("gate.b1", dgb1)
        d_h_main = d_h_main + np.repeat(d_gate_pooled / 3.0, 3, axis=0)

    # H_main = X + MHA(LN(X + E_seg))
    d_lnq, d_lnkv, main_grads = multi_head_attention_backward(d_h_main, c_mattn)
    params.accumulate_subset("main_attn", main_grads)
    d_x_seg, dmg, dmb = layer_norm_backward(d_lnq + d_lnkv, c_mln)
    params.accumulate("main_ln.gain", dmg)
    params.accumulate("main_ln.bias", dmb)
    params.accumulate("segment_table", d_x_seg)
    # (gradient w.r.t. the raw input states is d_h_main + d_x_seg; inputs are not learned)

    # trajectory encoder
    d_seq = np.concatenate([d_h_cot, d_unit_states], axis=0)
    for i in range(config.encoder_layers - 1, -1, -1):
        d_seq, block_grads = encoder_block_backward(d_seq, enc_caches[i])
        params.accumulate_subset(f"encoder{i}", block_grads)
    if config.positional_encoding:
        dpos = np.zeros_like(params.grads["positional_table"])
        dpos[: m + 1] = d_seq
        params.accumulate("positional_table", dpos)
    params.accumulate("cls_token", d_seq[0:1])


# --- focal loss -------------------------------------------------------------------

def _softmax2(logits: Array) -> Array:
    z = logits.astype(np.float64) - float(logits.max())
    e = np.exp(z)
    return e / e.sum()


def focal_loss(
    logits: Array, label: int, alpha: float, gamma: float
) -> tuple[float, Array]:
    """Focal loss -alpha_t (1 - p_t)^gamma log(p_t) and its logit gradient.

    ``alpha_t`` is alpha for label 1 and (1 - alpha) for label 0. With
    gamma = 0 the loss reduces exactly to alpha_t-scaled cross-entropy.
    Computed through log-softmax so confident logits stay stable.
    """
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    lse = math.log(np.exp(shifted).sum())
    log_p = shifted - lse
    p = np.exp(log_p)
    p_t = float(p[label])
    log_p_t = float(log_p[label])
    alpha_t = alpha if label == 1 else 1.0 - alpha
    one_minus = 1.0 - p_t

    focus = one_minus ** gamma
    loss = -alpha_t * focus * log_p_t

    one_hot = np.zeros(2)
    one_hot[label] = 1.0
    if one_minus <= 0.0:
        # p_t saturated at 1: the loss sits at its minimum.
        dlogits = np.zeros(2)
    else:
        coeff = alpha_t * (gamma * one_minus ** (gamma - 1.0) * log_p_t * p_t - focus)
        dlogits = coeff * (one_hot - p)
    return float(loss), dlogits


def loss_and_gradients(
    states: InternalStateSet,
    units: EmbeddingSequence,
    label: int,
    params: ParamStore,
    config: DetectorConfig,
    grad_scale: float = 1.0,
) -> tuple[float, DetectionOutput]:
    """One instance: forward, focal loss, and gradient accumulation."""
    output, cache = forward(states, units, params, config, want_cache=True)
    loss, dlogits = focal_loss(output.logits, label, config.focal_alpha, config.focal_gamma)
    backward(
        (dlogits * grad_scale).astype(params["cls_token"].dtype), cache, params, config
    )
    return loss, output
