"""Cascading convolutional transformer feature refinement.

Gated-conv downsampling encoder, a small pre-LN transformer over flattened
patches, a cascading decoder whose stage outputs are channel-concatenated,
and a gated subtraction/scaling harmonizer against adapted image features.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, Node
from .config import ModelConfig
from .layers import batch_norm, layer_norm, register_bn, sinusoidal_positions
from .params import ParamStore


def register_params(store: ParamStore, cfg: ModelConfig) -> None:
    c_in = 3
    for i, c_out in enumerate(cfg.encoder_plan):
        store.add(f"cctfrm.enc{i}.kernel", (3, 3, c_in, c_out))
        register_bn(store, f"cctfrm.enc{i}.bn", c_out)
        c_in = c_out
    d = cfg.d_model
    dh = d // cfg.transformer_heads
    for layer in range(cfg.transformer_depth):
        for head in range(cfg.transformer_heads):
            for proj in ("wq", "wk", "wv"):
                store.add(f"cctfrm.tr{layer}.head{head}.{proj}", (d, dh))
        store.add(f"cctfrm.tr{layer}.wo", (d, d))
        store.add(f"cctfrm.tr{layer}.ff.w1", (d, 2 * d))
        store.add(f"cctfrm.tr{layer}.ff.b1", (2 * d,), init="zeros")
        store.add(f"cctfrm.tr{layer}.ff.w2", (2 * d, d))
        store.add(f"cctfrm.tr{layer}.ff.b2", (d,), init="zeros")
    c_in = cfg.d_model
    for i, c_out in enumerate(cfg.decoder_plan):
        store.add(f"cctfrm.dec{i}.kernel", (3, 3, c_in, c_out))
        register_bn(store, f"cctfrm.dec{i}.bn", c_out)
        c_in = c_out
    c_t = cfg.cascade_channels()
    store.add("cctfrm.adapter.kernel", (3, 3, 3, c_t))
    register_bn(store, "cctfrm.harm.bn_img", c_t)
    register_bn(store, "cctfrm.harm.bn_cascade", c_t)
    for name in ("beta", "g_cascade", "g_image", "alpha_cascade", "alpha_sub"):
        store.add(f"cctfrm.harm.{name}", (1,), init="ones")


def gated_downsample_block(
    g: Graph,
    store: ParamStore,
    name: str,
    x: Node,
    cfg: ModelConfig,
    train: bool,
    dropout_rng: np.random.Generator | None,
) -> Node:
    """conv -> relu(G * sigmoid(G)) -> dropout -> batchnorm -> maxpool."""
    conv = g.conv2d(x, g.param(store, f"{name}.kernel"))
    act = g.relu(g.mul(conv, g.sigmoid(conv)))
    if train and cfg.dropout > 0.0:
        act = g.dropout(act, cfg.dropout, dropout_rng)
    normed = batch_norm(g, act, store, f"{name}.bn", train)
    return g.maxpool2(normed)


def encoder(
    g: Graph,
    store: ParamStore,
    cfg: ModelConfig,
    x_img: Node,
    train: bool,
    dropout_rng: np.random.Generator | None,
    taps: dict | None = None,
) -> Node:
    out = x_img
    for i in range(len(cfg.encoder_plan)):
        out = gated_downsample_block(g, store, f"cctfrm.enc{i}", out, cfg, train, dropout_rng)
        if taps is not None:
            taps[f"enc{i}"] = out
    return out


def transformer_encoder(g: Graph, store: ParamStore, cfg: ModelConfig, patches: Node) -> Node:
    """Pre-LN transformer stack with fixed sinusoidal positions at entry."""
    n_p, d = patches.shape
    x = g.add(patches, g.constant(sinusoidal_positions(n_p, d)))
    heads = cfg.transformer_heads
    scale = 1.0 / np.sqrt(d / heads)
    for layer in range(cfg.transformer_depth):
        prefix = f"cctfrm.tr{layer}"
        normed = layer_norm(g, x)
        outs = []
        for head in range(heads):
            q = g.matmul(normed, g.param(store, f"{prefix}.head{head}.wq"))
            k = g.matmul(normed, g.param(store, f"{prefix}.head{head}.wk"))
            v = g.matmul(normed, g.param(store, f"{prefix}.head{head}.wv"))
            w = g.softmax_last(g.scale(g.matmul(q, g.transpose(k)), scale))
            outs.append(g.matmul(w, v))
        x = g.add(x, g.matmul(g.concat(outs, axis=1), g.param(store, f"{prefix}.wo")))
        normed = layer_norm(g, x)
        hidden = g.relu(g.add(g.matmul(normed, g.param(store, f"{prefix}.ff.w1")),
                              g.param(store, f"{prefix}.ff.b1")))
        x = g.add(x, g.add(g.matmul(hidden, g.param(store, f"{prefix}.ff.w2")),
                           g.param(store, f"{prefix}.ff.b2")))
    return x


def feature_enhancement(
    g: Graph,
    store: ParamStore,
    name: str,
    x: Node,
    cfg: ModelConfig,
    train: bool,
    dropout_rng: np.random.Generator | None,
) -> Node:
    """Upsample x2 then gated block; net spatial extent is preserved."""
    return gated_downsample_block(g, store, name, g.upsample2(x), cfg, train, dropout_rng)


def decoder_cascade(
    g: Graph,
    store: ParamStore,
    cfg: ModelConfig,
    x: Node,
    train: bool,
    dropout_rng: np.random.Generator | None,
) -> Node:
    outs = []
    cur = x
    for i in range(len(cfg.decoder_plan)):
        cur = feature_enhancement(g, store, f"cctfrm.dec{i}", cur, cfg, train, dropout_rng)
        outs.append(cur)
    return outs[0] if len(outs) == 1 else g.concat(outs, axis=2)


def reverse_feature_harmonization(
    g: Graph, store: ParamStore, cfg: ModelConfig, y_cascade: Node, x_img: Node, train: bool
) -> Node:
    """Gated subtraction and adaptive scaling of the cascade output against
    batch-normalized adapted image features; result is flattened."""
    H_t, W_t, C_t = y_cascade.shape
    adapted = g.conv2d(x_img, g.param(store, "cctfrm.adapter.kernel"))
    factor = x_img.shape[0] // H_t
    if factor > 1:
        adapted = g.nearest_subsample(adapted, factor)
    x_n = batch_norm(g, adapted, store, "cctfrm.harm.bn_img", train)
    y_n = batch_norm(g, y_cascade, store, "cctfrm.harm.bn_cascade", train)
    beta = g.param(store, "cctfrm.harm.beta")
    y_sub = g.sub(g.mul(beta, x_n), g.sigmoid(y_n))
    gate = g.sigmoid(g.add(g.mul(g.param(store, "cctfrm.harm.g_cascade"), y_n),
                           g.mul(g.param(store, "cctfrm.harm.g_image"), x_n)))
    o_final = g.mul(gate, g.add(g.mul(g.param(store, "cctfrm.harm.alpha_cascade"), y_n),
                                g.mul(g.param(store, "cctfrm.harm.alpha_sub"), y_sub)))
    return g.reshape(o_final, (H_t * W_t * C_t,))


def cctfrm_forward(
    g: Graph,
    store: ParamStore,
    cfg: ModelConfig,
    raw_image: np.ndarray,
    train: bool,
    dropout_rng: np.random.Generator | None,
    taps: dict | None = None,
) -> Node:
    """Full module forward; returns the flattened harmonized vector."""
    x_img = g.constant(raw_image)
    enc = encoder(g, store, cfg, x_img, train, dropout_rng, taps)
    hh, ww, d = enc.shape
    tokens = g.reshape(enc, (hh * ww, d))
    transformed = transformer_encoder(g, store, cfg, tokens)
    grid = g.reshape(transformed, (hh, ww, d))
    cascade = decoder_cascade(g, store, cfg, grid, train, dropout_rng)
    return reverse_feature_harmonization(g, store, cfg, cascade, x_img, train)
