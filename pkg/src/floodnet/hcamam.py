"""Heterogeneous convolutional adaptive multi-scale attention.

Pipeline: residual group/point convolution extraction, frequency-enhanced
channel attention, frequency-modulated spatial attention, and fusion of
both attention outputs with the global feature vector.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, Node
from .config import ModelConfig
from .layers import batch_norm, dense, layer_norm, layer_norm_flat, register_bn
from .mfim import GlobalFeatures
from .params import ParamStore

FNORM_EPS = 1e-5


def register_params(store: ParamStore, cfg: ModelConfig) -> None:
    d_i, C, G, K = cfg.d_i, cfg.hren_channels, cfg.hren_groups, cfg.hren_kernel
    store.add("hcamam.hren.group_kernel", (K, K, d_i // G, C))
    store.add("hcamam.hren.pre_point", (1, 1, d_i, C))
    store.add("hcamam.hren.point_kernel", (1, 1, C, C))
    if d_i != C:
        store.add("hcamam.hren.residual", (1, 1, d_i, C))
    register_bn(store, "hcamam.hren.bn", C)

    store.add("hcamam.feeca.conv1d.w", (3,))
    store.add("hcamam.feeca.conv1d.b", (1,), init="zeros")
    store.add("hcamam.feeca.proj.w", (C, C))
    store.add("hcamam.feeca.proj.b", (C,), init="zeros")
    store.add("hcamam.feeca.scale", (1, 1, C), init="ones")

    for k in (3, 5, 7):
        store.add(f"hcamam.fmsa.k{k}", (k, k, C, 1))
    store.add("hcamam.fmsa.proj.w", (C, C))
    store.add("hcamam.fmsa.spatial", (7, 7, 1, C))
    store.add("hcamam.fmsa.reduce.w", (C, C // 4))
    store.add("hcamam.fmsa.expand.w", (C // 4, C))
    store.add("hcamam.fmsa.w_att", (1,), init="ones")
    store.add("hcamam.fmsa.w_refined", (1,), init="ones")

    d_in = cfg.d_prime + cfg.d_t + cfg.d_i
    store.add("hcamam.fusion.w", (d_in, cfg.d_fused))
    store.add("hcamam.fusion.b", (cfg.d_fused,), init="zeros")


def hren_forward(g: Graph, store: ParamStore, cfg: ModelConfig, x: Node, train: bool) -> Node:
    """Groupwise conv + pointwise conv over a normalized pointwise-pre map,
    plus a residual path (1x1 projection when channel counts differ)."""
    grouped = g.conv2d(x, g.param(store, "hcamam.hren.group_kernel"), groups=cfg.hren_groups)
    pre = g.conv2d(x, g.param(store, "hcamam.hren.pre_point"))
    pointed = g.conv2d(batch_norm(g, pre, store, "hcamam.hren.bn", train),
                       g.param(store, "hcamam.hren.point_kernel"))
    agp = g.add(grouped, pointed)
    if cfg.d_i != cfg.hren_channels:
        res = g.conv2d(x, g.param(store, "hcamam.hren.residual"))
    else:
        res = x
    return g.add(agp, res)


def _channel_conv1d(g: Graph, store: ParamStore, gap: Node) -> Node:
    """Same-padded length-3 convolution along the channel axis of a (C,) vector."""
    C = gap.shape[0]
    zero = g.constant(np.zeros(1))
    z = g.concat([zero, gap, zero], axis=0)
    w = g.param(store, "hcamam.feeca.conv1d.w")
    out = g.mul(g.narrow(w, 0, 0, 1), g.narrow(z, 0, 0, C))
    out = g.add(out, g.mul(g.narrow(w, 0, 1, 1), g.narrow(z, 0, 1, C)))
    out = g.add(out, g.mul(g.narrow(w, 0, 2, 1), g.narrow(z, 0, 2, C)))
    return g.add(out, g.param(store, "hcamam.feeca.conv1d.b"))


def feeca_forward(g: Graph, store: ParamStore, x: Node) -> Node:
    """Frequency-enhanced channel attention over an (H,W,C) map."""
    H, W, C = x.shape
    gap = g.reshape(g.reduce_mean(x, axes=(0, 1)), (C,))
    attn = _channel_conv1d(g, store, gap)
    y_proj = dense(g, attn, g.param(store, "hcamam.feeca.proj.w"),
                   g.param(store, "hcamam.feeca.proj.b"))
    x_freq = g.fft2d_magnitude(x)
    sff = g.mul(g.param(store, "hcamam.feeca.scale"), x_freq)
    weighted = g.mul(sff, g.reshape(y_proj, (1, 1, C)))
    y_att = g.sigmoid(g.reduce_sum(weighted, axes=2, keepdims=True))
    # layer norm over flattened space for the gate, over channels for x
    return g.mul(layer_norm_flat(g, y_att), layer_norm(g, x))


def fmsa_forward(g: Graph, store: ParamStore, x: Node) -> Node:
    """Frequency-modulated spatial attention over an (H,W,C) map."""
    H, W, C = x.shape
    z_sum = None
    for k in (3, 5, 7):
        z = g.conv2d(x, g.param(store, f"hcamam.fmsa.k{k}"))
        z_sum = z if z_sum is None else g.add(z_sum, z)
    a_spatial = g.sigmoid(z_sum)
    f_freq = g.fft2d_magnitude(x)
    a_agg = g.mul(a_spatial, f_freq)
    # per-channel standardization of the spectrum
    mu = g.reduce_mean(f_freq, axes=(0, 1), keepdims=True)
    cen = g.sub(f_freq, mu)
    var = g.reduce_mean(g.mul(cen, cen), axes=(0, 1), keepdims=True)
    f_norm = g.mul(cen, g.powc(g.shift(var, FNORM_EPS), -0.5))
    combined = g.reshape(g.mul(a_agg, f_norm), (H * W, C))
    a_proj = g.reshape(g.matmul(combined, g.param(store, "hcamam.fmsa.proj.w")), (H, W, C))
    local = g.conv2d(a_proj, g.param(store, "hcamam.fmsa.spatial"), groups=C)
    reduced = g.relu(g.matmul(g.reshape(local, (H * W, C)), g.param(store, "hcamam.fmsa.reduce.w")))
    a_refined = g.reshape(
        g.sigmoid(g.matmul(reduced, g.param(store, "hcamam.fmsa.expand.w"))), (H, W, C)
    )
    gain = g.mul(g.mul(g.param(store, "hcamam.fmsa.w_att"), a_proj),
                 g.mul(g.param(store, "hcamam.fmsa.w_refined"), a_refined))
    return g.mul(x, gain)


def attention_fusion(
    g: Graph, store: ParamStore, cfg: ModelConfig, y_mca: Node, y_msa: Node, gl: GlobalFeatures
) -> Node:
    """Channel-concat the two attention maps, flatten, append globals,
    and project through the global contextual dense layer."""
    y_concat = g.concat([y_mca, y_msa], axis=2)
    flat = g.reshape(y_concat, (y_concat.value.size,))
    y_final = g.concat([flat, g.constant(gl.concat)], axis=0)
    return g.relu(dense(g, y_final, g.param(store, "hcamam.fusion.w"),
                        g.param(store, "hcamam.fusion.b")))


def hcamam_forward(
    g: Graph, store: ParamStore, cfg: ModelConfig, grid: np.ndarray, gl: GlobalFeatures, train: bool
) -> Node:
    """Full module: residual extraction, both attentions, fusion vector."""
    x = g.constant(grid)
    x_f = hren_forward(g, store, cfg, x, train)
    y_mca = feeca_forward(g, store, x_f) if cfg.use_feeca else x_f
    y_msa = fmsa_forward(g, store, x_f) if cfg.use_fmsa else x_f
    return attention_fusion(g, store, cfg, y_mca, y_msa, gl)
