"""Multimodal feature interaction: stub encoders, feature projection,
self-gating, coarse/medium/fine self-attention, contextual gating,
bidirectional cross-modal attention and joint fusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node
from .config import ModelConfig
from .layers import dense, layer_norm
from .params import ParamStore


class InputError(ValueError):
    pass


TEXT_VOCAB = 64


@dataclass
class TextFeatures:
    tokens: np.ndarray  # (n_t, d_t)

    @property
    def n_t(self) -> int:
        return self.tokens.shape[0]


@dataclass
class ImageFeatures:
    grid: np.ndarray  # (H, W, d_i)
    raw_image: np.ndarray  # (H_img, W_img, 3)


@dataclass
class GlobalFeatures:
    concat: np.ndarray  # (d_t + d_i,)


@dataclass
class AttentionLevelConfig:
    level: str  # coarse | medium | fine
    heads: int
    head_dim: int

    @classmethod
    def for_level(cls, level: str, d_se: int, h: int) -> "AttentionLevelConfig":
        heads = {"coarse": h // 2, "medium": h, "fine": 2 * h}[level]
        if d_se % heads:
            raise InputError(f"{level} level: {heads} heads do not divide d_se={d_se}")
        return cls(level=level, heads=heads, head_dim=d_se // heads)


LEVELS = ("coarse", "medium", "fine")


# ---------------------------------------------------------------------
# stub encoders (deterministic stand-ins for pretrained encoders)
# ---------------------------------------------------------------------

def _token_table(d_t: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x7E47])
    return rng.standard_normal((TEXT_VOCAB, d_t))


def stub_text_encoder(token_ids, d_t: int, seed: int) -> TextFeatures:
    """Token id k maps to row k of a seeded random embedding table."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size == 0:
        raise InputError("token list must be non-empty")
    if ids.size > 512:
        raise InputError(f"at most 512 tokens supported, got {ids.size}")
    table = _token_table(d_t, seed)
    return TextFeatures(tokens=table[ids % TEXT_VOCAB].copy())


def stub_image_encoder(raw_image, grid: tuple[int, int], d_i: int, seed: int) -> ImageFeatures:
    """Patch-average the image, then one fixed seeded linear map 3 -> d_i."""
    img = np.asarray(raw_image, dtype=np.float64)
    H, W = grid
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"raw image must be (H,W,3), got {img.shape}")
    if img.shape[0] % H or img.shape[1] % W:
        raise InputError(f"image extents {img.shape[:2]} not divisible by grid {grid}")
    ph, pw = img.shape[0] // H, img.shape[1] // W
    patches = img.reshape(H, ph, W, pw, 3).mean(axis=(1, 3))
    rng = np.random.default_rng([seed, 0x1147])
    proj = rng.standard_normal((3, d_i))
    return ImageFeatures(grid=patches @ proj, raw_image=img)


def extract_global_features(t: TextFeatures, i: ImageFeatures) -> GlobalFeatures:
    """Token mean concatenated with spatial mean over grid regions."""
    return GlobalFeatures(
        concat=np.concatenate([t.tokens.mean(axis=0), i.grid.mean(axis=(0, 1))])
    )


# ---------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------

def register_params(store: ParamStore, cfg: ModelConfig) -> None:
    d_se, d_t, d_i, h = cfg.d_se, cfg.d_t, cfg.d_i, cfg.h
    hid = d_se // 2
    store.add("mfim.text_proj.w", (d_t, d_se))
    store.add("mfim.text_proj.b", (d_se,), init="zeros")
    for direction in ("fwd", "bwd"):
        for gate in ("i", "f", "g", "o"):
            store.add(f"mfim.bilstm.{direction}.w{gate}", (d_se, hid))
            store.add(f"mfim.bilstm.{direction}.u{gate}", (hid, hid))
            store.add(f"mfim.bilstm.{direction}.b{gate}", (hid,), init="zeros")
    store.add("mfim.img_proj.w", (d_i, d_se))
    store.add("mfim.img_proj.b", (d_se,), init="zeros")
    splits = _channel_split(d_se)
    for k, c in zip((3, 5, 7), splits):
        store.add(f"mfim.ms.k{k}", (k, k, d_se, c))
    store.add("mfim.ms.mix.w", (d_se, d_se))
    store.add("mfim.ms.mix.b", (d_se,), init="zeros")
    for m in ("t", "i"):
        store.add(f"mfim.gate.{m}.w", (d_se, d_se))
        store.add(f"mfim.gate.{m}.b", (d_se,), init="zeros")
        store.add(f"mfim.ctx.{m}.w", (d_se, d_se))
        store.add(f"mfim.ctx.{m}.b", (d_se,), init="zeros")
        for level in LEVELS:
            lc = AttentionLevelConfig.for_level(level, d_se, h)
            for head in range(lc.heads):
                for proj in ("wq", "wk", "wv"):
                    store.add(f"mfim.att.{m}.{level}.head{head}.{proj}", (d_se, lc.head_dim))
            store.add(f"mfim.att.{m}.{level}.wo", (d_se, d_se))
        for proj in ("wq", "wk", "wv"):
            store.add(f"mfim.cross.{m}.{proj}", (d_se, d_se))
    store.add("mfim.mln.w1", (d_se, d_se))
    store.add("mfim.mln.b1", (d_se,), init="zeros")
    store.add("mfim.mln.w2", (d_se, d_se))
    store.add("mfim.mln.b2", (d_se,), init="zeros")


def _channel_split(d_se: int) -> tuple[int, int, int]:
    """Split d_se into three near-equal channel groups."""
    base = d_se // 3
    rem = d_se - 3 * base
    return (base + (rem > 0), base + (rem > 1), base)


# ---------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------

def _lstm_direction(g: Graph, store: ParamStore, prefix: str, rows: list[Node], hid: int) -> list[Node]:
    p = {k: g.param(store, f"{prefix}.{k}") for k in
         ("wi", "wf", "wg", "wo", "ui", "uf", "ug", "uo", "bi", "bf", "bg", "bo")}
    h_prev = g.constant(np.zeros((1, hid)))
    c_prev = g.constant(np.zeros((1, hid)))
    outputs = []
    for x_t in rows:
        i_t = g.sigmoid(g.add(g.add(g.matmul(x_t, p["wi"]), g.matmul(h_prev, p["ui"])), p["bi"]))
        f_t = g.sigmoid(g.add(g.add(g.matmul(x_t, p["wf"]), g.matmul(h_prev, p["uf"])), p["bf"]))
        g_t = g.tanh(g.add(g.add(g.matmul(x_t, p["wg"]), g.matmul(h_prev, p["ug"])), p["bg"]))
        o_t = g.sigmoid(g.add(g.add(g.matmul(x_t, p["wo"]), g.matmul(h_prev, p["uo"])), p["bo"]))
        c_prev = g.add(g.mul(f_t, c_prev), g.mul(i_t, g_t))
        h_prev = g.mul(o_t, g.tanh(c_prev))
        outputs.append(h_prev)
    return outputs


def prepare_local_features(
    g: Graph, store: ParamStore, cfg: ModelConfig, t: TextFeatures, i: ImageFeatures
) -> tuple[Node, Node]:
    """Project both modalities into the shared space and enrich them.

    Text: linear d_t -> d_se, then a single-layer BiLSTM (hidden d_se/2 per
    direction, concatenated).  Image: linear d_i -> d_se per region, convs
    of size 3/5/7 concatenated channelwise, mixed back to d_se, flattened
    to (n_i, d_se).
    """
    d_se = cfg.d_se
    hid = d_se // 2
    ht = dense(g, g.constant(t.tokens), g.param(store, "mfim.text_proj.w"),
               g.param(store, "mfim.text_proj.b"))
    rows = [g.narrow(ht, 0, k, 1) for k in range(t.n_t)]
    fwd = _lstm_direction(g, store, "mfim.bilstm.fwd", rows, hid)
    bwd = _lstm_direction(g, store, "mfim.bilstm.bwd", rows[::-1], hid)[::-1]
    ht_basis = g.concat([g.concat([f, b], axis=1) for f, b in zip(fwd, bwd)], axis=0)

    H, W, d_i = i.grid.shape
    flat = dense(g, g.constant(i.grid.reshape(H * W, d_i)),
                 g.param(store, "mfim.img_proj.w"), g.param(store, "mfim.img_proj.b"))
    grid = g.reshape(flat, (H, W, d_se))
    scales = [g.conv2d(grid, g.param(store, f"mfim.ms.k{k}")) for k in (3, 5, 7)]
    mixed = g.concat(scales, axis=2)
    mixed = dense(g, g.reshape(mixed, (H * W, d_se)),
                  g.param(store, "mfim.ms.mix.w"), g.param(store, "mfim.ms.mix.b"))
    return ht_basis, mixed


def self_gate(g: Graph, x: Node, w: Node, b: Node) -> Node:
    """x * sigmoid(x @ w + b)."""
    return g.mul(x, g.sigmoid(g.add(g.matmul(x, w), b)))


def multi_granularity_attention(
    g: Graph, store: ParamStore, prefix: str, x: Node, level_cfg: AttentionLevelConfig, d_se: int, h: int
) -> Node:
    """One attention level: per-head scaled dot-product, concat, W^O."""
    scale = {
        "coarse": np.sqrt(2.0 * d_se / h),
        "medium": np.sqrt(d_se / h),
        "fine": np.sqrt(d_se / (2.0 * h)),
    }[level_cfg.level]
    heads = []
    for head in range(level_cfg.heads):
        hp = f"{prefix}.{level_cfg.level}.head{head}"
        q = g.matmul(x, g.param(store, f"{hp}.wq"))
        k = g.matmul(x, g.param(store, f"{hp}.wk"))
        v = g.matmul(x, g.param(store, f"{hp}.wv"))
        weights = g.softmax_last(g.scale(g.matmul(q, g.transpose(k)), 1.0 / scale))
        heads.append(g.matmul(weights, v))
    return g.matmul(g.concat(heads, axis=1), g.param(store, f"{prefix}.{level_cfg.level}.wo"))


def attention_pipeline(
    g: Graph, store: ParamStore, cfg: ModelConfig, modality: str, x: Node
) -> Node:
    """Coarse -> medium -> fine, each level consuming the previous output."""
    out = x
    for level in LEVELS:
        lc = AttentionLevelConfig.for_level(level, cfg.d_se, cfg.h)
        out = multi_granularity_attention(
            g, store, f"mfim.att.{modality}", out, lc, cfg.d_se, cfg.h
        )
    return out


def contextual_gating(g: Graph, att: Node, h_raw: Node, w: Node, b: Node) -> Node:
    """sigmoid(layer_norm(h_raw @ w + b)) * att."""
    return g.mul(g.sigmoid(layer_norm(g, g.add(g.matmul(h_raw, w), b))), att)


def cross_modal_attention(
    g: Graph, store: ParamStore, gt: Node, gi: Node, d_se: int
) -> tuple[Node, Node]:
    """Single-head bidirectional cross-attention, scale sqrt(d_se)."""
    scale = 1.0 / np.sqrt(d_se)
    qt = g.matmul(gt, g.param(store, "mfim.cross.t.wq"))
    kt = g.matmul(gt, g.param(store, "mfim.cross.t.wk"))
    vt = g.matmul(gt, g.param(store, "mfim.cross.t.wv"))
    qi = g.matmul(gi, g.param(store, "mfim.cross.i.wq"))
    ki = g.matmul(gi, g.param(store, "mfim.cross.i.wk"))
    vi = g.matmul(gi, g.param(store, "mfim.cross.i.wv"))
    att_t2i = g.matmul(g.softmax_last(g.scale(g.matmul(qt, g.transpose(ki)), scale)), vi)
    att_i2t = g.matmul(g.softmax_last(g.scale(g.matmul(qi, g.transpose(kt)), scale)), vt)
    return att_t2i, att_i2t


def joint_fusion(g: Graph, store: ParamStore, att_t2i: Node, att_i2t: Node) -> Node:
    """Concat rows, self-sigmoid refinement, mean-pool, 2-layer perceptron."""
    a = g.concat([att_t2i, att_i2t], axis=0)
    refined = g.mul(a, g.sigmoid(a))
    pooled = g.reduce_mean(refined, axes=0)
    hidden = g.relu(g.add(dense(g, pooled, g.param(store, "mfim.mln.w1")),
                          g.param(store, "mfim.mln.b1")))
    return g.add(dense(g, hidden, g.param(store, "mfim.mln.w2")),
                 g.param(store, "mfim.mln.b2"))


def mfim_forward(
    g: Graph, store: ParamStore, cfg: ModelConfig, t: TextFeatures, i: ImageFeatures
) -> Node:
    """Full module forward; returns the fused d_se feature vector."""
    ht, hi = prepare_local_features(g, store, cfg, t, i)
    if cfg.use_hcgam:
        ht_g = self_gate(g, ht, g.param(store, "mfim.gate.t.w"), g.param(store, "mfim.gate.t.b"))
        hi_g = self_gate(g, hi, g.param(store, "mfim.gate.i.w"), g.param(store, "mfim.gate.i.b"))
        att_t = attention_pipeline(g, store, cfg, "t", ht_g)
        att_i = attention_pipeline(g, store, cfg, "i", hi_g)
        gt = contextual_gating(g, att_t, ht, g.param(store, "mfim.ctx.t.w"),
                               g.param(store, "mfim.ctx.t.b"))
        gi = contextual_gating(g, att_i, hi, g.param(store, "mfim.ctx.i.w"),
                               g.param(store, "mfim.ctx.i.b"))
    else:
        gt, gi = ht, hi
    att_t2i, att_i2t = cross_modal_attention(g, store, gt, gi, cfg.d_se)
    return joint_fusion(g, store, att_t2i, att_i2t)
