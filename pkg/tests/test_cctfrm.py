import numpy as np

from floodnet.autodiff import Graph
from floodnet.cctfrm import (
    cctfrm_forward,
    decoder_cascade,
    encoder,
    feature_enhancement,
    gated_downsample_block,
    register_params,
    reverse_feature_harmonization,
    transformer_encoder,
)
from floodnet.config import ModelConfig
from floodnet.layers import sinusoidal_positions
from floodnet.params import ParamStore

from conftest import make_tiny_config
from oracles import conv2d_loops, layer_norm_ref, maxpool2_scan, softmax_rows


def _store(cfg, seed=0):
    store = ParamStore(seed)
    register_params(store, cfg)
    return store


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


# ---- gated block -----------------------------------------------------


def test_gated_block_zero_kernel_collapses():
    cfg = make_tiny_config(dropout=0.0)
    store = _store(cfg)
    store.entries["cctfrm.enc0.kernel"].value[:] = 0.0
    rng = np.random.default_rng(0)
    g = Graph()
    out = gated_downsample_block(
        g, store, "cctfrm.enc0", g.constant(rng.standard_normal((4, 4, 3))), cfg, True, None
    )
    np.testing.assert_allclose(out.value, np.zeros((2, 2, 4)), atol=1e-12)


def test_gated_block_eval_dropout_is_identity():
    cfg = make_tiny_config(dropout=0.5)
    store = _store(cfg, seed=1)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 4, 3))
    outs = []
    for rng_seed in (0, 1):
        g = Graph()
        node = gated_downsample_block(
            g, store, "cctfrm.enc0", g.constant(x), cfg, False,
            np.random.default_rng(rng_seed),
        )
        outs.append(node.value)
    np.testing.assert_array_equal(outs[0], outs[1])


def test_gated_block_matches_scripted_oracle():
    cfg = make_tiny_config(dropout=0.0)
    store = _store(cfg, seed=2)
    kernel = np.random.default_rng(2).standard_normal((3, 3, 2, 4))
    store2 = ParamStore(2)
    store2.add("blk.kernel", (3, 3, 2, 4), init="zeros")
    store2.entries["blk.kernel"].value[:] = kernel
    x = np.random.default_rng(3).standard_normal((4, 4, 2))
    g = Graph()
    out = gated_downsample_block(g, store2, "blk", g.constant(x), cfg, True, None)
    G = conv2d_loops(x, kernel)
    act = np.maximum(G * _sigmoid(G), 0.0)
    mu, var = act.mean(axis=(0, 1)), act.var(axis=(0, 1))
    bn = (act - mu) / np.sqrt(var + 1e-5)
    assert np.abs(out.value - maxpool2_scan(bn)).max() < 1e-10


# ---- encoder ---------------------------------------------------------


def test_encoder_large_plan_shape():
    cfg = ModelConfig(encoder_plan=(64, 128, 256, 512), transformer_depth=1)
    cfg.validate()
    store = ParamStore(0)
    from floodnet.layers import register_bn

    c_in = 3
    for i, c_out in enumerate(cfg.encoder_plan):
        store.add(f"cctfrm.enc{i}.kernel", (3, 3, c_in, c_out))
        register_bn(store, f"cctfrm.enc{i}.bn", c_out)
        c_in = c_out
    g = Graph()
    out = encoder(g, store, cfg, g.constant(np.random.default_rng(4).random((64, 64, 3))),
                  train=False, dropout_rng=None)
    assert out.shape == (4, 4, 512)


def test_encoder_single_block_shape():
    cfg = make_tiny_config(image_size=(4, 4), encoder_plan=(8,), decoder_plan=(8,),
                           transformer_heads=2)
    store = _store(cfg, seed=5)
    g = Graph()
    out = encoder(g, store, cfg, g.constant(np.random.default_rng(5).random((4, 4, 3))),
                  train=False, dropout_rng=None)
    assert out.shape == (2, 2, 8)


def test_encoder_equals_manual_chaining():
    cfg = make_tiny_config(dropout=0.0)
    store = _store(cfg, seed=6)
    x = np.random.default_rng(6).random((16, 16, 3))
    g = Graph()
    out = encoder(g, store, cfg, g.constant(x), train=False, dropout_rng=None)
    g2 = Graph()
    cur = g2.constant(x)
    for i in range(len(cfg.encoder_plan)):
        cur = gated_downsample_block(g2, store, f"cctfrm.enc{i}", cur, cfg, False, None)
    np.testing.assert_array_equal(out.value, cur.value)


# ---- transformer -----------------------------------------------------


def test_transformer_zero_weights_is_residual_only():
    cfg = make_tiny_config()
    store = _store(cfg, seed=7)
    for name in store.names():
        if name.startswith("cctfrm.tr"):
            store.entries[name].value[:] = 0.0
    d = cfg.d_model
    g = Graph()
    out = transformer_encoder(g, store, cfg, g.constant(np.zeros((4, d))))
    np.testing.assert_allclose(out.value, sinusoidal_positions(4, d), atol=1e-12)


def test_transformer_attention_rows_sum_to_one():
    rng = np.random.default_rng(8)
    z = rng.standard_normal((5, 5))
    assert np.abs(softmax_rows(z).sum(axis=1) - 1.0).max() < 1e-9


def test_transformer_depth_one_matches_layer_oracle():
    cfg = make_tiny_config(transformer_depth=1)
    store = _store(cfg, seed=9)
    d = cfg.d_model
    heads = cfg.transformer_heads
    x0 = np.random.default_rng(9).standard_normal((2, d))
    g = Graph()
    out = transformer_encoder(g, store, cfg, g.constant(x0))

    x = x0 + sinusoidal_positions(2, d)
    normed = layer_norm_ref(x)
    scale = 1.0 / np.sqrt(d / heads)
    outs = []
    for head in range(heads):
        q = normed @ store.entries[f"cctfrm.tr0.head{head}.wq"].value
        k = normed @ store.entries[f"cctfrm.tr0.head{head}.wk"].value
        v = normed @ store.entries[f"cctfrm.tr0.head{head}.wv"].value
        outs.append(softmax_rows(q @ k.T * scale) @ v)
    x = x + np.concatenate(outs, axis=1) @ store.entries["cctfrm.tr0.wo"].value
    normed = layer_norm_ref(x)
    hidden = np.maximum(
        normed @ store.entries["cctfrm.tr0.ff.w1"].value + store.entries["cctfrm.tr0.ff.b1"].value,
        0.0,
    )
    expected = x + hidden @ store.entries["cctfrm.tr0.ff.w2"].value + store.entries[
        "cctfrm.tr0.ff.b2"
    ].value
    assert np.abs(out.value - expected).max() < 1e-9


# ---- decoder cascade -------------------------------------------------


def test_cascade_single_stage_is_stage_output():
    cfg = make_tiny_config(decoder_plan=(4,), dropout=0.0)
    store = _store(cfg, seed=10)
    x = np.random.default_rng(10).standard_normal((4, 4, cfg.d_model))
    g = Graph()
    out = decoder_cascade(g, store, cfg, g.constant(x), False, None)
    g2 = Graph()
    stage = feature_enhancement(g2, store, "cctfrm.dec0", g2.constant(x), cfg, False, None)
    np.testing.assert_array_equal(out.value, stage.value)


def test_cascade_channel_count_default_plans():
    cfg = ModelConfig()
    assert cfg.cascade_channels() == 64 + 32 + 16 + 8 == 120


def test_cascade_matches_manual_composition():
    cfg = make_tiny_config(dropout=0.0)
    store = _store(cfg, seed=11)
    x = np.random.default_rng(11).standard_normal((4, 4, cfg.d_model))
    g = Graph()
    out = decoder_cascade(g, store, cfg, g.constant(x), False, None)
    g2 = Graph()
    cur = g2.constant(x)
    stages = []
    for i in range(len(cfg.decoder_plan)):
        cur = feature_enhancement(g2, store, f"cctfrm.dec{i}", cur, cfg, False, None)
        stages.append(cur.value)
    np.testing.assert_array_equal(out.value, np.concatenate(stages, axis=2))


def test_feature_enhancement_preserves_spatial_extents():
    cfg = make_tiny_config(dropout=0.0)
    store = _store(cfg, seed=12)
    x = np.random.default_rng(12).standard_normal((4, 4, cfg.d_model))
    g = Graph()
    out = feature_enhancement(g, store, "cctfrm.dec0", g.constant(x), cfg, False, None)
    assert out.shape == (4, 4, cfg.decoder_plan[0])


# ---- harmonizer ------------------------------------------------------


def test_harmonizer_zero_input_algebra():
    cfg = make_tiny_config()
    store = _store(cfg, seed=13)
    c_t = cfg.cascade_channels()
    hh, ww = cfg.encoder_out_spatial()
    g = Graph()
    out = reverse_feature_harmonization(
        g, store, cfg, g.constant(np.zeros((hh, ww, c_t))),
        g.constant(np.zeros((16, 16, 3))), train=True,
    )
    # Y_sub = -sigmoid(0) = -0.5, gate = 0.5, alphas are 1 -> all -0.25
    np.testing.assert_allclose(out.value, np.full(cfg.d_r, -0.25), atol=1e-12)


def test_harmonizer_switch_off_case():
    cfg = make_tiny_config()
    store = _store(cfg, seed=14)
    store.entries["cctfrm.harm.alpha_sub"].value[:] = 0.0
    rng = np.random.default_rng(14)
    hh, ww = cfg.encoder_out_spatial()
    c_t = cfg.cascade_channels()
    y = rng.standard_normal((hh, ww, c_t))
    img = rng.random((16, 16, 3))
    g = Graph()
    out = reverse_feature_harmonization(g, store, cfg, g.constant(y), g.constant(img), train=True)
    # recompute gate and normalized cascade directly
    adapted = conv2d_loops(img, store.entries["cctfrm.adapter.kernel"].value)[::4, ::4]
    x_n = (adapted - adapted.mean(axis=(0, 1))) / np.sqrt(adapted.var(axis=(0, 1)) + 1e-5)
    y_n = (y - y.mean(axis=(0, 1))) / np.sqrt(y.var(axis=(0, 1)) + 1e-5)
    gate = _sigmoid(y_n + x_n)
    np.testing.assert_allclose(out.value, (gate * y_n).reshape(-1), atol=1e-10)


def test_harmonizer_matches_scripted_oracle():
    cfg = make_tiny_config()
    store = _store(cfg, seed=15)
    for name, v in (("beta", 0.7), ("g_cascade", 1.3), ("g_image", -0.4),
                    ("alpha_cascade", 0.9), ("alpha_sub", 1.1)):
        store.entries[f"cctfrm.harm.{name}"].value[:] = v
    rng = np.random.default_rng(15)
    hh, ww = cfg.encoder_out_spatial()
    c_t = cfg.cascade_channels()
    y = rng.standard_normal((hh, ww, c_t))
    img = rng.random((16, 16, 3))
    g = Graph()
    out = reverse_feature_harmonization(g, store, cfg, g.constant(y), g.constant(img), train=True)
    adapted = conv2d_loops(img, store.entries["cctfrm.adapter.kernel"].value)[::4, ::4]
    x_n = (adapted - adapted.mean(axis=(0, 1))) / np.sqrt(adapted.var(axis=(0, 1)) + 1e-5)
    y_n = (y - y.mean(axis=(0, 1))) / np.sqrt(y.var(axis=(0, 1)) + 1e-5)
    y_sub = 0.7 * x_n - _sigmoid(y_n)
    gate = _sigmoid(1.3 * y_n + (-0.4) * x_n)
    expected = gate * (0.9 * y_n + 1.1 * y_sub)
    assert np.abs(out.value - expected.reshape(-1)).max() < 1e-10


def test_cctfrm_forward_shape_and_gate_range(tiny_config):
    store = _store(tiny_config, seed=16)
    img = np.random.default_rng(16).random((16, 16, 3))
    g = Graph()
    out = cctfrm_forward(g, store, tiny_config, img, train=False, dropout_rng=None)
    assert out.shape == (tiny_config.d_r,)
    assert np.all(np.isfinite(out.value))
