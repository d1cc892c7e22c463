"""Full model assembly: the three feature modules feeding the unified
fusion head, with ablation toggles replacing disabled branches by zeros.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, Node
from .cctfrm import cctfrm_forward
from .cctfrm import register_params as register_cctfrm
from .config import ModelConfig
from .hcamam import hcamam_forward
from .hcamam import register_params as register_hcamam
from .layers import dense
from .mfim import (
    extract_global_features,
    mfim_forward,
    register_params as register_mfim,
    stub_image_encoder,
    stub_text_encoder,
)
from .params import ParamStore


class FloodNet:
    """Binary flood classifier over (token ids, raw image) samples."""

    def __init__(self, cfg: ModelConfig, store: ParamStore | None = None):
        cfg.validate()
        self.cfg = cfg
        self.store = store if store is not None else ParamStore(cfg.seed)
        if not self.store.entries:
            self._register()

    def _register(self) -> None:
        cfg, store = self.cfg, self.store
        if cfg.use_mfim:
            register_mfim(store, cfg)
        if cfg.use_hcamam:
            register_hcamam(store, cfg)
        if cfg.use_cctfrm:
            register_cctfrm(store, cfg)
        d_in = cfg.d_fused + cfg.d_se + cfg.d_r
        store.add("uffm.w1", (d_in, cfg.d_fused))
        store.add("uffm.b1", (cfg.d_fused,), init="zeros")
        store.add("uffm.w2", (cfg.d_fused, 1))
        store.add("uffm.b2", (1,), init="zeros")

    def forward(
        self,
        g: Graph,
        sample,
        train: bool = False,
        dropout_rng: np.random.Generator | None = None,
        taps: dict | None = None,
    ) -> tuple[Node, Node]:
        """Returns (probability node, pre-sigmoid logit node), both shape (1,)."""
        cfg, store = self.cfg, self.store
        text = stub_text_encoder(sample.tokens, cfg.d_t, cfg.seed)
        img = stub_image_encoder(sample.image, cfg.grid, cfg.d_i, cfg.seed)
        gl = extract_global_features(text, img)
        if cfg.use_mfim:
            mfim_vec = mfim_forward(g, store, cfg, text, img)
        else:
            mfim_vec = g.constant(np.zeros(cfg.d_se))
        if cfg.use_hcamam:
            y_final = hcamam_forward(g, store, cfg, img.grid, gl, train)
        else:
            y_final = g.constant(np.zeros(cfg.d_fused))
        if cfg.use_cctfrm:
            o_final = cctfrm_forward(g, store, cfg, img.raw_image, train, dropout_rng, taps)
        else:
            o_final = g.constant(np.zeros(cfg.d_r))
        return self.head(g, y_final, mfim_vec, o_final)

    def head(self, g: Graph, y_final: Node, mfim_vec: Node, o_final: Node) -> tuple[Node, Node]:
        store = self.store
        f_concat = g.concat([y_final, mfim_vec, o_final], axis=0)
        hidden = g.relu(dense(g, f_concat, g.param(store, "uffm.w1"), g.param(store, "uffm.b1")))
        logit = dense(g, hidden, g.param(store, "uffm.w2"), g.param(store, "uffm.b2"))
        return g.sigmoid(logit), logit


def predict(prob: float) -> int:
    """Decision threshold 0.5; the exact tie maps to class 1."""
    return 1 if prob >= 0.5 else 0
