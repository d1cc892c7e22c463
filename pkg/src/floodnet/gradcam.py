"""Gradient-weighted class activation heatmaps and their file export."""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Graph
from .model import FloodNet


def heatmap_from_activation(activation: np.ndarray, gradient: np.ndarray) -> np.ndarray:
    """Weighted channel sum with spatially pooled gradient weights, then
    ReLU and [0,1] normalization (all-zero map stays all zero)."""
    weights = gradient.mean(axis=(0, 1))
    cam = np.maximum((activation * weights[None, None, :]).sum(axis=2), 0.0)
    peak = cam.max()
    return cam / peak if peak > 0 else cam


def grad_cam(model: FloodNet, sample, target_layer: str = "enc0") -> np.ndarray:
    """Heatmap of the pre-sigmoid logit's sensitivity at an encoder block."""
    taps: dict = {}
    g = Graph()
    _, logit = model.forward(g, sample, train=False, taps=taps)
    if target_layer not in taps:
        raise KeyError(f"unknown target layer {target_layer!r}; have {sorted(taps)}")
    g.backward(logit)
    node = taps[target_layer]
    grad = node.grad if node.grad is not None else np.zeros_like(node.value)
    return heatmap_from_activation(node.value, grad)


def write_pgm(path: str, heatmap: np.ndarray) -> None:
    """Binary 8-bit grayscale (P5) image of a [0,1] heatmap."""
    h, w = heatmap.shape
    data = np.clip(np.round(heatmap * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def write_sidecar(path: str, heatmap: np.ndarray, target_layer: str) -> None:
    """JSON sidecar carrying the raw normalized floats and provenance."""
    h, w = heatmap.shape
    payload = {
        "target_layer": target_layer,
        "height": h,
        "width": w,
        "values": [[float(v) for v in row] for row in heatmap],
    }
    with open(path, "w") as f:
        json.dump(payload, f)
