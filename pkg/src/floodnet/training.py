"""Mini-batch training with AdamW and per-epoch validation metrics."""

from __future__ import annotations

import json
from typing import Callable, TextIO

import numpy as np

from .autodiff import Graph, Node
from .config import ModelConfig
from .data import SyntheticSample
from .metrics import MetricsReport, compute_metrics
from .model import FloodNet, predict
from .params import adamw_step

BCE_CLIP = 1e-7


class TrainingError(RuntimeError):
    pass


def bce_loss(g: Graph, prob: Node, label: int) -> Node:
    """Binary cross entropy on a (1,) probability node, clipped away from 0/1."""
    p = g.clip(prob, BCE_CLIP, 1.0 - BCE_CLIP)
    if label == 1:
        return g.scale(g.log(p), -1.0)
    return g.scale(g.log(g.sub(g.constant(np.ones(1)), p)), -1.0)


def evaluate(
    model: FloodNet, samples: list[SyntheticSample]
) -> tuple[np.ndarray, MetricsReport]:
    """Eval-mode pass over samples; returns probabilities and metrics."""
    probs = np.empty(len(samples))
    for i, s in enumerate(samples):
        g = Graph()
        p, _ = model.forward(g, s, train=False)
        probs[i] = float(p.value[0])
    y_true = np.array([s.label for s in samples])
    y_pred = np.array([predict(p) for p in probs])
    return probs, compute_metrics(y_true, y_pred, probs)


def train(
    model: FloodNet,
    train_set: list[SyntheticSample],
    val_set: list[SyntheticSample],
    epochs: int | None = None,
    trace_file: TextIO | None = None,
    stop_fn: Callable[[dict], bool] | None = None,
) -> list[dict]:
    """Runs up to `epochs` epochs (default from the config) and returns the
    per-epoch history. Each record carries train loss/accuracy and the full
    validation metrics. A non-finite batch loss aborts with TrainingError.

    stop_fn, when given, sees each epoch record and can end training early.
    """
    cfg = model.cfg
    if epochs is None:
        epochs = cfg.epochs
    shuffle_rng = np.random.default_rng([cfg.seed, 0x3AFF])
    dropout_rng = np.random.default_rng([cfg.seed, 0xD0])
    history: list[dict] = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss = 0.0
        n_right = 0
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
            g = Graph()
            total = None
            for s in batch:
                p, _ = model.forward(g, s, train=True, dropout_rng=dropout_rng)
                n_right += predict(float(p.value[0])) == s.label
                term = bce_loss(g, p, s.label)
                total = term if total is None else g.add(total, term)
            loss = g.scale(total, 1.0 / len(batch))
            if not np.isfinite(loss.value[0]):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {bi}")
            model.store.zero_grad()
            g.backward(loss)
            adamw_step(model.store, cfg.optimizer)
            epoch_loss += float(loss.value[0]) * len(batch)
        _, val_report = evaluate(model, val_set) if val_set else (None, None)
        record = {
            "epoch": epoch,
            "train_loss": epoch_loss / len(train_set),
            "train_accuracy": n_right / len(train_set),
            "val": val_report.to_dict() if val_report else None,
        }
        history.append(record)
        if trace_file is not None:
            trace_file.write(json.dumps(record) + "\n")
            trace_file.flush()
        if stop_fn is not None and stop_fn(record):
            break
    return history
