"""Mini-batch gradient-descent training loop with a fixed learning rate.

The update is the classical momentum form over the batch-accumulated
(summed) gradient: ``v <- momentum * v - lr * batch_size * g_mean`` and
``theta <- theta + v``. Summing per-sample gradients rather than averaging
keeps one epoch's total step independent of the batch size, which is what
lets the stated learning rate train anything in 100 epochs and keeps the
batch-size sweep comparable across sizes.

Each epoch shuffles the training set with the seeded training stream, walks
it in batches, and updates in place. Per-epoch mean loss, training accuracy
(from the same train-mode forward passes), and validation accuracy are
logged into the checkpoint. A non-finite loss aborts with the epoch number.
"""

from __future__ import annotations

import math

import numpy as np

from ..dataset import Sample
from ..errors import DivergedError, InvalidArgumentError
from .checkpoint import Checkpoint
from .model import (
    ModelSpec,
    backward_arrays,
    forward_arrays,
    rng_streams,
    samples_to_arrays,
)


def steps_per_epoch(n_samples: int, batch_size: int) -> int:
    return math.ceil(n_samples / batch_size)


def evaluate_accuracy(model: ModelSpec, samples: list[Sample]) -> float:
    numeric, text, labels = samples_to_arrays(model, samples)
    probs = forward_arrays(model, numeric, text)
    return float(np.mean((probs >= 0.5).astype(np.float64) == labels))


def train(
    model: ModelSpec,
    train_samples: list[Sample],
    valid_samples: list[Sample],
    meta: dict | None = None,
) -> Checkpoint:
    """Train in place and return a checkpoint wrapping the final weights."""
    if not train_samples or not valid_samples:
        raise InvalidArgumentError("train and validation sets must be non-empty")
    hyper = model.hyper
    _, train_rng = rng_streams(hyper.seed)

    numeric, text, labels = samples_to_arrays(model, train_samples)
    n = labels.shape[0]
    params = dict(model.params())
    velocity = {path: np.zeros_like(arr) for path, arr in params.items()}

    log: list[dict] = []
    for epoch in range(1, hyper.epochs + 1):
        order = train_rng.permutation(n)
        losses = []
        correct = 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            batch_numeric = numeric[idx] if numeric is not None else None
            batch_text = text[idx] if text is not None else None
            loss, grads, probs = backward_arrays(
                model, batch_numeric, batch_text, labels[idx], rng=train_rng
            )
            if not math.isfinite(loss):
                raise DivergedError(epoch)
            step = hyper.learning_rate * len(idx)
            for path, g in grads.items():
                v = velocity[path]
                v *= hyper.momentum
                v -= step * g
                params[path] += v
            losses.append(loss)
            correct += int(np.sum((probs >= 0.5).astype(np.float64) == labels[idx]))
        log.append(
            {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "accuracy": correct / n,
                "valid_accuracy": evaluate_accuracy(model, valid_samples),
            }
        )
    return Checkpoint(model=model, training_log=log, meta=dict(meta or {}))
