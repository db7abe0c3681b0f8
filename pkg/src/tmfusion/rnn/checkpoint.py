"""Checkpoint file format: a versioned JSON envelope with base64 weights.

Weights serialize as little-endian 64-bit floats so any reader can decode
them regardless of platform. The JSON itself is canonical (sorted keys,
compact separators), which makes save -> load -> save byte-identical and
lets runs be compared by file hash.
"""

from __future__ import annotations

import base64
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import Sample
from ..errors import InvalidArgumentError, SchemaError
from .cells import CellParams
from .model import Hyperparams, ModelSpec, forward_model

CHECKPOINT_VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()


@dataclass
class Checkpoint:
    """Trained weights plus the run's training log and caller metadata."""

    model: ModelSpec
    training_log: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": CHECKPOINT_VERSION,
            "architecture": self.model.architecture,
            "cell_kind": self.model.cell_kind,
            "literal_forms": self.model.literal_forms,
            "hyperparams": dataclasses.asdict(self.model.hyper),
            "dims": {
                "text_dim": self.model.text_dim,
                "numeric_dim": self.model.numeric_dim,
                "text_layers": len(self.model.text_layers),
                "numeric_layers": len(self.model.numeric_layers),
            },
            "weights": {path: _encode_array(arr) for path, arr in self.model.params()},
            "training_log": self.training_log,
            "meta": self.meta,
        }


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    blob = json.dumps(ckpt.to_json_dict(), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(blob, encoding="utf-8")


def _rebuild_branch(
    weights: dict, branch: str, n_layers: int, kind: str, literal: bool
) -> list[CellParams]:
    layers = []
    for i in range(n_layers):
        prefix = f"{branch}.{i}."
        blocks = {
            path[len(prefix):]: _decode_array(obj)
            for path, obj in weights.items()
            if path.startswith(prefix)
        }
        if not blocks:
            raise SchemaError(f"checkpoint is missing weights for {branch} layer {i}")
        any_w = next(v for k, v in blocks.items() if k.startswith(("W", "w")) and v.ndim == 2)
        layers.append(
            CellParams(kind, any_w.shape[1], any_w.shape[0], blocks, literal)
        )
    return layers


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    if obj.get("schema_version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {obj.get('schema_version')}")

    hyper = Hyperparams(**obj["hyperparams"])
    weights = obj["weights"]
    kind = obj["cell_kind"]
    literal = bool(obj.get("literal_forms", False))
    dims = obj["dims"]
    model = ModelSpec(
        architecture=obj["architecture"],
        cell_kind=kind,
        text_layers=_rebuild_branch(weights, "text", dims["text_layers"], kind, literal),
        numeric_layers=_rebuild_branch(weights, "numeric", dims["numeric_layers"], kind, literal),
        head_w=_decode_array(weights["head.w"]),
        head_b=_decode_array(weights["head.b"]),
        hyper=hyper,
        literal_forms=literal,
    )
    return Checkpoint(model=model, training_log=obj["training_log"], meta=obj["meta"])


def predict(ckpt: Checkpoint, sample: Sample) -> tuple[int, float]:
    """(class, probability) with dropout disabled; class 1 iff probability >= 0.5."""
    model = ckpt.model
    if model.numeric_layers and sample.numeric.shape[-1] != model.numeric_dim:
        raise InvalidArgumentError(
            f"sample numeric shape {sample.numeric.shape} does not match model "
            f"width {model.numeric_dim}"
        )
    if model.text_layers:
        if sample.text is None or sample.text.ndim != 2 or sample.text.shape[1] != model.text_dim:
            raise InvalidArgumentError("sample text matrix does not match model text branch")
    prob = forward_model(model, sample)
    return (1 if prob >= 0.5 else 0), prob
