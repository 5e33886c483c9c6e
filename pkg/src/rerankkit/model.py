"""Class-specific linear scorer and the re-ranking step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, InvalidArgumentError
from .features import NUM_FEATURES

__all__ = ["ScoringModel", "score", "rerank", "save_model", "load_model", "MODEL_HEADER"]

MODEL_HEADER = "rerankkit-model v1"

LOSS_MODES = ("one_minus_iou", "iou_as_printed")


@dataclass(frozen=True)
class ScoringModel:
    class_id: int
    weights: np.ndarray  # (NUM_FEATURES,) float64
    loss_mode: str = "one_minus_iou"
    C: float = 1.0
    rounds: int = 0  # training provenance; not persisted

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (NUM_FEATURES,):
            raise InvalidArgumentError(f"weights must have shape ({NUM_FEATURES},), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidArgumentError("weights must be finite")
        if self.loss_mode not in LOSS_MODES:
            raise InvalidArgumentError(f"unknown loss_mode {self.loss_mode!r}")
        object.__setattr__(self, "weights", w)
        w.setflags(write=False)


def score(model: ScoringModel, f: np.ndarray) -> float:
    """Dot product of the weights with one feature vector. No bias term."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (NUM_FEATURES,):
        raise InvalidArgumentError(f"feature layout mismatch: expected ({NUM_FEATURES},), got {f.shape}")
    return float(np.dot(model.weights, f))


def rerank(model: ScoringModel, features: np.ndarray) -> tuple[list[int], np.ndarray]:
    """Order proposal indices by score descending, ties by original rank.

    ``features`` is an (n, NUM_FEATURES) matrix in generator order. Returns
    (permutation, scores-in-original-order); the permutation is a bijection
    on range(n) and the sort is stable with respect to generator rank.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.size == 0:
        return [], np.zeros(0, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != NUM_FEATURES:
        raise InvalidArgumentError(f"feature matrix must be (n, {NUM_FEATURES}), got {features.shape}")
    scores = features @ model.weights
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return order, scores


def save_model(model: ScoringModel, path: str) -> None:
    """Write the self-describing text format (round-trip exact weights)."""
    lines = [
        MODEL_HEADER,
        f"class_id {model.class_id}",
        f"loss_mode {model.loss_mode}",
        f"C {repr(model.C)}",
    ]
    lines += [repr(float(w)) for w in model.weights]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path: str) -> ScoringModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != MODEL_HEADER:
        raise DataFormatError(f"bad model header (expected {MODEL_HEADER!r})", path=path)
    if len(lines) < 4 + NUM_FEATURES:
        raise DataFormatError("truncated model file", path=path)
    try:
        fields = dict(ln.split(" ", 1) for ln in lines[1:4])
        class_id = int(fields["class_id"])
        loss_mode = fields["loss_mode"]
        c_value = float(fields["C"])
        weights = np.array([float(ln) for ln in lines[4 : 4 + NUM_FEATURES]], dtype=np.float64)
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"malformed model field: {exc}", path=path) from exc
    return ScoringModel(class_id=class_id, weights=weights, loss_mode=loss_mode, C=c_value)
