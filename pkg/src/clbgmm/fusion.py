"""Per-modality min-max normalization and feature concatenation.

The normalizer is fitted once on the first task's training data and then
frozen, so later tasks may produce values outside the fitted range; those
are clamped into [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class MinMaxNormalizer:
    """Frozen componentwise min-max scaling statistics."""

    per_dim_min: np.ndarray
    per_dim_max: np.ndarray
    fitted_on: str

    @property
    def dim(self) -> int:
        return self.per_dim_min.shape[0]

    def to_dict(self) -> dict:
        return {
            "per_dim_min": self.per_dim_min.tolist(),
            "per_dim_max": self.per_dim_max.tolist(),
            "fitted_on": self.fitted_on,
        }

    @staticmethod
    def from_dict(d: dict) -> "MinMaxNormalizer":
        return MinMaxNormalizer(
            per_dim_min=np.asarray(d["per_dim_min"], dtype=np.float64),
            per_dim_max=np.asarray(d["per_dim_max"], dtype=np.float64),
            fitted_on=str(d["fitted_on"]),
        )


@dataclass(frozen=True)
class FusedVector:
    """Concatenated multimodal feature vector with its segment layout."""

    values: np.ndarray
    layout: tuple  # ((modality_name, offset, length), ...)

    def segment(self, modality_name: str) -> np.ndarray:
        for name, offset, length in self.layout:
            if name == modality_name:
                return self.values[offset : offset + length]
        raise KeyError(modality_name)


def fit_normalizer(vectors, task_name: str) -> MinMaxNormalizer:
    """Compute componentwise min/max over a non-empty list of vectors."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.size == 0 or arr.ndim != 2:
        raise ValidationError("fit_normalizer needs a non-empty list of equal-length vectors")
    return MinMaxNormalizer(
        per_dim_min=arr.min(axis=0),
        per_dim_max=arr.max(axis=0),
        fitted_on=task_name,
    )


def apply_normalizer(norm: MinMaxNormalizer, v) -> np.ndarray:
    """Scale v into [0, 1] with clamping; zero-range dimensions map to 0."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != norm.per_dim_min.shape:
        raise ValidationError(
            f"dimension mismatch: vector has {v.shape}, normalizer expects {norm.per_dim_min.shape}"
        )
    span = norm.per_dim_max - norm.per_dim_min
    out = np.zeros_like(v)
    nonzero = span > 0
    out[nonzero] = (v[nonzero] - norm.per_dim_min[nonzero]) / span[nonzero]
    return np.clip(out, 0.0, 1.0)


def fuse(segments) -> FusedVector:
    """Concatenate (modality_name, vector) segments in the given order."""
    layout = []
    parts = []
    offset = 0
    for name, vec in segments:
        vec = np.asarray(vec, dtype=np.float64)
        parts.append(vec)
        layout.append((name, offset, vec.shape[0]))
        offset += vec.shape[0]
    return FusedVector(values=np.concatenate(parts), layout=tuple(layout))
