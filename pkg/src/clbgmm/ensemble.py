"""Class-conditional generative classifier: one fitted mixture per class.

Each class gets its own mixture, trained exactly once when its class
first appears; previously trained mixtures are never touched, so adding
tasks cannot interfere with old classes. Prediction is argmax of the
per-class log-likelihoods, ties broken by first-seen class order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .bgmm import BgmmConfig, FittedMixture, fit, log_likelihood_batch
from .dataset import TaskBatch
from .errors import ValidationError
from .fusion import FusedVector, MinMaxNormalizer, apply_normalizer, fuse


def derive_class_seed(run_seed: int, class_label: str) -> int:
    """Stable per-class fit seed, decorrelated across classes."""
    digest = hashlib.sha256(f"{run_seed}:{class_label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class FusionPipeline:
    """Frozen per-modality normalizers plus the modality concatenation order."""

    modality_order: tuple                 # modality names, manifest order
    normalizers: dict                     # name -> MinMaxNormalizer | None

    def fuse_sample(self, vectors: dict) -> FusedVector:
        segments = []
        for name in self.modality_order:
            vec = vectors[name]
            norm = self.normalizers.get(name)
            if norm is not None:
                vec = apply_normalizer(norm, vec)
            segments.append((name, vec))
        return fuse(segments)

    def to_dict(self) -> dict:
        return {
            "modality_order": list(self.modality_order),
            "normalizers": {
                name: (norm.to_dict() if norm is not None else None)
                for name, norm in self.normalizers.items()
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "FusionPipeline":
        return FusionPipeline(
            modality_order=tuple(d["modality_order"]),
            normalizers={
                name: (MinMaxNormalizer.from_dict(nd) if nd is not None else None)
                for name, nd in d["normalizers"].items()
            },
        )


@dataclass
class ClassConditionalEnsemble:
    """Ordered class -> FittedMixture map plus the frozen fusion pipeline."""

    fusion: FusionPipeline
    models: dict = field(default_factory=dict)  # insertion order = first-seen order
    use_class_priors: bool = False
    class_train_counts: dict = field(default_factory=dict)

    @property
    def class_count(self) -> int:
        return len(self.models)

    def to_dict(self) -> dict:
        return {
            "fusion": self.fusion.to_dict(),
            "models": [[label, mix.to_dict()] for label, mix in self.models.items()],
            "use_class_priors": self.use_class_priors,
            "class_train_counts": dict(self.class_train_counts),
        }

    @staticmethod
    def from_dict(d: dict) -> "ClassConditionalEnsemble":
        ens = ClassConditionalEnsemble(
            fusion=FusionPipeline.from_dict(d["fusion"]),
            use_class_priors=bool(d.get("use_class_priors", False)),
            class_train_counts=dict(d.get("class_train_counts", {})),
        )
        for label, mix_dict in d["models"]:
            ens.models[label] = FittedMixture.from_dict(mix_dict)
        return ens


def train_task(ensemble: ClassConditionalEnsemble, batch: TaskBatch,
               config: BgmmConfig, seed: int) -> ClassConditionalEnsemble:
    """Fit one fresh mixture per new class; existing models stay untouched."""
    overlap = batch.class_set.intersection(ensemble.models)
    if overlap:
        raise ValidationError(
            f"class-incremental violation: classes already trained: {sorted(overlap)}"
        )
    per_class: dict[str, list] = {label: [] for label in sorted(batch.class_set)}
    for sample in batch.train_samples:
        per_class[sample.class_label].append(
            ensemble.fusion.fuse_sample(sample.vectors).values
        )
    # respect the task's declared class order for insertion
    ordered = [label for label in _class_order(batch) if label in per_class]
    for label in ordered:
        vectors = per_class[label]
        if not vectors:
            raise ValidationError(f"class {label!r} has no training samples")
        mixture, _ = fit(np.vstack(vectors), config, derive_class_seed(seed, label))
        ensemble.models[label] = mixture
        ensemble.class_train_counts[label] = len(vectors)
    return ensemble


def _class_order(batch: TaskBatch):
    seen = []
    for sample in batch.train_samples:
        if sample.class_label not in seen:
            seen.append(sample.class_label)
    for label in sorted(batch.class_set):
        if label not in seen:
            seen.append(label)
    return seen


def _as_array(fused) -> np.ndarray:
    if isinstance(fused, FusedVector):
        return fused.values
    return np.asarray(fused, dtype=np.float64)


def predict_scores(ensemble: ClassConditionalEnsemble, fused) -> dict:
    """Per-class log-likelihood of one fused vector."""
    if ensemble.class_count == 0:
        raise ValidationError("no trained classes")
    x = _as_array(fused)[None, :]
    scores = {}
    total = sum(ensemble.class_train_counts.values())
    for label, mix in ensemble.models.items():
        value = float(log_likelihood_batch(mix, x)[0])
        if ensemble.use_class_priors and total > 0:
            value += np.log(ensemble.class_train_counts[label] / total)
        scores[label] = value
    return scores


def predict(ensemble: ClassConditionalEnsemble, fused) -> str:
    """Argmax of predict_scores; exact ties go to the first-seen class."""
    scores = predict_scores(ensemble, fused)
    best_label, best_score = None, -np.inf
    for label, score in scores.items():  # insertion order = first-seen
        if score > best_score:
            best_label, best_score = label, score
    return best_label


def predict_batch(ensemble: ClassConditionalEnsemble, fused_matrix: np.ndarray) -> list:
    """Vectorized predict over rows of an (N, D) fused matrix."""
    if ensemble.class_count == 0:
        raise ValidationError("no trained classes")
    labels = list(ensemble.models)
    total = sum(ensemble.class_train_counts.values())
    score_matrix = np.empty((fused_matrix.shape[0], len(labels)))
    for i, label in enumerate(labels):
        score_matrix[:, i] = log_likelihood_batch(ensemble.models[label], fused_matrix)
        if ensemble.use_class_priors and total > 0:
            score_matrix[:, i] += np.log(ensemble.class_train_counts[label] / total)
    best = np.argmax(score_matrix, axis=1)  # argmax keeps the first index on ties
    return [labels[i] for i in best]


def evaluate(ensemble: ClassConditionalEnsemble, samples) -> float:
    """Accuracy over (label, fused vector) pairs."""
    samples = list(samples)
    if not samples:
        raise ValidationError("cannot evaluate on an empty sample set")
    matrix = np.vstack([_as_array(fused) for _, fused in samples])
    preds = predict_batch(ensemble, matrix)
    correct = sum(1 for (label, _), pred in zip(samples, preds) if pred == label)
    return correct / len(samples)
