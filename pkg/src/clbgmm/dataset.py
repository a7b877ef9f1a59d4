"""Manifests, per-modality feature tables, task routing and synthetic data.

Feature files are one CSV per modality with columns
``sample_id,class,split,f_0,...,f_{D-1}``, joined on sample_id. The
manifest is a JSON document declaring the ordered task list, the modality
files, the fusion strategy, the mixture configuration, seeds and the
output path.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bgmm import BgmmConfig
from .errors import ValidationError


@dataclass(frozen=True)
class FeatureRow:
    sample_id: str
    class_label: str
    split: str
    vector: np.ndarray


@dataclass(frozen=True)
class FeatureTable:
    """One modality's per-sample feature vectors with class/split labels."""

    modality_name: str
    dim: int
    rows: tuple

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.vector.shape[0] != self.dim:
                raise ValidationError(
                    f"row {row.sample_id!r}: vector length {row.vector.shape[0]}, expected {self.dim}"
                )
            if row.sample_id in seen:
                raise ValidationError(f"duplicate sample_id {row.sample_id!r}")
            seen.add(row.sample_id)
            if row.split not in ("train", "test"):
                raise ValidationError(f"row {row.sample_id!r}: split must be train or test")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    class_labels: tuple

    def __post_init__(self):
        if not self.class_labels:
            raise ValidationError(f"task {self.name!r} has no classes")
        if len(set(self.class_labels)) != len(self.class_labels):
            raise ValidationError(f"task {self.name!r} lists a class twice")


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    path: str
    dim: int
    normalize: bool


@dataclass(frozen=True)
class ExperimentManifest:
    tasks: tuple          # of TaskSpec
    modalities: tuple     # of ModalitySpec
    fusion_strategy: str
    bgmm_config: BgmmConfig
    seeds: tuple
    output_path: str
    use_class_priors: bool = False

    def __post_init__(self):
        if not self.tasks or not self.modalities:
            raise ValidationError("manifest needs at least one task and one modality")
        owner: dict[str, str] = {}
        for task in self.tasks:
            for label in task.class_labels:
                if label in owner:
                    raise ValidationError(
                        f"class appears in multiple tasks: {label!r} in {owner[label]!r} and {task.name!r}"
                    )
                owner[label] = task.name
        if self.fusion_strategy != "concat":
            raise ValidationError(f"unsupported fusion strategy {self.fusion_strategy!r}")
        if not self.seeds:
            raise ValidationError("manifest needs at least one seed")

    def class_to_task(self) -> dict:
        return {label: i for i, task in enumerate(self.tasks) for label in task.class_labels}


@dataclass(frozen=True)
class Sample:
    sample_id: str
    class_label: str
    vectors: dict  # modality name -> np.ndarray


@dataclass(frozen=True)
class TaskBatch:
    task_index: int       # 1-based
    name: str
    class_set: frozenset
    train_samples: tuple
    test_samples: tuple


@dataclass(frozen=True)
class SyntheticConfig:
    n_basic_classes: int
    n_compound_classes: int
    dim_a: int = 2
    dim_b: int = 2
    samples_per_class_train: int = 30
    samples_per_class_test: int = 10
    cluster_spread: float = 1.0
    modality_bias: float = 1.0

    def __post_init__(self):
        if self.n_basic_classes < 1 or self.n_compound_classes < 0:
            raise ValidationError("class counts must be positive")
        if self.dim_a < 1 or self.dim_b < 1:
            raise ValidationError("modality dimensions must be >= 1")
        if self.samples_per_class_train < 1 or self.samples_per_class_test < 1:
            raise ValidationError("per-class sample counts must be positive")
        if self.cluster_spread <= 0:
            raise ValidationError("cluster_spread must be positive")
        if not (0.0 <= self.modality_bias <= 1.0):
            raise ValidationError("modality_bias must lie in [0, 1]")
        n_pairs = self.n_basic_classes * (self.n_basic_classes - 1) // 2
        if self.n_compound_classes > n_pairs:
            raise ValidationError(
                f"too many compound classes: {self.n_compound_classes} > C({self.n_basic_classes},2) = {n_pairs}"
            )


# ---------------------------------------------------------------------------
# manifest parsing
# ---------------------------------------------------------------------------

def parse_manifest(text: str) -> ExperimentManifest:
    """Parse and validate a JSON manifest."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc

    for key in ("tasks", "modalities", "seeds", "output"):
        if key not in doc:
            raise ValidationError(f"manifest missing required field {key!r}")

    tasks = []
    for i, entry in enumerate(doc["tasks"]):
        if "name" not in entry or "classes" not in entry:
            raise ValidationError(f"task {i}: missing required field 'name' or 'classes'")
        tasks.append(TaskSpec(name=str(entry["name"]), class_labels=tuple(entry["classes"])))

    modalities = []
    for i, entry in enumerate(doc["modalities"]):
        for key in ("name", "path", "dim"):
            if key not in entry:
                raise ValidationError(f"modality {i}: missing required field {key!r}")
        modalities.append(ModalitySpec(
            name=str(entry["name"]),
            path=str(entry["path"]),
            dim=int(entry["dim"]),
            normalize=bool(entry.get("normalize", False)),
        ))

    fusion = doc.get("fusion", {}).get("strategy", "concat")
    bgmm_cfg = BgmmConfig.from_dict(doc.get("bgmm", {})) if doc.get("bgmm") else BgmmConfig()
    return ExperimentManifest(
        tasks=tuple(tasks),
        modalities=tuple(modalities),
        fusion_strategy=fusion,
        bgmm_config=bgmm_cfg,
        seeds=tuple(int(s) for s in doc["seeds"]),
        output_path=str(doc["output"]),
        use_class_priors=bool(doc.get("use_class_priors", False)),
    )


def manifest_to_dict(manifest: ExperimentManifest) -> dict:
    return {
        "tasks": [{"name": t.name, "classes": list(t.class_labels)} for t in manifest.tasks],
        "modalities": [
            {"name": m.name, "path": m.path, "dim": m.dim, "normalize": m.normalize}
            for m in manifest.modalities
        ],
        "fusion": {"strategy": manifest.fusion_strategy},
        "bgmm": manifest.bgmm_config.to_dict(),
        "seeds": list(manifest.seeds),
        "output": manifest.output_path,
        "use_class_priors": manifest.use_class_priors,
    }


# ---------------------------------------------------------------------------
# CSV loading / writing
# ---------------------------------------------------------------------------

def load_feature_table(path, expected_dim: int, modality_name: str | None = None) -> FeatureTable:
    """Load one modality CSV, checking dimensions and sample_id uniqueness."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"feature file not found: {path}")
    rows = []
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if header[:3] != ["sample_id", "class", "split"]:
            raise ValidationError(f"{path}: header must start with sample_id,class,split")
        n_features = len(header) - 3
        if n_features != expected_dim:
            raise ValidationError(
                f"{path}: header declares {n_features} feature columns, expected {expected_dim}"
            )
        for line_no, record in enumerate(reader, start=2):
            if len(record) - 3 != expected_dim:
                raise ValidationError(
                    f"{path} line {line_no}: {len(record) - 3} feature values, expected {expected_dim}"
                )
            try:
                vector = np.array([float(v) for v in record[3:]], dtype=np.float64)
            except ValueError:
                bad = next(i for i, v in enumerate(record[3:]) if not _is_number(v))
                raise ValidationError(
                    f"{path} line {line_no}, column f_{bad}: non-numeric value {record[3 + bad]!r}"
                ) from None
            rows.append(FeatureRow(
                sample_id=record[0], class_label=record[1], split=record[2], vector=vector,
            ))
    return FeatureTable(
        modality_name=modality_name or path.stem,
        dim=expected_dim,
        rows=tuple(rows),
    )


def _is_number(value: str) -> bool:
    try:
        float(value)
        return True
    except ValueError:
        return False


def write_feature_table(table: FeatureTable, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sample_id", "class", "split"] + [f"f_{i}" for i in range(table.dim)])
        for row in table.rows:
            writer.writerow([row.sample_id, row.class_label, row.split]
                            + [repr(float(v)) for v in row.vector])


# ---------------------------------------------------------------------------
# task routing
# ---------------------------------------------------------------------------

def build_task_sequence(manifest: ExperimentManifest, tables) -> list:
    """Join modality tables on sample_id and route samples to their tasks."""
    if len(tables) != len(manifest.modalities):
        raise ValidationError("one table per declared modality is required")

    indexed = []
    for spec, table in zip(manifest.modalities, tables):
        indexed.append({row.sample_id: row for row in table.rows})

    primary = tables[0]
    all_ids = set(indexed[0])
    for spec, idx in zip(manifest.modalities[1:], indexed[1:]):
        missing = all_ids.symmetric_difference(idx)
        if missing:
            example = sorted(missing)[0]
            raise ValidationError(
                f"alignment error: sample {example!r} is missing from some modality table"
            )

    owner = manifest.class_to_task()
    buckets = [{"train": [], "test": []} for _ in manifest.tasks]
    for row in primary.rows:
        vectors = {}
        for spec, idx in zip(manifest.modalities, indexed):
            other = idx[row.sample_id]
            if other.class_label != row.class_label or other.split != row.split:
                raise ValidationError(
                    f"alignment error: sample {row.sample_id!r} has inconsistent class/split across modalities"
                )
            vectors[spec.name] = other.vector
        if row.class_label not in owner:
            raise ValidationError(f"routing error: class {row.class_label!r} appears in no task")
        sample = Sample(sample_id=row.sample_id, class_label=row.class_label, vectors=vectors)
        buckets[owner[row.class_label]][row.split].append(sample)

    batches = []
    for i, (task, bucket) in enumerate(zip(manifest.tasks, buckets)):
        batches.append(TaskBatch(
            task_index=i + 1,
            name=task.name,
            class_set=frozenset(task.class_labels),
            train_samples=tuple(bucket["train"]),
            test_samples=tuple(bucket["test"]),
        ))
    return batches


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

_HYPERCUBE_SIDE = 10.0
_COMPOUND_TASK_SIZE = 3


def generate_synthetic(config: SyntheticConfig, seed: int):
    """Seeded two-modality dataset where fusion provably helps.

    Basic classes get separated means in modality A and sit at the origin
    in modality B. Each compound class is the midpoint of two basic
    parents in modality A (ambiguous there) and gets its own separated
    modality-B mean scaled by modality_bias (discriminative there).
    Returns (table_a, table_b, task_specs).
    """
    rng = np.random.default_rng(seed)
    n_basic = config.n_basic_classes
    n_compound = config.n_compound_classes

    basic_means_a = rng.uniform(0.0, _HYPERCUBE_SIDE, size=(n_basic, config.dim_a))
    basic_names = [f"basic_{i}" for i in range(n_basic)]

    pairs = list(itertools.combinations(range(n_basic), 2))
    order = rng.permutation(len(pairs))
    chosen = [pairs[i] for i in order[:n_compound]]
    compound_names = [f"compound_{i}" for i in range(n_compound)]
    compound_means_a = np.array([
        0.5 * (basic_means_a[p] + basic_means_a[q]) for p, q in chosen
    ]).reshape(n_compound, config.dim_a)
    compound_means_b = rng.uniform(0.0, _HYPERCUBE_SIDE, size=(n_compound, config.dim_b)) \
        * config.modality_bias

    names = basic_names + compound_names
    means_a = np.vstack([basic_means_a, compound_means_a]) if n_compound else basic_means_a
    means_b = np.vstack([np.zeros((n_basic, config.dim_b)), compound_means_b]) \
        if n_compound else np.zeros((n_basic, config.dim_b))

    rows_a, rows_b = [], []
    for c, name in enumerate(names):
        for split, count in (("train", config.samples_per_class_train),
                             ("test", config.samples_per_class_test)):
            cloud_a = means_a[c] + rng.normal(0.0, config.cluster_spread, (count, config.dim_a))
            cloud_b = means_b[c] + rng.normal(0.0, config.cluster_spread, (count, config.dim_b))
            for i in range(count):
                sid = f"{name}_{split}_{i:04d}"
                rows_a.append(FeatureRow(sid, name, split, cloud_a[i]))
                rows_b.append(FeatureRow(sid, name, split, cloud_b[i]))

    table_a = FeatureTable("mod_a", config.dim_a, tuple(rows_a))
    table_b = FeatureTable("mod_b", config.dim_b, tuple(rows_b))

    tasks = [TaskSpec(name="basics", class_labels=tuple(basic_names))]
    for t, start in enumerate(range(0, n_compound, _COMPOUND_TASK_SIZE)):
        chunk = compound_names[start:start + _COMPOUND_TASK_SIZE]
        tasks.append(TaskSpec(name=f"compounds_{t + 1}", class_labels=tuple(chunk)))
    return table_a, table_b, tasks
