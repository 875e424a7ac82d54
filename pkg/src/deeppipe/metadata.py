"""Meta-dataset of pipeline evaluations: files, lookup oracle, synthetic generator.

Evaluations are a possibly-sparse tasks x pipelines accuracy table; missing
cells are first-class (NaN in memory, empty in CSV) and the oracle returns a
missing marker instead of raising. A seeded synthetic generator produces
desk-scale meta-datasets whose per-task optima differ, with clustered task
latents so that related tasks correlate.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import search_space as ss
from .errors import ParseError, ValidationError
from .training import TaskArrays

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MISSING = None  # marker returned by the oracle for sparse cells


@dataclass(frozen=True)
class MetaDataset:
    """Immutable evaluation table plus pipeline features and task splits."""

    pipeline_ids: tuple[int, ...]
    features: np.ndarray  # raw flattened, (n_pipelines, width)
    feature_names: tuple[str, ...]
    task_ids: tuple[int, ...]
    accuracy: np.ndarray  # (n_tasks, n_pipelines), NaN = missing
    cost: np.ndarray | None  # same shape, or None for unit cost
    splits: dict[int, str]  # task_id -> train/val/test
    space_fingerprint: str
    dropped_pipelines: int = 0

    def __post_init__(self):
        if self.accuracy.shape != (len(self.task_ids), len(self.pipeline_ids)):
            raise ValidationError("accuracy table shape mismatch")
        present = self.accuracy[~np.isnan(self.accuracy)]
        if present.size and (present.min() < 0.0 or present.max() > 1.0):
            raise ValidationError("accuracies must lie in [0, 1]")
        for t in self.splits:
            if t not in self.task_ids:
                raise ValidationError(f"split references unknown task {t!r}")

    def pipeline_index(self, pipeline_id: int) -> int:
        try:
            return self.pipeline_ids.index(pipeline_id)
        except ValueError:
            raise ValidationError(f"unknown pipeline {pipeline_id!r}") from None

    def task_index(self, task_id: int) -> int:
        try:
            return self.task_ids.index(task_id)
        except ValueError:
            raise ValidationError(f"unknown task {task_id!r}") from None

    def oracle(self, task_id: int, pipeline_id: int) -> float | None:
        """Stored accuracy, or the missing marker for sparse cells."""
        value = self.accuracy[self.task_index(task_id), self.pipeline_index(pipeline_id)]
        return MISSING if math.isnan(value) else float(value)

    def cost_of(self, task_id: int, pipeline_id: int) -> float:
        if self.cost is None:
            return 1.0
        value = self.cost[self.task_index(task_id), self.pipeline_index(pipeline_id)]
        return 1.0 if math.isnan(value) else float(value)

    def y_max(self, task_id: int) -> float:
        row = self.accuracy[self.task_index(task_id)]
        present = row[~np.isnan(row)]
        if present.size == 0:
            raise ValidationError(f"task {task_id!r} has no evaluations")
        return float(present.max())

    def tasks_in(self, split: str) -> list[int]:
        if split not in SPLITS:
            raise ValidationError(f"unknown split {split!r}")
        return [t for t in self.task_ids if self.splits.get(t) == split]


# -- file round trip -----------------------------------------------------------


def load_pipelines_csv(
    pipelines_csv: str, space: ss.SearchSpace
) -> tuple[list[int], np.ndarray]:
    """pipeline_id column plus raw flattened features, validated against a space."""
    with open(pipelines_csv, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{pipelines_csv}: empty file") from None
        if header[:1] != ["pipeline_id"]:
            raise ParseError(f"{pipelines_csv}: first column must be pipeline_id")
        if tuple(header[1:]) != tuple(space.slot_names):
            raise ValidationError(
                f"{pipelines_csv}: feature columns do not match the space's slot names"
            )
        ids: list[int] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{pipelines_csv}: line {lineno}: {len(row)} fields")
            try:
                ids.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(f"{pipelines_csv}: line {lineno}: {exc}") from None
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{pipelines_csv}: duplicate pipeline ids")
    return ids, np.asarray(rows, dtype=float).reshape(len(ids), space.total_width)


def load_meta_dataset(
    pipelines_csv: str,
    evaluations_csv: str,
    splits_path: str | None,
    space: ss.SearchSpace,
    metadata_path: str | None = None,
) -> MetaDataset:
    """Load the CSV pair (+ optional splits document) against a space.

    The evaluations header declares the orientation: a column named
    ``accuracy`` is used as-is, a column named ``error`` is converted to
    1 - error. An optional metadata document pins the orientation and the
    space fingerprint; mismatches are rejected. Pipelines whose evaluations
    are all missing are dropped with a logged count.
    """
    declared = None
    if metadata_path is not None:
        with open(metadata_path, "r", encoding="utf-8") as fh:
            try:
                header_doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{metadata_path}: line {exc.lineno}: {exc.msg}") from None
        declared = header_doc.get("orientation")
        if declared not in ("accuracy", "error"):
            raise ValidationError(f"{metadata_path}: orientation must be accuracy or error")
        fp = header_doc.get("space_fingerprint")
        if fp and fp != space.fingerprint():
            raise ValidationError(
                f"{metadata_path}: space fingerprint does not match the loaded space"
            )
    ids, features = load_pipelines_csv(pipelines_csv, space)

    with open(evaluations_csv, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{evaluations_csv}: empty file") from None
        if header[:2] != ["task_id", "pipeline_id"] or header[2] not in ("accuracy", "error"):
            raise ParseError(
                f"{evaluations_csv}: header must be task_id,pipeline_id,accuracy|error[,cost]"
            )
        if declared is not None and header[2] != declared:
            raise ValidationError(
                f"{evaluations_csv}: header declares {header[2]!r} but the metadata "
                f"document says {declared!r}"
            )
        is_error = header[2] == "error"
        has_cost = len(header) > 3 and header[3] == "cost"
        entries: list[tuple[int, int, float, float]] = []
        for lineno, row in enumerate(reader, start=2):
            try:
                t = int(row[0])
                p = int(row[1])
                v = float("nan") if row[2] == "" else float(row[2])
                c = float(row[3]) if has_cost and len(row) > 3 and row[3] != "" else float("nan")
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{evaluations_csv}: line {lineno}: {exc}") from None
            entries.append((t, p, v, c))

    id_index = {p: k for k, p in enumerate(ids)}
    task_ids = sorted({t for t, _p, _v, _c in entries})
    task_index = {t: k for k, t in enumerate(task_ids)}
    accuracy = np.full((len(task_ids), len(ids)), np.nan)
    cost = np.full((len(task_ids), len(ids)), np.nan) if has_cost else None
    for t, p, v, c in entries:
        if p not in id_index:
            raise ValidationError(f"{evaluations_csv}: unknown pipeline {p}")
        if not math.isnan(v):
            v = 1.0 - v if is_error else v
            if not 0.0 <= v <= 1.0:
                raise ValidationError(
                    f"{evaluations_csv}: accuracy {v} for task {t}, pipeline {p} outside [0, 1]"
                )
            accuracy[task_index[t], id_index[p]] = v
        if cost is not None and not math.isnan(c):
            cost[task_index[t], id_index[p]] = c

    keep = ~np.all(np.isnan(accuracy), axis=0)
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        logger.info("dropping %d pipelines with only missing evaluations", dropped)
        ids = [p for p, k in zip(ids, keep) if k]
        features = features[keep]
        accuracy = accuracy[:, keep]
        cost = cost[:, keep] if cost is not None else None

    splits: dict[int, str] = {}
    if splits_path is not None:
        with open(splits_path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{splits_path}: line {exc.lineno}: {exc.msg}") from None
        for split in SPLITS:
            for t in doc.get(split, []):
                if int(t) not in task_index:
                    raise ValidationError(f"{splits_path}: unknown task {t} in {split!r}")
                splits[int(t)] = split

    return MetaDataset(
        pipeline_ids=tuple(ids),
        features=features,
        feature_names=tuple(space.slot_names),
        task_ids=tuple(task_ids),
        accuracy=accuracy,
        cost=cost,
        splits=splits,
        space_fingerprint=space.fingerprint(),
        dropped_pipelines=dropped,
    )


def save_meta_dataset(
    meta: MetaDataset,
    pipelines_csv: str,
    evaluations_csv: str,
    splits_path: str | None = None,
    metadata_path: str | None = None,
) -> None:
    with open(pipelines_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pipeline_id", *meta.feature_names])
        for pid, row in zip(meta.pipeline_ids, meta.features):
            writer.writerow([pid, *[repr(float(v)) for v in row]])
    has_cost = meta.cost is not None
    with open(evaluations_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "pipeline_id", "accuracy"] + (["cost"] if has_cost else []))
        for ti, t in enumerate(meta.task_ids):
            for pi, p in enumerate(meta.pipeline_ids):
                v = meta.accuracy[ti, pi]
                if math.isnan(v):
                    continue
                row = [t, p, repr(float(v))]
                if has_cost:
                    c = meta.cost[ti, pi]
                    row.append("" if math.isnan(c) else repr(float(c)))
                writer.writerow(row)
    if splits_path is not None:
        doc = {s: [t for t in meta.task_ids if meta.splits.get(t) == s] for s in SPLITS}
        with open(splits_path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    if metadata_path is not None:
        header_doc = {"orientation": "accuracy", "space_fingerprint": meta.space_fingerprint}
        with open(metadata_path, "w", encoding="utf-8") as fh:
            json.dump(header_doc, fh, indent=2)
            fh.write("\n")


def split_assign(
    meta: MetaDataset,
    train_frac: float,
    val_frac: float,
    seed: int,
    explicit: dict[str, list[int]] | None = None,
) -> MetaDataset:
    """Seeded disjoint train/val/test assignment; explicit id lists win."""
    if explicit is not None:
        splits = {}
        for split in SPLITS:
            for t in explicit.get(split, []):
                if t not in meta.task_ids:
                    raise ValidationError(f"explicit split names unknown task {t}")
                if t in splits:
                    raise ValidationError(f"task {t} assigned to two splits")
                splits[t] = split
        return replace(meta, splits=splits)
    if not (0.0 < train_frac < 1.0 and 0.0 < val_frac < 1.0 and train_frac + val_frac < 1.0):
        raise ValidationError("fractions must be in (0,1) and sum below 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(meta.task_ids))
    n_train = int(round(train_frac * len(meta.task_ids)))
    n_val = int(round(val_frac * len(meta.task_ids)))
    splits = {}
    for k, idx in enumerate(order):
        split = "train" if k < n_train else "val" if k < n_train + n_val else "test"
        splits[meta.task_ids[idx]] = split
    return replace(meta, splits=splits)


# -- synthetic generator ---------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    space: ss.SearchSpace
    n_tasks: int
    n_pipelines: int
    noise: float = 0.01
    n_clusters: int = 4
    latent_blend: float = 0.75  # weight of the shared cluster latent

    def __post_init__(self):
        if self.n_tasks < 1 or self.n_pipelines < 1 or self.n_clusters < 1:
            raise ValidationError("synthetic spec sizes must be positive")
        if self.noise < 0:
            raise ValidationError("noise must be >= 0")


@dataclass
class _TaskLatent:
    base: list[np.ndarray]  # per stage: effect per algorithm
    centers: list[list[np.ndarray]]  # per stage/algorithm: optimum per numeric hp in [0,1]
    cat_effects: list[list[dict[str, np.ndarray]]]  # per stage/algorithm/hp: value per category
    interactions: dict[tuple[int, int], np.ndarray]  # stage pair -> (M_i, M_j) effects
    bowl_scale: float


class SyntheticGroundTruth:
    """Latent response surfaces behind a generated meta-dataset."""

    def __init__(self, space: ss.SearchSpace, latents: list[_TaskLatent]):
        self.space = space
        self.latents = latents

    def utility(self, task: int, config: ss.PipelineConfiguration) -> float:
        lat = self.latents[task]
        space = self.space
        total = 0.0
        for i, (j, vals) in enumerate(zip(config.algorithm_indices, config.values)):
            total += lat.base[i][j]
            algo = space.stages[i].algorithms[j]
            numeric = 0
            for hp, v in zip(algo.hyperparameters, vals):
                if hp.kind == "categorical":
                    total += float(lat.cat_effects[i][j][hp.name][hp.categories.index(v)])
                else:
                    x = (float(v) - hp.lower) / (hp.upper - hp.lower) if hp.upper > hp.lower else 0.0
                    c = lat.centers[i][j][numeric]
                    total -= lat.bowl_scale * (x - c) ** 2
                    numeric += 1
        for (i, k), table in lat.interactions.items():
            total += float(table[config.algorithm_indices[i], config.algorithm_indices[k]])
        return total

    def accuracy(self, task: int, config: ss.PipelineConfiguration) -> float:
        """Noise-free response, squashed to (0, 1)."""
        return float(1.0 / (1.0 + np.exp(-self.utility(task, config))))

    def planted_optimum(self, task: int) -> tuple[ss.PipelineConfiguration, float]:
        """Best configuration by exhaustive search over algorithm combos.

        Numeric values sit at the task's bowl centers and categories at their
        best effect, so the returned config attains the task's maximal
        utility over the whole space.
        """
        space = self.space
        lat = self.latents[task]
        best: tuple[float, ss.PipelineConfiguration] | None = None
        combos = [()]
        for i in range(space.n_stages):
            combos = [c + (j,) for c in combos for j in range(space.algorithms_per_stage[i])]
        for combo in combos:
            values = []
            for i, j in enumerate(combo):
                algo = space.stages[i].algorithms[j]
                vals: list[object] = []
                numeric = 0
                for hp in algo.hyperparameters:
                    if hp.kind == "categorical":
                        effects = lat.cat_effects[i][j][hp.name]
                        vals.append(hp.categories[int(np.argmax(effects))])
                    else:
                        c = lat.centers[i][j][numeric]
                        raw = hp.lower + c * (hp.upper - hp.lower)
                        if hp.kind == "integer":
                            raw = float(round(raw))
                        vals.append(raw)
                        numeric += 1
                values.append(tuple(vals))
            config = ss.PipelineConfiguration(combo, tuple(values))
            u = self.utility(task, config)
            if best is None or u > best[0]:
                best = (u, config)
        assert best is not None
        return best[1], best[0]


def synthetic_ground_truth(spec: SyntheticSpec, seed: int) -> SyntheticGroundTruth:
    space = spec.space
    rng = np.random.default_rng(seed)

    def draw_latent() -> _TaskLatent:
        base = [rng.normal(0.0, 1.0, size=m) for m in space.algorithms_per_stage]
        centers = [
            [
                rng.uniform(0.0, 1.0, size=sum(1 for hp in a.hyperparameters if hp.kind != "categorical"))
                for a in stage.algorithms
            ]
            for stage in space.stages
        ]
        cats = [
            [
                {
                    hp.name: rng.normal(0.0, 0.3, size=len(hp.categories))
                    for hp in a.hyperparameters
                    if hp.kind == "categorical"
                }
                for a in stage.algorithms
            ]
            for stage in space.stages
        ]
        inter = {
            (i, k): rng.normal(0.0, 0.4, size=(space.algorithms_per_stage[i], space.algorithms_per_stage[k]))
            for i in range(space.n_stages)
            for k in range(i + 1, space.n_stages)
        }
        return _TaskLatent(base, centers, cats, inter, bowl_scale=2.0)

    clusters = [draw_latent() for _ in range(spec.n_clusters)]
    latents = []
    w = spec.latent_blend
    for t in range(spec.n_tasks):
        shared = clusters[t % spec.n_clusters]
        own = draw_latent()
        blended = _TaskLatent(
            base=[w * s + (1 - w) * o for s, o in zip(shared.base, own.base)],
            centers=[
                [np.clip(w * s + (1 - w) * o, 0.0, 1.0) for s, o in zip(ss_, os_)]
                for ss_, os_ in zip(shared.centers, own.centers)
            ],
            cat_effects=[
                [
                    {name: w * s[name] + (1 - w) * o[name] for name in s}
                    for s, o in zip(ss_, os_)
                ]
                for ss_, os_ in zip(shared.cat_effects, own.cat_effects)
            ],
            interactions={
                key: w * shared.interactions[key] + (1 - w) * own.interactions[key]
                for key in shared.interactions
            },
            bowl_scale=2.0,
        )
        latents.append(blended)
    return SyntheticGroundTruth(space, latents)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> MetaDataset:
    """Seeded dense meta-dataset over a shared random pipeline pool."""
    truth = synthetic_ground_truth(spec, seed)
    space = spec.space
    rng = np.random.default_rng(seed + 1)
    configs = [ss.random_config(space, rng) for _ in range(spec.n_pipelines)]
    flat = [ss.flatten(space, c) for c in configs]
    features = np.stack([f for f, _m in flat])
    accuracy = np.empty((spec.n_tasks, spec.n_pipelines))
    for t in range(spec.n_tasks):
        for p, config in enumerate(configs):
            acc = truth.accuracy(t, config)
            if spec.noise > 0:
                acc += rng.normal(0.0, spec.noise)
            accuracy[t, p] = min(1.0, max(0.0, acc))
    return MetaDataset(
        pipeline_ids=tuple(range(spec.n_pipelines)),
        features=features,
        feature_names=tuple(space.slot_names),
        task_ids=tuple(range(spec.n_tasks)),
        accuracy=accuracy,
        cost=None,
        splits={},
        space_fingerprint=space.fingerprint(),
    )


# -- task tensors for training ----------------------------------------------------


def task_arrays(
    meta: MetaDataset,
    split: str,
    stats: ss.PreprocessStats,
    space: ss.SearchSpace,
) -> list[TaskArrays]:
    """Per-task training arrays: preprocessed features, masks, standardized targets."""
    from . import gp

    active = np.stack([ss.infer_mask(space, row).active for row in meta.features])
    processed = ss.preprocess_apply(stats, meta.features, space, active)
    out = []
    for t in meta.tasks_in(split):
        row = meta.accuracy[meta.task_index(t)]
        idx = np.nonzero(~np.isnan(row))[0]
        y = row[idx]
        y_std, _mean, _std = gp.standardize_targets(y)
        out.append(TaskArrays(t, processed[idx], active[idx], y, y_std))
    return out
