"""Hierarchical pipeline search spaces and their flattened numeric encoding.

A space is an ordered list of stages; each stage holds candidate algorithms
with hyperparameter schemas. Configurations are flattened into a fixed-width
vector in which every algorithm owns a contiguous block of slots (categorical
hyperparameters are one-hot expanded at load time, algorithms without
hyperparameters get a single constant indicator slot). Inactive algorithms'
blocks are zero-filled; the active choice per stage travels in an ActiveMask.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParseError, ValidationError

KINDS = ("continuous", "integer", "categorical")


@dataclass(frozen=True)
class HyperparameterSpec:
    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    categories: tuple[str, ...] | None = None

    def slot_names(self) -> list[str]:
        if self.kind == "categorical":
            return [f"{self.name}_{c}" for c in self.categories]
        return [self.name]

    @property
    def n_slots(self) -> int:
        return len(self.categories) if self.kind == "categorical" else 1


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    hyperparameters: tuple[HyperparameterSpec, ...] = ()
    encoder_group: str | None = None

    def slot_names(self) -> list[str]:
        if not self.hyperparameters:
            return [f"apply_{self.name}"]
        names: list[str] = []
        for hp in self.hyperparameters:
            names.extend(hp.slot_names())
        return names

    @property
    def n_slots(self) -> int:
        # zero-hyperparameter algorithms keep one constant indicator slot so
        # every encoder has nonzero input width
        return max(1, sum(hp.n_slots for hp in self.hyperparameters))


@dataclass(frozen=True)
class Stage:
    name: str
    algorithms: tuple[AlgorithmSpec, ...]


@dataclass(frozen=True)
class EncoderUnit:
    """One encoder's input block: a single algorithm or a shared group."""

    stage_index: int
    unit_index: int
    name: str
    algorithm_indices: tuple[int, ...]
    slot_indices: tuple[int, ...]


@dataclass(frozen=True)
class ActiveMask:
    """Active algorithm index (0-based) per stage."""

    active: tuple[int, ...]

    def one_hot(self, space: "SearchSpace", stage: int) -> np.ndarray:
        vec = np.zeros(space.algorithms_per_stage[stage])
        vec[self.active[stage]] = 1.0
        return vec

    def one_hot_vector(self, space: "SearchSpace") -> np.ndarray:
        return np.concatenate(
            [self.one_hot(space, i) for i in range(space.n_stages)]
        )


@dataclass(frozen=True)
class PipelineConfiguration:
    """Selected algorithm per stage plus that algorithm's hyperparameter values.

    ``values[i]`` is ordered like the selected algorithm's hyperparameter
    schema; numeric kinds carry floats, categorical kinds carry the category.
    """

    algorithm_indices: tuple[int, ...]
    values: tuple[tuple[object, ...], ...]


class SearchSpace:
    """Validated space with the flattened slot layout precomputed."""

    def __init__(self, name: str, stages: Sequence[Stage]):
        self.name = name
        self.stages = tuple(stages)
        if not self.stages:
            raise ValidationError("search space needs at least one stage")
        self._validate()
        self._build_layout()

    # -- derived layout -----------------------------------------------------

    def _validate(self) -> None:
        seen_stage = set()
        for stage in self.stages:
            if stage.name in seen_stage:
                raise ValidationError(f"duplicate stage name {stage.name!r}")
            seen_stage.add(stage.name)
            if not stage.algorithms:
                raise ValidationError(f"stage {stage.name!r} has no algorithms")
            seen_algo = set()
            for algo in stage.algorithms:
                if algo.name in seen_algo:
                    raise ValidationError(
                        f"duplicate algorithm name {algo.name!r} in stage {stage.name!r}"
                    )
                seen_algo.add(algo.name)
                seen_hp = set()
                for hp in algo.hyperparameters:
                    if hp.name in seen_hp:
                        raise ValidationError(
                            f"duplicate hyperparameter {hp.name!r} in "
                            f"{stage.name}/{algo.name}"
                        )
                    seen_hp.add(hp.name)
                    if hp.kind not in KINDS:
                        raise ValidationError(
                            f"unknown kind {hp.kind!r} for {stage.name}/{algo.name}/{hp.name}"
                        )
                    if hp.kind == "categorical":
                        if not hp.categories:
                            raise ValidationError(
                                f"categorical {stage.name}/{algo.name}/{hp.name} "
                                "needs a non-empty category list"
                            )
                    else:
                        if hp.lower is None or hp.upper is None or not (hp.lower <= hp.upper):
                            raise ValidationError(
                                f"bad bounds for {stage.name}/{algo.name}/{hp.name}"
                            )

    def _build_layout(self) -> None:
        self.n_stages = len(self.stages)
        self.algorithms_per_stage = tuple(len(s.algorithms) for s in self.stages)
        self.slot_counts = tuple(
            tuple(a.n_slots for a in s.algorithms) for s in self.stages
        )
        self.max_slots_per_stage = tuple(max(c) for c in self.slot_counts)
        self.total_width = sum(sum(c) for c in self.slot_counts)

        self.slot_names: list[str] = []
        self.block_ranges: list[list[tuple[int, int]]] = []
        offset = 0
        for stage in self.stages:
            ranges = []
            for algo in stage.algorithms:
                names = algo.slot_names()
                self.slot_names.extend(
                    f"{stage.name}__{algo.name}__{n}" for n in names
                )
                ranges.append((offset, offset + len(names)))
                offset += len(names)
            self.block_ranges.append(ranges)

        self.encoder_units: list[list[EncoderUnit]] = []
        for i, stage in enumerate(self.stages):
            groups: dict[str, list[int]] = {}
            order: list[str] = []
            for j, algo in enumerate(stage.algorithms):
                key = algo.encoder_group or f"__solo__{algo.name}"
                if key not in groups:
                    groups[key] = []
                    order.append(key)
                groups[key].append(j)
            units = []
            for u, key in enumerate(order):
                members = groups[key]
                slots: list[int] = []
                for j in members:
                    lo, hi = self.block_ranges[i][j]
                    slots.extend(range(lo, hi))
                label = key if not key.startswith("__solo__") else stage.algorithms[members[0]].name
                units.append(EncoderUnit(i, u, label, tuple(members), tuple(slots)))
            self.encoder_units.append(units)
        # algorithm -> owning encoder unit
        self.unit_of_algorithm = tuple(
            tuple(
                next(u.unit_index for u in self.encoder_units[i] if j in u.algorithm_indices)
                for j in range(self.algorithms_per_stage[i])
            )
            for i in range(self.n_stages)
        )

    @property
    def encoder_units_per_stage(self) -> tuple[int, ...]:
        return tuple(len(u) for u in self.encoder_units)

    def fingerprint(self) -> str:
        # hash of the normalized document, so cosmetic differences in the
        # source file do not change the identity
        digest = hashlib.sha256(
            json.dumps(self.to_document(), sort_keys=True).encode("utf-8")
        )
        return digest.hexdigest()

    # -- document round trip ------------------------------------------------

    def to_document(self) -> dict:
        stages = []
        for stage in self.stages:
            algos = []
            for algo in stage.algorithms:
                hps = []
                for hp in algo.hyperparameters:
                    if hp.kind == "categorical":
                        hps.append(
                            {"name": hp.name, "kind": hp.kind, "categories": list(hp.categories)}
                        )
                    else:
                        hps.append(
                            {"name": hp.name, "kind": hp.kind, "lower": hp.lower, "upper": hp.upper}
                        )
                entry: dict = {"name": algo.name, "hyperparameters": hps}
                if algo.encoder_group:
                    entry["encoder_group"] = algo.encoder_group
                algos.append(entry)
            stages.append({"name": stage.name, "algorithms": algos})
        return {"name": self.name, "stages": stages}

    # -- config handling ----------------------------------------------------

    def validate_config(self, config: PipelineConfiguration) -> None:
        if len(config.algorithm_indices) != self.n_stages:
            raise ValidationError(
                f"config has {len(config.algorithm_indices)} stages, space has {self.n_stages}"
            )
        if len(config.values) != self.n_stages:
            raise ValidationError("config values must have one entry per stage")
        for i, (j, vals) in enumerate(zip(config.algorithm_indices, config.values)):
            if not 0 <= j < self.algorithms_per_stage[i]:
                raise ValidationError(
                    f"stage {self.stages[i].name!r}: algorithm index {j} out of range"
                )
            algo = self.stages[i].algorithms[j]
            if len(vals) != len(algo.hyperparameters):
                raise ValidationError(
                    f"{self.stages[i].name}/{algo.name}: expected "
                    f"{len(algo.hyperparameters)} values, got {len(vals)}"
                )
            for hp, v in zip(algo.hyperparameters, vals):
                where = f"{self.stages[i].name}/{algo.name}/{hp.name}"
                if hp.kind == "categorical":
                    if v not in hp.categories:
                        raise ValidationError(f"{where}: {v!r} not a category")
                else:
                    if not isinstance(v, (int, float)) or not math.isfinite(float(v)):
                        raise ValidationError(f"{where}: non-numeric value {v!r}")
                    if hp.kind == "integer" and float(v) != int(v):
                        raise ValidationError(f"{where}: {v!r} not integral")
                    if not hp.lower <= float(v) <= hp.upper:
                        raise ValidationError(f"{where}: {v!r} outside bounds")


def flatten(
    space: SearchSpace, config: PipelineConfiguration
) -> tuple[np.ndarray, ActiveMask]:
    """Place the active algorithms' values into their blocks, zero the rest."""
    space.validate_config(config)
    features = np.zeros(space.total_width)
    for i, (j, vals) in enumerate(zip(config.algorithm_indices, config.values)):
        algo = space.stages[i].algorithms[j]
        lo, _hi = space.block_ranges[i][j]
        if not algo.hyperparameters:
            features[lo] = 1.0  # indicator slot
            continue
        pos = lo
        for hp, v in zip(algo.hyperparameters, vals):
            if hp.kind == "categorical":
                features[pos + hp.categories.index(v)] = 1.0
                pos += len(hp.categories)
            else:
                features[pos] = float(v)
                pos += 1
    return features, ActiveMask(tuple(config.algorithm_indices))


def unflatten(
    space: SearchSpace, features: np.ndarray, mask: ActiveMask
) -> PipelineConfiguration:
    """Inverse of :func:`flatten` for raw (unscaled) feature vectors."""
    if features.shape != (space.total_width,):
        raise ValidationError(
            f"feature vector has width {features.shape}, expected {space.total_width}"
        )
    values = []
    for i, j in enumerate(mask.active):
        algo = space.stages[i].algorithms[j]
        lo, _hi = space.block_ranges[i][j]
        vals: list[object] = []
        pos = lo
        for hp in algo.hyperparameters:
            if hp.kind == "categorical":
                block = features[pos : pos + len(hp.categories)]
                vals.append(hp.categories[int(np.argmax(block))])
                pos += len(hp.categories)
            else:
                v = float(features[pos])
                vals.append(float(round(v)) if hp.kind == "integer" else v)
                pos += 1
        values.append(tuple(vals))
    return PipelineConfiguration(tuple(mask.active), tuple(values))


def infer_mask(space: SearchSpace, features: np.ndarray) -> ActiveMask:
    """Recover the active algorithms of a raw flattened row.

    A stage's active algorithm is the unique one with a nonzero block; a
    single-algorithm stage is always unambiguous. Rows whose active block is
    entirely zero cannot be attributed and are rejected.
    """
    active = []
    for i in range(space.n_stages):
        nonzero = [
            j
            for j, (lo, hi) in enumerate(space.block_ranges[i])
            if np.any(features[lo:hi] != 0.0)
        ]
        if len(nonzero) == 1:
            active.append(nonzero[0])
        elif not nonzero and space.algorithms_per_stage[i] == 1:
            active.append(0)
        elif not nonzero:
            raise ValidationError(
                f"stage {space.stages[i].name!r}: no nonzero block, active algorithm ambiguous"
            )
        else:
            raise ValidationError(
                f"stage {space.stages[i].name!r}: several nonzero blocks {nonzero}"
            )
    return ActiveMask(tuple(active))


def random_config(space: SearchSpace, rng: np.random.Generator) -> PipelineConfiguration:
    indices = []
    values = []
    for stage in space.stages:
        j = int(rng.integers(len(stage.algorithms)))
        indices.append(j)
        algo = stage.algorithms[j]
        vals: list[object] = []
        for hp in algo.hyperparameters:
            if hp.kind == "categorical":
                vals.append(hp.categories[int(rng.integers(len(hp.categories)))])
            elif hp.kind == "integer":
                lo, hi = math.ceil(hp.lower), math.floor(hp.upper)
                vals.append(float(rng.integers(lo, hi + 1)))
            else:
                vals.append(float(rng.uniform(hp.lower, hp.upper)))
        values.append(tuple(vals))
    return PipelineConfiguration(tuple(indices), tuple(values))


# -- document loading ---------------------------------------------------------


def _parse_hyperparameter(doc: object, path: str) -> HyperparameterSpec:
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected object")
    try:
        name = doc["name"]
        kind = doc["kind"]
    except KeyError as exc:
        raise ParseError(f"{path}: missing {exc.args[0]!r}") from None
    if kind == "categorical":
        cats = doc.get("categories")
        if not isinstance(cats, list) or not cats:
            raise ParseError(f"{path}: categorical needs a non-empty 'categories' list")
        return HyperparameterSpec(name, kind, categories=tuple(str(c) for c in cats))
    if "lower" not in doc or "upper" not in doc:
        raise ParseError(f"{path}: numeric kind needs 'lower' and 'upper'")
    return HyperparameterSpec(name, kind, lower=float(doc["lower"]), upper=float(doc["upper"]))


def space_from_document(doc: dict) -> SearchSpace:
    if not isinstance(doc, dict) or "stages" not in doc:
        raise ParseError("document: missing 'stages'")
    stages = []
    for i, stage_doc in enumerate(doc["stages"]):
        path = f"stages[{i}]"
        if not isinstance(stage_doc, dict) or "name" not in stage_doc:
            raise ParseError(f"{path}: missing 'name'")
        algos = []
        for j, algo_doc in enumerate(stage_doc.get("algorithms", [])):
            apath = f"{path}.algorithms[{j}]"
            if not isinstance(algo_doc, dict) or "name" not in algo_doc:
                raise ParseError(f"{apath}: missing 'name'")
            hps = tuple(
                _parse_hyperparameter(hp_doc, f"{apath}.hyperparameters[{k}]")
                for k, hp_doc in enumerate(algo_doc.get("hyperparameters", []))
            )
            algos.append(
                AlgorithmSpec(algo_doc["name"], hps, algo_doc.get("encoder_group"))
            )
        stages.append(Stage(stage_doc["name"], tuple(algos)))
    return SearchSpace(doc.get("name", "space"), stages)


def load_search_space(path: str) -> SearchSpace:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return space_from_document(doc)


def save_search_space(space: SearchSpace, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(space.to_document(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- preprocessing ------------------------------------------------------------


@dataclass(frozen=True)
class FeatureStats:
    log_flag: bool
    vmin: float  # min after the log transform, when flagged
    vmax: float

    @property
    def constant(self) -> bool:
        return self.vmin == self.vmax


@dataclass(frozen=True)
class PreprocessStats:
    feature_names: tuple[str, ...]
    per_feature: tuple[FeatureStats, ...]

    @property
    def width(self) -> int:
        return len(self.per_feature)


def slot_owner_matrix(space: SearchSpace) -> np.ndarray:
    """(stage, algorithm) owning each flattened slot, shape (width, 2)."""
    owners = np.empty((space.total_width, 2), dtype=int)
    for i in range(space.n_stages):
        for j, (lo, hi) in enumerate(space.block_ranges[i]):
            owners[lo:hi, 0] = i
            owners[lo:hi, 1] = j
    return owners


def _active_cells(space: SearchSpace, active: np.ndarray) -> np.ndarray:
    """Boolean (rows, width): is the cell's owning algorithm active in the row."""
    owners = slot_owner_matrix(space)
    return active[:, owners[:, 0]] == owners[None, :, 1]


def preprocess_fit(
    table: np.ndarray,
    feature_names: Sequence[str],
    space: SearchSpace | None = None,
    active: np.ndarray | None = None,
) -> PreprocessStats:
    """Fit per-feature scaling stats on a raw flattened pipeline table.

    A feature is log-transformed iff it is strictly positive and contains a
    value above mean + 3*std (computed per feature over this table); min/max
    are taken after the transform. When ``space`` and the per-row ``active``
    algorithm indices are given, a feature's statistics only use rows where
    its owning algorithm is active, so the zero filler of inactive blocks does
    not distort them.
    """
    table = np.asarray(table, dtype=float)
    if table.ndim != 2 or table.shape[0] == 0:
        raise ValidationError("preprocess_fit needs a non-empty 2-D table")
    if table.shape[1] != len(feature_names):
        raise ValidationError("feature_names length must match table width")
    if (space is None) != (active is None):
        raise ValidationError("pass space and active together or neither")
    mask = None
    if space is not None:
        if table.shape[1] != space.total_width:
            raise ValidationError("table width does not match the space")
        mask = _active_cells(space, np.asarray(active, dtype=int))
    stats = []
    for k in range(table.shape[1]):
        col = table[mask[:, k], k] if mask is not None else table[:, k]
        if col.size == 0:
            stats.append(FeatureStats(False, 0.0, 0.0))
            continue
        heavy = bool(np.any(col > col.mean() + 3.0 * col.std()))
        log_flag = heavy and bool(np.all(col > 0.0))
        vals = np.log(col) if log_flag else col
        stats.append(FeatureStats(log_flag, float(vals.min()), float(vals.max())))
    return PreprocessStats(tuple(feature_names), tuple(stats))


def preprocess_apply(
    stats: PreprocessStats,
    features: np.ndarray,
    space: SearchSpace | None = None,
    active: np.ndarray | None = None,
) -> np.ndarray:
    out, _count = preprocess_apply_with_diagnostics(stats, features, space, active)
    return out


def preprocess_apply_with_diagnostics(
    stats: PreprocessStats,
    features: np.ndarray,
    space: SearchSpace | None = None,
    active: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Scale to [0,1] per feature; returns the number of clamped log inputs.

    Out-of-range values are clamped rather than rejected: new tasks may carry
    values outside the fitted range. Constant features map to 0. When
    ``space`` and ``active`` are given, inactive algorithms' blocks are
    zero-filled after scaling.
    """
    arr = np.asarray(features, dtype=float)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    if arr.shape[1] != stats.width:
        raise ValidationError(
            f"feature width {arr.shape[1]} does not match stats width {stats.width}"
        )
    cells = None
    if space is not None and active is not None:
        cells = _active_cells(space, np.asarray(active, dtype=int))
    out = np.empty_like(arr)
    clamped = 0
    for k, fs in enumerate(stats.per_feature):
        col = arr[:, k]
        if fs.log_flag:
            floor = math.exp(fs.vmin)
            bad = col < floor
            nonpos = col <= 0.0
            if cells is not None:
                nonpos = nonpos & cells[:, k]
            clamped += int(np.count_nonzero(nonpos))
            col = np.log(np.where(bad, floor, col))
        if fs.constant:
            out[:, k] = 0.0
        else:
            out[:, k] = np.clip((col - fs.vmin) / (fs.vmax - fs.vmin), 0.0, 1.0)
    if cells is not None:
        out[~cells] = 0.0
    return (out[0] if squeeze else out), clamped


def save_preprocess_stats(stats: PreprocessStats, path: str) -> None:
    doc = {
        "features": [
            {"name": n, "log": fs.log_flag, "min": fs.vmin, "max": fs.vmax}
            for n, fs in zip(stats.feature_names, stats.per_feature)
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_preprocess_stats(path: str) -> PreprocessStats:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    feats = doc.get("features")
    if not isinstance(feats, list):
        raise ParseError(f"{path}: missing 'features' list")
    names = tuple(f["name"] for f in feats)
    per = tuple(FeatureStats(bool(f["log"]), float(f["min"]), float(f["max"])) for f in feats)
    return PreprocessStats(names, per)
