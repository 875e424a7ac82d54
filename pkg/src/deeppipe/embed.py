"""Modular pipeline embedding network.

Per-algorithm MLP encoders feed a selector/concatenation layer followed by an
aggregation MLP that emits the final embedding. Algorithms may share an
encoder via the schema's ``encoder_group`` tag; a zero-encoder-layer network
degenerates to a plain MLP on the full flattened input. Forward and backward
passes are hand-rolled dense+ReLU reverse mode so gradients can flow from the
GP marginal-likelihood loss into every weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NumericalError, ValidationError
from .search_space import AlgorithmSpec, SearchSpace, space_from_document

PAPER_WIDTH_FACTORS = (4, 6, 8, 10)
PAPER_TOTAL_LAYERS = 4

AGGREGATION_KEY = ("aggr",)


@dataclass(frozen=True)
class ArchitectureSpec:
    """Sizing of the embedding network.

    ``width_factor`` scales every hidden width; encoder layers output
    width_factor * max_slots of their stage, aggregation layers are
    width_factor * sum(max_slots) wide except the final one, which emits the
    embedding. The one-hot of the selected algorithms can be appended to the
    aggregation input.
    """

    width_factor: int
    encoder_layers: int
    aggregation_layers: int
    embedding_dim: int = 20
    append_one_hot: bool = True
    init: str = "scaled_uniform"

    def __post_init__(self):
        if self.width_factor < 1:
            raise ValidationError("width_factor must be >= 1")
        if self.encoder_layers not in (0, 1, 2):
            raise ValidationError("encoder_layers must be 0, 1 or 2")
        if self.aggregation_layers < 0:
            raise ValidationError("aggregation_layers must be >= 0")
        if self.encoder_layers + self.aggregation_layers < 1:
            raise ValidationError("need at least one layer in total")
        if self.embedding_dim < 1:
            raise ValidationError("embedding_dim must be >= 1")
        if self.init not in ("scaled_uniform", "standard_normal"):
            raise ValidationError(f"unknown init scheme {self.init!r}")

    def check_paper_faithful(self) -> None:
        if self.width_factor not in PAPER_WIDTH_FACTORS:
            raise ValidationError(
                f"width_factor {self.width_factor} not in {PAPER_WIDTH_FACTORS}"
            )
        if self.encoder_layers + self.aggregation_layers != PAPER_TOTAL_LAYERS:
            raise ValidationError(
                f"encoder_layers + aggregation_layers must equal {PAPER_TOTAL_LAYERS}"
            )


class _Layers:
    """A stack of dense layers stored as (weights, biases) pairs."""

    __slots__ = ("weights", "biases")

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    def __len__(self) -> int:
        return len(self.weights)


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int, scheme: str):
    if scheme == "scaled_uniform":
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
    else:
        w = rng.standard_normal((fan_in, fan_out))
        b = rng.standard_normal(fan_out)
    return w, b


class EmbeddingNetwork:
    """Weights plus layout; construct via :func:`build_network`."""

    def __init__(self, space: SearchSpace, arch: ArchitectureSpec, seed: int):
        self.space = space
        self.arch = arch
        self.seed = seed
        self.stage_widths = tuple(
            arch.width_factor * L for L in space.max_slots_per_stage
        )
        self.encoder_concat_width = sum(self.stage_widths)
        self.one_hot_width = sum(space.algorithms_per_stage) if arch.append_one_hot else 0
        if arch.encoder_layers == 0:
            self.aggregation_input_width = space.total_width + self.one_hot_width
        else:
            self.aggregation_input_width = self.encoder_concat_width + self.one_hot_width
        self.units: list[list[_Layers]] = [[] for _ in space.stages]
        self.aggregation = _Layers([], [])
        self.trainable: dict[tuple, bool] = {}

    # -- construction helpers -------------------------------------------------

    def _unit_layer_sizes(self, stage: int, unit: int) -> list[tuple[int, int]]:
        fan_in = len(self.space.encoder_units[stage][unit].slot_indices)
        width = self.stage_widths[stage]
        sizes = []
        for k in range(self.arch.encoder_layers):
            sizes.append((fan_in if k == 0 else width, width))
        return sizes

    def _aggregation_layer_sizes(self) -> list[tuple[int, int]]:
        n = self.arch.aggregation_layers
        if n == 0:
            if self.aggregation_input_width != self.arch.embedding_dim:
                raise ValidationError(
                    "with no aggregation layers the embedding_dim must equal "
                    f"the concatenated width {self.aggregation_input_width}"
                )
            return []
        hidden = self.encoder_concat_width
        sizes = []
        prev = self.aggregation_input_width
        for k in range(n):
            out = self.arch.embedding_dim if k == n - 1 else hidden
            sizes.append((prev, out))
            prev = out
        return sizes

    def _initialize(self, rng: np.random.Generator) -> None:
        for i in range(self.space.n_stages):
            for u in range(len(self.space.encoder_units[i])):
                ws, bs = [], []
                for fan_in, fan_out in self._unit_layer_sizes(i, u):
                    w, b = _init_layer(rng, fan_in, fan_out, self.arch.init)
                    ws.append(w)
                    bs.append(b)
                self.units[i].append(_Layers(ws, bs))
                self.trainable[("enc", i, u)] = True
        ws, bs = [], []
        for fan_in, fan_out in self._aggregation_layer_sizes():
            w, b = _init_layer(rng, fan_in, fan_out, self.arch.init)
            ws.append(w)
            bs.append(b)
        self.aggregation = _Layers(ws, bs)
        self.trainable[AGGREGATION_KEY] = True

    # -- parameter bookkeeping -------------------------------------------------

    def group_keys(self) -> list[tuple]:
        keys: list[tuple] = []
        for i in range(self.space.n_stages):
            for u in range(len(self.units[i])):
                keys.append(("enc", i, u))
        keys.append(AGGREGATION_KEY)
        return keys

    def group_arrays(self, key: tuple) -> _Layers:
        if key == AGGREGATION_KEY:
            return self.aggregation
        _, i, u = key
        return self.units[i][u]

    def group_key_for_algorithm(self, stage: int, algorithm: int) -> tuple:
        return ("enc", stage, self.space.unit_of_algorithm[stage][algorithm])

    def group_slices(self) -> dict[tuple, slice]:
        slices = {}
        offset = 0
        for key in self.group_keys():
            layers = self.group_arrays(key)
            size = sum(w.size + b.size for w, b in zip(layers.weights, layers.biases))
            slices[key] = slice(offset, offset + size)
            offset += size
        return slices

    @property
    def n_parameters(self) -> int:
        return sum(
            w.size + b.size
            for key in self.group_keys()
            for w, b in zip(self.group_arrays(key).weights, self.group_arrays(key).biases)
        )

    def get_vector(self) -> np.ndarray:
        parts = []
        for key in self.group_keys():
            layers = self.group_arrays(key)
            for w, b in zip(layers.weights, layers.biases):
                parts.append(w.ravel())
                parts.append(b)
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_vector(self, vec: np.ndarray) -> None:
        if vec.shape != (self.n_parameters,):
            raise ValidationError("parameter vector length mismatch")
        pos = 0
        for key in self.group_keys():
            layers = self.group_arrays(key)
            for w, b in zip(layers.weights, layers.biases):
                w[...] = vec[pos : pos + w.size].reshape(w.shape)
                pos += w.size
                b[...] = vec[pos : pos + b.size]
                pos += b.size

    def trainable_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_parameters, dtype=bool)
        for key, sl in self.group_slices().items():
            mask[sl] = self.trainable[key]
        return mask

    def clone(self) -> "EmbeddingNetwork":
        other = EmbeddingNetwork(self.space, self.arch, self.seed)
        for i in range(self.space.n_stages):
            for layers in self.units[i]:
                other.units[i].append(
                    _Layers([w.copy() for w in layers.weights], [b.copy() for b in layers.biases])
                )
        other.aggregation = _Layers(
            [w.copy() for w in self.aggregation.weights],
            [b.copy() for b in self.aggregation.biases],
        )
        other.trainable = dict(self.trainable)
        return other

    def one_hot_offsets(self) -> list[int]:
        offsets = []
        pos = 0
        for m in self.space.algorithms_per_stage:
            offsets.append(pos)
            pos += m
        return offsets


def build_network(space: SearchSpace, arch: ArchitectureSpec, seed: int) -> EmbeddingNetwork:
    net = EmbeddingNetwork(space, arch, seed)
    net._initialize(np.random.default_rng(seed))
    return net


@dataclass
class ForwardCache:
    features: np.ndarray
    active: np.ndarray
    unit_rows: dict[tuple, np.ndarray]
    unit_io: dict[tuple, list[tuple[np.ndarray, np.ndarray]]]
    aggregation_io: list[tuple[np.ndarray, np.ndarray]]
    embedding: np.ndarray


def _as_batch(
    space: SearchSpace, features: np.ndarray, active: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=float)
    active = np.asarray(active, dtype=int)
    if features.ndim == 1:
        features = features[None, :]
    if active.ndim == 1:
        active = active[None, :]
    if features.shape[1] != space.total_width:
        raise ValidationError(
            f"feature width {features.shape[1]} != space width {space.total_width}"
        )
    if active.shape != (features.shape[0], space.n_stages):
        raise ValidationError("active mask shape does not match the batch")
    return features, active


def _one_hot_block(net: EmbeddingNetwork, active: np.ndarray) -> np.ndarray:
    n = active.shape[0]
    block = np.zeros((n, net.one_hot_width))
    for i, off in enumerate(net.one_hot_offsets()):
        block[np.arange(n), off + active[:, i]] = 1.0
    return block


def forward(
    net: EmbeddingNetwork, features: np.ndarray, active: np.ndarray
) -> tuple[np.ndarray, ForwardCache]:
    """Embed a batch; returns (n, embedding_dim) plus the cache for backward.

    ``active`` holds the 0-based active algorithm index per stage and row.
    """
    space = net.space
    features, active = _as_batch(space, features, active)
    if not np.all(np.isfinite(features)):
        raise ValidationError("non-finite values in input features")
    n = features.shape[0]

    unit_rows: dict[tuple, np.ndarray] = {}
    unit_io: dict[tuple, list[tuple[np.ndarray, np.ndarray]]] = {}

    if net.arch.encoder_layers == 0:
        concat = features
    else:
        segments = []
        for i in range(space.n_stages):
            seg = np.zeros((n, net.stage_widths[i]))
            active_units = np.asarray(space.unit_of_algorithm[i])[active[:, i]]
            for u, unit in enumerate(space.encoder_units[i]):
                rows = np.nonzero(active_units == u)[0]
                if rows.size == 0:
                    continue
                layers = net.units[i][u]
                h = features[np.ix_(rows, np.asarray(unit.slot_indices))]
                io = []
                for w, b in zip(layers.weights, layers.biases):
                    z = h @ w + b
                    io.append((h, z))
                    h = np.maximum(z, 0.0)
                seg[rows] = h
                unit_rows[("enc", i, u)] = rows
                unit_io[("enc", i, u)] = io
            segments.append(seg)
        concat = np.concatenate(segments, axis=1)

    if net.arch.append_one_hot:
        concat = np.concatenate([concat, _one_hot_block(net, active)], axis=1)

    aggregation_io = []
    h = concat
    n_agg = len(net.aggregation)
    for k, (w, b) in enumerate(zip(net.aggregation.weights, net.aggregation.biases)):
        z = h @ w + b
        aggregation_io.append((h, z))
        h = z if k == n_agg - 1 else np.maximum(z, 0.0)
    emb = h

    if not np.all(np.isfinite(emb)):
        for k, (_x, z) in enumerate(aggregation_io):
            if not np.all(np.isfinite(z)):
                raise NumericalError(f"non-finite output at aggregation layer {k}")
        for key, io in unit_io.items():
            for k, (_x, z) in enumerate(io):
                if not np.all(np.isfinite(z)):
                    raise NumericalError(f"non-finite output at encoder {key} layer {k}")
        raise NumericalError("non-finite embedding")

    cache = ForwardCache(features, active, unit_rows, unit_io, aggregation_io, emb)
    return emb, cache


class GradientBundle:
    """Per-group gradients aligned with the network's parameter layout."""

    def __init__(self, net: EmbeddingNetwork, by_group: dict[tuple, list[tuple[np.ndarray, np.ndarray]]]):
        self._slices = net.group_slices()
        self._keys = net.group_keys()
        self.by_group = by_group
        self._n = net.n_parameters
        self._algo_to_unit = net.space.unit_of_algorithm

    def to_vector(self) -> np.ndarray:
        vec = np.zeros(self._n)
        for key in self._keys:
            parts = []
            for dw, db in self.by_group[key]:
                parts.append(dw.ravel())
                parts.append(db)
            if parts:
                vec[self._slices[key]] = np.concatenate(parts)
        return vec

    def group_slice(self, key: tuple) -> slice:
        return self._slices[key]

    def encoder_slice(self, stage: int, algorithm: int) -> slice:
        return self._slices[("enc", stage, self._algo_to_unit[stage][algorithm])]

    @property
    def aggregation_slice(self) -> slice:
        return self._slices[AGGREGATION_KEY]


def backward(
    net: EmbeddingNetwork, cache: ForwardCache, upstream: np.ndarray
) -> GradientBundle:
    """Reverse pass for a preceding :func:`forward` call on the same batch.

    Frozen groups come back as zeros; encoders inactive for every row in the
    batch receive zero gradient.
    """
    upstream = np.asarray(upstream, dtype=float)
    n = cache.features.shape[0]
    if upstream.shape != (n, net.arch.embedding_dim):
        raise ValidationError(
            f"upstream shape {upstream.shape} does not match forward batch "
            f"({n}, {net.arch.embedding_dim})"
        )

    by_group: dict[tuple, list[tuple[np.ndarray, np.ndarray]]] = {}

    g = upstream
    agg_grads: list[tuple[np.ndarray, np.ndarray]] = []
    n_agg = len(net.aggregation)
    for k in range(n_agg - 1, -1, -1):
        x, z = cache.aggregation_io[k]
        gz = g if k == n_agg - 1 else g * (z > 0.0)
        agg_grads.append((x.T @ gz, gz.sum(axis=0)))
        g = gz @ net.aggregation.weights[k].T
    agg_grads.reverse()
    by_group[AGGREGATION_KEY] = agg_grads

    if net.arch.encoder_layers > 0:
        if net.arch.append_one_hot:
            g = g[:, : net.encoder_concat_width]
        seg_offset = 0
        for i in range(net.space.n_stages):
            width = net.stage_widths[i]
            dseg = g[:, seg_offset : seg_offset + width]
            seg_offset += width
            for u in range(len(net.units[i])):
                key = ("enc", i, u)
                layers = net.units[i][u]
                if key not in cache.unit_io:
                    by_group[key] = [
                        (np.zeros_like(w), np.zeros_like(b))
                        for w, b in zip(layers.weights, layers.biases)
                    ]
                    continue
                rows = cache.unit_rows[key]
                io = cache.unit_io[key]
                gu = dseg[rows]
                grads: list[tuple[np.ndarray, np.ndarray]] = []
                for k in range(len(layers) - 1, -1, -1):
                    x, z = io[k]
                    gz = gu * (z > 0.0)
                    grads.append((x.T @ gz, gz.sum(axis=0)))
                    gu = gz @ layers.weights[k].T
                grads.reverse()
                by_group[key] = grads

    for key in net.group_keys():
        if key not in by_group:
            layers = net.group_arrays(key)
            by_group[key] = [
                (np.zeros_like(w), np.zeros_like(b))
                for w, b in zip(layers.weights, layers.biases)
            ]
        elif not net.trainable[key]:
            by_group[key] = [
                (np.zeros_like(dw), np.zeros_like(db)) for dw, db in by_group[key]
            ]
    return GradientBundle(net, by_group)


def parameter_count(net: EmbeddingNetwork) -> tuple[int, int]:
    """(weights, biases) over all encoder and aggregation layers."""
    weights = 0
    biases = 0
    for key in net.group_keys():
        layers = net.group_arrays(key)
        weights += sum(w.size for w in layers.weights)
        biases += sum(b.size for b in layers.biases)
    return weights, biases


def closed_form_weight_count(
    space: SearchSpace, width_factor: int, encoder_layers: int, aggregation_layers: int
) -> int:
    """Closed-form weight count for a network sized like the fixtures.

    Matches :func:`parameter_count` when the embedding dim equals
    width_factor * sum(max_slots) and the one-hot append is off.
    """
    f = width_factor
    sum_l = sum(space.max_slots_per_stage)
    if encoder_layers == 0:
        return space.total_width * f * sum_l + (aggregation_layers - 1) * (f * sum_l) ** 2
    first = sum(
        sum(space.slot_counts[i]) * f * space.max_slots_per_stage[i]
        for i in range(space.n_stages)
    )
    deeper = sum(
        len(space.encoder_units[i]) * (f * space.max_slots_per_stage[i]) ** 2
        for i in range(space.n_stages)
    )
    return first + (encoder_layers - 1) * deeper + aggregation_layers * (f * sum_l) ** 2


def set_trainable(net: EmbeddingNetwork, selector) -> None:
    """Selectors: "all", "kernel_only", "aggregation", ("encoder", stage, algorithm)."""
    if selector == "all":
        for key in net.group_keys():
            net.trainable[key] = True
    elif selector == "kernel_only":
        for key in net.group_keys():
            net.trainable[key] = False
    elif selector == "aggregation":
        for key in net.group_keys():
            net.trainable[key] = key == AGGREGATION_KEY
    elif (
        isinstance(selector, tuple)
        and len(selector) == 3
        and selector[0] == "encoder"
    ):
        _, stage, algorithm = selector
        if not 0 <= stage < net.space.n_stages:
            raise ValidationError(f"no stage {stage}")
        if not 0 <= algorithm < net.space.algorithms_per_stage[stage]:
            raise ValidationError(f"no algorithm {algorithm} in stage {stage}")
        target = net.group_key_for_algorithm(stage, algorithm)
        for key in net.group_keys():
            net.trainable[key] = key == target
    else:
        raise ValidationError(f"unknown trainable selector {selector!r}")


def add_algorithm_encoder(
    net: EmbeddingNetwork, stage: int, algo: AlgorithmSpec, seed: int
) -> EmbeddingNetwork:
    """Extend the space with a new algorithm and give it a fresh encoder.

    Existing weights are preserved bit-exact and frozen; only the new encoder
    stays trainable. The stage width is fixed, so the new algorithm must fit
    within the stage's existing slot maximum.
    """
    if net.arch.encoder_layers == 0:
        raise ValidationError(
            "network has no encoder layers; extend by full fine-tuning instead"
        )
    if not 0 <= stage < net.space.n_stages:
        raise ValidationError(f"no stage {stage}")
    if algo.encoder_group is not None:
        raise ValidationError("a newly added algorithm cannot join an encoder group")
    if algo.n_slots > net.space.max_slots_per_stage[stage]:
        raise ValidationError(
            f"new algorithm needs {algo.n_slots} slots but stage width is fixed at "
            f"{net.space.max_slots_per_stage[stage]}"
        )
    doc = net.space.to_document()
    entry: dict = {
        "name": algo.name,
        "hyperparameters": [
            {
                "name": hp.name,
                "kind": hp.kind,
                **(
                    {"categories": list(hp.categories)}
                    if hp.kind == "categorical"
                    else {"lower": hp.lower, "upper": hp.upper}
                ),
            }
            for hp in algo.hyperparameters
        ],
    }
    doc["stages"][stage]["algorithms"].append(entry)
    new_space = space_from_document(doc)

    new_net = EmbeddingNetwork(new_space, net.arch, net.seed)
    rng = np.random.default_rng(seed)
    for i in range(new_space.n_stages):
        for u, unit in enumerate(new_space.encoder_units[i]):
            if i == stage and u == len(new_space.encoder_units[i]) - 1:
                ws, bs = [], []
                for fan_in, fan_out in new_net._unit_layer_sizes(i, u):
                    w, b = _init_layer(rng, fan_in, fan_out, net.arch.init)
                    ws.append(w)
                    bs.append(b)
                new_net.units[i].append(_Layers(ws, bs))
                new_net.trainable[("enc", i, u)] = True
            else:
                old = net.units[i][u]
                new_net.units[i].append(
                    _Layers([w.copy() for w in old.weights], [b.copy() for b in old.biases])
                )
                new_net.trainable[("enc", i, u)] = False

    agg_w = [w.copy() for w in net.aggregation.weights]
    agg_b = [b.copy() for b in net.aggregation.biases]
    if net.arch.append_one_hot and agg_w:
        # the new algorithm appends a one-hot column; give it a zero weight row
        # so every pre-existing input keeps its exact contribution
        insert_at = new_net.encoder_concat_width
        for i in range(stage + 1):
            insert_at += new_space.algorithms_per_stage[i]
        insert_at -= 1
        agg_w[0] = np.insert(agg_w[0], insert_at, 0.0, axis=0)
    new_net.aggregation = _Layers(agg_w, agg_b)
    new_net.trainable[AGGREGATION_KEY] = False
    return new_net


# -- checkpointing --------------------------------------------------------------


def save_checkpoint(path: str, net: EmbeddingNetwork, kernel_raw: Sequence[float], extra: dict | None = None) -> None:
    doc = {
        "architecture": {
            "width_factor": net.arch.width_factor,
            "encoder_layers": net.arch.encoder_layers,
            "aggregation_layers": net.arch.aggregation_layers,
            "embedding_dim": net.arch.embedding_dim,
            "append_one_hot": net.arch.append_one_hot,
            "init": net.arch.init,
        },
        "space": net.space.to_document(),
        "space_fingerprint": net.space.fingerprint(),
        "seed": net.seed,
        "kernel": {
            "raw_lengthscale": float(kernel_raw[0]),
            "raw_outputscale": float(kernel_raw[1]),
            "raw_noise": float(kernel_raw[2]),
        },
        "groups": [],
        "extra": extra or {},
    }
    for key in net.group_keys():
        layers = net.group_arrays(key)
        doc["groups"].append(
            {
                "key": list(key),
                "trainable": bool(net.trainable[key]),
                "layers": [
                    {"weights": w.tolist(), "biases": b.tolist()}
                    for w, b in zip(layers.weights, layers.biases)
                ],
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path: str, space: SearchSpace | None = None):
    """Returns (net, kernel_raw, extra); verifies the space fingerprint."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    ckpt_space = space_from_document(doc["space"])
    if space is not None and space.fingerprint() != doc["space_fingerprint"]:
        raise ValidationError(
            "checkpoint was trained on a different search space "
            f"(fingerprint {doc['space_fingerprint'][:12]}... != {space.fingerprint()[:12]}...)"
        )
    target_space = space if space is not None else ckpt_space
    arch = ArchitectureSpec(**doc["architecture"])
    net = EmbeddingNetwork(target_space, arch, doc["seed"])
    groups = {tuple(g["key"]): g for g in doc["groups"]}
    for i in range(target_space.n_stages):
        for u in range(len(target_space.encoder_units[i])):
            g = groups[("enc", i, u)]
            net.units[i].append(
                _Layers(
                    [np.asarray(l["weights"], dtype=float) for l in g["layers"]],
                    [np.asarray(l["biases"], dtype=float) for l in g["layers"]],
                )
            )
            net.trainable[("enc", i, u)] = bool(g["trainable"])
    g = groups[("aggr",)]
    net.aggregation = _Layers(
        [np.asarray(l["weights"], dtype=float) for l in g["layers"]],
        [np.asarray(l["biases"], dtype=float) for l in g["layers"]],
    )
    net.trainable[AGGREGATION_KEY] = bool(g["trainable"])
    kernel = doc["kernel"]
    raw = np.array([kernel["raw_lengthscale"], kernel["raw_outputscale"], kernel["raw_noise"]])
    return net, raw, doc.get("extra", {})
