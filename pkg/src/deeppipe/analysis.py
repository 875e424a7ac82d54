"""Inductive-bias toolkit.

The cluster metric estimates how often two pipelines sharing an algorithm in
a chosen stage embed closer together than a cross-algorithm pair. The
Monte-Carlo verifiers check the closed forms for iid random linear maps:
expected squared norms, expected squared outputs, and the shared-vs-
independent weight distance ordering that explains why encoder layers pull
same-algorithm configurations together.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import search_space as ss
from .embed import EmbeddingNetwork, forward
from .errors import ValidationError

_CHUNK = 200_000


@dataclass(frozen=True)
class TripleSampleSpec:
    n_triples: int = 2000
    seed: int = 0
    stage_of_interest: int = -1  # default: the last stage

    def __post_init__(self):
        if self.n_triples < 1:
            raise ValidationError("n_triples must be >= 1")


def cluster_metric(
    embeddings: np.ndarray, labels: np.ndarray, spec: TripleSampleSpec
) -> float:
    """P(same-label pair closer than cross-label pair), over uniform triples.

    Triples (l, m, n) are uniform over l != m with label(l) == label(m) and
    label(n) != label(l); the estimate is the fraction with
    ||e_l - e_m|| < ||e_m - e_n||.
    """
    embeddings = np.asarray(embeddings, dtype=float)
    labels = np.asarray(labels)
    n = embeddings.shape[0]
    if labels.shape != (n,):
        raise ValidationError("labels must align with the embedding rows")
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2:
        raise ValidationError("cluster metric needs at least 2 distinct labels")
    if counts.min() < 2:
        raise ValidationError("cluster metric needs at least 2 points per label")

    rng = np.random.default_rng(spec.seed)
    hits = 0
    remaining = spec.n_triples
    while remaining > 0:
        m = min(4 * remaining + 64, _CHUNK)
        l_idx = rng.integers(n, size=m)
        m_idx = rng.integers(n, size=m)
        n_idx = rng.integers(n, size=m)
        valid = (
            (l_idx != m_idx)
            & (labels[l_idx] == labels[m_idx])
            & (labels[n_idx] != labels[l_idx])
        )
        l_idx, m_idx, n_idx = l_idx[valid], m_idx[valid], n_idx[valid]
        take = min(remaining, l_idx.size)
        if take == 0:
            continue
        l_idx, m_idx, n_idx = l_idx[:take], m_idx[:take], n_idx[:take]
        d_same = np.linalg.norm(embeddings[l_idx] - embeddings[m_idx], axis=1)
        d_cross = np.linalg.norm(embeddings[m_idx] - embeddings[n_idx], axis=1)
        hits += int(np.count_nonzero(d_same < d_cross))
        remaining -= take
    return hits / spec.n_triples


def network_cluster_metric(
    net: EmbeddingNetwork,
    features: np.ndarray,
    active: np.ndarray,
    spec: TripleSampleSpec,
) -> float:
    """Cluster metric of a network's embeddings, labeled by the active algorithm."""
    emb, _ = forward(net, features, active)
    stage = spec.stage_of_interest % net.space.n_stages
    return cluster_metric(emb, active[:, stage], spec)


# -- Monte-Carlo verifiers -------------------------------------------------------


def lemma1_closed(m: int, mu_w: float, sigma_w: float) -> float:
    """E ||w||^2 for m iid weights."""
    return m * (mu_w**2 + sigma_w**2)


def mc_lemma1(
    m: int, mu_w: float, sigma_w: float, n_samples: int, seed: int
) -> tuple[float, float]:
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    total = 0.0
    left = n_samples
    while left > 0:
        take = min(left, max(1, _CHUNK // max(m, 1)))
        w = rng.normal(mu_w, sigma_w, size=(take, m))
        total += float(np.sum(w * w))
        left -= take
    return total / n_samples, lemma1_closed(m, mu_w, sigma_w)


def cross_sum(x: np.ndarray) -> float:
    """Sum over i > j of x_i x_j."""
    x = np.asarray(x, dtype=float)
    return float((x.sum() ** 2 - np.sum(x * x)) / 2.0)


def lemma2_closed(x: np.ndarray, mu_w: float, sigma_w: float) -> float:
    """E (w^T x)^2 = (mu^2 + sigma^2) ||x||^2 + 2 mu^2 * sum_{i>j} x_i x_j."""
    x = np.asarray(x, dtype=float)
    return (mu_w**2 + sigma_w**2) * float(np.sum(x * x)) + 2.0 * mu_w**2 * cross_sum(x)


def mc_lemma2(
    x: np.ndarray, mu_w: float, sigma_w: float, n_samples: int, seed: int
) -> tuple[float, float]:
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(seed)
    total = 0.0
    left = n_samples
    while left > 0:
        take = min(left, max(1, _CHUNK // max(x.size, 1)))
        w = rng.normal(mu_w, sigma_w, size=(take, x.size))
        z = w @ x
        total += float(np.sum(z * z))
        left -= take
    return total / n_samples, lemma2_closed(x, mu_w, sigma_w)


def proposition3_closed(
    x_hat: np.ndarray, x_prime: np.ndarray, mu_w: float, sigma_w: float
) -> tuple[float, float]:
    """Closed forms of the independent-weights (lhs) and shared-weights (rhs)
    expected squared differences."""
    x_hat = np.asarray(x_hat, dtype=float)
    x_prime = np.asarray(x_prime, dtype=float)
    d = lemma2_closed(x_hat, mu_w, sigma_w) + lemma2_closed(x_prime, mu_w, sigma_w)
    pair = float(np.sum(x_hat) * np.sum(x_prime))
    lhs = d - 2.0 * mu_w**2 * pair
    rhs = d - 2.0 * (mu_w**2 + sigma_w**2) * float(x_hat @ x_prime) \
        - 2.0 * mu_w**2 * (pair - float(x_hat @ x_prime))
    return lhs, rhs


def mc_proposition3(
    x_hat: np.ndarray,
    x_prime: np.ndarray,
    mu_w: float,
    sigma_w: float,
    n_samples: int,
    seed: int,
) -> tuple[float, float]:
    """(lhs, rhs) Monte-Carlo estimates: independent weights vs shared weights.

    The shared-weights case needs matching dimensions.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    x_hat = np.asarray(x_hat, dtype=float)
    x_prime = np.asarray(x_prime, dtype=float)
    if x_hat.shape != x_prime.shape:
        raise ValidationError("shared-weight comparison needs equal dimensions")
    rng = np.random.default_rng(seed)
    lhs_total = 0.0
    rhs_total = 0.0
    left = n_samples
    while left > 0:
        take = min(left, max(1, _CHUNK // max(x_hat.size, 1)))
        w_hat = rng.normal(mu_w, sigma_w, size=(take, x_hat.size))
        w_prime = rng.normal(mu_w, sigma_w, size=(take, x_prime.size))
        diff_ind = w_hat @ x_hat - w_prime @ x_prime
        diff_shared = w_hat @ x_hat - w_hat @ x_prime
        lhs_total += float(np.sum(diff_ind * diff_ind))
        rhs_total += float(np.sum(diff_shared * diff_shared))
        left -= take
    return lhs_total / n_samples, rhs_total / n_samples


def export_embeddings(
    net: EmbeddingNetwork,
    configs: list[ss.PipelineConfiguration],
    out_path: str,
    stats: ss.PreprocessStats | None = None,
    pipeline_ids: list[int] | None = None,
) -> None:
    """CSV of pipeline_id, embedding columns, and active algorithm per stage."""
    space = net.space
    flat = [ss.flatten(space, c) for c in configs]
    features = np.stack([f for f, _m in flat])
    active = np.stack([m.active for _f, m in flat])
    if stats is not None:
        features = ss.preprocess_apply(stats, features, space, active)
    emb, _ = forward(net, features, active)
    ids = pipeline_ids if pipeline_ids is not None else list(range(len(configs)))
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["pipeline_id"]
            + [f"embedding_{k}" for k in range(emb.shape[1])]
            + [f"stage_{s.name}" for s in space.stages]
        )
        for row_id, e, a in zip(ids, emb, active):
            labels = [
                space.stages[i].algorithms[j].name for i, j in enumerate(a)
            ]
            writer.writerow([row_id, *[repr(float(v)) for v in e], *labels])
