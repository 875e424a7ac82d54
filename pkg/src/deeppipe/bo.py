"""Bayesian optimization over a discrete pipeline pool.

Expected Improvement for accuracy maximization, greedy rank-based
initialization, and the BO outer loop with per-iteration kernel fine-tuning.
Candidates with no table entry for the current task are dropped from the pool
with a logged skip. Baselines: uniform random search and a GP on the raw
preprocessed features.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from . import gp
from .embed import EmbeddingNetwork, forward
from .errors import ValidationError
from .training import fine_tune

logger = logging.getLogger(__name__)

MODES = ("deeppipe", "raw_gp", "random")
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def expected_improvement(mean, variance, y_best) -> np.ndarray | float:
    """EI for maximization; exact max(mean - y_best, 0) when variance is zero."""
    mean = np.asarray(mean, dtype=float)
    variance = np.asarray(variance, dtype=float)
    if np.any(variance < 0):
        raise ValidationError("variance must be nonnegative")
    sigma = np.sqrt(variance)
    improv = mean - y_best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, improv / np.where(sigma > 0, sigma, 1.0), 0.0)
    dense = sigma * (z * ndtr(z) + INV_SQRT_2PI * np.exp(-0.5 * z * z))
    out = np.where(sigma > 0, dense, np.maximum(improv, 0.0))
    return float(out) if out.ndim == 0 else out


def greedy_initialization(train_matrix: np.ndarray, n_initial: int) -> list[int]:
    """Pick pipeline column indices by average rank, then greedy rank cover.

    ``train_matrix`` holds accuracies of meta-training tasks (rows) for the
    candidate pipelines (columns); NaN marks missing evaluations. The first
    pick has the best average rank; each next pick minimizes the sum over
    tasks of the best rank among selected pipelines. Ties break toward the
    lowest column index.
    """
    matrix = np.asarray(train_matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] < 1:
        raise ValidationError("train_matrix must be a non-empty 2-D array")
    n_tasks, n_pipes = matrix.shape
    if n_initial < 1 or n_initial > n_pipes:
        raise ValidationError(
            f"cannot pick {n_initial} of {n_pipes} pipelines"
        )
    ranks = np.full_like(matrix, np.nan)
    worst = np.zeros(n_tasks)
    for t in range(n_tasks):
        present = ~np.isnan(matrix[t])
        if present.any():
            ranks[t, present] = rankdata(-matrix[t, present], method="average")
            worst[t] = present.sum() + 1.0
    # a task none of the selected pipelines covers contributes one worse than
    # its worst rank; never-evaluated pipelines rank last overall
    present = ~np.isnan(ranks)
    counts = present.sum(axis=0)
    sums = np.where(present, ranks, 0.0).sum(axis=0)
    avg_rank = np.where(counts > 0, sums / np.maximum(counts, 1), np.inf)

    selected = [int(np.argmin(avg_rank))]
    current = np.where(np.isnan(ranks[:, selected[0]]), worst, ranks[:, selected[0]])
    while len(selected) < n_initial:
        best_score = np.inf
        best_col = -1
        for p in range(n_pipes):
            if p in selected:
                continue
            cand = np.where(np.isnan(ranks[:, p]), worst, ranks[:, p])
            score = float(np.minimum(current, cand).sum())
            if score < best_score - 1e-12:
                best_score = score
                best_col = p
        selected.append(best_col)
        cand = np.where(np.isnan(ranks[:, best_col]), worst, ranks[:, best_col])
        current = np.minimum(current, cand)
    return selected


@dataclass
class CandidatePool:
    """Scored candidates: ids, preprocessed features, active-algorithm masks."""

    pipeline_ids: np.ndarray  # (n,)
    features: np.ndarray  # (n, width), preprocessed
    active: np.ndarray  # (n, n_stages)

    def __post_init__(self):
        if len(set(self.pipeline_ids.tolist())) != len(self.pipeline_ids):
            raise ValidationError("pool ids must be unique")

    def __len__(self) -> int:
        return len(self.pipeline_ids)


@dataclass(frozen=True)
class BOConfig:
    mode: str = "deeppipe"
    n_initial: int = 5
    n_iterations: int = 95
    fine_tune_steps: int = 100
    fine_tune_lr: float = 1e-3
    fine_tune_mode: str = "kernel_only"
    reset_params_each_iteration: bool = False
    budget: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if self.n_initial < 1 or self.n_iterations < 0:
            raise ValidationError("n_initial must be >= 1 and n_iterations >= 0")


@dataclass
class BOHistory:
    entries: list[tuple[int, float, float]] = field(default_factory=list)  # (id, y, cum_cost)
    skipped: list[int] = field(default_factory=list)

    @property
    def incumbents(self) -> list[float]:
        trace = []
        best = -math.inf
        for _pid, y, _c in self.entries:
            best = max(best, y)
            trace.append(best)
        return trace

    @property
    def observed_ids(self) -> list[int]:
        return [pid for pid, _y, _c in self.entries]


def bo_run(
    cfg: BOConfig,
    pool: CandidatePool,
    oracle: Callable[[int], tuple[float | None, float]],
    initial_ids: Sequence[int],
    net: EmbeddingNetwork | None = None,
    params: gp.KernelParams | None = None,
) -> BOHistory:
    """Run one BO trajectory on a task.

    ``oracle(pipeline_id)`` returns (accuracy, cost); a missing accuracy
    removes the candidate from the pool with a logged skip. All modes observe
    the shared ``initial_ids`` first. Stops after ``n_iterations`` further
    observations, when the pool is exhausted, or once cumulative cost exceeds
    the budget.
    """
    if cfg.mode == "deeppipe" and (net is None or params is None):
        raise ValidationError("deeppipe mode needs an embedding network and kernel params")
    if cfg.mode == "raw_gp" and params is None:
        params = gp.KernelParams()
    if cfg.budget is None and len(pool) < cfg.n_initial + 1:
        raise ValidationError(
            f"pool of {len(pool)} leaves nothing to optimize after "
            f"{cfg.n_initial} initial observations"
        )

    id_list = pool.pipeline_ids.tolist()
    index_of = {pid: k for k, pid in enumerate(id_list)}
    available = set(id_list)
    history = BOHistory()
    cum_cost = 0.0

    def observe(pid: int) -> bool:
        nonlocal cum_cost
        value, cost = oracle(pid)
        available.discard(pid)
        if value is None:
            history.skipped.append(pid)
            logger.info("skipping pipeline %s: no evaluation for this task", pid)
            return False
        cum_cost += cost
        history.entries.append((pid, float(value), cum_cost))
        return True

    for pid in initial_ids:
        if cfg.budget is not None and cum_cost > cfg.budget:
            return history
        if pid in available:
            observe(pid)

    rng = np.random.default_rng(cfg.seed)
    run_params = params
    run_net = net

    pool_embeddings: np.ndarray | None = None
    if cfg.mode == "deeppipe" and cfg.fine_tune_mode == "kernel_only":
        pool_embeddings, _ = forward(run_net, pool.features, pool.active)
    elif cfg.mode == "raw_gp":
        pool_embeddings = pool.features

    iterations = 0
    while iterations < cfg.n_iterations and available:
        if cfg.budget is not None and cum_cost > cfg.budget:
            break
        if not history.entries:
            raise ValidationError("no observable initial configurations")

        if cfg.mode == "random":
            order = sorted(available)
            pid = order[int(rng.integers(len(order)))]
            if observe(pid):
                iterations += 1
            continue

        obs_idx = np.array([index_of[pid] for pid in history.observed_ids])
        ys = np.array([y for _pid, y, _c in history.entries])
        y_std, y_mean, y_scale = gp.standardize_targets(ys)

        if cfg.reset_params_each_iteration:
            run_params = params

        if cfg.mode == "deeppipe":
            run_params, _ = fine_tune(
                run_net, run_params, pool.features[obs_idx], pool.active[obs_idx],
                y_std, steps=cfg.fine_tune_steps, learning_rate=cfg.fine_tune_lr,
                mode=cfg.fine_tune_mode,
            )
            if cfg.fine_tune_mode != "kernel_only":
                pool_embeddings, _ = forward(run_net, pool.features, pool.active)
            hist_feat = pool_embeddings[obs_idx]
        else:  # raw_gp: kernel fine-tuning on the raw feature vectors
            hist_feat = pool_embeddings[obs_idx]
            run_params = _tune_kernel_only(hist_feat, y_std, run_params, cfg)

        state = gp.fit(hist_feat, y_std, run_params)
        cand_ids = sorted(available)
        cand_idx = np.array([index_of[pid] for pid in cand_ids])
        mean_std, var_std = gp.predict_batch(state, pool_embeddings[cand_idx])
        mean = mean_std * y_scale + y_mean
        var = var_std * y_scale**2
        scores = expected_improvement(mean, var, max(ys))
        pid = cand_ids[int(np.argmax(scores))]  # argmax ties -> lowest id
        if observe(pid):
            iterations += 1
    return history


def _tune_kernel_only(x, y_std, params, cfg: BOConfig):
    from .training import AdamState, adam_step

    dist = gp.symmetric_distances(np.atleast_2d(x))
    vec = params.to_array()
    adam = AdamState.for_size(3)
    for _ in range(cfg.fine_tune_steps):
        _loss, draw, _dx = gp._nll_grad_from_distances(
            dist, y_std, gp.KernelParams.from_array(vec)
        )
        vec = adam_step(vec, draw, adam, cfg.fine_tune_lr)
    return gp.KernelParams.from_array(vec)


def rank_and_regret(
    incumbent_traces: dict[str, dict[tuple, list[float]]],
    y_max: dict[object, float],
) -> tuple[dict[str, list[float]], dict[str, list[float]]]:
    """Per-iteration average rank across methods and mean regret per method.

    ``incumbent_traces[method][(task, seed)]`` is the incumbent accuracy per
    iteration; all methods must cover the identical (task, seed) grid with
    equal-length traces. Ranks average ties; regret is y_max - incumbent.
    """
    methods = sorted(incumbent_traces)
    if not methods:
        raise ValidationError("no methods to compare")
    grid = sorted(incumbent_traces[methods[0]])
    length = None
    for m in methods:
        if sorted(incumbent_traces[m]) != grid:
            raise ValidationError(f"method {m!r} covers a different (task, seed) grid")
        for key, trace in incumbent_traces[m].items():
            if length is None:
                length = len(trace)
            if len(trace) != length:
                raise ValidationError(f"ragged incumbent trace for {m!r} at {key}")

    ranks = {m: np.zeros(length) for m in methods}
    regrets = {m: np.zeros(length) for m in methods}
    for key in grid:
        task = key[0]
        traces = np.array([incumbent_traces[m][key] for m in methods])
        for it in range(length):
            r = rankdata(-traces[:, it], method="average")
            for mi, m in enumerate(methods):
                ranks[m][it] += r[mi]
                regrets[m][it] += y_max[task] - traces[mi, it]
    n = len(grid)
    return (
        {m: (ranks[m] / n).tolist() for m in methods},
        {m: (regrets[m] / n).tolist() for m in methods},
    )
