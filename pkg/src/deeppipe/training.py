"""Optimizers and the two training procedures.

Meta-training iterates tasks in fixed split order, draws a seeded batch per
task, takes one Adam step on the GP marginal-likelihood loss per task per
epoch, and keeps the best-validation snapshot with patience-based early
convergence. Test-time fine-tuning runs a fixed number of gradient steps on
the current history, by default touching only the kernel parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import gp
from .embed import EmbeddingNetwork, backward, forward
from .errors import NumericalError, ValidationError

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class TrainingDivergedError(NumericalError):
    def __init__(self, epoch: int, task_id):
        super().__init__(f"non-finite loss at epoch {epoch}, task {task_id}")
        self.epoch = epoch
        self.task_id = task_id


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_size(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(
    values: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    learning_rate: float,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """One bias-corrected Adam update; entries outside ``mask`` stay bit-identical."""
    if values.shape != grads.shape or values.shape != state.m.shape:
        raise ValidationError("adam_step: parameter/gradient/state shapes differ")
    state.step += 1
    t = state.step
    if mask is None:
        mask = np.ones(values.shape, dtype=bool)
    g = grads[mask]
    state.m[mask] = BETA1 * state.m[mask] + (1.0 - BETA1) * g
    state.v[mask] = BETA2 * state.v[mask] + (1.0 - BETA2) * g * g
    m_hat = state.m[mask] / (1.0 - BETA1**t)
    v_hat = state.v[mask] / (1.0 - BETA2**t)
    out = values.copy()
    out[mask] = values[mask] - learning_rate * m_hat / (np.sqrt(v_hat) + EPS)
    return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10000
    batch_size: int = 1000
    learning_rate: float = 1e-4
    val_interval: int = 50
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.val_interval, self.patience) < 1:
            raise ValidationError("train config values must be positive")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")
        if self.patience > self.epochs:
            raise ValidationError("patience cannot exceed the epoch budget")


@dataclass
class TaskArrays:
    """Evaluated pipelines of one task, ready for the loss."""

    task_id: object
    features: np.ndarray  # preprocessed, (q, width)
    active: np.ndarray  # (q, n_stages)
    y: np.ndarray  # raw accuracies
    y_std: np.ndarray  # per-task standardized targets


def _mean_full_nll(
    net: EmbeddingNetwork, params: gp.KernelParams, tasks: list[TaskArrays]
) -> float:
    vals = []
    for task in tasks:
        emb, _ = forward(net, task.features, task.active)
        vals.append(gp.nll(emb, task.y_std, params))
    return float(np.mean(vals)) if vals else float("nan")


@dataclass
class MetaTrainResult:
    net: EmbeddingNetwork
    params: gp.KernelParams
    log: list[dict]
    best_epoch: int
    best_val_nll: float
    trained_epochs: int
    initial_train_nll: float
    final_train_nll: float


def meta_train(
    net: EmbeddingNetwork,
    params: gp.KernelParams,
    train_tasks: list[TaskArrays],
    val_tasks: list[TaskArrays],
    cfg: TrainConfig,
    start_epoch: int = 0,
) -> MetaTrainResult:
    """One Adam step per task per epoch on the marginal-likelihood loss."""
    if not train_tasks:
        raise ValidationError("meta-training needs at least one training task")
    for task in train_tasks:
        if len(task.y) < 2:
            raise ValidationError(
                f"task {task.task_id!r} has fewer than 2 evaluations"
            )

    n_net = net.n_parameters
    vec = np.concatenate([net.get_vector(), params.to_array()])
    mask = np.concatenate([net.trainable_mask(), np.ones(3, dtype=bool)])
    adam = AdamState.for_size(vec.size)
    rng = np.random.default_rng(cfg.seed)
    start = time.monotonic()

    def apply(vector: np.ndarray) -> gp.KernelParams:
        net.set_vector(vector[:n_net])
        return gp.KernelParams.from_array(vector[n_net:])

    log: list[dict] = []
    initial_train = _mean_full_nll(net, params, train_tasks)
    best_val = _mean_full_nll(net, params, val_tasks)
    best_vec = vec.copy()
    best_epoch = start_epoch
    log.append(
        {
            "epoch": start_epoch,
            "mean_train_nll": initial_train,
            "mean_val_nll": best_val,
            "elapsed_seconds": time.monotonic() - start,
        }
    )
    checks_since_best = 0
    epoch = start_epoch

    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        epoch_losses = []
        for task in train_tasks:
            q = len(task.y)
            batch = rng.choice(q, size=min(cfg.batch_size, q), replace=False)
            emb, cache = forward(net, task.features[batch], task.active[batch])
            loss, draw, dx = gp.nll_grad(emb, task.y_std[batch], params)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, task.task_id)
            grad = np.concatenate([backward(net, cache, dx).to_vector(), draw])
            vec = adam_step(vec, grad, adam, cfg.learning_rate, mask)
            params = apply(vec)
            epoch_losses.append(loss)

        if (epoch - start_epoch) % cfg.val_interval == 0:
            val_nll = _mean_full_nll(net, params, val_tasks)
            log.append(
                {
                    "epoch": epoch,
                    "mean_train_nll": float(np.mean(epoch_losses)),
                    "mean_val_nll": val_nll,
                    "elapsed_seconds": time.monotonic() - start,
                }
            )
            if val_tasks:
                if val_nll < best_val:
                    best_val = val_nll
                    best_vec = vec.copy()
                    best_epoch = epoch
                    checks_since_best = 0
                else:
                    checks_since_best += 1
                    if checks_since_best >= cfg.patience:
                        break

    if not val_tasks:
        best_vec = vec.copy()
        best_epoch = epoch
    params = apply(best_vec)
    final_train = _mean_full_nll(net, params, train_tasks)
    return MetaTrainResult(
        net=net,
        params=params,
        log=log,
        best_epoch=best_epoch,
        best_val_nll=best_val,
        trained_epochs=epoch,
        initial_train_nll=initial_train,
        final_train_nll=final_train,
    )


FINE_TUNE_MODES = ("kernel_only", "full", "trainable")


def fine_tune(
    net: EmbeddingNetwork,
    params: gp.KernelParams,
    features: np.ndarray,
    active: np.ndarray,
    y: np.ndarray,
    steps: int = 100,
    learning_rate: float = 1e-3,
    mode: str = "kernel_only",
) -> tuple[gp.KernelParams, list[float]]:
    """Adam steps on the single-task loss; default touches only kernel params.

    In "full" mode every network group must be trainable (freezing parts and
    asking for whole-network tuning is contradictory); "trainable" follows
    the network's current flags, e.g. a freshly added encoder. The network is
    mutated in place for those modes and untouched for "kernel_only".
    """
    if mode not in FINE_TUNE_MODES:
        raise ValidationError(f"unknown fine-tune mode {mode!r}")
    y = np.asarray(y, dtype=float).ravel()
    if y.size < 1:
        raise ValidationError("fine-tuning needs at least one observation")
    losses: list[float] = []

    if mode == "kernel_only":
        emb, _ = forward(net, features, active)
        dist = gp.symmetric_distances(emb)
        vec = params.to_array()
        adam = AdamState.for_size(3)
        for _ in range(steps):
            loss, draw, _dx = gp._nll_grad_from_distances(
                dist, y, gp.KernelParams.from_array(vec)
            )
            if not np.isfinite(loss):
                raise NumericalError("non-finite loss during fine-tuning")
            vec = adam_step(vec, draw, adam, learning_rate)
            losses.append(loss)
        return gp.KernelParams.from_array(vec), losses

    flags = [net.trainable[key] for key in net.group_keys()]
    if mode == "full" and not all(flags):
        raise ValidationError(
            "whole-network fine-tuning requested but some groups are frozen"
        )
    if mode == "trainable" and not any(flags):
        raise ValidationError(
            "no trainable network groups; use kernel_only fine-tuning"
        )

    n_net = net.n_parameters
    vec = np.concatenate([net.get_vector(), params.to_array()])
    mask = np.concatenate([net.trainable_mask(), np.ones(3, dtype=bool)])
    adam = AdamState.for_size(vec.size)
    for _ in range(steps):
        emb, cache = forward(net, features, active)
        loss, draw, dx = gp.nll_grad(emb, y, params)
        if not np.isfinite(loss):
            raise NumericalError("non-finite loss during fine-tuning")
        grad = np.concatenate([backward(net, cache, dx).to_vector(), draw])
        vec = adam_step(vec, grad, adam, learning_rate, mask)
        net.set_vector(vec[:n_net])
        params = gp.KernelParams.from_array(vec[n_net:])
        losses.append(loss)
    return params, losses
