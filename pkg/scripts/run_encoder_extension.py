#!/usr/bin/env python3
"""Search-space extension study.

Meta-trains a surrogate on a synthetic meta-dataset whose histories never use
one estimator, then compares two ways of optimizing test tasks where that
estimator is available again:

  extended  - keep the meta-trained network frozen, add a fresh encoder for
              the new algorithm, fine-tune only that encoder and the kernel
  scratch   - randomly initialized network, whole-network fine-tuning

Prints the per-seed mean final regret of both variants and the win rate.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from deeppipe import bo as bo_mod
from deeppipe import gp
from deeppipe import metadata as md
from deeppipe import search_space as ss
from deeppipe.embed import ArchitectureSpec, add_algorithm_encoder, build_network
from deeppipe.spaces import load_builtin_space
from deeppipe.training import TaskArrays, TrainConfig, meta_train


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/encoder_extension.csv")
    p.add_argument("--omit", default="svm", help="estimator left out of meta-training")
    p.add_argument("--seed", type=int, default=2033)
    p.add_argument("--n-tasks", type=int, default=40)
    p.add_argument("--n-pipelines", type=int, default=240)
    p.add_argument("--epochs", type=int, default=1200)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--iterations", type=int, default=45)
    return p.parse_args()


def build_spaces(omit: str):
    doc = load_builtin_space("synthetic_toy").to_document()
    algos = doc["stages"][1]["algorithms"]
    omitted = [a for a in algos if a["name"] == omit]
    if not omitted:
        raise SystemExit(f"no estimator named {omit!r}")
    doc["stages"][1]["algorithms"] = [a for a in algos if a["name"] != omit] + omitted
    doc["name"] = f"synthetic_toy_{omit}_last"
    full = ss.space_from_document(doc)
    reduced_doc = full.to_document()
    reduced_doc["stages"][1]["algorithms"] = reduced_doc["stages"][1]["algorithms"][:-1]
    reduced = ss.space_from_document(reduced_doc)
    hps = tuple(
        ss.HyperparameterSpec(
            h["name"], h["kind"],
            h.get("lower"), h.get("upper"),
            tuple(h["categories"]) if h.get("categories") else None,
        )
        for h in omitted[0]["hyperparameters"]
    )
    return full, reduced, ss.AlgorithmSpec(omit, hps)


def main():
    args = parse_args()
    full, reduced, new_algo = build_spaces(args.omit)
    omit_index = full.algorithms_per_stage[1] - 1
    omit_width = full.stages[1].algorithms[omit_index].n_slots

    spec = md.SyntheticSpec(full, n_tasks=args.n_tasks, n_pipelines=args.n_pipelines, noise=0.01)
    meta = md.split_assign(
        md.generate_synthetic(spec, args.seed),
        30 / args.n_tasks, 5 / args.n_tasks, seed=args.seed,
    )
    active = np.stack([ss.infer_mask(full, r).active for r in meta.features])
    uses_new = active[:, 1] == omit_index
    reduced_features = meta.features[:, :-omit_width]
    train_stats = ss.preprocess_fit(
        reduced_features[~uses_new], reduced.slot_names, reduced, active[~uses_new]
    )

    def tasks_for(split):
        out = []
        for t in meta.tasks_in(split):
            row = meta.accuracy[meta.task_index(t)]
            idx = np.nonzero(~np.isnan(row) & ~uses_new)[0]
            y = row[idx]
            y_std, _, _ = gp.standardize_targets(y)
            feats = ss.preprocess_apply(train_stats, reduced_features[idx], reduced, active[idx])
            out.append(TaskArrays(t, feats, active[idx], y, y_std))
        return out

    arch = ArchitectureSpec(4, 1, 3, embedding_dim=20)
    print("== meta-training on the reduced space ==", file=sys.stderr)
    result = meta_train(
        build_network(reduced, arch, seed=0), gp.KernelParams(),
        tasks_for("train"), tasks_for("val"),
        TrainConfig(epochs=args.epochs, batch_size=100, learning_rate=1e-3,
                    val_interval=50, patience=8, seed=0),
    )

    pool_stats = ss.preprocess_fit(meta.features, full.slot_names, full, active)
    merged = list(train_stats.per_feature) + list(pool_stats.per_feature[-omit_width:])
    stats = ss.PreprocessStats(tuple(full.slot_names), tuple(merged))
    pool = bo_mod.CandidatePool(
        np.asarray(meta.pipeline_ids),
        ss.preprocess_apply(stats, meta.features, full, active),
        active,
    )
    train_rows = meta.accuracy[[meta.task_index(t) for t in meta.tasks_in("train")]].copy()
    train_rows[:, uses_new] = np.nan
    initials = [meta.pipeline_ids[c] for c in bo_mod.greedy_initialization(train_rows, 5)]
    test_tasks = meta.tasks_in("test")
    y_max = {t: meta.y_max(t) for t in test_tasks}

    rows = []
    wins = 0
    for seed in range(args.seeds):
        regrets = {}
        for variant in ("extended", "scratch"):
            per_task = []
            for task in test_tasks:
                oracle = lambda pid, _t=task: (meta.oracle(_t, pid), meta.cost_of(_t, pid))
                if variant == "extended":
                    net = add_algorithm_encoder(result.net, 1, new_algo, seed=seed)
                    cfg = bo_mod.BOConfig(mode="deeppipe", n_initial=5,
                                          n_iterations=args.iterations, seed=seed,
                                          fine_tune_mode="trainable")
                    history = bo_mod.bo_run(cfg, pool, oracle, initials,
                                            net=net, params=result.params)
                else:
                    cfg = bo_mod.BOConfig(mode="deeppipe", n_initial=5,
                                          n_iterations=args.iterations, seed=seed,
                                          fine_tune_mode="full")
                    history = bo_mod.bo_run(cfg, pool, oracle, initials,
                                            net=build_network(full, arch, seed=seed),
                                            params=gp.KernelParams())
                per_task.append(y_max[task] - history.incumbents[-1])
            regrets[variant] = float(np.mean(per_task))
        wins += regrets["extended"] <= regrets["scratch"]
        rows.append([seed, repr(regrets["extended"]), repr(regrets["scratch"])])
        print(f"seed {seed}: extended {regrets['extended']:.4f} "
              f"scratch {regrets['scratch']:.4f}", file=sys.stderr)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "extended_final_regret", "scratch_final_regret"])
        writer.writerows(rows)
    print(f"extended <= scratch in {wins}/{args.seeds} seeds; table at {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
