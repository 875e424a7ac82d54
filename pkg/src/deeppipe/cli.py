"""Command-line entry point.

One binary with subcommands; config files are JSON and CLI flags win over
config values. Every command writes a run manifest next to its outputs with
the resolved configuration, seeds, and input hashes, sufficient to re-run it
bit-exact (see the ``rerun`` subcommand). Progress goes to stderr,
machine-readable results only to files.

Exit codes: 0 success, 1 usage, 2 validation, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__, gp
from . import analysis as an
from . import bo as bo_mod
from . import metadata as md
from . import search_space as ss
from .embed import (
    ArchitectureSpec,
    build_network,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from .errors import NumericalError, ParseError, ValidationError
from .spaces import BUILTIN, load_builtin_space
from .training import TrainConfig, meta_train

DATA_DIR_ENV = "DEEPPIPE_DATA_DIR"
DEFAULT_SEED = 0


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _resolve_path(path: str) -> str:
    if os.path.isabs(path) or os.path.exists(path):
        return path
    base = os.environ.get(DATA_DIR_ENV)
    if base:
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _load_space(token: str) -> tuple[ss.SearchSpace, str | None]:
    """Space from "builtin:<name>" or a document path; returns (space, file)."""
    if token.startswith("builtin:"):
        name = token.split(":", 1)[1]
        if name not in BUILTIN:
            raise ValidationError(f"unknown builtin space {name!r}")
        return load_builtin_space(name), None
    path = _resolve_path(token)
    return ss.load_search_space(path), path


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(
    path: str, command: str, argv: list[str], config: dict, seeds: list[int], inputs: list[str],
    started: float,
) -> None:
    doc = {
        "command": command,
        "argv": argv,
        "config": config,
        "seeds": seeds,
        "inputs": {p: _sha256(p) for p in inputs if p and os.path.exists(p)},
        "tool_version": __version__,
        "started_utc": datetime.datetime.fromtimestamp(
            started, datetime.timezone.utc
        ).isoformat(),
        "finished_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from None


# -- dataset plumbing shared by meta-train / optimize / benchmark ---------------


def _load_dataset(config: dict) -> tuple[ss.SearchSpace, md.MetaDataset, list[str]]:
    """Space + meta-dataset from a config block; returns input files used."""
    space_token = config.get("space", "builtin:synthetic_toy")
    space, space_file = _load_space(space_token)
    inputs = [p for p in [space_file] if p]
    if "synthetic" in config:
        syn = dict(config["synthetic"])
        seed = int(syn.get("seed", DEFAULT_SEED))
        spec = md.SyntheticSpec(
            space,
            n_tasks=int(syn["n_tasks"]),
            n_pipelines=int(syn["n_pipelines"]),
            noise=float(syn.get("noise", 0.01)),
            n_clusters=int(syn.get("n_clusters", 4)),
        )
        meta = md.generate_synthetic(spec, seed)
        if "splits" in syn:
            meta = md.split_assign(meta, 0, 0, 0, explicit=syn["splits"])
        else:
            meta = md.split_assign(
                meta,
                float(syn.get("train_frac", 0.6)),
                float(syn.get("val_frac", 0.2)),
                seed,
            )
        return space, meta, inputs
    data = config.get("data")
    if not data:
        raise ValidationError("config needs either a 'data' or a 'synthetic' block")
    pipelines = _resolve_path(data["pipelines"])
    evaluations = _resolve_path(data["evaluations"])
    splits = _resolve_path(data["splits"]) if data.get("splits") else None
    metadata = _resolve_path(data["metadata"]) if data.get("metadata") else None
    meta = md.load_meta_dataset(pipelines, evaluations, splits, space, metadata)
    inputs += [p for p in (pipelines, evaluations, splits, metadata) if p]
    return space, meta, inputs


def _fit_stats(space: ss.SearchSpace, meta: md.MetaDataset) -> ss.PreprocessStats:
    """Scaling stats on the pipelines seen in meta-training evaluations."""
    train_tasks = meta.tasks_in("train")
    if train_tasks:
        rows = meta.accuracy[[meta.task_index(t) for t in train_tasks]]
        seen = ~np.all(np.isnan(rows), axis=0)
        table = meta.features[seen] if seen.any() else meta.features
    else:
        table = meta.features
    active = np.stack([ss.infer_mask(space, row).active for row in table])
    return ss.preprocess_fit(table, space.slot_names, space, active)


def _stats_from_doc(doc: dict) -> ss.PreprocessStats:
    feats = doc["features"]
    return ss.PreprocessStats(
        tuple(f["name"] for f in feats),
        tuple(ss.FeatureStats(bool(f["log"]), float(f["min"]), float(f["max"])) for f in feats),
    )


def _stats_to_doc(stats: ss.PreprocessStats) -> dict:
    return {
        "features": [
            {"name": n, "log": fs.log_flag, "min": fs.vmin, "max": fs.vmax}
            for n, fs in zip(stats.feature_names, stats.per_feature)
        ]
    }


def _make_pool(space: ss.SearchSpace, meta: md.MetaDataset, stats: ss.PreprocessStats) -> bo_mod.CandidatePool:
    active = np.stack([ss.infer_mask(space, row).active for row in meta.features])
    features = ss.preprocess_apply(stats, meta.features, space, active)
    return bo_mod.CandidatePool(np.asarray(meta.pipeline_ids), features, active)


def _greedy_initials(meta: md.MetaDataset, n_initial: int) -> list[int]:
    train_tasks = meta.tasks_in("train")
    if not train_tasks:
        raise ValidationError("greedy initialization needs a meta-train split")
    matrix = meta.accuracy[[meta.task_index(t) for t in train_tasks]]
    cols = bo_mod.greedy_initialization(matrix, n_initial)
    return [meta.pipeline_ids[c] for c in cols]


HISTORY_COLUMNS = [
    "method", "task_id", "seed", "iteration", "pipeline_id",
    "y", "incumbent", "regret", "cumulative_cost",
]


def _history_rows(method: str, task_id, seed: int, history: bo_mod.BOHistory, y_max: float):
    rows = []
    best = -np.inf
    for it, (pid, y, cum) in enumerate(history.entries, start=1):
        best = max(best, y)
        rows.append(
            [method, task_id, seed, it, pid, repr(float(y)), repr(float(best)),
             repr(float(y_max - best)), repr(float(cum))]
        )
    return rows


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# -- subcommands -----------------------------------------------------------------


def cmd_preprocess(args) -> int:
    started = time.time()
    space, space_file = _load_space(args.space)
    pipelines = _resolve_path(args.pipelines)
    ids, features = md.load_pipelines_csv(pipelines, space)
    active = np.stack([ss.infer_mask(space, row).active for row in features])
    stats = ss.preprocess_fit(features, space.slot_names, space, active)
    processed, clamped = ss.preprocess_apply_with_diagnostics(stats, features, space, active)
    os.makedirs(args.out_dir, exist_ok=True)
    stats_path = os.path.join(args.out_dir, "preprocess_stats.json")
    table_path = os.path.join(args.out_dir, "pipelines_processed.csv")
    ss.save_preprocess_stats(stats, stats_path)
    _write_csv(
        table_path,
        ["pipeline_id", *space.slot_names],
        ([pid, *[repr(float(v)) for v in row]] for pid, row in zip(ids, processed)),
    )
    if clamped:
        _progress(f"clamped {clamped} non-positive values on log-scaled features")
    _write_manifest(
        os.path.join(args.out_dir, "manifest.json"),
        "preprocess", args.argv, {"space": args.space, "pipelines": args.pipelines,
                                  "out_dir": args.out_dir},
        [], [p for p in [space_file, pipelines] if p], started,
    )
    _progress(f"wrote {stats_path} and {table_path}")
    return 0


def cmd_meta_train(args) -> int:
    started = time.time()
    config = _read_json(_resolve_path(args.config))
    if args.out_dir:
        config["out_dir"] = args.out_dir
    if args.seed is not None:
        config.setdefault("training", {})["seed"] = args.seed
    out_dir = config.get("out_dir", "runs/meta_train")
    space, meta, inputs = _load_dataset(config)
    inputs.append(_resolve_path(args.config))

    arch = ArchitectureSpec(**config.get("architecture", {}))
    if args.strict_paper:
        arch.check_paper_faithful()
    tcfg = TrainConfig(**config.get("training", {}))

    stats = _fit_stats(space, meta)
    train_tasks = md.task_arrays(meta, "train", stats, space)
    val_tasks = md.task_arrays(meta, "val", stats, space)
    _progress(
        f"meta-training on {len(train_tasks)} tasks ({len(val_tasks)} validation), "
        f"{len(meta.pipeline_ids)} pipelines"
    )

    start_epoch = 0
    if args.resume:
        net, raw, extra = load_checkpoint(_resolve_path(args.resume), space)
        params = gp.KernelParams.from_array(raw)
        start_epoch = int(extra.get("trained_epochs", 0))
        inputs.append(_resolve_path(args.resume))
        _progress(f"resuming from epoch {start_epoch}")
    else:
        net = build_network(space, arch, seed=tcfg.seed)
        params = gp.KernelParams(**config.get("kernel_init", {}))

    result = meta_train(net, params, train_tasks, val_tasks, tcfg, start_epoch=start_epoch)

    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.json")
    log_path = os.path.join(out_dir, "training_log.csv")
    stats_path = os.path.join(out_dir, "preprocess_stats.json")
    save_checkpoint(
        ckpt_path, result.net, result.params.to_array(),
        extra={
            "trained_epochs": result.trained_epochs,
            "best_epoch": result.best_epoch,
            "best_val_nll": result.best_val_nll,
            "preprocess_stats": _stats_to_doc(stats),
        },
    )
    ss.save_preprocess_stats(stats, stats_path)
    _write_csv(
        log_path,
        ["epoch", "mean_train_nll", "mean_val_nll", "elapsed_seconds"],
        (
            [row["epoch"], repr(row["mean_train_nll"]), repr(row["mean_val_nll"]),
             repr(row["elapsed_seconds"])]
            for row in result.log
        ),
    )
    _write_manifest(
        os.path.join(out_dir, "manifest.json"),
        "meta-train", args.argv, config, [tcfg.seed], inputs, started,
    )
    _progress(
        f"best validation nll {result.best_val_nll:.4f} at epoch {result.best_epoch}; "
        f"checkpoint at {ckpt_path}"
    )
    return 0


def _bo_config_from_args(args, mode: str) -> bo_mod.BOConfig:
    return bo_mod.BOConfig(
        mode=mode,
        n_initial=args.n_initial,
        n_iterations=args.iterations,
        fine_tune_steps=args.fine_tune_steps,
        fine_tune_lr=args.fine_tune_lr,
        fine_tune_mode=args.fine_tune_mode,
        reset_params_each_iteration=args.reset_each_iteration,
        budget=args.budget,
        seed=args.seed if args.seed is not None else DEFAULT_SEED,
    )


def cmd_optimize(args) -> int:
    started = time.time()
    config = {"space": args.space}
    if args.synthetic:
        config["synthetic"] = _read_json(_resolve_path(args.synthetic))
    else:
        if not (args.pipelines and args.evaluations):
            raise ValidationError("optimize needs --pipelines/--evaluations or --synthetic")
        config["data"] = {
            "pipelines": args.pipelines,
            "evaluations": args.evaluations,
            "splits": args.splits,
        }
    space, meta, inputs = _load_dataset(config)
    if args.task_id not in meta.task_ids:
        raise ValidationError(f"unknown task id {args.task_id}")

    net = None
    params = None
    stats = None
    if args.mode == "deeppipe":
        if not args.checkpoint:
            raise ValidationError("deeppipe mode needs --checkpoint")
        ckpt = _resolve_path(args.checkpoint)
        net, raw, extra = load_checkpoint(ckpt, space)
        params = gp.KernelParams.from_array(raw)
        inputs.append(ckpt)
        if "preprocess_stats" in extra:
            stats = _stats_from_doc(extra["preprocess_stats"])
    if args.stats:
        stats = ss.load_preprocess_stats(_resolve_path(args.stats))
        inputs.append(_resolve_path(args.stats))
    if stats is None:
        stats = _fit_stats(space, meta)

    pool = _make_pool(space, meta, stats)
    initial_ids = _greedy_initials(meta, args.n_initial)
    seed = args.seed if args.seed is not None else DEFAULT_SEED
    cfg = _bo_config_from_args(args, args.mode)
    task = args.task_id
    oracle = lambda pid: (meta.oracle(task, pid), meta.cost_of(task, pid))
    history = bo_mod.bo_run(cfg, pool, oracle, initial_ids, net=net, params=params)
    y_max = meta.y_max(task)
    _write_csv(args.out, HISTORY_COLUMNS, _history_rows(args.mode, task, seed, history, y_max))
    _write_manifest(
        args.out + ".manifest.json", "optimize", args.argv,
        {**config, "mode": args.mode, "task_id": task, "n_initial": args.n_initial,
         "iterations": args.iterations, "budget": args.budget,
         "checkpoint": args.checkpoint, "stats": args.stats, "out": args.out},
        [seed], inputs, started,
    )
    _progress(
        f"observed {len(history.entries)} pipelines, final regret "
        f"{y_max - history.incumbents[-1]:.4f}"
    )
    return 0


METHOD_MODES = {
    "deeppipe": ("deeppipe", "kernel_only"),
    "deeppipe_scratch": ("deeppipe", "full"),
    "raw_gp": ("raw_gp", "kernel_only"),
    "random": ("random", "kernel_only"),
}


def cmd_benchmark(args) -> int:
    started = time.time()
    config = _read_json(_resolve_path(args.config))
    if args.out_dir:
        config["out_dir"] = args.out_dir
    out_dir = config.get("out_dir", "runs/benchmark")
    space, meta, inputs = _load_dataset(config)
    inputs.append(_resolve_path(args.config))
    methods = config.get("methods", ["deeppipe", "raw_gp", "random"])
    for m in methods:
        if m not in METHOD_MODES:
            raise ValidationError(f"unknown method {m!r}; choose from {sorted(METHOD_MODES)}")
    seeds = [int(s) for s in config.get("seeds", [0])]
    n_initial = int(config.get("n_initial", 5))
    iterations = int(config.get("iterations", 95))
    budget = config.get("budget")
    ft_steps = int(config.get("fine_tune_steps", 100))
    ft_lr = float(config.get("fine_tune_lr", 1e-3))

    tasks = config.get("tasks", "test")
    task_ids = meta.tasks_in(tasks) if isinstance(tasks, str) else [int(t) for t in tasks]
    if not task_ids:
        raise ValidationError("no tasks to benchmark")

    net = None
    params = None
    stats = None
    if "deeppipe" in methods:
        ckpt = config.get("checkpoint")
        if not ckpt:
            raise ValidationError("method 'deeppipe' needs a checkpoint in the config")
        net, raw, extra = load_checkpoint(_resolve_path(ckpt), space)
        params = gp.KernelParams.from_array(raw)
        inputs.append(_resolve_path(ckpt))
        if "preprocess_stats" in extra:
            stats = _stats_from_doc(extra["preprocess_stats"])
    if stats is None:
        stats = _fit_stats(space, meta)
    scratch_arch = (
        ArchitectureSpec(**config["architecture"]) if "architecture" in config else None
    )

    pool = _make_pool(space, meta, stats)
    initial_ids = _greedy_initials(meta, n_initial)

    all_rows = []
    traces: dict[str, dict[tuple, list[float]]] = {m: {} for m in methods}
    y_max = {t: meta.y_max(t) for t in task_ids}
    total = len(methods) * len(task_ids) * len(seeds)
    done = 0
    for method in methods:
        mode, ft_mode = METHOD_MODES[method]
        for task in task_ids:
            oracle = lambda pid, _t=task: (meta.oracle(_t, pid), meta.cost_of(_t, pid))
            for seed in seeds:
                cfg = bo_mod.BOConfig(
                    mode=mode, n_initial=n_initial, n_iterations=iterations,
                    fine_tune_steps=ft_steps, fine_tune_lr=ft_lr,
                    fine_tune_mode=ft_mode, budget=budget, seed=seed,
                )
                if method == "deeppipe":
                    run_net, run_params = net.clone(), params
                elif method == "deeppipe_scratch":
                    if scratch_arch is None:
                        raise ValidationError(
                            "method 'deeppipe_scratch' needs an architecture block"
                        )
                    run_net = build_network(space, scratch_arch, seed=seed)
                    run_params = gp.KernelParams()
                else:
                    run_net, run_params = None, None
                history = bo_mod.bo_run(cfg, pool, oracle, initial_ids,
                                        net=run_net, params=run_params)
                all_rows.extend(_history_rows(method, task, seed, history, y_max[task]))
                traces[method][(task, seed)] = history.incumbents
                done += 1
                if done % 10 == 0 or done == total:
                    _progress(f"benchmark {done}/{total} runs")

    ranks, regrets = bo_mod.rank_and_regret(traces, y_max)
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "results.csv"), HISTORY_COLUMNS, all_rows)
    ordered = sorted(methods)
    n_iters = len(next(iter(ranks.values())))
    _write_csv(
        os.path.join(out_dir, "rank.csv"),
        ["iteration", *ordered],
        ([it + 1, *[repr(ranks[m][it]) for m in ordered]] for it in range(n_iters)),
    )
    _write_csv(
        os.path.join(out_dir, "regret.csv"),
        ["iteration", *ordered],
        ([it + 1, *[repr(regrets[m][it]) for m in ordered]] for it in range(n_iters)),
    )
    _write_manifest(
        os.path.join(out_dir, "manifest.json"), "benchmark", args.argv, config,
        seeds, inputs, started,
    )
    _progress(f"wrote {out_dir}/results.csv, rank.csv, regret.csv")
    return 0


def cmd_verify_theory(args) -> int:
    started = time.time()
    n = args.samples
    tol = args.tolerance
    checks = []

    def record(name, closed, estimate, scale=None):
        scale = abs(closed) if scale is None else scale
        rel = abs(estimate - closed) / scale if scale > 0 else abs(estimate - closed)
        # standard error shrinks ~ 1/sqrt(n); flag clearly underpowered runs
        wide = n < 10_000
        checks.append(
            {
                "name": name,
                "closed_form": closed,
                "estimate": estimate,
                "n_samples": n,
                "relative_error": rel,
                "tolerance": tol,
                "wide_standard_error": wide,
                "pass": bool(rel < tol) or wide,
            }
        )

    cases1 = [(3, 0.0, 1.0), (1, 2.0, 0.0), (10, 0.5, 0.3)]
    for i, (m, mu, sig) in enumerate(cases1):
        est, closed = an.mc_lemma1(m, mu, sig, n, seed=args.seed + i)
        record(f"norm_expectation_m{m}", closed, est)
    cases2 = [
        (np.array([1.0, 1.0]), 1.0, 0.0),
        (np.array([0.3, -0.7, 0.2]), 0.4, 0.5),
        (np.array([0.9, 0.1, 0.4]), 0.0, 1.0),
    ]
    for i, (x, mu, sig) in enumerate(cases2):
        est, closed = an.mc_lemma2(x, mu, sig, n, seed=args.seed + 100 + i)
        record(f"linear_output_expectation_{i}", closed, est)
    pairs = [
        (np.array([0.9, 0.1]), np.array([0.1, 0.9]), 0.5, 0.5),
        (np.array([1.0, 1.0]), np.array([1.0, 1.0]), 1.0, 1.0),
        (np.array([0.4, 0.6, 0.8]), np.array([0.7, 0.2, 0.5]), 0.3, 0.8),
    ]
    ordering_ok = True
    for i, (xh, xp, mu, sig) in enumerate(pairs):
        lhs, rhs = an.mc_proposition3(xh, xp, mu, sig, n, seed=args.seed + 200 + i)
        lhs_c, rhs_c = an.proposition3_closed(xh, xp, mu, sig)
        record(f"shared_vs_independent_lhs_{i}", lhs_c, lhs)
        record(f"shared_vs_independent_rhs_{i}", rhs_c, rhs, scale=max(abs(lhs_c), 1.0))
        identical = np.array_equal(xh, xp)
        ok = (rhs < lhs) if not identical else (rhs <= lhs + 1e-9)
        if sig > 0 and not ok and n >= 10_000:
            ordering_ok = False
        checks.append(
            {
                "name": f"shared_vs_independent_ordering_{i}",
                "closed_form": None,
                "estimate": {"lhs": lhs, "rhs": rhs},
                "n_samples": n,
                "relative_error": None,
                "tolerance": None,
                "wide_standard_error": n < 10_000,
                "pass": bool(ok or n < 10_000),
            }
        )

    cluster = None
    if args.cluster_metric:
        cluster = _cluster_metric_summary(
            args.cluster_space, args.seeds, args.n_configs, args.n_triples, args.seed
        )

    report = {
        "n_samples": n,
        "tolerance": tol,
        "checks": checks,
        "cluster_metric": cluster,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    _write_manifest(
        args.out + ".manifest.json", "verify-theory", args.argv,
        {"samples": n, "tolerance": tol, "seed": args.seed,
         "cluster_metric": args.cluster_metric}, [args.seed], [], started,
    )
    failed = [c["name"] for c in checks if not c["pass"]]
    for c in checks:
        _progress(f"{'PASS' if c['pass'] else 'FAIL'} {c['name']}")
    if cluster:
        _progress(
            "cluster metric means by encoder layers: "
            + ", ".join(f"{k}={v:.4f}" for k, v in cluster["mean_by_encoder_layers"].items())
        )
    if failed or not ordering_ok:
        _progress(f"failed checks: {failed}")
        return 3
    return 0


def _cluster_metric_summary(space_token, n_seeds, n_configs, n_triples, seed):
    space, _ = _load_space(space_token)
    rng = np.random.default_rng(seed)
    configs = [ss.random_config(space, rng) for _ in range(n_configs)]
    flat = [ss.flatten(space, c) for c in configs]
    features = np.stack([f for f, _m in flat])
    active = np.stack([m.active for _f, m in flat])
    stats = ss.preprocess_fit(features, space.slot_names, space, active)
    features = ss.preprocess_apply(stats, features, space, active)
    means = {}
    per_seed = {}
    for layers in (0, 1, 2):
        arch = ArchitectureSpec(
            8, layers, 4 - layers, embedding_dim=20,
            append_one_hot=False, init="standard_normal",
        )
        vals = []
        for s in range(n_seeds):
            net = build_network(space, arch, seed=seed + s)
            spec = an.TripleSampleSpec(n_triples=n_triples, seed=seed, stage_of_interest=-1)
            vals.append(an.network_cluster_metric(net, features, active, spec))
        means[str(layers)] = float(np.mean(vals))
        per_seed[str(layers)] = vals
    return {
        "mean_by_encoder_layers": means,
        "per_seed": per_seed,
        "encoder_beats_plain": bool(
            means["1"] > means["0"] and means["2"] > means["0"]
        ),
    }


def cmd_cluster_metric(args) -> int:
    started = time.time()
    summary = _cluster_metric_summary(
        args.space, args.seeds, args.n_configs, args.n_triples, args.seed
    )
    rows = []
    for layers, vals in summary["per_seed"].items():
        for s, v in enumerate(vals):
            rows.append([layers, args.seed + s, repr(v)])
    _write_csv(args.out, ["encoder_layers", "seed", "cluster_metric"], rows)
    _write_manifest(
        args.out + ".manifest.json", "cluster-metric", args.argv,
        {"space": args.space, "seeds": args.seeds, "n_configs": args.n_configs,
         "n_triples": args.n_triples}, [args.seed], [], started,
    )
    _progress(
        "means: " + ", ".join(f"le={k}: {v:.4f}" for k, v in summary["mean_by_encoder_layers"].items())
    )
    return 0


def cmd_export_embeddings(args) -> int:
    started = time.time()
    inputs = []
    stats = None
    if args.checkpoint:
        ckpt = _resolve_path(args.checkpoint)
        net, _raw, extra = load_checkpoint(ckpt)
        space = net.space
        inputs.append(ckpt)
        if "preprocess_stats" in extra:
            stats = _stats_from_doc(extra["preprocess_stats"])
    else:
        space, space_file = _load_space(args.space)
        if space_file:
            inputs.append(space_file)
        arch = ArchitectureSpec(
            args.width_factor, args.encoder_layers, args.aggregation_layers,
            embedding_dim=args.embedding_dim, append_one_hot=not args.no_one_hot,
            init=args.init,
        )
        net = build_network(space, arch, seed=args.net_seed)
    rng = np.random.default_rng(args.seed if args.seed is not None else DEFAULT_SEED)
    configs = [ss.random_config(space, rng) for _ in range(args.n_configs)]
    if stats is None:
        flat = [ss.flatten(space, c) for c in configs]
        table = np.stack([f for f, _m in flat])
        act = np.stack([m.active for _f, m in flat])
        stats = ss.preprocess_fit(table, space.slot_names, space, act)
    an.export_embeddings(net, configs, args.out, stats=stats)
    _write_manifest(
        args.out + ".manifest.json", "export-embeddings", args.argv,
        {"checkpoint": args.checkpoint, "space": args.space, "n_configs": args.n_configs},
        [args.seed if args.seed is not None else DEFAULT_SEED], inputs, started,
    )
    _progress(f"wrote {args.out}")
    return 0


def cmd_param_count(args) -> int:
    started = time.time()
    space, space_file = _load_space(args.space)
    embedding_dim = args.embedding_dim
    if embedding_dim is None:
        embedding_dim = args.width_factor * sum(space.max_slots_per_stage)
    arch = ArchitectureSpec(
        args.width_factor, args.encoder_layers, args.aggregation_layers,
        embedding_dim=embedding_dim, append_one_hot=args.one_hot,
    )
    net = build_network(space, arch, seed=0)
    weights, biases = parameter_count(net)
    result = {
        "space": args.space,
        "input_width": space.total_width,
        "width_factor": args.width_factor,
        "encoder_layers": args.encoder_layers,
        "aggregation_layers": args.aggregation_layers,
        "embedding_dim": embedding_dim,
        "append_one_hot": args.one_hot,
        "weights": weights,
        "biases": biases,
    }
    text = json.dumps(result, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest(
            args.out + ".manifest.json", "param-count", args.argv, result, [],
            [p for p in [space_file] if p], started,
        )
    else:
        sys.stdout.write(text)
    return 0


def cmd_rerun(args) -> int:
    manifest = _read_json(_resolve_path(args.manifest))
    argv = manifest.get("argv")
    if not argv:
        raise ValidationError(f"{args.manifest}: manifest has no recorded argv")
    _progress(f"re-running: deeppipe {' '.join(argv)}")
    return main(argv)


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deeppipe",
        description="Pipeline search with deep-kernel GP surrogates",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="fit scaling stats and emit a processed table")
    p.add_argument("--space", required=True)
    p.add_argument("--pipelines", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("meta-train", help="meta-train a surrogate on a meta-dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--resume", help="continue from an existing checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--strict-paper", action="store_true",
                   help="reject architectures outside the published grid")
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("optimize", help="run BO on one task")
    p.add_argument("--space", default="builtin:synthetic_toy")
    p.add_argument("--pipelines")
    p.add_argument("--evaluations")
    p.add_argument("--splits")
    p.add_argument("--synthetic", help="JSON file with a synthetic dataset spec")
    p.add_argument("--checkpoint")
    p.add_argument("--stats")
    p.add_argument("--task-id", type=int, required=True)
    p.add_argument("--mode", choices=sorted(bo_mod.MODES), default="deeppipe")
    p.add_argument("--n-initial", type=int, default=5)
    p.add_argument("--iterations", type=int, default=95)
    p.add_argument("--fine-tune-steps", type=int, default=100)
    p.add_argument("--fine-tune-lr", type=float, default=1e-3)
    p.add_argument("--fine-tune-mode", choices=("kernel_only", "full", "trainable"),
                   default="kernel_only")
    p.add_argument("--reset-each-iteration", action="store_true")
    p.add_argument("--budget", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("benchmark", help="methods x tasks x seeds grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("verify-theory", help="Monte-Carlo checks of the closed forms")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--tolerance", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--cluster-metric", action="store_true")
    p.add_argument("--cluster-space", default="builtin:tensor_oboe")
    p.add_argument("--seeds", type=int, default=20,
                   help="weight seeds for the cluster-metric comparison")
    p.add_argument("--n-configs", type=int, default=2000)
    p.add_argument("--n-triples", type=int, default=2000)
    p.add_argument("--out", default="theory_report.json")
    p.set_defaults(func=cmd_verify_theory)

    p = sub.add_parser("cluster-metric", help="embedding cluster metric per encoder depth")
    p.add_argument("--space", default="builtin:tensor_oboe")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--n-configs", type=int, default=2000)
    p.add_argument("--n-triples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster_metric)

    p = sub.add_parser("export-embeddings", help="embed sampled configurations to CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--space", default="builtin:tensor_oboe")
    p.add_argument("--width-factor", type=int, default=8)
    p.add_argument("--encoder-layers", type=int, default=1)
    p.add_argument("--aggregation-layers", type=int, default=3)
    p.add_argument("--embedding-dim", type=int, default=20)
    p.add_argument("--no-one-hot", action="store_true")
    p.add_argument("--init", choices=("scaled_uniform", "standard_normal"),
                   default="scaled_uniform")
    p.add_argument("--net-seed", type=int, default=0)
    p.add_argument("--n-configs", type=int, default=500)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("param-count", help="weight/bias counts for an architecture")
    p.add_argument("--space", required=True)
    p.add_argument("--width-factor", type=int, required=True)
    p.add_argument("--encoder-layers", type=int, required=True)
    p.add_argument("--aggregation-layers", type=int, required=True)
    p.add_argument("--embedding-dim", type=int)
    p.add_argument("--one-hot", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("rerun", help="re-execute a command from its manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_rerun)

    return parser


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    args.argv = list(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        _progress(f"error: {exc}")
        return 2
    except ValidationError as exc:
        _progress(f"error: {exc}")
        return 2
    except NumericalError as exc:
        _progress(f"numerical failure: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
