"""Acceptance suite: one test (or test group) per shipped criterion.

Each criterion prints a PASS line with its headline numbers (run with -s to
watch them); the two self-inconsistent reference constants for the pmf-shaped
space are kept as strict xfails rather than silently dropped.

The two end-to-end criteria (7 and 8) meta-train a surrogate on the seeded
synthetic meta-dataset and fan the independent BO runs out over a small fork
pool; every run is seeded and the collected results are order-independent.
"""

import csv
import json
import multiprocessing
import os
import time

import numpy as np
import pytest

from oracles import dense_gp_oracle, fd_network_gradient_error, mc_expected_improvement

from deeppipe import analysis as an
from deeppipe import bo as bo_mod
from deeppipe import gp
from deeppipe import metadata as md
from deeppipe import search_space as ss
from deeppipe.cli import main as cli_main
from deeppipe.embed import (
    ArchitectureSpec,
    add_algorithm_encoder,
    build_network,
    closed_form_weight_count,
    forward,
    parameter_count,
)
from deeppipe.spaces import load_builtin_space
from deeppipe.training import TrainConfig, TaskArrays, fine_tune, meta_train

SEED = 2026


def report(criterion: int, message: str) -> None:
    print(f"\nACCEPTANCE {criterion}: {message}")


# -- criterion 1: GP posterior and loss vs dense-inverse oracle -------------------


def test_criterion_1_gp_oracle_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(100):
        q = int(rng.integers(1, 17))
        z = int(rng.integers(1, 9))
        params = gp.KernelParams(
            rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-4.0, -1.0)
        )
        x = rng.normal(size=(q, z))
        y = rng.normal(size=q)
        mean_var, alpha, nll_ref = dense_gp_oracle(x, y, params)
        state = gp.fit(x, y, params)
        worst = max(worst, float(np.max(np.abs(alpha - state.alpha))))
        stars = rng.normal(size=(5, z))
        mean, var = gp.predict_batch(state, stars)
        mean_ref, var_ref = mean_var(stars)
        worst = max(worst, float(np.max(np.abs(mean - mean_ref))))
        worst = max(worst, float(np.max(np.abs(np.maximum(var, 0) - np.maximum(var_ref, 0)))))
        worst = max(worst, abs(gp.nll(x, y, params) - nll_ref))
        assert worst < 1e-8
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    report(1, f"PASS: 100 instances, max |difference| {worst:.2e}, {elapsed:.1f}s")


# -- criterion 2: gradients vs central finite differences -------------------------


def random_small_space(rng) -> ss.SearchSpace:
    stages = []
    for i in range(int(rng.integers(1, 4))):
        algos = []
        for j in range(int(rng.integers(1, 4))):
            hps = []
            for k in range(int(rng.integers(0, 4))):
                kind = ["continuous", "integer", "categorical"][int(rng.integers(3))]
                if kind == "categorical":
                    hps.append({
                        "name": f"h{k}", "kind": kind,
                        "categories": [f"c{c}" for c in range(int(rng.integers(2, 4)))],
                    })
                else:
                    hps.append({"name": f"h{k}", "kind": kind, "lower": 0.5, "upper": 3.0})
            algos.append({"name": f"algo{j}", "hyperparameters": hps})
        stages.append({"name": f"stage{i}", "algorithms": algos})
    return ss.space_from_document({"name": "random_small", "stages": stages})


def test_criterion_2_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(SEED + 1)
    checked = 0
    worst = 0.0
    while checked < 20:
        space = random_small_space(rng)
        encoder_layers = int(rng.integers(0, 3))
        arch = ArchitectureSpec(
            int(rng.integers(1, 3)), encoder_layers, 4 - encoder_layers,
            embedding_dim=int(rng.integers(2, 5)),
            append_one_hot=bool(rng.integers(2)),
        )
        net = build_network(space, arch, seed=int(rng.integers(10_000)))
        if net.n_parameters > 500:
            continue
        configs = [ss.random_config(space, rng) for _ in range(6)]
        flat = [ss.flatten(space, c) for c in configs]
        feats = np.stack([f for f, _m in flat])
        act = np.stack([m.active for _f, m in flat])
        stats = ss.preprocess_fit(feats, space.slot_names, space, act)
        feats = ss.preprocess_apply(stats, feats, space, act)
        y, _, _ = gp.standardize_targets(rng.uniform(size=6))
        params = gp.KernelParams(
            rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-4.0, -2.0)
        )
        err = fd_network_gradient_error(net, feats, act, y, params, rng)
        worst = max(worst, err)
        assert err < 1e-4
        checked += 1
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    report(2, f"PASS: 20 networks, worst relative error {worst:.2e}, {elapsed:.1f}s")


# -- criterion 3: exact parameter-count closed forms -------------------------------


def test_criterion_3_closed_form_exactness():
    start = time.perf_counter()
    inputs = {"pmf": 72, "tensor_oboe": 37, "zap": 35}
    for name, width in inputs.items():
        assert load_builtin_space(name).total_width == width
    checked = 0
    for name in inputs:
        space = load_builtin_space(name)
        for encoder_layers in (0, 1, 2):
            aggregation_layers = 4 - encoder_layers
            for width_factor in (4, 6, 8, 10):
                arch = ArchitectureSpec(
                    width_factor, encoder_layers, aggregation_layers,
                    embedding_dim=width_factor * sum(space.max_slots_per_stage),
                    append_one_hot=False,
                )
                weights, _ = parameter_count(build_network(space, arch, seed=0))
                assert weights == closed_form_weight_count(
                    space, width_factor, encoder_layers, aggregation_layers
                )
                checked += 1

    # reference constants that are arithmetically consistent with the shapes
    toboe = load_builtin_space("tensor_oboe")
    zap = load_builtin_space("zap")
    pmf = load_builtin_space("pmf")
    for f in (4, 6, 8, 10):
        assert closed_form_weight_count(toboe, f, 0, 4) == 444 * f + 144 * 3 * f * f
        for le, la in ((1, 3), (2, 2)):
            assert closed_form_weight_count(toboe, f, le, la) == \
                161 * f + (271 * (le - 1) + 144 * la) * f * f
        assert closed_form_weight_count(zap, f, 0, 4) == 1085 * f + 961 * 3 * f * f
        assert closed_form_weight_count(pmf, f, 1, 3) == 886 * f + 256 * 3 * f * f
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    report(
        3,
        f"PASS: {checked} (space, depth, width) combinations exact; consistent "
        f"reference constants verified; 2 self-inconsistent constants xfailed, {elapsed:.2f}s",
    )


@pytest.mark.xfail(
    strict=True,
    reason="the pmf-shaped no-encoder constant 720*F is unsatisfiable: the "
    "space pins input width 72 and hidden multiple 16 (from 256*F^2), and "
    "72*16 = 1152 != 720; no dense layering reconciles both",
)
def test_criterion_3_pmf_no_encoder_reference_constant():
    pmf = load_builtin_space("pmf")
    for f in (4, 6, 8, 10):
        assert closed_form_weight_count(pmf, f, 0, 4) == 720 * f + 256 * 3 * f * f


@pytest.mark.xfail(
    strict=True,
    reason="the pmf-shaped two-encoder-layer coefficient 1376 is unsatisfiable: "
    "the grouped shape gives 2*3^2 + 8*13^2 = 1370, and no integer stage "
    "partition reproduces 1376 together with the other pinned constants",
)
def test_criterion_3_pmf_deep_encoder_reference_constant():
    pmf = load_builtin_space("pmf")
    for f in (4, 6, 8, 10):
        assert closed_form_weight_count(pmf, f, 2, 2) == \
            886 * f + (1376 * 1 + 256 * 2) * f * f


# -- criterion 4: Expected Improvement vs Monte Carlo ------------------------------


def test_criterion_4_expected_improvement():
    start = time.perf_counter()
    assert bo_mod.expected_improvement(0.9, 0.0, 0.7) == pytest.approx(0.2)
    assert bo_mod.expected_improvement(0.3, 0.0, 0.7) == 0.0
    rng = np.random.default_rng(SEED + 2)
    for k in range(50):
        mu = float(rng.normal(0.0, 1.0))
        sigma = float(rng.uniform(0.05, 2.0))
        best = float(rng.normal(0.0, 1.0))
        closed = bo_mod.expected_improvement(mu, sigma**2, best)
        estimate, se = mc_expected_improvement(mu, sigma, best, n=1_000_000, seed=SEED + k)
        # hopeless candidates can get zero sampled improvements (zero standard
        # error); 1e-6 covers the analytic tail mass below the MC resolution
        assert abs(closed - estimate) < 3.0 * se + 1e-6, (mu, sigma, best)
    elapsed = time.perf_counter() - start
    assert elapsed < 30.0
    report(4, f"PASS: 50 triples within 3 standard errors at 1e6 samples, {elapsed:.1f}s")


# -- criterion 5: random-linear-map closed forms ------------------------------------


def test_criterion_5_random_feature_closed_forms():
    start = time.perf_counter()
    n = 1_000_000
    cases1 = [(3, 0.0, 1.0), (1, 2.0, 0.5), (10, 0.5, 0.3)]
    for i, (m, mu, sigma) in enumerate(cases1):
        estimate, closed = an.mc_lemma1(m, mu, sigma, n, seed=SEED + i)
        assert abs(estimate - closed) / closed < 0.01
    cases2 = [
        (np.array([0.3, -0.7, 0.2]), 0.4, 0.5),
        (np.array([1.0, 1.0]), 1.0, 1.0),
        (np.array([0.9, 0.1, 0.4, 0.2]), 0.0, 1.0),
    ]
    for i, (x, mu, sigma) in enumerate(cases2):
        estimate, closed = an.mc_lemma2(x, mu, sigma, n, seed=SEED + 50 + i)
        assert abs(estimate - closed) / abs(closed) < 0.01
    pairs = [
        (np.array([0.9, 0.1]), np.array([0.1, 0.9]), 0.5, 0.5),
        (np.array([0.4, 0.6, 0.8]), np.array([0.7, 0.2, 0.5]), 0.3, 0.8),
        (np.array([1.0, 0.5]), np.array([0.2, 0.8]), 1.0, 0.4),
        (np.array([0.3, 0.3, 0.3]), np.array([0.6, 0.1, 0.5]), 0.7, 1.0),
    ]
    for i, (xh, xp, mu, sigma) in enumerate(pairs):
        assert an.cross_sum(np.concatenate([xh, xp])) > 0
        lhs, rhs = an.mc_proposition3(xh, xp, mu, sigma, n, seed=SEED + 90 + i)
        assert rhs < lhs, (xh, xp)
    elapsed = time.perf_counter() - start
    assert elapsed < 60.0
    report(
        5,
        "PASS: norm/output expectations within 1% at 1e6 samples; shared-weight "
        f"distance below independent-weight distance on all pairs, {elapsed:.1f}s",
    )


# -- criterion 6: encoder layers produce tighter algorithm clusters -----------------


def test_criterion_6_encoder_cluster_direction():
    start = time.perf_counter()
    space = load_builtin_space("tensor_oboe")
    estimator_stage = space.n_stages - 1
    rng = np.random.default_rng(SEED + 3)
    # 2000 pipelines drawn over five estimation algorithms, as in the
    # randomly-initialized embedding experiment
    wanted = list(range(5))
    configs = []
    while len(configs) < 2000:
        config = ss.random_config(space, rng)
        if config.algorithm_indices[estimator_stage] in wanted:
            configs.append(config)
    flat = [ss.flatten(space, c) for c in configs]
    feats = np.stack([f for f, _m in flat])
    act = np.stack([m.active for _f, m in flat])
    stats = ss.preprocess_fit(feats, space.slot_names, space, act)
    feats = ss.preprocess_apply(stats, feats, space, act)

    means = {}
    for encoder_layers in (0, 1):
        arch = ArchitectureSpec(
            8, encoder_layers, 4 - encoder_layers, embedding_dim=20,
            append_one_hot=False, init="standard_normal",
        )
        vals = []
        for seed in range(20):
            net = build_network(space, arch, seed=seed)
            emb, _ = forward(net, feats, act)
            spec = an.TripleSampleSpec(n_triples=2000, seed=SEED, stage_of_interest=estimator_stage)
            vals.append(an.cluster_metric(emb, act[:, estimator_stage], spec))
        means[encoder_layers] = float(np.mean(vals))
    elapsed = time.perf_counter() - start
    assert means[1] > means[0], means
    assert elapsed < 300.0
    report(
        6,
        f"PASS: mean cluster metric {means[1]:.4f} (1 encoder layer) > "
        f"{means[0]:.4f} (plain MLP) over 20 seeds, {elapsed:.0f}s",
    )


# -- criteria 7 and 8: end-to-end orderings on the synthetic benchmark --------------

_G: dict = {}


def _prepare_benchmark():
    space = load_builtin_space("synthetic_toy")
    spec = md.SyntheticSpec(space, n_tasks=45, n_pipelines=300, noise=0.01)
    meta = md.split_assign(md.generate_synthetic(spec, SEED), 30 / 45, 5 / 45, seed=SEED)
    active = np.stack([ss.infer_mask(space, r).active for r in meta.features])
    stats = ss.preprocess_fit(meta.features, space.slot_names, space, active)
    pool = bo_mod.CandidatePool(
        np.asarray(meta.pipeline_ids),
        ss.preprocess_apply(stats, meta.features, space, active),
        active,
    )
    train_rows = meta.accuracy[[meta.task_index(t) for t in meta.tasks_in("train")]]
    initials = [meta.pipeline_ids[c] for c in bo_mod.greedy_initialization(train_rows, 5)]

    arch = ArchitectureSpec(4, 1, 3, embedding_dim=20)
    net = build_network(space, arch, seed=0)
    cfg = TrainConfig(
        epochs=1200, batch_size=100, learning_rate=1e-3,
        val_interval=50, patience=8, seed=0,
    )
    result = meta_train(
        net, gp.KernelParams(),
        md.task_arrays(meta, "train", stats, space),
        md.task_arrays(meta, "val", stats, space),
        cfg,
    )
    return {
        "space": space, "meta": meta, "pool": pool, "initials": initials,
        "arch": arch, "net": result.net, "params": result.params,
    }


def _bench_worker(key):
    method, task, seed = key
    g = _G
    meta = g["meta"]

    def oracle(pid):
        return meta.oracle(task, pid), meta.cost_of(task, pid)

    if method == "deeppipe":
        cfg = bo_mod.BOConfig(mode="deeppipe", n_initial=5, n_iterations=45, seed=seed)
        history = bo_mod.bo_run(
            cfg, g["pool"], oracle, g["initials"],
            net=g["net"].clone(), params=g["params"],
        )
    elif method == "deeppipe_scratch":
        cfg = bo_mod.BOConfig(
            mode="deeppipe", n_initial=5, n_iterations=45, seed=seed,
            fine_tune_mode="full",
        )
        history = bo_mod.bo_run(
            cfg, g["pool"], oracle, g["initials"],
            net=build_network(g["space"], g["arch"], seed=seed),
            params=gp.KernelParams(),
        )
    elif method == "raw_gp":
        cfg = bo_mod.BOConfig(mode="raw_gp", n_initial=5, n_iterations=45, seed=seed)
        history = bo_mod.bo_run(cfg, g["pool"], oracle, g["initials"])
    else:
        cfg = bo_mod.BOConfig(mode="random", n_initial=5, n_iterations=45, seed=seed)
        history = bo_mod.bo_run(cfg, g["pool"], oracle, g["initials"])
    return key, history.incumbents


def _run_grid(keys):
    workers = max(1, min(2, os.cpu_count() or 1))
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(workers) as pool:
        return dict(pool.map(_bench_worker, keys, chunksize=4))


@pytest.fixture(scope="module")
def synthetic_benchmark():
    _G.update(_prepare_benchmark())
    yield _G


def test_criterion_7_bo_ordering(synthetic_benchmark):
    start = time.perf_counter()
    g = synthetic_benchmark
    meta = g["meta"]
    test_tasks = meta.tasks_in("test")
    assert len(test_tasks) == 10 and len(meta.tasks_in("train")) == 30
    seeds = range(10)
    methods = ("deeppipe", "deeppipe_scratch", "raw_gp", "random")
    keys = [(m, t, s) for m in methods for t in test_tasks for s in seeds]
    results = _run_grid(keys)
    traces = {m: {} for m in methods}
    for (m, t, s), incumbents in results.items():
        traces[m][(t, s)] = incumbents
    y_max = {t: meta.y_max(t) for t in test_tasks}
    ranks, regrets = bo_mod.rank_and_regret(traces, y_max)
    final_regret = {m: regrets[m][-1] for m in methods}
    final_rank = {m: ranks[m][-1] for m in methods}
    elapsed = time.perf_counter() - start

    assert final_regret["deeppipe"] < final_regret["random"]
    assert final_regret["deeppipe"] < final_regret["raw_gp"]
    assert final_rank["deeppipe"] < final_rank["random"]
    assert final_rank["deeppipe"] < final_rank["raw_gp"]
    assert final_regret["deeppipe_scratch"] < final_regret["random"]
    assert elapsed < 1200.0
    report(
        7,
        "PASS: final regret/rank: "
        + ", ".join(
            f"{m} {final_regret[m]:.4f}/{final_rank[m]:.2f}" for m in methods
        )
        + f", {elapsed:.0f}s (meta-training excluded)",
    )


# -- criterion 8: adding an algorithm after meta-training ---------------------------

SVM_LAST_DOC = None


def _svm_last_space():
    doc = load_builtin_space("synthetic_toy").to_document()
    algos = doc["stages"][1]["algorithms"]
    svm = [a for a in algos if a["name"] == "svm"][0]
    doc["stages"][1]["algorithms"] = [a for a in algos if a["name"] != "svm"] + [svm]
    doc["name"] = "synthetic_toy_svm_last"
    return ss.space_from_document(doc), svm


def _prepare_extension():
    full_space, svm_doc = _svm_last_space()
    svm_index = full_space.algorithms_per_stage[1] - 1
    svm_width = full_space.stages[1].algorithms[svm_index].n_slots

    spec = md.SyntheticSpec(full_space, n_tasks=40, n_pipelines=240, noise=0.01)
    meta = md.split_assign(md.generate_synthetic(spec, SEED + 7), 30 / 40, 5 / 40, seed=SEED + 7)
    active = np.stack([ss.infer_mask(full_space, r).active for r in meta.features])

    reduced_doc = full_space.to_document()
    reduced_doc["stages"][1]["algorithms"] = reduced_doc["stages"][1]["algorithms"][:-1]
    reduced_space = ss.space_from_document(reduced_doc)
    uses_svm = active[:, 1] == svm_index
    reduced_features = meta.features[:, :-svm_width]

    train_stats = ss.preprocess_fit(
        reduced_features[~uses_svm], reduced_space.slot_names,
        reduced_space, active[~uses_svm],
    )

    def tasks_for(split):
        out = []
        for t in meta.tasks_in(split):
            row = meta.accuracy[meta.task_index(t)]
            idx = np.nonzero(~np.isnan(row) & ~uses_svm)[0]
            y = row[idx]
            y_std, _, _ = gp.standardize_targets(y)
            feats = ss.preprocess_apply(
                train_stats, reduced_features[idx], reduced_space, active[idx]
            )
            out.append(TaskArrays(t, feats, active[idx], y, y_std))
        return out

    arch = ArchitectureSpec(4, 1, 3, embedding_dim=20)
    net = build_network(reduced_space, arch, seed=0)
    cfg = TrainConfig(
        epochs=1200, batch_size=100, learning_rate=1e-3,
        val_interval=50, patience=8, seed=0,
    )
    result = meta_train(net, gp.KernelParams(), tasks_for("train"), tasks_for("val"), cfg)

    # the new algorithm's slots have no meta-training data; their scaling is
    # fitted on the candidate table, the rest keeps the meta-training stats
    pool_stats_full = ss.preprocess_fit(
        meta.features, full_space.slot_names, full_space, active
    )
    merged = list(train_stats.per_feature) + list(pool_stats_full.per_feature[-svm_width:])
    full_stats = ss.PreprocessStats(tuple(full_space.slot_names), tuple(merged))
    pool = bo_mod.CandidatePool(
        np.asarray(meta.pipeline_ids),
        ss.preprocess_apply(full_stats, meta.features, full_space, active),
        active,
    )
    train_rows = meta.accuracy[[meta.task_index(t) for t in meta.tasks_in("train")]].copy()
    train_rows[:, uses_svm] = np.nan  # not part of the meta-training history
    initials = [meta.pipeline_ids[c] for c in bo_mod.greedy_initialization(train_rows, 5)]

    svm_spec = ss.AlgorithmSpec(
        svm_doc["name"],
        tuple(
            ss.HyperparameterSpec(h["name"], h["kind"], h["lower"], h["upper"])
            for h in svm_doc["hyperparameters"]
        ),
    )
    return {
        "full_space": full_space, "meta": meta, "pool": pool, "initials": initials,
        "arch": arch, "trained_net": result.net, "trained_params": result.params,
        "svm_spec": svm_spec, "stage": 1,
    }


def _extension_worker(key):
    variant, task, seed = key
    g = _G
    meta = g["meta"]

    def oracle(pid):
        return meta.oracle(task, pid), meta.cost_of(task, pid)

    if variant == "extended":
        net = add_algorithm_encoder(g["trained_net"], g["stage"], g["svm_spec"], seed=seed)
        assert net.space.fingerprint() == g["full_space"].fingerprint()
        cfg = bo_mod.BOConfig(
            mode="deeppipe", n_initial=5, n_iterations=45, seed=seed,
            fine_tune_mode="trainable",
        )
        history = bo_mod.bo_run(
            cfg, g["pool"], oracle, g["initials"], net=net, params=g["trained_params"]
        )
    else:
        cfg = bo_mod.BOConfig(
            mode="deeppipe", n_initial=5, n_iterations=45, seed=seed,
            fine_tune_mode="full",
        )
        history = bo_mod.bo_run(
            cfg, g["pool"], oracle, g["initials"],
            net=build_network(g["full_space"], g["arch"], seed=seed),
            params=gp.KernelParams(),
        )
    return key, history.incumbents


def _run_extension_grid(keys):
    workers = max(1, min(2, os.cpu_count() or 1))
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(workers) as pool:
        return dict(pool.map(_extension_worker, keys, chunksize=2))


def test_criterion_8_new_algorithm_encoder():
    start = time.perf_counter()
    _G.clear()
    _G.update(_prepare_extension())
    meta = _G["meta"]
    test_tasks = meta.tasks_in("test")
    seeds = range(20)
    keys = [(v, t, s) for v in ("extended", "scratch") for t in test_tasks for s in seeds]
    results = _run_extension_grid(keys)
    y_max = {t: meta.y_max(t) for t in test_tasks}

    wins = 0
    margins = []
    for seed in seeds:
        ext = np.mean([y_max[t] - results[("extended", t, seed)][-1] for t in test_tasks])
        scr = np.mean([y_max[t] - results[("scratch", t, seed)][-1] for t in test_tasks])
        margins.append(scr - ext)
        if ext <= scr:
            wins += 1
    elapsed = time.perf_counter() - start
    assert wins >= 12, (wins, margins)  # >= 60% of 20 seeds
    assert elapsed < 1200.0
    report(
        8,
        f"PASS: frozen-net + new-encoder fine-tuning matches or beats a random-init "
        f"full network in {wins}/20 seeds, {elapsed:.0f}s",
    )


# -- criterion 9: byte-identical reruns from manifests -------------------------------


def _norm_training_log(raw: bytes) -> list[tuple]:
    rows = list(csv.DictReader(raw.decode().splitlines()))
    return [(r["epoch"], r["mean_train_nll"], r["mean_val_nll"]) for r in rows]


def test_criterion_9_manifest_rerun_determinism(tmp_path):
    space = load_builtin_space("synthetic_toy")
    spec = md.SyntheticSpec(space, n_tasks=10, n_pipelines=40, noise=0.01)
    meta = md.split_assign(md.generate_synthetic(spec, 5), 0.6, 0.2, seed=5)
    data = tmp_path / "data"
    data.mkdir()
    md.save_meta_dataset(
        meta, str(data / "pipelines.csv"), str(data / "evals.csv"), str(data / "splits.json")
    )

    run = tmp_path / "train"
    cfg = {
        "space": "builtin:synthetic_toy",
        "data": {
            "pipelines": str(data / "pipelines.csv"),
            "evaluations": str(data / "evals.csv"),
            "splits": str(data / "splits.json"),
        },
        "architecture": {"width_factor": 2, "encoder_layers": 1,
                         "aggregation_layers": 3, "embedding_dim": 6},
        "training": {"epochs": 30, "batch_size": 25, "learning_rate": 1e-3,
                     "val_interval": 10, "patience": 3, "seed": 0},
        "out_dir": str(run),
    }
    cfg_path = tmp_path / "train.json"
    cfg_path.write_text(json.dumps(cfg))
    assert cli_main(["meta-train", "--config", str(cfg_path)]) == 0
    ckpt = (run / "checkpoint.json").read_bytes()
    stats = (run / "preprocess_stats.json").read_bytes()
    log = _norm_training_log((run / "training_log.csv").read_bytes())
    assert cli_main(["rerun", "--manifest", str(run / "manifest.json")]) == 0
    assert (run / "checkpoint.json").read_bytes() == ckpt
    assert (run / "preprocess_stats.json").read_bytes() == stats
    # the training log carries wall-clock timings; all recorded quantities
    # other than elapsed_seconds must match bit-for-bit
    assert _norm_training_log((run / "training_log.csv").read_bytes()) == log

    task = meta.tasks_in("test")[0]
    hist = tmp_path / "history.csv"
    argv = [
        "optimize", "--space", "builtin:synthetic_toy",
        "--pipelines", str(data / "pipelines.csv"),
        "--evaluations", str(data / "evals.csv"),
        "--splits", str(data / "splits.json"),
        "--checkpoint", str(run / "checkpoint.json"),
        "--task-id", str(task), "--mode", "deeppipe",
        "--iterations", "8", "--fine-tune-steps", "20",
        "--seed", "1", "--out", str(hist),
    ]
    assert cli_main(argv) == 0
    first = hist.read_bytes()
    assert cli_main(["rerun", "--manifest", str(hist) + ".manifest.json"]) == 0
    assert hist.read_bytes() == first

    bench = tmp_path / "bench"
    bench_cfg = {
        "space": "builtin:synthetic_toy",
        "data": cfg["data"],
        "methods": ["random", "raw_gp"],
        "seeds": [0, 1],
        "n_initial": 3,
        "iterations": 5,
        "fine_tune_steps": 10,
        "out_dir": str(bench),
    }
    bench_path = tmp_path / "bench.json"
    bench_path.write_text(json.dumps(bench_cfg))
    assert cli_main(["benchmark", "--config", str(bench_path)]) == 0
    outputs = {
        name: (bench / name).read_bytes()
        for name in ("results.csv", "rank.csv", "regret.csv")
    }
    assert cli_main(["rerun", "--manifest", str(bench / "manifest.json")]) == 0
    for name, blob in outputs.items():
        assert (bench / name).read_bytes() == blob, name

    small = [
        (tmp_path / "report.json",
         ["verify-theory", "--samples", "5000", "--out", str(tmp_path / "report.json")]),
        (tmp_path / "metrics.csv",
         ["cluster-metric", "--space", "builtin:synthetic_toy", "--seeds", "2",
          "--n-configs", "120", "--n-triples", "200", "--out", str(tmp_path / "metrics.csv")]),
        (tmp_path / "emb.csv",
         ["export-embeddings", "--space", "builtin:synthetic_toy", "--width-factor", "2",
          "--encoder-layers", "1", "--aggregation-layers", "3", "--embedding-dim", "6",
          "--n-configs", "15", "--out", str(tmp_path / "emb.csv")]),
        (tmp_path / "count.json",
         ["param-count", "--space", "builtin:pmf", "--width-factor", "8",
          "--encoder-layers", "1", "--aggregation-layers", "3",
          "--out", str(tmp_path / "count.json")]),
    ]
    for out_file, argv2 in small:
        assert cli_main(argv2) == 0
        blob = out_file.read_bytes()
        assert cli_main(["rerun", "--manifest", str(out_file) + ".manifest.json"]) == 0
        assert out_file.read_bytes() == blob, out_file.name
    report(
        9,
        "PASS: reruns of every command byte-identical "
        "(training log compared without its wall-clock column)",
    )


# -- criterion 10: the default fine-tune touches only the kernel --------------------


def test_criterion_10_fine_tune_contract(toy_space, toy_batch):
    net = build_network(
        toy_space, ArchitectureSpec(2, 1, 3, embedding_dim=6), seed=4
    )
    before = net.get_vector().copy()
    rng = np.random.default_rng(SEED + 4)
    idx = rng.choice(len(toy_batch["features"]), size=25, replace=False)
    y, _, _ = gp.standardize_targets(rng.uniform(0.1, 0.9, size=25))
    params = gp.KernelParams()
    tuned, losses = fine_tune(
        net, params, toy_batch["features"][idx], toy_batch["active"][idx], y
    )
    assert len(losses) == 100  # exactly the default number of gradient steps
    assert np.array_equal(net.get_vector(), before)  # bit-identical weights
    assert tuned != params
    report(10, "PASS: 100 steps by default, kernel parameters moved, weights bit-identical")
