#!/usr/bin/env python3
"""Regenerate the builtin search-space documents under src/deeppipe/spaces/.

The three benchmark-shaped spaces pin exact flattened widths (72 / 37 / 35)
and per-stage slot maxima used by the parameter-count suite; edit with care.
"""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "deeppipe" / "spaces"


def cont(name, lo, hi):
    return {"name": name, "kind": "continuous", "lower": lo, "upper": hi}


def integer(name, lo, hi):
    return {"name": name, "kind": "integer", "lower": lo, "upper": hi}


def cat(name, categories):
    return {"name": name, "kind": "categorical", "categories": categories}


def algo(name, hps=(), group=None):
    entry = {"name": name, "hyperparameters": list(hps)}
    if group:
        entry["encoder_group"] = group
    return entry


def pmf_shaped():
    tree_common = [
        integer("bootstrap", 0, 1),
        integer("min_samples_leaf", 1, 20),
        integer("n_estimators", 10, 500),
        cont("max_features", 0.1, 1.0),
        cont("min_weight_fraction_leaf", 0.0, 0.5),
        integer("min_samples_split", 2, 20),
        integer("max_depth", 1, 30),
    ]
    xgb = [
        cont(n, 0.0, 1.0)
        for n in (
            "reg_alpha", "colsample_bytree", "colsample_bylevel",
            "scale_pos_weight", "learning_rate", "max_delta_step",
            "base_score", "subsample", "reg_lambda", "min_child_weight", "gamma",
        )
    ] + [integer("n_estimators", 10, 500), integer("max_depth", 1, 30)]
    gb = [
        integer("max_leaf_nodes", 2, 100),
        cont("learning_rate", 0.01, 1.0),
        integer("min_samples_leaf", 1, 20),
        integer("n_estimators", 10, 500),
        cont("subsample", 0.1, 1.0),
        cont("min_weight_fraction_leaf", 0.0, 0.5),
        cont("max_features", 0.1, 1.0),
        integer("min_samples_split", 2, 20),
        integer("max_depth", 1, 30),
        cat("loss", ["deviance"]),
    ]
    dt = [
        integer("max_leaf_nodes", 2, 100),
        integer("min_samples_leaf", 1, 20),
        cont("max_features", 0.1, 1.0),
        cont("min_weight_fraction_leaf", 0.0, 0.5),
        integer("min_samples_split", 2, 20),
        integer("max_depth", 1, 30),
        cat("splitter", ["best"]),
        cat("criterion", ["entropy", "gini"]),
    ]
    return {
        "name": "pmf_shaped",
        "stages": [
            {
                "name": "preprocessor",
                "algorithms": [
                    algo("polynomial", [
                        integer("degree", 1, 4),
                        integer("include_bias", 0, 1),
                        integer("interaction_only", 0, 1),
                    ]),
                    algo("pca", [
                        cont("keep_variance", 0.5, 0.9999),
                        integer("whiten", 0, 1),
                    ]),
                ],
            },
            {
                "name": "estimator",
                "algorithms": [
                    algo("extra_trees", tree_common + [cat("criterion", ["entropy", "gini"])]),
                    algo("random_forest", tree_common + [
                        cat("criterion", ["entropy", "gini"]),
                        cont("min_impurity_decrease", 0.0, 0.5),
                    ]),
                    algo("xgradient_boosting", xgb),
                    algo("knn", [
                        integer("p", 1, 2),
                        integer("n_neighbors", 1, 50),
                        cat("weights", ["distance", "uniform"]),
                    ]),
                    algo("gradient_boosting", gb),
                    algo("decision_tree", dt),
                    algo("lda", [
                        cont("shrinkage_factor", 0.0, 1.0),
                        integer("n_components", 1, 10),
                        cont("tol", 1e-5, 1e-1),
                        cat("shrinkage", ["none", "auto", "manual"]),
                    ], group="discriminant_analysis"),
                    algo("qda", [cont("reg_param", 0.0, 1.0)], group="discriminant_analysis"),
                    algo("bernoulli_nb", [
                        cont("alpha", 0.01, 100.0), integer("fit_prior", 0, 1),
                    ], group="naive_bayes"),
                    algo("multinomial_nb", [
                        cont("alpha", 0.01, 100.0), integer("fit_prior", 0, 1),
                    ], group="naive_bayes"),
                    algo("gaussian_nb", [], group="naive_bayes"),
                ],
            },
        ],
    }


def tensor_oboe_shaped():
    return {
        "name": "tensor_oboe_shaped",
        "stages": [
            {
                "name": "imputer",
                "algorithms": [
                    algo("simple_imputer", [
                        cat("strategy", ["constant", "mean", "median", "most_frequent"]),
                    ]),
                ],
            },
            {
                "name": "encoder",
                "algorithms": [algo("one_hot_encoder", [cat("handle_unknown", ["ignore"])])],
            },
            {
                "name": "standardizer",
                "algorithms": [algo("standard_scaler")],
            },
            {
                "name": "dim_reducer",
                "algorithms": [
                    algo("pca", [cont("n_components", 0.1, 1.0)]),
                    algo("select_k_best", [integer("k", 1, 30)]),
                    algo("variance_threshold"),
                ],
            },
            {
                "name": "estimator",
                "algorithms": [
                    algo("extra_trees", [
                        integer("min_samples_split", 2, 20),
                        cat("criterion", ["entropy", "gini"]),
                    ]),
                    algo("gradient_boosting", [
                        cont("learning_rate", 0.01, 1.0),
                        integer("max_depth", 1, 10),
                        cat("max_features", ["all", "log2"]),
                    ]),
                    algo("logit", [
                        cont("c", 0.01, 100.0),
                        cat("penalty", ["l1", "l2"]),
                        cat("solver", ["liblinear", "saga"]),
                    ]),
                    algo("mlp", [
                        cont("alpha", 1e-5, 1e-1),
                        cont("learning_rate_init", 1e-4, 1e-1),
                        cat("learning_rate", ["adaptive"]),
                        cat("solver", ["adam", "sgd"]),
                    ]),
                    algo("random_forest", [
                        integer("min_samples_split", 2, 20),
                        cat("criterion", ["entropy", "gini"]),
                    ]),
                    algo("linear_svm", [cont("c", 0.01, 100.0)]),
                    algo("knn", [integer("n_neighbors", 1, 50), integer("p", 1, 2)]),
                    algo("decision_tree", [integer("min_samples_split", 2, 20)]),
                    algo("adaboost", [
                        cont("learning_rate", 0.01, 1.0),
                        integer("n_estimators", 10, 500),
                    ]),
                    algo("gaussian_nb", [], group="no_hyperparameters"),
                    algo("perceptron", [], group="no_hyperparameters"),
                ],
            },
        ],
    }


def zap_shaped():
    schedule = [
        integer("early_epoch", 1, 10),
        cont("max_inner_loop_ratio", 0.1, 0.5),
        cont("skip_valid_score_threshold", 0.5, 0.95),
        integer("test_after_at_least_seconds", 1, 30),
        integer("test_after_at_least_seconds_max", 30, 120),
        integer("test_after_at_least_seconds_step", 1, 10),
        integer("batch_size", 16, 512),
        cont("cv_valid_ratio", 0.05, 0.3),
        integer("max_size", 32, 256),
        integer("max_valid_count", 64, 512),
        integer("steps_per_epoch", 5, 250),
        integer("train_info_sample", 64, 512),
        integer("amsgrad", 0, 1),
        cont("freeze_portion", 0.0, 0.9),
        cont("lr", 1e-5, 1e-1),
        cont("min_lr", 1e-7, 1e-3),
        cont("momentum", 0.5, 0.99),
        integer("nesterov", 0, 1),
        integer("warm_up_epoch", 0, 5),
        cont("warmup_multiplier", 1.0, 3.0),
        cont("weight_decay", 1e-6, 1e-2),
        cont("simple_model_lr", 1e-4, 1e-1),
        integer("simple_model_nusvc", 0, 1),
        integer("simple_model_rf", 0, 1),
        integer("simple_model_svc", 0, 1),
        integer("scheduler_cosine", 0, 1),
        integer("scheduler_plateau", 0, 1),
        integer("opt_type_adam", 0, 1),
        integer("opt_type_adamw", 0, 1),
        integer("early_stop_rounds", 1, 20),
    ]
    assert len(schedule) == 30
    return {
        "name": "zap_shaped",
        "stages": [
            {
                "name": "backbone",
                "algorithms": [
                    algo("resnet18"),
                    algo("efficientnet_b0"),
                    algo("efficientnet_b1"),
                    algo("efficientnet_b2"),
                ],
            },
            {
                "name": "training_schedule",
                "algorithms": [
                    algo("tunable_schedule", schedule),
                    algo("fixed_defaults"),
                ],
            },
        ],
    }


def synthetic_toy():
    return {
        "name": "synthetic_toy",
        "stages": [
            {
                "name": "reducer",
                "algorithms": [
                    algo("pca", [
                        cont("var_keep", 0.5, 0.99),
                        integer("iter_power", 1, 4),
                    ]),
                    algo("kbest", [integer("k", 1, 8)]),
                    algo("identity"),
                ],
            },
            {
                "name": "estimator",
                "algorithms": [
                    algo("knn", [
                        integer("n_neighbors", 1, 15),
                        cont("p", 1.0, 2.0),
                        cat("weights", ["uniform", "distance"]),
                    ]),
                    algo("svm", [cont("c", 0.01, 10.0), cont("gamma", 0.001, 1.0)]),
                    algo("tree", [
                        integer("max_depth", 1, 10),
                        cont("min_split", 0.05, 0.5),
                    ]),
                    algo("nb"),
                    algo("mlp", [
                        cont("lr", 1e-4, 1e-1),
                        cont("alpha", 1e-5, 1e-2),
                        integer("width", 4, 64),
                    ]),
                ],
            },
        ],
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, doc in [
        ("pmf", pmf_shaped()),
        ("tensor_oboe", tensor_oboe_shaped()),
        ("zap", zap_shaped()),
        ("synthetic_toy", synthetic_toy()),
    ]:
        path = OUT / f"{name}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        print("wrote", path)


if __name__ == "__main__":
    main()
