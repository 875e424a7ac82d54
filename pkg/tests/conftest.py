import numpy as np
import pytest

from deeppipe import search_space as ss
from deeppipe.spaces import load_builtin_space


@pytest.fixture(scope="session")
def toy_space() -> ss.SearchSpace:
    return load_builtin_space("synthetic_toy")


@pytest.fixture(scope="session")
def toy_batch(toy_space):
    """120 random configs of the toy space, flattened and scaled to [0,1]."""
    rng = np.random.default_rng(42)
    configs = [ss.random_config(toy_space, rng) for _ in range(120)]
    flat = [ss.flatten(toy_space, c) for c in configs]
    raw = np.stack([f for f, _m in flat])
    active = np.stack([m.active for _f, m in flat])
    stats = ss.preprocess_fit(raw, toy_space.slot_names, toy_space, active)
    return {
        "configs": configs,
        "raw": raw,
        "features": ss.preprocess_apply(stats, raw, toy_space, active),
        "active": active,
        "stats": stats,
    }
