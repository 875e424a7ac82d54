"""Builtin search-space documents shipped with the package."""

from importlib import resources

from ..search_space import SearchSpace, load_search_space

BUILTIN = ("pmf", "tensor_oboe", "zap", "synthetic_toy")


def builtin_space_path(name: str) -> str:
    if name not in BUILTIN:
        raise KeyError(f"unknown builtin space {name!r}; choose from {BUILTIN}")
    return str(resources.files(__package__) / f"{name}.json")


def load_builtin_space(name: str) -> SearchSpace:
    return load_search_space(builtin_space_path(name))
