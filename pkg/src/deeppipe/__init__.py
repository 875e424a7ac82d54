"""Deep-kernel GP surrogates for ML pipeline search, plus the analysis toolkit."""

__version__ = "0.1.0"

from . import analysis, bo, embed, gp, metadata, search_space, training  # noqa: F401
