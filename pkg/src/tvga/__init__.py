"""Triad (variational) graph auto-encoders on a small numpy autodiff core."""

__version__ = "0.1.0"

from .graph import Graph, load_graph, split_edges  # noqa: E402,F401
from .trainer import TrainConfig, train  # noqa: E402,F401
