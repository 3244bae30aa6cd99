"""Reference-based feature attribution for small feed-forward networks."""

__version__ = "0.1.0"

from .attribution import AttributionResult, deeplift, normalize_softmax_contributions  # noqa: E402
from .graph import Graph, forward, load_model, read_model, save_model, write_model  # noqa: E402
from .methods import METHODS, attribute  # noqa: E402

__all__ = [
    "AttributionResult",
    "Graph",
    "METHODS",
    "attribute",
    "deeplift",
    "forward",
    "load_model",
    "normalize_softmax_contributions",
    "read_model",
    "save_model",
    "write_model",
]
