"""Small hand-built networks with known attribution behaviour."""

import numpy as np

from .graph import Dense, Graph, ReLU


def saturation_network() -> Graph:
    """``y = 1 - ReLU(1 - i1 - i2)``: flat once ``i1 + i2 > 1``."""
    return Graph(
        (
            Dense([[-1.0], [-1.0]], [1.0]),
            ReLU(),
            Dense([[-1.0]], [1.0]),
        ),
        (2,),
    )


def threshold_unit(bias: float = -10.0) -> Graph:
    """A single ReLU with a bias: ``y = ReLU(x + bias)``."""
    return Graph((Dense([[1.0]], [bias]), ReLU()), (1,))


def min_network() -> Graph:
    """``o = min(i1, i2)`` built as ``i1 - ReLU(i1 - i2)``.

    The skip connection carrying ``i1`` is expressed sequentially as
    ``ReLU(i1) - ReLU(-i1)`` so the graph stays a plain layer chain.
    """
    w1 = np.array([[1.0, -1.0, 1.0], [0.0, 0.0, -1.0]])
    w2 = np.array([[1.0], [-1.0], [-1.0]])
    return Graph((Dense(w1, np.zeros(3)), ReLU(), Dense(w2, np.zeros(1))), (2,))


def linear_model(weights, bias=0.0) -> Graph:
    """A single affine neuron ``y = w . x + b``."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    return Graph((Dense(w, [bias]),), (w.shape[0],))
