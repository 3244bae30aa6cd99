"""Pixel erasure: push an image of one class toward another.

Pixels are ranked by the score difference between the original and the
target class; up to 157 pixels (20% of a 28x28 image) with a positive
difference are set to their reference value, and the change in the logit
difference between the two classes is recorded.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..attribution import select_target, target_output
from ..errors import DataError
from ..graph import Graph, forward
from ..methods import attribute

MAX_ERASED = 157


@dataclass
class ErasureReport:
    image_id: int
    original_class: int
    target_class: int
    method: str
    erased: tuple = ()
    log_odds_before: float = 0.0
    log_odds_after: float = 0.0
    skipped: bool = False
    note: str = ""

    @property
    def n_erased(self) -> int:
        return len(self.erased)

    @property
    def log_odds_increase(self) -> float:
        """Rise of the target-vs-original log-odds caused by the erasure."""
        return self.log_odds_before - self.log_odds_after

    def to_dict(self):
        d = asdict(self)
        d["erased"] = list(self.erased)
        d["n_erased"] = self.n_erased
        d["log_odds_increase"] = self.log_odds_increase
        return d


def select_pixels(score_diff, cap: int = MAX_ERASED) -> np.ndarray:
    """Flat indices with a positive score difference, highest first (ties: lowest index), capped."""
    flat = np.asarray(score_diff, dtype=np.float64).reshape(-1)
    order = np.argsort(-flat, kind="stable")
    order = order[flat[order] > 0]
    return order[:cap]


def log_odds(g: Graph, x, original_class: int, target_class: int) -> np.ndarray:
    """``logit[original_class] - logit[target_class]`` for a batch, at the pre-softmax layer."""
    original = target_output(g, x, select_target(g, original_class))
    return original - target_output(g, x, select_target(g, target_class))


def erase(image, reference, indices):
    out = np.array(image, dtype=np.float64)
    out.reshape(-1)[indices] = np.broadcast_to(reference, out.shape).reshape(-1)[indices]
    return out


def erasure_eval(g: Graph, image, original_class: int, target_class: int, method: str, reference=None,
                 image_id: int = 0, rules=None) -> ErasureReport:
    if original_class == target_class:
        raise DataError("original and target class must differ")
    image = np.asarray(image, dtype=np.float64)
    ref = np.zeros_like(image) if reference is None else np.asarray(reference, dtype=np.float64)
    pred = int(np.argmax(forward(g, image).output))
    report = ErasureReport(image_id, original_class, target_class, method)
    if pred != original_class:
        report.skipped = True
        report.note = f"model predicts {pred}, not {original_class}"
        return report
    scores_orig = attribute(method, g, image, ref, original_class, rules=rules).scores
    scores_target = attribute(method, g, image, ref, target_class, rules=rules).scores
    idx = select_pixels(scores_orig - scores_target)
    erased = erase(image, ref, idx)
    before, after = log_odds(g, np.stack([image, erased]), original_class, target_class)
    report.erased = tuple(int(i) for i in idx)
    report.log_odds_before = float(before)
    report.log_odds_after = float(after)
    return report
