"""Method descriptors and a single dispatch point for every attribution method."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import baselines, oracle
from .attribution import AttributionResult, deeplift
from .errors import DataError

METHODS = (
    "deeplift-rescale",
    "deeplift-revealcancel",
    "deeplift-fc-rc-conv-rs",
    "gradient",
    "gradXinput",
    "intgrad:N",
    "guided",
    "guidedXinput",
    "deconv",
    "occlusion",
)

DEFAULT_INTGRAD_STEPS = 20


def parse_method(text: str) -> tuple[str, Optional[int]]:
    """Split ``intgrad:N`` into its name and step count; validate the rest."""
    name, _, arg = text.partition(":")
    if name == "intgrad":
        try:
            n = int(arg) if arg else DEFAULT_INTGRAD_STEPS
        except ValueError:
            raise DataError(f"bad step count in {text!r}") from None
        if n < 1:
            raise DataError("intgrad needs at least one interval")
        return name, n
    if arg or text not in METHODS:
        raise DataError(f"unknown method {text!r}; expected one of {', '.join(METHODS)}")
    return text, None


def all_methods(intgrad_steps: int = DEFAULT_INTGRAD_STEPS) -> list:
    return [m if m != "intgrad:N" else f"intgrad:{intgrad_steps}" for m in METHODS]


def attribute(
    method: str,
    g,
    x,
    reference=None,
    target: int = 0,
    rules: Optional[Union[str, Mapping[int, str]]] = None,
    per_position: bool = False,
    use_final: bool = False,
    reference_name: str = "zeros",
) -> AttributionResult:
    """Run ``method`` on ``x`` (single input or batch) against one reference.

    ``rules`` overrides the per-layer rule assignment of DeepLIFT methods.
    """
    name, n = parse_method(method)
    if name.startswith("deeplift-"):
        preset = name[len("deeplift-"):]
        res = deeplift(g, x, reference, rules if rules is not None else preset, target, use_final,
                       reference_name=reference_name)
        res.method = name if rules is None else "deeplift-custom"
        return res
    if name == "gradient":
        return baselines.input_gradient(g, x, target, "plain", use_final, reference)
    if name == "guided":
        return baselines.input_gradient(g, x, target, "guided", use_final, reference)
    if name == "deconv":
        return baselines.input_gradient(g, x, target, "deconv", use_final, reference)
    if name == "gradXinput":
        return baselines.gradient_times_input(g, x, reference, target, use_final, reference_name)
    if name == "guidedXinput":
        return baselines.guided_times_input(g, x, reference, target, use_final, reference_name)
    if name == "intgrad":
        return baselines.integrated_gradients(g, x, reference, target, n, use_final, reference_name)
    return oracle.occlusion_scores(g, x, reference, target, use_final, per_position, reference_name)


def attribute_references(method: str, g, x, refs: Sequence, target: int = 0, **kwargs) -> AttributionResult:
    """Average a method's scores over several references (single input)."""
    if len(refs) == 0:
        raise DataError("at least one reference is required")
    results = [attribute(method, g, x, r, target, **kwargs) for r in refs]
    if len(results) == 1:
        return results[0]
    first = results[0]
    return AttributionResult(
        scores=np.mean(np.stack([r.scores for r in results]), axis=0),
        target=first.target,
        method=first.method,
        reference=kwargs.get("reference_name", first.reference),
        delta_t=float(np.mean([r.delta_t for r in results])),
        metadata={**first.metadata, "n_references": len(refs)},
    )
