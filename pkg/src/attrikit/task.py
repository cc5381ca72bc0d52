"""Explanation tasks and attribution results.

An ExplanationTask pairs a differentiable forward map with the scalar
objective that drives both attacks and attribution. ``loss_fn`` is the
quantity attacks ascend; the attribution *score* is its negation, so with
the default "logit" objective the score is the target-class logit and
completeness sums compare against score differences along the path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .models import Model, TinyCNN, cross_entropy
from .tensor import Tensor, gather, no_grad, value_and_grad

IMAGE_CLASSIFICATION = "image_classification"
TABULAR_CLASSIFICATION = "tabular_classification"
TASK_TAGS = (IMAGE_CLASSIFICATION, TABULAR_CLASSIFICATION)

OBJECTIVES = ("logit", "cross_entropy")


@dataclass
class ExplanationTask:
    forward_fn: Callable[[Tensor], Tensor]          # x -> logits
    loss_fn: Callable[[Tensor, int], Tensor]        # scalar objective attacks ascend
    task_tag: str = TABULAR_CLASSIFICATION

    def __post_init__(self):
        if self.task_tag not in TASK_TAGS:
            raise ValueError(f"task_tag must be one of {TASK_TAGS}, got {self.task_tag!r}")

    @classmethod
    def for_model(cls, model: Model, objective: str = "logit") -> "ExplanationTask":
        """Wrap a zoo model. objective="logit" ascends the negated target
        logit; "cross_entropy" ascends the cross-entropy loss."""
        if objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
        if objective == "logit":
            def loss_fn(x: Tensor, label: int) -> Tensor:
                return -gather(model.forward(x), int(label))
        else:
            def loss_fn(x: Tensor, label: int) -> Tensor:
                return cross_entropy(model.forward(x), int(label))
        tag = IMAGE_CLASSIFICATION if isinstance(model, TinyCNN) else TABULAR_CLASSIFICATION
        return cls(forward_fn=model.forward, loss_fn=loss_fn, task_tag=tag)

    # ---- untracked conveniences ----
    def logits(self, x: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.forward_fn(Tensor(x)).data.copy()

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        z = self.logits(x)
        e = np.exp(z - z.max())
        return e / e.sum()

    def predict(self, x: np.ndarray) -> int:
        return int(np.argmax(self.logits(x)))

    def loss_value(self, x: np.ndarray, label: int) -> float:
        with no_grad():
            return self.loss_fn(Tensor(x), label).item()

    def loss_value_and_grad(self, x: np.ndarray, label: int) -> tuple[float, np.ndarray]:
        """Value and input-gradient of the ascent objective."""
        return value_and_grad(lambda t: self.loss_fn(t, label), np.asarray(x, dtype=np.float64))

    def score_value(self, x: np.ndarray, label: int) -> float:
        """The attribution score s = -loss (target logit under the default objective)."""
        return -self.loss_value(x, label)

    def score_value_and_grad(self, x: np.ndarray, label: int) -> tuple[float, np.ndarray]:
        value, grad = self.loss_value_and_grad(x, label)
        return -value, -grad


@dataclass
class AttributionResult:
    """Attribution map plus the bookkeeping needed to audit it.

    ``path_endpoints`` is (start, end) for path-style methods and None for
    methods with no path. ``endpoint_gap`` is the score difference the
    attribution sum is compared against (for path methods: score(end) -
    score(start)); ``completeness_residual`` is |sum(attribution) - gap|.
    """

    attribution: np.ndarray
    method_name: str
    label: int
    steps_taken: int
    path_endpoints: Optional[tuple]
    completeness_residual: float
    endpoint_gap: float
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.attribution = np.asarray(self.attribution, dtype=np.float64)
        if not np.all(np.isfinite(self.attribution)):
            raise ValueError("attribution holds non-finite values")
        if not (np.isfinite(self.completeness_residual) and self.completeness_residual >= 0):
            raise ValueError("completeness_residual must be finite and nonnegative")

    def summary(self) -> dict:
        return {
            "method": self.method_name,
            "label": int(self.label),
            "steps": int(self.steps_taken),
            "attribution_sum": float(self.attribution.sum()),
            "endpoint_gap": float(self.endpoint_gap),
            "completeness_residual": float(self.completeness_residual),
            "notes": list(self.notes),
        }
