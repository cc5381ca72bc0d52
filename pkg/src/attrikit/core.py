"""The shared attribution loop: accumulate step * gradient along a trajectory.

Starting from the update rule's begin point, each iteration evaluates the
task gradient, asks the rule for a displacement, adds
``displacement * score_gradient`` into the running attribution, and moves.
After T steps the attribution sum telescopes first-order expansions of the
score, so |sum(attribution) - (score(end) - score(start))| is the method's
completeness residual and is reported on every result.
"""
from __future__ import annotations

import warnings
from typing import Optional

import numpy as np

from .task import AttributionResult, ExplanationTask
from .tensor import NonFiniteError
from .updates import UpdateMethod

TRUST_RADIUS_FACTOR = 0.25


def fundamental_attribute(task: ExplanationTask, x: np.ndarray, label: int,
                          update: UpdateMethod, T: Optional[int] = None, *,
                          reset_update: bool = True,
                          method_name: Optional[str] = None) -> AttributionResult:
    """Run T update steps and accumulate displacement-weighted score gradients.

    ``update.step`` receives the gradient of the ascent objective (the loss);
    the attribution accumulates against the score gradient, its negation.
    With reset_update=False the rule's state (origin, momentum, rng stream)
    carries over from a previous run and the trajectory continues from ``x``,
    which makes split runs sum to the single-run attribution.
    """
    x = np.asarray(x, dtype=np.float64)
    steps = int(T) if T is not None else update.cfg.steps
    if steps < 1:
        raise ValueError("T must be at least 1")
    start = update.begin(x) if reset_update else x.copy()
    lo, hi = update.cfg.clamp
    trust_radius = TRUST_RADIUS_FACTOR * (hi - lo)
    attribution = np.zeros_like(start)
    point = start.copy()
    notes: list = []
    for _ in range(steps):
        _, loss_grad = task.loss_value_and_grad(point, label)
        displacement = update.step(point, loss_grad)
        displacement = np.asarray(displacement, dtype=np.float64)
        if displacement.shape != point.shape:
            raise ValueError(
                f"update step shape {displacement.shape} does not match input {point.shape}")
        if not np.all(np.isfinite(displacement)):
            raise NonFiniteError("update step produced a non-finite displacement")
        step_norm = float(np.max(np.abs(displacement))) if displacement.size else 0.0
        if step_norm > trust_radius and "trust_radius_exceeded" not in notes:
            notes.append("trust_radius_exceeded")
            warnings.warn(
                f"update step max|dx| = {step_norm:.4g} exceeds trust radius "
                f"{trust_radius:.4g} (0.25 of the clamp range); first-order "
                "accumulation may be inaccurate", RuntimeWarning, stacklevel=2)
        attribution += displacement * (-loss_grad)
        point = point + displacement
    gap = task.score_value(point, label) - task.score_value(start, label)
    return AttributionResult(
        attribution=attribution,
        method_name=method_name or f"core[{update.kind}]",
        label=int(label),
        steps_taken=steps,
        path_endpoints=(start, point),
        completeness_residual=abs(float(attribution.sum()) - gap),
        endpoint_gap=gap,
        notes=notes,
    )


def completeness_residual(task: ExplanationTask, result: AttributionResult) -> float:
    """Recompute |sum(attribution) - score gap| from the stored endpoints.

    Methods without endpoints fall back to the gap recorded on the result
    (zero for purely local methods), keeping the quantity well defined.
    """
    total = float(result.attribution.sum())
    if result.path_endpoints is None:
        return abs(total - float(result.endpoint_gap))
    start, end = result.path_endpoints
    gap = task.score_value(end, result.label) - task.score_value(start, result.label)
    return abs(total - gap)
