"""Concrete attribution methods and their registry.

Gradient-path methods (ig, fig, eg, big, mfaba) delegate to the shared
accumulation loop in ``core`` and report a completeness residual against
their own endpoint gap. Local methods (sm, sg) return a single averaged
gradient. gradcam and rise produce nonnegative relevance maps and carry no
endpoint gap. ``random`` is the seeded noise baseline the metric suite
compares against.

Every method is a plain function; per-call RNGs are created from explicit
seeds, so calls are independent and safe to fan out across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import fundamental_attribute
from .models import Model
from .task import AttributionResult, ExplanationTask
from .tensor import Tensor, gather, tape
from .updates import BIM, LinearPath, UpdateConfig, UpdateMethod, run_attack


def bilinear_resize(a: np.ndarray, shape: tuple) -> np.ndarray:
    """Separable linear interpolation of a 2-D array onto (H, W); the corner
    samples map onto the output corners. A 1x1 input broadcasts."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"bilinear_resize expects a 2-D array, got shape {a.shape}")
    h, w = a.shape
    H, W = (int(s) for s in shape)
    cols = np.linspace(0.0, w - 1.0, W)
    rows = np.linspace(0.0, h - 1.0, H)
    tmp = np.empty((h, W))
    for i in range(h):
        tmp[i] = np.interp(cols, np.arange(w), a[i])
    out = np.empty((H, W))
    for j in range(W):
        out[:, j] = np.interp(rows, np.arange(h), tmp[:, j])
    return out


def _local_result(attribution: np.ndarray, name: str, label: int, notes=None) -> AttributionResult:
    """Result for methods without a path: the recorded gap is zero, so the
    stored residual stays consistent with completeness_residual()."""
    attribution = np.asarray(attribution, dtype=np.float64)
    return AttributionResult(
        attribution=attribution,
        method_name=name,
        label=int(label),
        steps_taken=1,
        path_endpoints=None,
        completeness_residual=abs(float(attribution.sum())),
        endpoint_gap=0.0,
        notes=list(notes) if notes else [],
    )


# ---- gradient methods ----

def saliency_map(task: ExplanationTask, x: np.ndarray, label: int) -> AttributionResult:
    """Signed input-gradient of the score; |.| is applied only at ranking time."""
    _, grad = task.score_value_and_grad(np.asarray(x, dtype=np.float64), label)
    return _local_result(grad, "sm", label)


def smoothgrad(task: ExplanationTask, x: np.ndarray, label: int,
               n_samples: int = 32, sigma: float = 0.1, seed: int = 0) -> AttributionResult:
    """Mean score gradient under seeded gaussian input noise."""
    if n_samples < 1:
        raise ValueError("smoothgrad: n_samples must be at least 1")
    if sigma < 0:
        raise ValueError("smoothgrad: sigma must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    if sigma == 0.0:
        _, grad = task.score_value_and_grad(x, label)
        return _local_result(grad, "sg", label)
    rng = np.random.default_rng(seed)
    acc = np.zeros_like(x)
    for _ in range(int(n_samples)):
        _, grad = task.score_value_and_grad(x + rng.normal(0.0, sigma, size=x.shape), label)
        acc += grad
    return _local_result(acc / float(n_samples), "sg", label)


def integrated_gradients(task: ExplanationTask, x: np.ndarray, label: int,
                         baseline: Optional[np.ndarray] = None, T: int = 64,
                         method_name: str = "ig") -> AttributionResult:
    """Straight-path gradient accumulation from a baseline (default zeros).

    Left-endpoint Riemann sum with T points; exact for affine models at any
    T. The wide clamp below only parks the step-size guard: a straight path
    already reports its own residual, and nothing needs projecting.
    """
    x = np.asarray(x, dtype=np.float64)
    if baseline is not None:
        baseline = np.asarray(baseline, dtype=np.float64)
        if baseline.shape != x.shape:
            raise ValueError(
                f"baseline shape {baseline.shape} does not match input {x.shape}")
    lp = LinearPath(UpdateConfig(epsilon=0.0, alpha=1.0, steps=int(T), clamp=(-1e6, 1e6)),
                    baseline=baseline)
    return fundamental_attribute(task, x, label, lp, method_name=method_name)


def fast_integrated_gradients(task: ExplanationTask, x: np.ndarray, label: int,
                              baseline: Optional[np.ndarray] = None, T: int = 8) -> AttributionResult:
    """The same straight-path accumulation with a small-T preset."""
    return integrated_gradients(task, x, label, baseline=baseline, T=T, method_name="fig")


def expected_gradients(task: ExplanationTask, x: np.ndarray, label: int,
                       baseline_pool, n_draws: int = 200, seed: int = 0) -> AttributionResult:
    """Mean of (x - x') * grad at a random point on the segment from x' to x.

    Baselines cycle through the pool in order (draw k uses pool[k % size])
    while the position t is seeded-uniform, so when n_draws is a multiple of
    the pool size, sum(A) = score(x) - mean_pool score(x') holds exactly for
    affine models. The recorded endpoint gap uses the drawn baselines.
    """
    x = np.asarray(x, dtype=np.float64)
    pool = [np.asarray(b, dtype=np.float64) for b in baseline_pool]
    if not pool:
        raise ValueError("expected_gradients: empty baseline pool")
    for b in pool:
        if b.shape != x.shape:
            raise ValueError(f"baseline shape {b.shape} does not match input {x.shape}")
    if n_draws < 1:
        raise ValueError("expected_gradients: n_draws must be at least 1")
    rng = np.random.default_rng(seed)
    acc = np.zeros_like(x)
    baseline_scores = {}
    drawn_score_sum = 0.0
    for k in range(int(n_draws)):
        idx = k % len(pool)
        b = pool[idx]
        t = rng.uniform()
        _, grad = task.score_value_and_grad(b + t * (x - b), label)
        acc += (x - b) * grad
        if idx not in baseline_scores:
            baseline_scores[idx] = task.score_value(b, label)
        drawn_score_sum += baseline_scores[idx]
    attribution = acc / float(n_draws)
    gap = task.score_value(x, label) - drawn_score_sum / float(n_draws)
    return AttributionResult(
        attribution=attribution,
        method_name="eg",
        label=int(label),
        steps_taken=int(n_draws),
        path_endpoints=None,
        completeness_residual=abs(float(attribution.sum()) - gap),
        endpoint_gap=gap,
        notes=["mean_baseline_gap"],
    )


def boundary_ig(task: ExplanationTask, x: np.ndarray, label: int,
                attack: Optional[UpdateMethod] = None, T: int = 64,
                static_baseline: Optional[np.ndarray] = None,
                refine: bool = False, refine_tol: float = 1e-3) -> AttributionResult:
    """Straight-path accumulation from an adversarially found baseline.

    Runs the attack; on success the adversarial point (optionally bisected
    toward the decision boundary to within refine_tol) becomes the baseline.
    A failed attack falls back to the static baseline and flags the result.
    """
    x = np.asarray(x, dtype=np.float64)
    if attack is None:
        attack = BIM(UpdateConfig())
    if not attack.is_attack:
        raise ValueError(f"boundary_ig needs an attack kind, got {attack.kind!r}")
    outcome = run_attack(task, x, label, attack)
    if outcome.success:
        baseline = outcome.x_adv
        if refine:
            baseline = _bisect_boundary(task, x, baseline, outcome.clean_class, refine_tol)
        res = integrated_gradients(task, x, label, baseline=baseline, T=T, method_name="big")
        res.notes.append(f"adversarial_baseline[{attack.kind}]")
    else:
        baseline = static_baseline if static_baseline is not None else np.zeros_like(x)
        res = integrated_gradients(task, x, label, baseline=baseline, T=T, method_name="big")
        res.notes.append("fallback_static_baseline")
    return res


def _bisect_boundary(task, x_in: np.ndarray, x_out: np.ndarray, clean_class: int,
                     tol: float) -> np.ndarray:
    """Bisect between a point classified as clean_class and one that is not,
    stopping when the bracket is tighter than tol in max-norm."""
    lo, hi = 0.0, 1.0  # x_in at 0 keeps the clean class, x_out at 1 does not
    width = float(np.max(np.abs(x_out - x_in)))
    if width == 0.0:
        return x_out.copy()
    while (hi - lo) * width > tol:
        mid = 0.5 * (lo + hi)
        if task.predict(x_in + mid * (x_out - x_in)) == clean_class:
            lo = mid
        else:
            hi = mid
    return x_in + hi * (x_out - x_in)


def adversarial_path(task: ExplanationTask, x: np.ndarray, label: int,
                     attack: Optional[UpdateMethod] = None,
                     T: Optional[int] = None) -> AttributionResult:
    """Gradient accumulation along an iterative attack trajectory."""
    if attack is None:
        attack = BIM(UpdateConfig(epsilon=0.1, alpha=0.02, steps=20))
    if attack.kind not in ("bim", "pgd", "mim"):
        raise ValueError(
            f"adversarial_path needs an iterative attack (bim, pgd, mim), got {attack.kind!r}")
    return fundamental_attribute(task, np.asarray(x, dtype=np.float64), label, attack,
                                 T=T, method_name="mfaba")


# ---- activation and sampling methods ----

def grad_cam(model: Model, x: np.ndarray, label: int) -> AttributionResult:
    """Channel-weighted last-conv activation map, upsampled and max-normalized.

    Channel weights are the spatial means of the target logit's gradient at
    the last conv feature maps; negative evidence is cut by the relu before
    upsampling. The map lives in [0, 1] and broadcasts to the input shape.
    """
    if getattr(model, "forward_with_activations", None) is None:
        raise ValueError(f"grad_cam needs a model with conv feature maps, got kind {model.kind!r}")
    x = np.asarray(x, dtype=np.float64)
    with tape() as tp:
        logits, act = model.forward_with_activations(Tensor(x, requires_grad=True))
        tp.backward(gather(logits, int(label)))
    weights = act.grad.mean(axis=(0, 1))                       # (C,) spatial means
    cam = np.maximum(np.tensordot(act.data, weights, axes=([2], [0])), 0.0)
    target_shape = model.input_shape[:2]
    cam = bilinear_resize(cam, target_shape)
    peak = float(cam.max())
    if peak > 0.0:
        cam = cam / peak
    attribution = np.broadcast_to(cam[..., None], model.input_shape).copy()
    if x.shape != attribution.shape:
        attribution = attribution.reshape(x.shape)
    return _local_result(attribution, "gradcam", label, notes=["normalized_map"])


def rise(task: ExplanationTask, x: np.ndarray, label: int, n_masks: int = 1000,
         keep_prob: float = 0.5, cell_grid: int = 4, seed: int = 0) -> AttributionResult:
    """Probability-weighted average of random soft masks; forward passes only.

    Binary cell grids (keep with probability keep_prob) are bilinearly
    upsampled to the input's spatial size; each mask's weight is the label's
    softmax probability on the masked input. Dividing by n*p makes a
    constant model yield a near-constant map.
    """
    if n_masks < 1:
        raise ValueError("rise: n_masks must be at least 1")
    if not 0.0 < keep_prob < 1.0:
        raise ValueError("rise: keep_prob must lie strictly between 0 and 1")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (2, 3):
        raise ValueError(f"rise expects a spatial (H, W[, C]) input, got shape {x.shape}")
    H, W = x.shape[:2]
    g = int(cell_grid)
    if g < 1:
        raise ValueError("rise: cell_grid must be at least 1")
    rng = np.random.default_rng(seed)
    acc = np.zeros((H, W))
    label = int(label)
    for _ in range(int(n_masks)):
        cells = (rng.random((g, g)) < keep_prob).astype(np.float64)
        mask = bilinear_resize(cells, (H, W))
        masked = x * (mask if x.ndim == 2 else mask[..., None])
        score = float(task.probabilities(masked)[label])
        acc += score * mask
    cam = acc / (float(n_masks) * keep_prob)
    attribution = cam if x.ndim == 2 else np.broadcast_to(cam[..., None], x.shape).copy()
    return _local_result(attribution, "rise", label, notes=["forward_only"])


def random_attribution(task: ExplanationTask, x: np.ndarray, label: int,
                       seed: int = 0) -> AttributionResult:
    """Seeded gaussian noise; the do-nothing baseline for metric comparisons."""
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    return _local_result(rng.standard_normal(x.shape), "random", label,
                         notes=["baseline_method"])


# ---- registry ----

@dataclass(frozen=True)
class AxiomFlags:
    """Declared axiom compliance; encoded as data, compared against the
    executable checks by the axioms command."""
    sensitivity: bool
    implementation_invariance: bool
    complete: bool


@dataclass
class MethodSpec:
    name: str
    axiom_flags: AxiomFlags
    fn: Callable
    params: dict = field(default_factory=dict)
    path_based: bool = False          # carries a meaningful endpoint gap
    needs_conv: bool = False
    forward_only: bool = False
    accepts_baseline: bool = False

    def run(self, task: ExplanationTask, x: np.ndarray, label: int, *,
            model: Optional[Model] = None, **overrides) -> AttributionResult:
        kwargs = {**self.params, **overrides}
        if self.needs_conv:
            if model is None:
                raise ValueError(f"method {self.name!r} needs the underlying model")
            return self.fn(model, x, label, **kwargs)
        return self.fn(task, x, label, **kwargs)


def _run_eg(task, x, label, baseline_pool=None, baseline=None, **kwargs):
    if baseline_pool is None:
        b = baseline if baseline is not None else np.zeros_like(np.asarray(x, dtype=np.float64))
        baseline_pool = [b]
    return expected_gradients(task, x, label, baseline_pool, **kwargs)


def _run_big(task, x, label, baseline=None, **kwargs):
    return boundary_ig(task, x, label, static_baseline=baseline, **kwargs)


METHODS = {
    "sm": MethodSpec("sm", AxiomFlags(False, True, False), saliency_map),
    "sg": MethodSpec("sg", AxiomFlags(False, False, False), smoothgrad,
                     params={"n_samples": 32, "sigma": 0.1, "seed": 0}),
    "ig": MethodSpec("ig", AxiomFlags(True, True, True), integrated_gradients,
                     params={"T": 64}, path_based=True, accepts_baseline=True),
    "fig": MethodSpec("fig", AxiomFlags(True, True, True), fast_integrated_gradients,
                      params={"T": 8}, path_based=True, accepts_baseline=True),
    "eg": MethodSpec("eg", AxiomFlags(True, True, True), _run_eg,
                     params={"n_draws": 200, "seed": 0}, path_based=True,
                     accepts_baseline=True),
    "big": MethodSpec("big", AxiomFlags(True, True, True), _run_big,
                      params={"T": 64}, path_based=True, accepts_baseline=True),
    "mfaba": MethodSpec("mfaba", AxiomFlags(True, True, True), adversarial_path,
                        path_based=True),
    "gradcam": MethodSpec("gradcam", AxiomFlags(False, False, False), grad_cam,
                          needs_conv=True),
    "rise": MethodSpec("rise", AxiomFlags(False, False, False), rise,
                       params={"n_masks": 1000, "keep_prob": 0.5, "cell_grid": 4, "seed": 0},
                       forward_only=True),
    "random": MethodSpec("random", AxiomFlags(False, True, False), random_attribution,
                         params={"seed": 0}, forward_only=True),
}


def get_method(name: str) -> MethodSpec:
    key = str(name).lower()
    if key not in METHODS:
        raise ValueError(f"unknown method {name!r}; available: {', '.join(sorted(METHODS))}")
    return METHODS[key]


def run_method(name: str, task: ExplanationTask, x: np.ndarray, label: int, *,
               model: Optional[Model] = None, **overrides) -> AttributionResult:
    return get_method(name).run(task, x, label, model=model, **overrides)
