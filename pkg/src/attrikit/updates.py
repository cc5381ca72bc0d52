"""Update methods: the per-step rules that drive the attribution core.

A rule turns (current point, gradient of the ascent objective) into a step.
LinearPath and GaussianNoise ignore the gradient; the attack kinds follow
its sign. Every attack step is projected onto the L-infinity ball around
the run's origin intersected with the clamp box, ball first, so the
feasibility invariant max|x_t - origin| <= epsilon holds after every step.

``sign`` uses numpy semantics: sign(0) = 0, so a zero gradient produces a
zero step rather than an error.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class UpdateConfig:
    epsilon: float = 16.0 / 255.0
    alpha: Optional[float] = None          # defaults to epsilon/10; noise kinds read it as sigma
    steps: int = 10
    momentum_decay: float = 1.0
    seed: int = 0
    clamp: tuple = (0.0, 1.0)
    targeted: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.alpha is None:
            self.alpha = self.epsilon / 10.0 if self.epsilon > 0 else 0.01
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.epsilon > 0 and self.alpha > 2.0 * self.epsilon:
            raise ValueError(f"alpha {self.alpha} exceeds 2*epsilon {2 * self.epsilon}")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.momentum_decay < 0:
            raise ValueError("momentum_decay must be nonnegative")
        lo, hi = self.clamp
        if not lo < hi:
            raise ValueError(f"clamp range {self.clamp} must satisfy lo < hi")


class UpdateMethod:
    """Base class. ``begin(x)`` resets per-run state and returns the path
    start; ``step(x_t, grad)`` returns the next displacement."""

    kind = "base"
    is_attack = False

    def __init__(self, cfg: Optional[UpdateConfig] = None):
        self.cfg = cfg if cfg is not None else UpdateConfig()
        self._origin: Optional[np.ndarray] = None

    def begin(self, x: np.ndarray) -> np.ndarray:
        self._origin = np.array(x, dtype=np.float64)
        return self._begin_hook(self._origin)

    def _begin_hook(self, x: np.ndarray) -> np.ndarray:
        return x.copy()

    def step(self, x_t: np.ndarray, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _require_begun(self):
        if self._origin is None:
            raise RuntimeError(f"{self.kind}: step() before begin()")

    def _project_displacement(self, x_t: np.ndarray, raw_step: np.ndarray) -> np.ndarray:
        """Clip x_t + raw_step to the ball around the origin, then to the
        clamp box, and return the displacement actually taken."""
        lo, hi = self.cfg.clamp
        proposed = np.clip(x_t + raw_step, self._origin - self.cfg.epsilon,
                           self._origin + self.cfg.epsilon)
        proposed = np.clip(proposed, lo, hi)
        return proposed - x_t

    def _ascent(self, grad: np.ndarray) -> np.ndarray:
        return -grad if self.cfg.targeted else grad


class LinearPath(UpdateMethod):
    """Straight path from a baseline to the explained input in cfg.steps
    equal increments; the gradient argument is ignored."""

    kind = "linearpath"

    def __init__(self, cfg: Optional[UpdateConfig] = None, baseline: Optional[np.ndarray] = None):
        super().__init__(cfg)
        self.baseline = None if baseline is None else np.asarray(baseline, dtype=np.float64)
        self._increment: Optional[np.ndarray] = None

    def _begin_hook(self, x: np.ndarray) -> np.ndarray:
        start = np.zeros_like(x) if self.baseline is None else self.baseline.reshape(x.shape).copy()
        self._increment = (x - start) / float(self.cfg.steps)
        return start

    def step(self, x_t: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self._increment is None:
            raise RuntimeError("linearpath: step() before begin() set a baseline")
        return self._increment.copy()


class GaussianNoise(UpdateMethod):
    """Seeded isotropic gaussian steps with sigma = cfg.alpha."""

    kind = "noise"

    def __init__(self, cfg: Optional[UpdateConfig] = None):
        super().__init__(cfg)
        self._rng: Optional[np.random.Generator] = None

    def _begin_hook(self, x: np.ndarray) -> np.ndarray:
        self._rng = np.random.default_rng(self.cfg.seed)
        return x.copy()

    def step(self, x_t: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self._require_begun()
        return self._rng.normal(0.0, self.cfg.alpha, size=x_t.shape)


class FGSM(UpdateMethod):
    """One full-budget step epsilon * sign(grad); as a multi-step update it
    keeps projecting back onto the ball like the iterative kinds."""

    kind = "fgsm"
    is_attack = True

    def step(self, x_t: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self._require_begun()
        raw = self.cfg.epsilon * np.sign(self._ascent(grad))
        return self._project_displacement(x_t, raw)


class BIM(UpdateMethod):
    """Iterative sign steps of size alpha, projected after every step."""

    kind = "bim"
    is_attack = True

    def step(self, x_t: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self._require_begun()
        raw = self.cfg.alpha * np.sign(self._ascent(grad))
        return self._project_displacement(x_t, raw)


class PGD(UpdateMethod):
    """BIM plus a seeded uniform random start inside the ball."""

    kind = "pgd"
    is_attack = True

    def __init__(self, cfg: Optional[UpdateConfig] = None):
        super().__init__(cfg)
        self._rng = np.random.default_rng(self.cfg.seed)

    def _begin_hook(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.cfg.clamp
        start = x + self._rng.uniform(-self.cfg.epsilon, self.cfg.epsilon, size=x.shape)
        return np.clip(start, lo, hi)

    def step(self, x_t: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self._require_begun()
        raw = self.cfg.alpha * np.sign(self._ascent(grad))
        return self._project_displacement(x_t, raw)


class MIM(UpdateMethod):
    """Momentum sign steps: buffer = mu*buffer + grad/||grad||_1."""

    kind = "mim"
    is_attack = True

    def __init__(self, cfg: Optional[UpdateConfig] = None):
        super().__init__(cfg)
        self._momentum: Optional[np.ndarray] = None

    def _begin_hook(self, x: np.ndarray) -> np.ndarray:
        self._momentum = np.zeros_like(x)
        return x.copy()

    def step(self, x_t: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self._require_begun()
        g = self._ascent(grad)
        l1 = float(np.abs(g).sum())
        self._momentum = self.cfg.momentum_decay * self._momentum
        if l1 > 0.0:
            self._momentum = self._momentum + g / l1
        raw = self.cfg.alpha * np.sign(self._momentum)
        return self._project_displacement(x_t, raw)


UPDATE_KINDS = {
    "linearpath": LinearPath,
    "noise": GaussianNoise,
    "fgsm": FGSM,
    "bim": BIM,
    "pgd": PGD,
    "mim": MIM,
}


def make_update(kind: str, cfg: Optional[UpdateConfig] = None, **kwargs) -> UpdateMethod:
    kind = str(kind).lower()
    if kind not in UPDATE_KINDS:
        raise ValueError(f"unknown update kind {kind!r}; available: {', '.join(sorted(UPDATE_KINDS))}")
    return UPDATE_KINDS[kind](cfg, **kwargs)


def first_order_gain(grad: np.ndarray, epsilon: float) -> float:
    """max of grad . dx over the epsilon ball, attained at epsilon*sign(grad)."""
    return float(epsilon * np.abs(grad).sum())


# ---- attack driving ----

@dataclass
class AttackOutcome:
    x_adv: np.ndarray
    success: bool
    query_count: int
    clean_class: int
    adv_class: int
    loss_start: float
    loss_end: float

    def summary(self) -> dict:
        return {
            "success": bool(self.success),
            "query_count": int(self.query_count),
            "clean_class": int(self.clean_class),
            "adv_class": int(self.adv_class),
            "loss_start": float(self.loss_start),
            "loss_end": float(self.loss_end),
        }


def run_attack(task, x: np.ndarray, label: int, method: UpdateMethod) -> AttackOutcome:
    """Drive an attack kind against one sample.

    Untargeted success means the argmax moved off the clean prediction;
    targeted success means it reached ``label``. A gradient evaluation and a
    forward evaluation each count as one query. FGSM takes its definitional
    single step regardless of cfg.steps; epsilon = 0 returns x unchanged.
    """
    if not method.is_attack:
        raise ValueError(f"run_attack needs an attack kind, got {method.kind!r}")
    x = np.asarray(x, dtype=np.float64)
    clean_class = task.predict(x)
    queries = 1
    if method.cfg.epsilon == 0:
        loss = task.loss_value(x, label)
        return AttackOutcome(x.copy(), False, queries + 1, clean_class, clean_class, loss, loss)
    xt = method.begin(x)
    steps = 1 if method.kind == "fgsm" else method.cfg.steps
    for _ in range(steps):
        _, grad = task.loss_value_and_grad(xt, label)
        queries += 1
        xt = xt + method.step(xt, grad)
    adv_class = task.predict(xt)
    queries += 1
    loss_start = task.loss_value(x, label)
    loss_end = task.loss_value(xt, label)
    queries += 2
    success = (adv_class == int(label)) if method.cfg.targeted else (adv_class != clean_class)
    return AttackOutcome(xt, success, queries, clean_class, adv_class, loss_start, loss_end)


@dataclass
class RobustnessReport:
    accuracy: float
    epsilon: float
    kind: str
    n_samples: int
    flipped: list

    def summary(self) -> dict:
        return {
            "robust_accuracy": float(self.accuracy),
            "eps": float(self.epsilon),
            "update": self.kind,
            "n_samples": int(self.n_samples),
            "flipped": [int(i) for i in self.flipped],
        }


def robust_accuracy(task, dataset, method: UpdateMethod, n_samples: Optional[int] = None) -> RobustnessReport:
    """Fraction of samples whose argmax survives the attack.

    Survival is measured against the clean prediction, not the true label,
    so epsilon = 0 gives exactly 1.0.
    """
    n = len(dataset.inputs) if n_samples is None else min(int(n_samples), len(dataset.inputs))
    flipped = []
    for i in range(n):
        outcome = run_attack(task, dataset.inputs[i], int(dataset.labels[i]), method)
        if outcome.adv_class != outcome.clean_class:
            flipped.append(i)
    return RobustnessReport(1.0 - len(flipped) / n, method.cfg.epsilon, method.kind, n, flipped)
