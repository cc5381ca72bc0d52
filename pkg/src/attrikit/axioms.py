"""Executable attribution axioms: sensitivity, implementation invariance,
completeness, and linearity, runnable against any registered method.

Each check returns an AxiomVerdict. holds=None means the check does not
apply to the method (no conv maps, no path, no spatial input); that is a
different statement than a failure. Every False verdict carries a witness
with enough data to rerun the offending case, and replay_witness reproduces
the recorded numbers bit-for-bit.

Verdict comparison against a method's declared flags is one-sided: an
executable check can refute a declared guarantee, but a passing run on a
finite family never proves one, so only declared-True/verdict-False pairs
count as disagreements.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import completeness_residual
from .methods import METHODS, MethodSpec, get_method
from .models import functionally_equal
from .task import ExplanationTask, TABULAR_CLASSIFICATION
from .tensor import gather, mul, relu, reshape, sub
from .updates import BIM, UpdateConfig

AXIOMS = ("Sensitivity", "ImplementationInvariance", "Complete", "Linear")

# flag attribute on AxiomFlags for each comparable axiom; Linear is recorded
# but not declared per method, so it never enters the comparison
_FLAG_ATTR = {
    "Sensitivity": "sensitivity",
    "ImplementationInvariance": "implementation_invariance",
    "Complete": "complete",
}

LINEAR_THETAS = ((10.0, 0.1), (2.0, 3.0), (0.0, 0.0), (1.0, 1.0), (-1.0, 2.0))

# sign-step paths ignore gradient magnitudes; this budget makes the failure
# unmistakable on the (10, 0.1) member of the family
_LINEAR_PATH_ATTACK_CFG = UpdateConfig(epsilon=0.5, alpha=0.1, steps=5, clamp=(-10.0, 10.0))


@dataclass
class AxiomVerdict:
    axiom: str
    holds: Optional[bool]               # None: check not applicable
    witness: Optional[dict]
    tolerance: float

    def to_dict(self) -> dict:
        return {
            "axiom": self.axiom,
            "holds": self.holds,
            "witness": self.witness,
            "tolerance": float(self.tolerance),
        }


class PairNotEquivalentError(ValueError):
    """The model pair handed to the invariance check computes different
    functions; the check's verdict would be meaningless."""


def _resolve(method) -> MethodSpec:
    if isinstance(method, MethodSpec):
        return method
    return get_method(method)


def _not_applicable(axiom: str, tolerance: float, reason: str) -> AxiomVerdict:
    return AxiomVerdict(axiom, None, {"reason": reason}, tolerance)


# ---- sensitivity ----

@dataclass(frozen=True)
class SensitivityInstance:
    """Single-logit task depending on exactly one input feature."""
    kind: str                           # affine | quadratic | relu | saturated_relu
    j: int
    coeff: float
    x: np.ndarray
    x_prime: np.ndarray

    def make_task(self) -> ExplanationTask:
        return _instance_task(self.kind, self.j, self.coeff)

    def params(self) -> dict:
        return {"kind": self.kind, "j": int(self.j), "coeff": float(self.coeff),
                "x": self.x.tolist(), "x_prime": self.x_prime.tolist()}


def _instance_task(kind: str, j: int, coeff: float) -> ExplanationTask:
    def forward(t):
        xj = gather(t, int(j))
        if kind == "affine":
            out = mul(xj, coeff)
        elif kind == "quadratic":
            out = mul(mul(xj, xj), coeff)
        elif kind == "relu":
            out = mul(relu(xj), coeff)
        elif kind == "saturated_relu":
            out = mul(sub(1.0, relu(sub(1.0, xj))), coeff)
        else:
            raise ValueError(f"unknown instance kind {kind!r}")
        return reshape(out, (1,))

    def loss(t, label):
        return sub(0.0, gather(forward(t), int(label)))

    return ExplanationTask(forward_fn=forward, loss_fn=loss, task_tag=TABULAR_CLASSIFICATION)


def build_sensitivity_family(size: int = 20, seed: int = 0) -> list:
    """Instances where exactly one of two features changes the output,
    cycling dependence kinds; the saturated members have a zero gradient at
    x, so purely local methods must miss them."""
    rng = np.random.default_rng(seed)
    kinds = ("affine", "quadratic", "relu", "saturated_relu")
    family = []
    for i in range(int(size)):
        kind = kinds[i % len(kinds)]
        j = i % 2
        coeff = float(rng.uniform(0.5, 2.0))
        value = 2.0 if kind == "saturated_relu" else float(rng.uniform(0.6, 1.4))
        x = np.zeros(2)
        x[j] = value
        family.append(SensitivityInstance(kind=kind, j=j, coeff=coeff,
                                          x=x, x_prime=np.zeros(2)))
    return family


def _method_overrides(spec: MethodSpec, baseline: Optional[np.ndarray]) -> dict:
    if spec.accepts_baseline and baseline is not None:
        return {"baseline": np.array(baseline, dtype=np.float64)}
    return {}


def check_sensitivity(method, task_family: Optional[Sequence] = None,
                      tolerance: float = 1e-8, gap_tol: float = 1e-12) -> AxiomVerdict:
    """A method is sensitive if the feature that alone changes the output
    gets a nonzero attribution on every applicable family instance.

    The reference point is the method's own path start when it has one,
    else the instance baseline. Instances where the reference equals the
    input, differs in more than the designated feature, or leaves the output
    unchanged assert nothing and are skipped.
    """
    spec = _resolve(method)
    if spec.needs_conv:
        return _not_applicable("Sensitivity", tolerance, "method needs conv feature maps")
    family = build_sensitivity_family() if task_family is None else list(task_family)
    for idx, inst in enumerate(family):
        task = inst.make_task()
        try:
            res = spec.run(task, inst.x, 0, **_method_overrides(spec, inst.x_prime))
        except ValueError as exc:
            return _not_applicable("Sensitivity", tolerance,
                                   f"method cannot run on the family: {exc}")
        x_ref = inst.x_prime if res.path_endpoints is None else np.asarray(res.path_endpoints[0])
        diff = np.abs(inst.x - x_ref)
        changed = np.where(diff > 0.0)[0]
        if changed.size != 1 or changed[0] != inst.j:
            continue                    # vacuous or unisolated for this method
        gap = abs(task.score_value(inst.x, 0) - task.score_value(x_ref, 0))
        if gap <= gap_tol:
            continue
        observed = float(res.attribution[inst.j])
        if abs(observed) <= tolerance:
            witness = {
                "check": "sensitivity",
                "method": spec.name,
                "family_index": idx,
                "instance": inst.params(),
                "feature": int(inst.j),
                "observed": observed,
                "gap": float(gap),
            }
            return AxiomVerdict("Sensitivity", False, witness, tolerance)
    return AxiomVerdict("Sensitivity", True, None, tolerance)


# ---- implementation invariance ----

def check_implementation_invariance(method, model_pair, n_probes: int = 100,
                                    tolerance: float = 1e-8, seed: int = 0) -> AxiomVerdict:
    """Functionally equal models must receive elementwise-equal attributions.

    The pair is verified equal first; handing over an unequal pair is a
    usage error, not a failed axiom.
    """
    spec = _resolve(method)
    m1, m2 = model_pair
    equal, worst = functionally_equal(m1, m2)
    if not equal:
        raise PairNotEquivalentError(
            f"model pair differs by up to {worst:.3e}; verdict would be meaningless")
    if spec.needs_conv:
        return _not_applicable("ImplementationInvariance", tolerance,
                               "pair construction yields conv-free models")
    task1 = ExplanationTask.for_model(m1)
    task2 = ExplanationTask.for_model(m2)
    rng = np.random.default_rng(seed)
    shape = (m1.input_dim,)
    for i in range(int(n_probes)):
        x = rng.uniform(0.0, 1.0, size=shape)
        label = task1.predict(x)
        try:
            a1 = spec.run(task1, x, label).attribution
            a2 = spec.run(task2, x, label).attribution
        except ValueError as exc:
            if i == 0:
                return _not_applicable("ImplementationInvariance", tolerance,
                                       f"method cannot run on the pair: {exc}")
            raise
        gap = np.abs(a1 - a2)
        if float(gap.max()) > tolerance:
            feature = int(np.argmax(gap))
            witness = {
                "check": "implementation_invariance",
                "method": spec.name,
                "probe_index": i,
                "seed": int(seed),
                "x": x.tolist(),
                "label": int(label),
                "feature": feature,
                "value_a": float(a1[feature]),
                "value_b": float(a2[feature]),
                "max_diff": float(gap.max()),
            }
            return AxiomVerdict("ImplementationInvariance", False, witness, tolerance)
    return AxiomVerdict("ImplementationInvariance", True, None, tolerance)


# ---- completeness ----

def check_complete(method, task: ExplanationTask, samples, tolerance: float = 1e-6,
                   min_pass_fraction: float = 1.0, overrides: Optional[dict] = None) -> AxiomVerdict:
    """Attributions of a path method must telescope to its endpoint gap:
    residual <= tolerance * max(1, |gap|) on at least min_pass_fraction of
    the samples. Methods without a path get a not-applicable verdict."""
    spec = _resolve(method)
    if not spec.path_based:
        return _not_applicable("Complete", tolerance, "method carries no endpoint gap")
    overrides = overrides or {}
    passes = 0
    worst = None
    samples = list(samples)
    for idx, x in enumerate(samples):
        x = np.asarray(x, dtype=np.float64)
        label = task.predict(x)
        res = spec.run(task, x, label, **overrides)
        residual = completeness_residual(task, res)
        bound = tolerance * max(1.0, abs(res.endpoint_gap))
        if residual <= bound:
            passes += 1
        elif worst is None or residual - bound > worst["residual"] - worst["bound"]:
            worst = {
                "check": "complete",
                "method": spec.name,
                "sample_index": idx,
                "x": x.tolist(),
                "label": int(label),
                "residual": float(residual),
                "gap": float(res.endpoint_gap),
                "bound": float(bound),
            }
    fraction = passes / len(samples) if samples else 1.0
    if fraction >= min_pass_fraction:
        return AxiomVerdict("Complete", True, None, tolerance)
    worst["pass_fraction"] = fraction
    return AxiomVerdict("Complete", False, worst, tolerance)


# ---- linearity ----

def _affine_task(theta) -> ExplanationTask:
    theta = np.asarray(theta, dtype=np.float64)

    def forward(t):
        total = mul(gather(t, 0), float(theta[0]))
        for j in range(1, theta.size):
            total = total + mul(gather(t, int(j)), float(theta[j]))
        return reshape(total, (1,))

    def loss(t, label):
        return sub(0.0, gather(forward(t), int(label)))

    return ExplanationTask(forward_fn=forward, loss_fn=loss, task_tag=TABULAR_CLASSIFICATION)


def _linear_overrides(spec: MethodSpec, x_prime: np.ndarray) -> dict:
    if spec.name == "mfaba":
        return {"attack": BIM(_LINEAR_PATH_ATTACK_CFG)}
    return _method_overrides(spec, x_prime)


def check_linear(method, tolerance: float = 1e-8) -> AxiomVerdict:
    """On f(x) = theta . x the attribution must equal theta * (x - x');
    sign-step attack paths scale by the step budget instead and fail."""
    spec = _resolve(method)
    if spec.needs_conv:
        return _not_applicable("Linear", tolerance, "method needs conv feature maps")
    x = np.ones(2)
    x_prime = np.zeros(2)
    for theta in LINEAR_THETAS:
        task = _affine_task(theta)
        try:
            res = spec.run(task, x, 0, **_linear_overrides(spec, x_prime))
        except ValueError as exc:
            return _not_applicable("Linear", tolerance,
                                   f"method cannot run on the family: {exc}")
        expected = np.asarray(theta) * (x - x_prime)
        if not np.allclose(res.attribution, expected, atol=tolerance):
            witness = {
                "check": "linear",
                "method": spec.name,
                "theta": [float(v) for v in theta],
                "x": x.tolist(),
                "x_prime": x_prime.tolist(),
                "observed": res.attribution.tolist(),
                "expected": expected.tolist(),
            }
            return AxiomVerdict("Linear", False, witness, tolerance)
    return AxiomVerdict("Linear", True, None, tolerance)


# ---- witness replay and flag comparison ----

def replay_witness(witness: dict, *, task: Optional[ExplanationTask] = None,
                   model_pair=None) -> dict:
    """Rerun the case a witness records and compare against the recorded
    numbers bitwise. Completeness replays need the original task;
    invariance replays need the original model pair."""
    check = witness["check"]
    spec = get_method(witness["method"])
    if check == "sensitivity":
        p = witness["instance"]
        inst = SensitivityInstance(kind=p["kind"], j=p["j"], coeff=p["coeff"],
                                   x=np.array(p["x"]), x_prime=np.array(p["x_prime"]))
        res = spec.run(inst.make_task(), inst.x, 0,
                       **_method_overrides(spec, inst.x_prime))
        observed = float(res.attribution[witness["feature"]])
        return {"reproduced": observed == witness["observed"], "observed": observed}
    if check == "linear":
        task = _affine_task(witness["theta"])
        x = np.array(witness["x"])
        res = spec.run(task, x, 0, **_linear_overrides(spec, np.array(witness["x_prime"])))
        observed = res.attribution.tolist()
        return {"reproduced": observed == witness["observed"], "observed": observed}
    if check == "complete":
        if task is None:
            raise ValueError("completeness replay needs the original task")
        x = np.array(witness["x"])
        res = spec.run(task, x, witness["label"])
        residual = float(completeness_residual(task, res))
        return {"reproduced": residual == witness["residual"], "residual": residual}
    if check == "implementation_invariance":
        if model_pair is None:
            raise ValueError("invariance replay needs the original model pair")
        m1, m2 = model_pair
        x = np.array(witness["x"])
        a1 = spec.run(ExplanationTask.for_model(m1), x, witness["label"]).attribution
        a2 = spec.run(ExplanationTask.for_model(m2), x, witness["label"]).attribution
        feature = witness["feature"]
        return {
            "reproduced": (float(a1[feature]) == witness["value_a"]
                           and float(a2[feature]) == witness["value_b"]),
            "value_a": float(a1[feature]),
            "value_b": float(a2[feature]),
        }
    raise ValueError(f"unknown witness check {check!r}")


def refuted_declarations(method, verdicts) -> list:
    """Names of axioms the method declares True but a verdict found False.

    Not-applicable verdicts and False declarations never disagree: a finite
    family can refute a guarantee, not certify the absence of one.
    """
    spec = _resolve(method)
    refuted = []
    for verdict in verdicts:
        attr = _FLAG_ATTR.get(verdict.axiom)
        if attr is None:
            continue
        if getattr(spec.axiom_flags, attr) and verdict.holds is False:
            refuted.append(verdict.axiom)
    return refuted
