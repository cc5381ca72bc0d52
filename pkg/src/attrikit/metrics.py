"""Faithfulness and efficiency metrics: perturbation curves, infidelity,
throughput, and the benchmark harness that crosses models with methods.

Insertion reveals features of x over a baseline in decreasing |attribution|
order and integrates the model's confidence in its clean prediction; deletion
mirrors it (start at x, remove toward the baseline), so lower is better.
Infidelity measures how well the attribution linearizes the model's response
to signed perturbations. Throughput is wall-clock explanations/second.

Per-sample metric evaluation is embarrassingly parallel and every stochastic
quantity is seeded per sample (seed + sample index), so the worker count
never changes the numbers. Timing runs stay on one worker.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import fundamental_attribute
from .methods import METHODS, get_method
from .task import ExplanationTask
from .updates import UpdateConfig, make_update, robust_accuracy

ATTACK_SWEEP_KINDS = ("linearpath", "fgsm", "bim", "pgd", "mim")


# ---- perturbation curves ----

@dataclass(frozen=True)
class PerturbationCurve:
    """Model confidence in the clean prediction as features are revealed or
    removed; fractions run 0 -> 1 and auc is the trapezoidal integral."""
    fractions: np.ndarray
    scores: np.ndarray
    auc: float

    @classmethod
    def from_scores(cls, fractions, scores) -> "PerturbationCurve":
        fractions = np.asarray(fractions, dtype=np.float64)
        scores = np.asarray(scores, dtype=np.float64)
        return cls(fractions, scores, float(np.trapezoid(scores, fractions)))


def _ranking(attribution: np.ndarray) -> np.ndarray:
    # descending |A|; stable sort leaves ties in ascending index order
    return np.argsort(-np.abs(attribution.ravel()), kind="stable")


def _curve(task: ExplanationTask, x: np.ndarray, attribution: np.ndarray,
           K: int, baseline: Optional[np.ndarray], insert: bool) -> PerturbationCurve:
    x = np.asarray(x, dtype=np.float64)
    attribution = np.asarray(attribution, dtype=np.float64)
    if attribution.shape != x.shape:
        raise ValueError(
            f"attribution shape {attribution.shape} does not match input {x.shape}")
    K = int(K)
    if K < 2:
        raise ValueError("K must be at least 2")
    baseline = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if baseline.shape != x.shape:
        raise ValueError(f"baseline shape {baseline.shape} does not match input {x.shape}")
    curve_class = task.predict(x)  # the clean prediction anchors the whole curve
    order = _ranking(attribution)
    flat_x = x.ravel()
    flat_b = baseline.ravel()
    d = flat_x.size
    fractions = np.arange(K + 1) / K
    scores = np.empty(K + 1)
    for k in range(K + 1):
        count = int(round(fractions[k] * d))
        z = flat_b.copy() if insert else flat_x.copy()
        src = flat_x if insert else flat_b
        z[order[:count]] = src[order[:count]]
        scores[k] = task.probabilities(z.reshape(x.shape))[curve_class]
    return PerturbationCurve.from_scores(fractions, scores)


def insertion_score(task: ExplanationTask, x: np.ndarray, label: int,
                    attribution: np.ndarray, K: int = 20,
                    baseline: Optional[np.ndarray] = None) -> PerturbationCurve:
    """Reveal top-|A| features of x over the baseline; higher auc is better."""
    return _curve(task, x, attribution, K, baseline, insert=True)


def deletion_score(task: ExplanationTask, x: np.ndarray, label: int,
                   attribution: np.ndarray, K: int = 20,
                   baseline: Optional[np.ndarray] = None) -> PerturbationCurve:
    """Remove top-|A| features of x toward the baseline; lower auc is better."""
    return _curve(task, x, attribution, K, baseline, insert=False)


# ---- infidelity ----

def infd_score(task: ExplanationTask, x: np.ndarray, label: int,
               attribution: np.ndarray, n_probes: int = 64,
               delta: Optional[float] = None, seed: int = 0) -> float:
    """Mean squared gap between the attribution's linear response I.A and the
    actual logit change f(x) - f(x - I) under I ~ U[-delta, delta]^d.

    delta defaults to 0.2 of the input's value range. Logits (not softmax)
    keep the first-order identity exact for affine models.
    """
    x = np.asarray(x, dtype=np.float64)
    attribution = np.asarray(attribution, dtype=np.float64)
    if attribution.shape != x.shape:
        raise ValueError(
            f"attribution shape {attribution.shape} does not match input {x.shape}")
    if n_probes < 1:
        raise ValueError("n_probes must be at least 1")
    if delta is None:
        spread = float(np.ptp(x))
        delta = 0.2 * (spread if spread > 0.0 else 1.0)
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    rng = np.random.default_rng(seed)
    label = int(label)
    fx = float(task.logits(x)[label])
    total = 0.0
    for _ in range(int(n_probes)):
        probe = rng.uniform(-delta, delta, size=x.shape)
        drop = fx - float(task.logits(x - probe)[label])
        total += (float((probe * attribution).sum()) - drop) ** 2
    return total / float(n_probes)


# ---- throughput ----

def throughput(method: Callable, task: ExplanationTask, dataset,
               warmup: int = 2, reps: int = 3) -> float:
    """Median explanations/second over reps full passes, after warmup calls.

    method is any callable (task, x, label) -> result. Runs on one worker;
    parallel timing would measure contention, not the method.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    inputs, labels = _dataset_arrays(dataset)
    n = len(inputs)
    for i in range(min(int(warmup), n)):
        method(task, inputs[i], int(labels[i]))
    rates = []
    for _ in range(int(reps)):
        t0 = time.perf_counter()
        for i in range(n):
            method(task, inputs[i], int(labels[i]))
        elapsed = max(time.perf_counter() - t0, 1e-9)
        rates.append(n / elapsed)
    return float(np.median(rates))


# ---- benchmark harness ----

@dataclass
class MetricReport:
    """One cell of the benchmark table. del is a Python keyword, so the
    field is del_; serialization uses the plain key."""
    ins: float
    del_: float
    infd: float
    fps: Optional[float]
    n_samples: int
    method_name: str
    model_name: str
    robust_acc: Optional[float] = None

    def to_dict(self) -> dict:
        out = {
            "method_name": self.method_name,
            "model_name": self.model_name,
            "n_samples": int(self.n_samples),
            "ins": float(self.ins),
            "del": float(self.del_),
            "infd": float(self.infd),
            "robust_acc": None if self.robust_acc is None else float(self.robust_acc),
            "timing": {"fps": None if self.fps is None else float(self.fps)},
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            ins=d["ins"], del_=d["del"], infd=d["infd"],
            fps=d.get("timing", {}).get("fps"),
            n_samples=d["n_samples"], method_name=d["method_name"],
            model_name=d["model_name"], robust_acc=d.get("robust_acc"),
        )


@dataclass
class MetricConfig:
    n_samples: Optional[int] = None     # cap on dataset rows; None = all
    curve_steps: int = 20
    curve_baseline: Optional[np.ndarray] = None
    infd_probes: int = 64
    infd_delta: Optional[float] = None
    seed: int = 0
    with_fps: bool = True
    fps_samples: int = 4
    fps_warmup: int = 2
    fps_reps: int = 3
    jobs: int = 1
    method_params: dict = field(default_factory=dict)


@dataclass
class BenchmarkTable:
    reports: list
    failures: list                      # dicts: model, method, error

    def to_dicts(self) -> list:
        return [r.to_dict() for r in self.reports]


def _dataset_arrays(dataset):
    if hasattr(dataset, "inputs"):
        return dataset.inputs, dataset.labels
    inputs, labels = dataset
    return np.asarray(inputs), np.asarray(labels)


def _dataset_delta(dataset, cfg: MetricConfig) -> Optional[float]:
    if cfg.infd_delta is not None:
        return cfg.infd_delta
    rng = getattr(dataset, "input_range", None)
    if rng is not None and rng[1] > rng[0]:
        return 0.2 * (float(rng[1]) - float(rng[0]))
    return None


def _map_samples(fn, indices, jobs: int):
    if jobs <= 1:
        return [fn(i) for i in indices]
    with ThreadPoolExecutor(max_workers=int(jobs)) as pool:
        return list(pool.map(fn, indices))


def _aggregate_cell(task, make_attr, inputs, cfg: MetricConfig,
                    delta: Optional[float]):
    """Mean INS/DEL/INFD over samples; make_attr(i, x, label) -> array."""
    def one(i):
        x = inputs[i]
        label = task.predict(x)  # faithfulness is judged on the model's decision
        attribution = make_attr(i, x, label)
        ins = insertion_score(task, x, label, attribution,
                              K=cfg.curve_steps, baseline=cfg.curve_baseline).auc
        del_ = deletion_score(task, x, label, attribution,
                              K=cfg.curve_steps, baseline=cfg.curve_baseline).auc
        infd = infd_score(task, x, label, attribution, n_probes=cfg.infd_probes,
                          delta=delta, seed=cfg.seed + i)
        return ins, del_, infd

    rows = _map_samples(one, range(len(inputs)), cfg.jobs)
    arr = np.array(rows)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean()), float(arr[:, 2].mean())


def benchmark(models: dict, methods, dataset, cfg: Optional[MetricConfig] = None) -> BenchmarkTable:
    """Cross models x attribution methods and score each cell on the dataset.

    A failing cell is recorded (model, method, error) and the run moves on.
    """
    cfg = cfg or MetricConfig()
    inputs, labels = _dataset_arrays(dataset)
    n = len(inputs) if cfg.n_samples is None else min(int(cfg.n_samples), len(inputs))
    inputs = inputs[:n]
    delta = _dataset_delta(dataset, cfg)
    reports, failures = [], []
    for model_name, model in models.items():
        task = ExplanationTask.for_model(model)
        for method_name in methods:
            try:
                spec = get_method(method_name)
                base_kwargs = dict(spec.params)
                base_kwargs.update(cfg.method_params.get(spec.name, {}))
                seeded = "seed" in spec.params

                def make_attr(i, x, label, _spec=spec, _kw=base_kwargs, _seeded=seeded):
                    kwargs = dict(_kw)
                    if _seeded:
                        kwargs["seed"] = cfg.seed + i
                    return _spec.run(task, x, label, model=model, **kwargs).attribution

                ins, del_, infd = _aggregate_cell(task, make_attr, inputs, cfg, delta)
                fps = None
                if cfg.with_fps:
                    m = min(cfg.fps_samples, n)
                    fps = throughput(
                        lambda t, x, l: spec.run(t, x, l, model=model, **base_kwargs),
                        task, (inputs[:m], labels[:m]),
                        warmup=cfg.fps_warmup, reps=cfg.fps_reps)
                reports.append(MetricReport(ins=ins, del_=del_, infd=infd, fps=fps,
                                            n_samples=n, method_name=spec.name,
                                            model_name=model_name))
            except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
                failures.append({"model": model_name, "method": str(method_name),
                                 "error": f"{type(exc).__name__}: {exc}"})
    return BenchmarkTable(reports=reports, failures=failures)


def update_method_sweep(model, model_name: str, dataset,
                        kinds=ATTACK_SWEEP_KINDS,
                        attack_cfg: Optional[UpdateConfig] = None,
                        cfg: Optional[MetricConfig] = None) -> BenchmarkTable:
    """INS/DEL of the core accumulation under each update rule.

    The linearpath row is the straight-path baseline the attack rows are read
    against; attack rows also report the model's robust accuracy under the
    same update rule and budget. Each sample gets a fresh update instance
    seeded by sample index, so results are order- and worker-independent.
    """
    cfg = cfg or MetricConfig()
    attack_cfg = attack_cfg or UpdateConfig()
    inputs, labels = _dataset_arrays(dataset)
    n = len(inputs) if cfg.n_samples is None else min(int(cfg.n_samples), len(inputs))
    inputs, labels = inputs[:n], labels[:n]
    delta = _dataset_delta(dataset, cfg)
    task = ExplanationTask.for_model(model)
    reports, failures = [], []
    for kind in kinds:
        try:
            def make_attr(i, x, label, _kind=kind):
                per_sample = UpdateConfig(
                    epsilon=attack_cfg.epsilon, alpha=attack_cfg.alpha,
                    steps=attack_cfg.steps, momentum_decay=attack_cfg.momentum_decay,
                    seed=attack_cfg.seed + i, clamp=attack_cfg.clamp,
                    targeted=attack_cfg.targeted)
                update = make_update(_kind, per_sample)
                return fundamental_attribute(task, x, label, update).attribution

            ins, del_, infd = _aggregate_cell(task, make_attr, inputs, cfg, delta)
            robust = None
            update = make_update(kind, attack_cfg)
            if update.is_attack:
                robust = robust_accuracy(task, _SubsetView(inputs, labels), update).accuracy
            reports.append(MetricReport(ins=ins, del_=del_, infd=infd, fps=None,
                                        n_samples=n, method_name=f"core[{kind}]",
                                        model_name=model_name, robust_acc=robust))
        except Exception as exc:  # noqa: BLE001
            failures.append({"model": model_name, "method": f"core[{kind}]",
                             "error": f"{type(exc).__name__}: {exc}"})
    return BenchmarkTable(reports=reports, failures=failures)


class _SubsetView:
    """Minimal dataset facade for robust_accuracy."""

    def __init__(self, inputs, labels):
        self.inputs = inputs
        self.labels = labels


def table_to_csv(table: BenchmarkTable) -> str:
    """Flat CSV of the report rows; timing flattened into an fps column."""
    header = "model_name,method_name,n_samples,ins,del,infd,robust_acc,fps"
    lines = [header]
    for r in table.reports:
        robust = "" if r.robust_acc is None else f"{r.robust_acc:.6f}"
        fps = "" if r.fps is None else f"{r.fps:.3f}"
        lines.append(f"{r.model_name},{r.method_name},{r.n_samples},"
                     f"{r.ins:.6f},{r.del_:.6f},{r.infd:.6e},{robust},{fps}")
    return "\n".join(lines) + "\n"
