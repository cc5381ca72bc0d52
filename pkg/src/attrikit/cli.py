"""Command-line surface: train, attribute, attack, metrics, axioms, bench.

Every run resolves its parameters as defaults < config file (JSON) < flags,
rejects unknown config keys, and derives all randomness from one seed
(flag, then config, then the ABE_SEED environment variable, then 0).
Machine-readable outputs are schema-validated JSON written with sorted
keys; nothing carries a timestamp, and the only nondeterministic content
lives under "timing" keys.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure,
4 declared axiom flags refuted by the executable checks.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .axioms import (
    build_sensitivity_family,
    check_complete,
    check_implementation_invariance,
    check_linear,
    check_sensitivity,
    refuted_declarations,
)
from .data import DataFormatError, Dataset, load_dataset
from .heatmap import emit_heatmap
from .core import completeness_residual
from .metrics import (
    ATTACK_SWEEP_KINDS,
    BenchmarkTable,
    MetricConfig,
    benchmark,
    table_to_csv,
    update_method_sweep,
)
from .models import (
    Model,
    TrainConfig,
    TrainingDiverged,
    WeightFormatError,
    build,
    load_weights,
    make_equivalent_pair,
    save_weights,
    train,
)
from .schemas import ArtifactError, validate_artifact
from .task import ExplanationTask
from .updates import UPDATE_KINDS, UpdateConfig, make_update, robust_accuracy
from .methods import get_method

SEED_ENV_VAR = "ABE_SEED"

COMMANDS = ("train", "attribute", "attack", "metrics", "axioms", "bench")

_ATTACK_KINDS = tuple(k for k in UPDATE_KINDS if UPDATE_KINDS[k].is_attack)


class UsageError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


# keys a config file (or flag) may set, per command; anything else is rejected
_FLOAT_KEYS = {"eps", "alpha", "learning_rate", "l2", "tolerance"}
_INT_KEYS = {"seed", "jobs", "index", "steps", "T", "epochs", "batch_size",
             "n_samples", "n_probes", "curve_steps", "infd_probes",
             "fps_samples", "fps_warmup", "fps_reps"}
_BOOL_KEYS = {"png", "with_fps"}
_STR_KEYS = {"model", "weights", "data", "method", "update", "out",
             "objective", "colormap", "activation"}
_LIST_KEYS = {"hidden", "methods"}
_DICT_KEYS = {"method_params"}

_METRIC_TUNING = ("jobs", "n_samples", "curve_steps", "infd_probes",
                  "with_fps", "fps_samples", "fps_warmup", "fps_reps")

ALLOWED_KEYS = {
    "train": {"model", "data", "seed", "out", "learning_rate", "epochs",
              "batch_size", "l2", "hidden", "activation"},
    "attribute": {"model", "weights", "data", "method", "update", "eps",
                  "alpha", "steps", "T", "seed", "out", "index", "objective",
                  "png", "colormap", "method_params"},
    "attack": {"model", "weights", "data", "update", "eps", "alpha", "steps",
               "seed", "out", "n_samples"},
    "metrics": {"model", "weights", "data", "method", "T", "seed", "out",
                "method_params", *_METRIC_TUNING},
    "axioms": {"method", "seed", "out", "n_probes", "n_samples", "tolerance"},
    "bench": {"model", "weights", "data", "update", "eps", "alpha", "steps",
              "seed", "out", "methods", *_METRIC_TUNING},
}

DEFAULTS = {
    "train": {"out": ".", "learning_rate": 0.1, "epochs": 10, "batch_size": 16,
              "l2": 0.0, "hidden": [32], "activation": "relu"},
    "attribute": {"out": ".", "method": "ig", "index": 0, "objective": "logit",
                  "png": False, "colormap": "gray", "method_params": {}},
    "attack": {"out": ".", "update": "pgd"},
    "metrics": {"out": ".", "method": "ig", "n_samples": 50, "jobs": 1,
                "with_fps": True, "curve_steps": 20, "infd_probes": 64,
                "fps_samples": 4, "fps_warmup": 2, "fps_reps": 3,
                "method_params": {}},
    "axioms": {"out": ".", "n_probes": 50, "n_samples": 20, "tolerance": 1e-6},
    "bench": {"out": ".", "methods": ["ig", "fig", "sm", "random"],
              "n_samples": 20, "jobs": 1, "with_fps": True, "curve_steps": 20,
              "infd_probes": 64, "fps_samples": 4, "fps_warmup": 2,
              "fps_reps": 3},
}


def _check_key_type(key: str, value):
    if key in _FLOAT_KEYS:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif key in _INT_KEYS:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif key in _BOOL_KEYS:
        ok = isinstance(value, bool)
    elif key in _STR_KEYS:
        ok = isinstance(value, str)
    elif key in _LIST_KEYS:
        ok = isinstance(value, list)
    elif key in _DICT_KEYS:
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise UsageError(f"config key {key!r} has the wrong type: {value!r}")


@dataclass
class RunConfig:
    """Fully merged, validated parameters for one command invocation."""

    command: str
    values: dict

    def __getitem__(self, key):
        return self.values.get(key)

    @classmethod
    def resolve(cls, command: str, flag_values: dict, config_path=None) -> "RunConfig":
        allowed = ALLOWED_KEYS[command]
        merged = dict(DEFAULTS[command])
        if config_path is not None:
            try:
                with open(config_path, "r") as fh:
                    file_values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"config file {config_path}: invalid JSON: {exc}") from exc
            if not isinstance(file_values, dict):
                raise UsageError(f"config file {config_path}: top level must be an object")
            unknown = sorted(set(file_values) - allowed)
            if unknown:
                raise UsageError(
                    f"config file {config_path}: unknown keys for {command}: {', '.join(unknown)}")
            for key, value in file_values.items():
                _check_key_type(key, value)
            merged.update(file_values)
        for key, value in flag_values.items():
            if value is not None:
                merged[key] = value
        if merged.get("seed") is None:
            env = os.environ.get(SEED_ENV_VAR)
            if env is not None:
                try:
                    merged["seed"] = int(env)
                except ValueError as exc:
                    raise UsageError(f"{SEED_ENV_VAR}={env!r} is not an integer") from exc
            else:
                merged["seed"] = 0
        return cls(command, merged)


# ---- shared plumbing ----

def _write_json(path, payload: dict) -> None:
    validate_artifact(payload)
    try:
        text = json.dumps(payload, sort_keys=True, indent=2, allow_nan=False)
    except ValueError as exc:
        raise NumericalError(f"non-finite value in {os.path.basename(str(path))}") from exc
    with open(path, "w") as fh:
        fh.write(text + "\n")


def _require(rc: RunConfig, *keys) -> None:
    missing = [k for k in keys if rc[k] is None]
    if missing:
        flags = ", ".join(f"--{k}" for k in missing)
        raise UsageError(f"{rc.command} needs {flags}")


def _load_data(rc: RunConfig) -> Dataset:
    _require(rc, "data")
    return load_dataset(rc["data"])


def _resolve_model(rc: RunConfig, dataset: Dataset) -> tuple[Model, str]:
    """--weights wins; --model alone builds a fresh (untrained) network."""
    if rc["weights"] is not None:
        model = load_weights(rc["weights"])
        if rc["model"] is not None and rc["model"] != model.kind:
            raise UsageError(
                f"--model {rc['model']!r} conflicts with weight file kind {model.kind!r}")
        return model, model.kind
    if rc["model"] is None:
        raise UsageError(f"{rc.command} needs --model or --weights")
    kind = rc["model"]
    shape = dataset.input_shape
    if kind == "tinycnn":
        if len(shape) < 2:
            raise UsageError("tinycnn needs image-shaped data (H, W[, C])")
        model = build(kind, shape, dataset.n_classes, seed=rc["seed"])
    elif kind == "mlp":
        model = build(kind, shape if len(shape) > 1 else shape[0], dataset.n_classes,
                      seed=rc["seed"], hidden=rc["hidden"] or [32],
                      activation=rc["activation"] or "relu")
    else:
        model = build(kind, shape if len(shape) > 1 else shape[0],
                      dataset.n_classes, seed=rc["seed"])
    return model, kind


def _shape_inputs(model: Model, dataset: Dataset) -> np.ndarray:
    """Flat models consume image datasets row-flattened; conv models need images."""
    inputs = dataset.inputs
    if model.kind == "tinycnn":
        if inputs.ndim < 3:
            raise UsageError("tinycnn needs image-shaped data (H, W[, C])")
        return inputs
    if inputs.ndim > 2:
        return inputs.reshape(len(inputs), -1)
    return inputs


def _attack_config(rc: RunConfig, dataset: Dataset) -> UpdateConfig:
    kwargs = {"seed": rc["seed"], "clamp": dataset.input_range}
    if rc["eps"] is not None:
        kwargs["epsilon"] = rc["eps"]
    if rc["alpha"] is not None:
        kwargs["alpha"] = rc["alpha"]
    if rc["steps"] is not None:
        kwargs["steps"] = rc["steps"]
    return UpdateConfig(**kwargs)


def _jsonable(value):
    if isinstance(value, (bool, int, float, str)) or value is None:
        return value
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    kind = getattr(value, "kind", None)
    return kind if kind is not None else type(value).__name__


# ---- commands ----

def _cmd_train(rc: RunConfig) -> int:
    dataset = _load_data(rc)
    _require(rc, "model")
    model, kind = _resolve_model(rc, dataset)
    inputs = _shape_inputs(model, dataset)
    cfg = TrainConfig(learning_rate=rc["learning_rate"], epochs=rc["epochs"],
                      batch_size=rc["batch_size"], seed=rc["seed"], l2=rc["l2"])
    result = train(model, (inputs, dataset.labels), cfg)

    out = rc["out"]
    os.makedirs(out, exist_ok=True)
    weights_file = os.path.join(out, "weights.bin")
    curve_file = os.path.join(out, "train_curve.csv")
    save_weights(model, weights_file)
    result.write_curve_csv(curve_file)
    _write_json(os.path.join(out, "train.json"), {
        "schema": "train/v1",
        "model": kind,
        "data": rc["data"],
        "config": {"learning_rate": float(cfg.learning_rate), "epochs": cfg.epochs,
                   "batch_size": cfg.batch_size, "seed": cfg.seed, "l2": float(cfg.l2)},
        "epochs_run": len(result.losses),
        "final_loss": float(result.losses[-1]),
        "final_accuracy": float(result.accuracies[-1]),
        "n_samples": len(dataset),
        "n_classes": dataset.n_classes,
        "weights_file": os.path.basename(weights_file),
        "curve_file": os.path.basename(curve_file),
    })
    return 0


def _method_kwargs(rc: RunConfig, spec, dataset: Dataset) -> dict:
    kwargs = dict(rc["method_params"] or {})
    if rc["T"] is not None:
        kwargs["T"] = rc["T"]
    if "seed" in spec.params and "seed" not in kwargs:
        kwargs["seed"] = rc["seed"]
    wants_attack = spec.name in ("big", "mfaba")
    attack_flags = any(rc[k] is not None for k in ("update", "eps", "alpha", "steps"))
    if wants_attack or attack_flags:
        kind = rc["update"] or "bim"
        kwargs.setdefault("attack", make_update(kind, _attack_config(rc, dataset)))
    return kwargs


def _cmd_attribute(rc: RunConfig) -> int:
    dataset = _load_data(rc)
    model, kind = _resolve_model(rc, dataset)
    inputs = _shape_inputs(model, dataset)
    index = rc["index"]
    if not 0 <= index < len(dataset):
        raise DataFormatError(f"sample index {index} out of range for {len(dataset)} rows")
    x = inputs[index]
    label = int(dataset.labels[index])

    spec = get_method(rc["method"])
    task = ExplanationTask.for_model(model, objective=rc["objective"])
    kwargs = _method_kwargs(rc, spec, dataset)
    try:
        result = spec.run(task, x, label, model=model, **kwargs)
    except TypeError as exc:
        raise UsageError(f"method {spec.name!r}: {exc}") from exc

    out = rc["out"]
    os.makedirs(out, exist_ok=True)
    attribution = result.attribution
    plane = attribution
    if plane.ndim == 1:
        shape = dataset.input_shape
        plane = plane.reshape(shape) if len(shape) >= 2 else plane.reshape(1, -1)
    # distinct basename: the sidecar lands at heatmap.json, clear of attribution.json
    heatmap_file = "heatmap.pgm"
    emit_heatmap(plane, os.path.join(out, heatmap_file),
                 colormap=rc["colormap"], png=rc["png"])
    _write_json(os.path.join(out, "attribution.json"), {
        "schema": "attribution-result/v1",
        "method": result.method_name,
        "model": kind,
        "data": rc["data"],
        "sample_index": index,
        "label": label,
        "predicted": int(task.predict(x)),
        "params": {k: _jsonable(v) for k, v in kwargs.items()},
        "attribution": attribution.tolist(),
        "endpoint_gap": float(result.endpoint_gap),
        "completeness_residual": float(completeness_residual(task, result)),
        "notes": list(result.notes),
        "heatmap": heatmap_file,
    })
    return 0


def _cmd_attack(rc: RunConfig) -> int:
    dataset = _load_data(rc)
    model, kind = _resolve_model(rc, dataset)
    inputs = _shape_inputs(model, dataset)
    update_kind = rc["update"]
    if update_kind not in _ATTACK_KINDS:
        raise UsageError(
            f"update {update_kind!r} is not an attack; available: {', '.join(sorted(_ATTACK_KINDS))}")
    update = make_update(update_kind, _attack_config(rc, dataset))
    task = ExplanationTask.for_model(model)
    n_samples = rc["n_samples"]
    report = robust_accuracy(task, Dataset(dataset.name, inputs, dataset.labels,
                                           dataset.n_classes, dataset.input_range),
                             update, n_samples=n_samples)

    out = rc["out"]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "robustness.json"), {
        "schema": "robustness/v1",
        "model": kind,
        "data": rc["data"],
        "kind": update_kind,
        "epsilon": float(update.cfg.epsilon),
        "alpha": float(update.cfg.alpha),
        "steps": int(update.cfg.steps),
        "seed": rc["seed"],
        "accuracy": float(report.accuracy),
        "n_samples": int(report.n_samples),
        "flipped": len(report.flipped),
    })
    return 0


def _metric_config(rc: RunConfig) -> MetricConfig:
    return MetricConfig(n_samples=rc["n_samples"], curve_steps=rc["curve_steps"],
                        infd_probes=rc["infd_probes"], seed=rc["seed"],
                        with_fps=rc["with_fps"], fps_samples=rc["fps_samples"],
                        fps_warmup=rc["fps_warmup"], fps_reps=rc["fps_reps"],
                        jobs=rc["jobs"], method_params=rc["method_params"] or {})


def _classify_failure(error: str) -> int:
    lowered = error.lower()
    if "unknown" in lowered or "needs" in lowered or "typeerror" in lowered:
        return 1
    return 3


def _cmd_metrics(rc: RunConfig) -> int:
    dataset = _load_data(rc)
    model, kind = _resolve_model(rc, dataset)
    inputs = _shape_inputs(model, dataset)
    view = Dataset(dataset.name, inputs, dataset.labels, dataset.n_classes,
                   dataset.input_range)
    cfg = _metric_config(rc)
    if rc["T"] is not None:
        cfg.method_params = {**cfg.method_params, "T": rc["T"]}
    table = benchmark({kind: model}, [rc["method"]], view, cfg)
    if table.failures:
        failure = table.failures[0]
        print(f"error: {failure['method']} on {failure['model']}: {failure['error']}",
              file=sys.stderr)
        return _classify_failure(failure["error"])

    out = rc["out"]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "metrics.json"), {
        "schema": "metric-report/v1",
        "data": rc["data"],
        "report": table.reports[0].to_dict(),
    })
    with open(os.path.join(out, "metrics.csv"), "w") as fh:
        fh.write(table_to_csv(table))
    return 0


def _cmd_axioms(rc: RunConfig) -> int:
    _require(rc, "method")
    spec = get_method(rc["method"])
    seed = rc["seed"]

    family = build_sensitivity_family(size=20, seed=seed)
    pair = make_equivalent_pair(build("mlp", 16, 3, seed=seed, hidden=[12]),
                                seed=seed + 1)
    affine = build("linear", input_shape=8, num_classes=3, seed=seed)
    task = ExplanationTask.for_model(affine)
    rng = np.random.default_rng(seed)
    samples = rng.uniform(0.0, 1.0, size=(rc["n_samples"], 8))

    verdicts = [
        check_sensitivity(spec, task_family=family),
        check_implementation_invariance(spec, pair, n_probes=rc["n_probes"], seed=seed),
        check_complete(spec, task, samples, tolerance=rc["tolerance"]),
        check_linear(spec),
    ]
    refuted = refuted_declarations(spec, verdicts)

    out = rc["out"]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "axioms.json"), {
        "schema": "verdicts/v1",
        "method": spec.name,
        "seed": seed,
        "declared": {
            "sensitivity": spec.axiom_flags.sensitivity,
            "implementation_invariance": spec.axiom_flags.implementation_invariance,
            "complete": spec.axiom_flags.complete,
        },
        "verdicts": [v.to_dict() for v in verdicts],
        "refuted": refuted,
    })
    if refuted:
        print(f"error: declared flags refuted for {spec.name}: {', '.join(refuted)}",
              file=sys.stderr)
        return 4
    return 0


def _cmd_bench(rc: RunConfig) -> int:
    dataset = _load_data(rc)
    model, kind = _resolve_model(rc, dataset)
    inputs = _shape_inputs(model, dataset)
    view = Dataset(dataset.name, inputs, dataset.labels, dataset.n_classes,
                   dataset.input_range)
    cfg = _metric_config(rc)
    methods = rc["methods"]
    if not isinstance(methods, list) or not methods:
        raise UsageError("bench needs a non-empty \"methods\" list")
    for name in methods:
        get_method(name)  # unknown names fail before any work runs

    grid = benchmark({kind: model}, methods, view, cfg)
    sweep = update_method_sweep(model, kind, view, kinds=ATTACK_SWEEP_KINDS,
                                attack_cfg=_attack_config(rc, dataset), cfg=cfg)

    out = rc["out"]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "bench.json"), {
        "schema": "bench/v1",
        "model": kind,
        "data": rc["data"],
        "seed": rc["seed"],
        "baseline_row": f"core[{ATTACK_SWEEP_KINDS[0]}]",
        "methods_grid": grid.to_dicts(),
        "update_sweep": sweep.to_dicts(),
        "failures": grid.failures + sweep.failures,
    })
    combined = BenchmarkTable(reports=grid.reports + sweep.reports,
                              failures=grid.failures + sweep.failures)
    with open(os.path.join(out, "bench.csv"), "w") as fh:
        fh.write(table_to_csv(combined))
    return 0


_HANDLERS = {
    "train": _cmd_train,
    "attribute": _cmd_attribute,
    "attack": _cmd_attack,
    "metrics": _cmd_metrics,
    "axioms": _cmd_axioms,
    "bench": _cmd_bench,
}


# ---- argument parsing ----

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="attrikit", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, *flags):
        p = sub.add_parser(name, help=help_text)
        if "model" in flags:
            p.add_argument("--model", help="model registry key (linear, logistic, mlp, tinycnn)")
        if "weights" in flags:
            p.add_argument("--weights", help="weight file written by train")
        if "data" in flags:
            p.add_argument("--data", help="CSV path, idx:IMAGES:LABELS, or synthetic:NAME(...)")
        if "method" in flags:
            p.add_argument("--method", help="attribution method registry key")
        if "update" in flags:
            p.add_argument("--update", help="update rule / attack kind")
        if "attack_params" in flags:
            p.add_argument("--eps", type=float, help="attack budget (l-infinity)")
            p.add_argument("--alpha", type=float, help="attack step size")
            p.add_argument("--steps", type=int, help="attack step count")
        if "T" in flags:
            p.add_argument("--T", type=int, help="path step count")
        if "jobs" in flags:
            p.add_argument("--jobs", type=int, help="worker threads (default: one)")
        p.add_argument("--seed", type=int, help=f"RNG seed (fallback: ${SEED_ENV_VAR}, then 0)")
        p.add_argument("--out", help="output directory (default: .)")
        p.add_argument("--config", help="JSON config file; flags override it")
        return p

    add("train", "fit a model, write weights and the loss curve", "model", "data")
    add("attribute", "explain one sample, write heatmap + JSON",
        "model", "weights", "data", "method", "update", "attack_params", "T")
    add("attack", "robust accuracy under an attack", "model", "weights", "data",
        "update", "attack_params")
    add("metrics", "faithfulness metrics for one method", "model", "weights",
        "data", "method", "T", "jobs")
    add("axioms", "executable axiom checks for one method", "method")
    add("bench", "methods grid plus the update-rule sweep", "model", "weights",
        "data", "update", "attack_params", "jobs")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    flag_values = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        rc = RunConfig.resolve(args.command, flag_values, args.config)
        return _HANDLERS[args.command](rc)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, WeightFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, NumericalError, FloatingPointError, ArtifactError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, TypeError) as exc:
        lowered = str(exc).lower()
        if "non-finite" in lowered or "diverged" in lowered or "overflow" in lowered:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return 3
        print(f"usage error: {exc}", file=sys.stderr)
        return 1


def cli(argv=None) -> int:
    """Run one command line; returns the process exit code."""
    return main(argv)


def entrypoint() -> None:
    sys.exit(main())
