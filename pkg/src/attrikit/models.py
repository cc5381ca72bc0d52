"""Trainable model zoo: linear, logistic, MLP, and a small fixed CNN.

Models run one sample at a time: dense kinds take a flat feature vector,
the CNN takes an (H, W, C) image. All parameters are float64 tensors
initialized Glorot-uniform from a seed, biases start at zero.

The on-disk weight format is: 5-byte magic ``ABEW1``, little-endian uint32
header length, a JSON header (kind, hyper, tensor manifest), the raw
little-endian float64 payload in manifest order, and a little-endian uint32
CRC32 trailer over header+payload.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Tensor, gather, log_softmax, conv2d, max_pool2x2, no_grad, tape

WEIGHT_MAGIC = b"ABEW1"
WEIGHT_FORMAT_VERSION = 1


class WeightFormatError(ValueError):
    """Weight file is malformed: bad magic, version, truncation, checksum."""


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}" + (f": {message}" if message else ""))


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


class Model:
    """Base class; concrete kinds populate ``params`` in a fixed order."""

    kind: str = "base"

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def hyper(self) -> dict:
        raise NotImplementedError

    @property
    def num_classes(self) -> int:
        return int(self.hyper()["num_classes"])

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Untracked forward pass on a plain array."""
        with no_grad():
            return self.forward(Tensor(x)).data.copy()

    def predict(self, x: np.ndarray) -> int:
        return int(np.argmax(self.logits(x)))

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def clone(self) -> "Model":
        twin = build(self.kind, **self.hyper())
        for name, p in self.params.items():
            twin.params[name].data[...] = p.data
        return twin


class Linear(Model):
    """logits = W x + b on a flat feature vector."""

    kind = "linear"

    def __init__(self, input_dim: int, num_classes: int, seed: int = 0):
        super().__init__()
        self.input_dim = int(input_dim)
        self._num_classes = int(num_classes)
        rng = np.random.default_rng(seed)
        self.params["w"] = Tensor(_glorot(rng, (num_classes, input_dim), input_dim, num_classes), requires_grad=True)
        self.params["b"] = Tensor(np.zeros(num_classes), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 1:
            x = x.reshape((self.input_dim,))
        return self.params["w"] @ x + self.params["b"]

    def hyper(self) -> dict:
        return {"input_shape": self.input_dim, "num_classes": self._num_classes}


class LogisticRegression(Linear):
    """Same affine map as Linear; the name records how it is meant to be trained."""

    kind = "logistic"


class MLP(Model):
    """Dense net with configurable hidden sizes and relu or identity activation."""

    kind = "mlp"

    def __init__(self, input_dim: int, num_classes: int, hidden=(32,), activation: str = "relu", seed: int = 0):
        super().__init__()
        if activation not in ("relu", "identity"):
            raise ValueError(f"mlp: unknown activation {activation!r}")
        self.input_dim = int(input_dim)
        self._num_classes = int(num_classes)
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        rng = np.random.default_rng(seed)
        sizes = [self.input_dim, *self.hidden, self._num_classes]
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params[f"w{i}"] = Tensor(_glorot(rng, (fan_out, fan_in), fan_in, fan_out), requires_grad=True)
            self.params[f"b{i}"] = Tensor(np.zeros(fan_out), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 1:
            x = x.reshape((self.input_dim,))
        h = x
        n_layers = len(self.hidden) + 1
        for i in range(n_layers):
            h = self.params[f"w{i}"] @ h + self.params[f"b{i}"]
            if i < n_layers - 1 and self.activation == "relu":
                h = h.relu()
        return h

    def hyper(self) -> dict:
        return {
            "input_shape": self.input_dim,
            "num_classes": self._num_classes,
            "hidden": list(self.hidden),
            "activation": self.activation,
        }


class TinyCNN(Model):
    """Fixed architecture: conv3x3(4) -> relu -> pool2x2 -> conv3x3(8) -> relu -> dense.

    Valid convolutions only, so an (H, W, C) input needs H, W >= 8 and even.
    """

    kind = "tinycnn"
    CH1, CH2 = 4, 8

    def __init__(self, input_shape, num_classes: int, seed: int = 0):
        super().__init__()
        H, W, C = (int(v) for v in input_shape)
        if H < 8 or W < 8:
            raise ValueError(f"tinycnn: input spatial dims must be >= 8, got {(H, W, C)}")
        if H % 2 or W % 2:
            raise ValueError(f"tinycnn: input spatial dims must be even for 2x2 pooling, got {(H, W, C)}")
        self.input_shape = (H, W, C)
        self._num_classes = int(num_classes)
        rng = np.random.default_rng(seed)
        self.params["conv1_w"] = Tensor(
            _glorot(rng, (3, 3, C, self.CH1), 9 * C, 9 * self.CH1), requires_grad=True)
        self.params["conv1_b"] = Tensor(np.zeros(self.CH1), requires_grad=True)
        self.params["conv2_w"] = Tensor(
            _glorot(rng, (3, 3, self.CH1, self.CH2), 9 * self.CH1, 9 * self.CH2), requires_grad=True)
        self.params["conv2_b"] = Tensor(np.zeros(self.CH2), requires_grad=True)
        ph, pw = (H - 2) // 2, (W - 2) // 2
        flat = (ph - 2) * (pw - 2) * self.CH2
        if flat <= 0:
            raise ValueError(f"tinycnn: input {(H, W, C)} collapses before the dense layer")
        self.flat_dim = flat
        self.params["dense_w"] = Tensor(
            _glorot(rng, (num_classes, flat), flat, num_classes), requires_grad=True)
        self.params["dense_b"] = Tensor(np.zeros(num_classes), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return self.forward_with_activations(x)[0]

    def forward_with_activations(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Logits plus the post-relu feature maps of the last conv layer."""
        if x.shape != self.input_shape:
            x = x.reshape(self.input_shape)
        h = conv2d(x, self.params["conv1_w"], self.params["conv1_b"]).relu()
        h = max_pool2x2(h)
        act = conv2d(h, self.params["conv2_w"], self.params["conv2_b"]).relu()
        flat = act.reshape((self.flat_dim,))
        logits = self.params["dense_w"] @ flat + self.params["dense_b"]
        return logits, act

    def hyper(self) -> dict:
        return {"input_shape": list(self.input_shape), "num_classes": self._num_classes}


MODEL_KINDS = ("linear", "logistic", "mlp", "tinycnn")


def build(kind: str, input_shape, num_classes: int, seed: int = 0, hidden=None, activation: str = "relu") -> Model:
    """Deterministic model factory; identical arguments give bitwise-identical params."""
    kind = str(kind).lower()
    if kind in ("linear", "logistic"):
        cls = Linear if kind == "linear" else LogisticRegression
        model = cls(_flat_dim(input_shape), num_classes, seed=seed)
    elif kind == "mlp":
        model = MLP(_flat_dim(input_shape), num_classes, hidden=hidden or (32,), activation=activation, seed=seed)
    elif kind == "tinycnn":
        if not isinstance(input_shape, (tuple, list)) or len(input_shape) != 3:
            raise ValueError(f"tinycnn: input_shape must be (H, W, C), got {input_shape!r}")
        model = TinyCNN(tuple(input_shape), num_classes, seed=seed)
    else:
        raise ValueError(f"unknown model kind {kind!r}; available: {', '.join(MODEL_KINDS)}")
    return model


def _flat_dim(input_shape) -> int:
    if isinstance(input_shape, (tuple, list)):
        return int(np.prod([int(v) for v in input_shape]))
    return int(input_shape)


# ---- training ----

@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be at least 1")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)        # mean cross-entropy per epoch
    accuracies: list = field(default_factory=list)    # training accuracy per epoch
    grad_norms: list = field(default_factory=list)    # mean per-step grad norm per epoch

    def write_curve_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,loss,accuracy\n")
            for i, (loss, acc) in enumerate(zip(self.losses, self.accuracies)):
                fh.write(f"{i},{loss!r},{acc!r}\n")


def _dataset_arrays(dataset):
    if hasattr(dataset, "inputs") and hasattr(dataset, "labels"):
        return np.asarray(dataset.inputs, dtype=np.float64), np.asarray(dataset.labels)
    inputs, labels = dataset
    return np.asarray(inputs, dtype=np.float64), np.asarray(labels)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    return -gather(log_softmax(logits), int(label))


def train(model: Model, dataset, cfg: TrainConfig) -> TrainResult:
    """Minibatch SGD on softmax cross-entropy. Fully reproducible given cfg.seed.

    Raises TrainingDiverged, carrying the epoch index, if the loss or any
    parameter stops being finite.
    """
    inputs, labels = _dataset_arrays(dataset)
    n = len(inputs)
    if n == 0:
        raise ValueError("train: empty dataset")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValueError(
            f"train: labels must lie in [0, {model.num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]")
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        correct = 0
        step_norms = []
        try:
            for start in range(0, n, cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                model.zero_grads()
                for i in batch:
                    with tape() as t:
                        logits = model.forward(Tensor(inputs[i]))
                        loss = cross_entropy(logits, labels[i])
                    t.backward(loss)
                    epoch_loss += loss.item()
                    correct += int(np.argmax(logits.data) == labels[i])
                sq = 0.0
                for name, p in model.params.items():
                    g = p.grad / len(batch) if p.grad is not None else np.zeros_like(p.data)
                    if cfg.l2 and p.data.ndim >= 2:  # decay weights, not biases
                        g = g + cfg.l2 * p.data
                    sq += float(np.sum(g * g))
                    p.data -= cfg.learning_rate * g
                step_norms.append(np.sqrt(sq))
        except NonFiniteError as exc:
            raise TrainingDiverged(epoch, str(exc)) from exc
        for p in model.params.values():
            if not np.all(np.isfinite(p.data)):
                raise TrainingDiverged(epoch, "non-finite parameter after update")
        result.losses.append(epoch_loss / n)
        result.accuracies.append(correct / n)
        result.grad_norms.append(float(np.mean(step_norms)))
        if not np.isfinite(result.losses[-1]):
            raise TrainingDiverged(epoch, "non-finite epoch loss")
    return result


# ---- weight files ----

def save_weights(model: Model, path) -> None:
    manifest = [{"name": name, "shape": list(p.shape)} for name, p in model.params.items()]
    header = {
        "format_version": WEIGHT_FORMAT_VERSION,
        "kind": model.kind,
        "hyper": model.hyper(),
        "manifest": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in model.params.values())
    crc = zlib.crc32(blob + payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)
        fh.write(struct.pack("<I", crc))


def load_weights(path) -> Model:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(WEIGHT_MAGIC) + 4 or raw[:len(WEIGHT_MAGIC)] != WEIGHT_MAGIC:
        raise WeightFormatError(f"{path}: bad magic, not a weight file")
    off = len(WEIGHT_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) < off + hlen:
        raise WeightFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFormatError(f"{path}: unreadable header: {exc}") from exc
    off += hlen
    if header.get("format_version") != WEIGHT_FORMAT_VERSION:
        raise WeightFormatError(
            f"{path}: format version {header.get('format_version')!r}, expected {WEIGHT_FORMAT_VERSION}")
    manifest = header["manifest"]
    payload_len = sum(int(np.prod(entry["shape"])) * 8 for entry in manifest)
    expected = off + payload_len + 4
    if len(raw) < expected:
        raise WeightFormatError(f"{path}: truncated payload ({len(raw)} bytes, expected {expected})")
    if len(raw) > expected:
        raise WeightFormatError(f"{path}: trailing bytes after checksum")
    payload = raw[off:off + payload_len]
    (stored_crc,) = struct.unpack_from("<I", raw, off + payload_len)
    actual_crc = zlib.crc32(raw[len(WEIGHT_MAGIC) + 4:off] + payload) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise WeightFormatError(f"{path}: checksum mismatch, file is corrupt")

    hyper = header["hyper"]
    kind = header["kind"]
    if kind in ("linear", "logistic"):
        model = build(kind, hyper["input_shape"], hyper["num_classes"])
    elif kind == "mlp":
        model = build(kind, hyper["input_shape"], hyper["num_classes"],
                      hidden=hyper["hidden"], activation=hyper["activation"])
    elif kind == "tinycnn":
        model = build(kind, tuple(hyper["input_shape"]), hyper["num_classes"])
    else:
        raise WeightFormatError(f"{path}: unknown model kind {kind!r}")

    pos = 0
    for entry in manifest:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in model.params or model.params[name].shape != shape:
            raise WeightFormatError(f"{path}: manifest entry {name} {shape} does not fit the declared model")
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=pos).reshape(shape)
        model.params[name].data[...] = arr
        pos += count * 8
    return model


# ---- functionally equal twins ----

def make_equivalent_pair(model: Model, seed: int = 0) -> tuple[Model, Model]:
    """Two structurally different models computing the same function.

    Linear/logistic: the affine map is factored through an identity-activation
    hidden layer using an orthogonal matrix. MLP: the first hidden layer is
    permuted. Other kinds have no construction and raise ValueError.
    """
    rng = np.random.default_rng(seed)
    if isinstance(model, MLP) and model.activation == "relu":
        twin = model.clone()
        perm = rng.permutation(model.hidden[0])
        twin.params["w0"].data[...] = model.params["w0"].data[perm, :]
        twin.params["b0"].data[...] = model.params["b0"].data[perm]
        twin.params["w1"].data[...] = model.params["w1"].data[:, perm]
        return model.clone(), twin
    if isinstance(model, Linear):  # covers LogisticRegression
        d, k = model.input_dim, model.num_classes
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        twin = MLP(d, k, hidden=(d,), activation="identity")
        twin.params["w0"].data[...] = q
        twin.params["b0"].data[...] = 0.0
        twin.params["w1"].data[...] = model.params["w"].data @ q.T
        twin.params["b1"].data[...] = model.params["b"].data
        return model.clone(), twin
    raise ValueError(f"no equivalent-pair construction for model kind {model.kind!r}")


def functionally_equal(m1: Model, m2: Model, n_probes: int = 1000, box=(-1.0, 1.0),
                       seed: int = 0, tol: float = 1e-10) -> tuple[bool, float]:
    """Probe both models on random inputs; (within_tol, max_abs_difference)."""
    rng = np.random.default_rng(seed)
    shape = m1.input_shape if isinstance(m1, TinyCNN) else (m1.input_dim,)
    worst = 0.0
    for _ in range(n_probes):
        x = rng.uniform(box[0], box[1], size=shape)
        worst = max(worst, float(np.max(np.abs(m1.logits(x) - m2.logits(x)))))
    return worst < tol, worst
