"""Dataset ingestion: csv tables, idx image archives, synthetic generators.

A data spec string is one of
  - a path ending in .csv (header row, float features, integer label last)
  - ``idx:IMAGES_PATH:LABELS_PATH`` for big-endian idx archives
  - ``synthetic:NAME`` or ``synthetic:NAME(k=v, ...)`` with NAME in
    {blobs, bars}
"""
from __future__ import annotations

import re
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    """Input data could not be parsed; the message names where."""


@dataclass
class Dataset:
    name: str
    inputs: np.ndarray           # (n, d) or (n, H, W, C) float64
    labels: np.ndarray           # (n,) integers in [0, n_classes)
    n_classes: int
    input_range: tuple           # declared (lo, hi) for clamping and deltas

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise DataFormatError(
                f"{self.name}: {len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataFormatError(
                f"{self.name}: labels outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def input_shape(self) -> tuple:
        return tuple(self.inputs.shape[1:])

    @property
    def range_width(self) -> float:
        return float(self.input_range[1] - self.input_range[0])

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.name, self.inputs[indices], self.labels[indices],
                       self.n_classes, self.input_range)


# ---- synthetic generators ----

def make_blobs(n: int = 200, seed: int = 0, sigma: float = 0.5) -> Dataset:
    """Two well-separated 2-D gaussian blobs centered at (-2, 0) and (2, 0).

    The centers sit 8*sigma apart by default, so the midplane separator is
    essentially exact and logistic training has an easy target.
    """
    rng = np.random.default_rng(seed)
    n = int(n)
    labels = np.arange(n) % 2
    rng.shuffle(labels)
    centers = np.array([[-2.0, 0.0], [2.0, 0.0]])
    points = centers[labels] + rng.normal(scale=sigma, size=(n, 2))
    return Dataset("blobs", points, labels, 2, (-4.0, 4.0))

BLOB_CENTERS = ((-2.0, 0.0), (2.0, 0.0))


def make_bars(n: int = 200, seed: int = 0, size: int = 8, width: int = 1,
              noise: float = 0.05) -> Dataset:
    """Four-class pattern set: horizontal bar, vertical bar, plus, X cross.

    Bar positions are random per sample; gaussian pixel noise is added and
    the image clipped back to [0, 1]. Labels are exactly balanced.
    """
    rng = np.random.default_rng(seed)
    n, size, width = int(n), int(size), int(width)
    if size < 4 or width < 1 or width > size // 2:
        raise DataFormatError(f"bars: unusable size/width {(size, width)}")
    labels = np.arange(n) % 4
    rng.shuffle(labels)
    images = np.zeros((n, size, size, 1))
    ii, jj = np.indices((size, size))
    x_cross = ((np.abs(ii - jj) < width) | (np.abs(ii + jj - (size - 1)) < width)).astype(float)
    for i in range(n):
        img = np.zeros((size, size))
        cls = labels[i]
        if cls in (0, 2):
            r = rng.integers(0, size - width + 1)
            img[r:r + width, :] = 1.0
        if cls in (1, 2):
            c = rng.integers(0, size - width + 1)
            img[:, c:c + width] = 1.0
        if cls == 3:
            img = x_cross.copy()
        img += rng.normal(scale=noise, size=(size, size))
        images[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    return Dataset(f"bars{size}", images, labels, 4, (0.0, 1.0))


SYNTHETIC = {"blobs": make_blobs, "bars": make_bars, "bars-crosses": make_bars}


# ---- file loaders ----

def load_csv(path) -> Dataset:
    """Header row, then float feature columns with an integer label last."""
    with open(path, "r") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].strip():
        raise DataFormatError(f"{path}: missing header row")
    width = len(lines[0].split(","))
    if width < 2:
        raise DataFormatError(f"{path}: need at least one feature column and a label column")
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise DataFormatError(f"{path}: row {lineno}: expected {width} columns, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells[:-1]])
        except ValueError as exc:
            raise DataFormatError(f"{path}: row {lineno}: {exc}") from exc
        label_cell = cells[-1].strip()
        try:
            label = int(label_cell)
        except ValueError as exc:
            raise DataFormatError(f"{path}: row {lineno}: label {label_cell!r} is not an integer") from exc
        if label < 0:
            raise DataFormatError(f"{path}: row {lineno}: negative label {label}")
        labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    inputs = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels)
    return Dataset(str(path), inputs, labels, int(labels.max()) + 1,
                   (float(inputs.min()), float(inputs.max())))


def load_idx(images_path, labels_path) -> Dataset:
    """Big-endian idx pair: images magic 0x00000803, labels magic 0x00000801."""
    with open(images_path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise DataFormatError(f"{images_path}: truncated idx header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad idx magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        body = fh.read()
    if len(body) != n * rows * cols:
        raise DataFormatError(
            f"{images_path}: payload holds {len(body)} bytes, expected {n * rows * cols}")
    images = np.frombuffer(body, dtype=np.uint8).astype(np.float64).reshape(n, rows, cols, 1) / 255.0

    with open(labels_path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise DataFormatError(f"{labels_path}: truncated idx header")
        magic, n_labels = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad idx magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        raw_labels = fh.read()
    if len(raw_labels) != n_labels:
        raise DataFormatError(f"{labels_path}: payload holds {len(raw_labels)} labels, expected {n_labels}")
    if n_labels != n:
        raise DataFormatError(f"idx pair mismatch: {n} images but {n_labels} labels")
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    return Dataset(str(images_path), images, labels, int(labels.max()) + 1, (0.0, 1.0))


_SPEC_RE = re.compile(r"^synthetic:([a-z\-]+)(?:\((.*)\))?$")


def _parse_kwargs(text: str) -> dict:
    out = {}
    if not text or not text.strip():
        return out
    for part in text.split(","):
        if "=" not in part:
            raise DataFormatError(f"synthetic argument {part.strip()!r} is not k=v")
        key, value = (s.strip() for s in part.split("=", 1))
        try:
            out[key] = int(value)
        except ValueError:
            try:
                out[key] = float(value)
            except ValueError as exc:
                raise DataFormatError(f"synthetic argument {part.strip()!r}: {exc}") from exc
    return out


def load_dataset(spec: str) -> Dataset:
    """Resolve a data spec string (see module docstring) to a Dataset."""
    spec = str(spec).strip()
    m = _SPEC_RE.match(spec)
    if m:
        name, args = m.group(1), _parse_kwargs(m.group(2) or "")
        if name not in SYNTHETIC:
            raise DataFormatError(
                f"unknown synthetic dataset {name!r}; available: {', '.join(sorted(SYNTHETIC))}")
        try:
            return SYNTHETIC[name](**args)
        except TypeError as exc:
            raise DataFormatError(f"synthetic:{name}: {exc}") from exc
    if spec.startswith("idx:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise DataFormatError("idx spec must be idx:IMAGES_PATH:LABELS_PATH")
        return load_idx(parts[1], parts[2])
    if spec.endswith(".csv"):
        return load_csv(spec)
    raise DataFormatError(
        f"unrecognized data spec {spec!r}; use a .csv path, idx:IMG:LBL, or synthetic:NAME(...)")
