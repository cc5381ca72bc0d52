"""Attribution map emission: 8-bit grayscale PGM plus a JSON sidecar.

PGM (P5) is the mandatory output because it needs no imaging dependency
and its bytes are fully determined by the pixel grid. Quantizing to 8
bits loses precision, so a sidecar JSON stores the normalization bounds;
with them the original map is recoverable to within (max - min) / 255.
PNG is optional and goes through Pillow, imported lazily.
"""
from __future__ import annotations

import json
import os
from typing import Optional

import numpy as np

COLORMAPS = ("gray", "diverging")

_MID_GRAY = 128


def _as_plane(attribution: np.ndarray) -> np.ndarray:
    """Reduce to a 2-D map; channel axes are summed, anything else is an error."""
    a = np.asarray(attribution, dtype=np.float64)
    if a.ndim == 3:
        a = a.sum(axis=-1)
    if a.ndim != 2:
        raise ValueError(f"heatmap needs a 2-D map or an (H, W, C) stack, got shape {a.shape}")
    if a.size == 0:
        raise ValueError("heatmap input is empty")
    if not np.all(np.isfinite(a)):
        raise ValueError("heatmap input contains non-finite values")
    return a


def _quantize(plane: np.ndarray) -> tuple[np.ndarray, float, float, bool]:
    lo = float(plane.min())
    hi = float(plane.max())
    if hi == lo:
        # no contrast to encode; pin to mid-gray and flag it for the reader
        return np.full(plane.shape, _MID_GRAY, dtype=np.uint8), lo, hi, True
    pixels = np.round((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return pixels, lo, hi, False


def _diverging_rgb(pixels: np.ndarray) -> np.ndarray:
    """Blue -> white -> red ramp over the normalized 0..255 range."""
    t = pixels.astype(np.float64) / 255.0
    rgb = np.empty(pixels.shape + (3,), dtype=np.uint8)
    cold = t < 0.5
    s = np.where(cold, t * 2.0, (t - 0.5) * 2.0)
    rgb[..., 0] = np.where(cold, np.round(s * 255), 255)
    rgb[..., 1] = np.where(cold, np.round(s * 255), np.round((1 - s) * 255))
    rgb[..., 2] = np.where(cold, 255, np.round((1 - s) * 255))
    return rgb


def sidecar_path(path) -> str:
    base, _ = os.path.splitext(str(path))
    return base + ".json"


def emit_heatmap(attribution, path, colormap: str = "gray", png: bool = False) -> dict:
    """Write a PGM image of the map plus its bounds sidecar; return the sidecar dict.

    ``png=True`` additionally writes a PNG next to the PGM (same stem). The
    PGM itself is always grayscale; ``colormap`` only affects the PNG.
    """
    if colormap not in COLORMAPS:
        raise ValueError(f"unknown colormap {colormap!r}; available: {', '.join(COLORMAPS)}")
    plane = _as_plane(attribution)
    pixels, lo, hi, constant = _quantize(plane)
    h, w = plane.shape

    path = str(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())

    meta = {
        "schema": "heatmap-sidecar/v1",
        "image": os.path.basename(path),
        "shape": [int(h), int(w)],
        "min": lo,
        "max": hi,
        "constant": bool(constant),
        "colormap": colormap,
    }
    with open(sidecar_path(path), "w") as fh:
        fh.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")

    if png:
        try:
            from PIL import Image
        except ImportError as exc:
            raise RuntimeError("PNG output needs the Pillow package") from exc
        if colormap == "diverging":
            img = Image.fromarray(_diverging_rgb(pixels), mode="RGB")
        else:
            img = Image.fromarray(pixels, mode="L")
        img.save(os.path.splitext(path)[0] + ".png")
    return meta


def _read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    # header = magic, width, height, maxval as whitespace-separated ascii tokens
    tokens, pos = [], 0
    while len(tokens) < 4 and pos < len(raw):
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}, expected 255")
    pos += 1  # single whitespace byte after the header
    body = raw[pos:pos + w * h]
    if len(body) != w * h:
        raise ValueError(f"{path}: payload holds {len(body)} bytes, expected {w * h}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def load_heatmap(path) -> tuple[np.ndarray, dict]:
    """Invert :func:`emit_heatmap` using the sidecar bounds.

    Returns the reconstructed float map (within (max-min)/255 of the
    original) and the sidecar metadata.
    """
    pixels = _read_pgm(path)
    with open(sidecar_path(path), "r") as fh:
        meta = json.load(fh)
    if list(pixels.shape) != list(meta["shape"]):
        raise ValueError(f"{path}: image shape {list(pixels.shape)} does not match sidecar {meta['shape']}")
    if meta["constant"]:
        plane = np.full(pixels.shape, float(meta["min"]), dtype=np.float64)
    else:
        span = float(meta["max"]) - float(meta["min"])
        plane = float(meta["min"]) + pixels.astype(np.float64) / 255.0 * span
    return plane, meta
