"""PNG I/O wrappers around OpenCV.

Everything outside this module sees RGB float arrays in [0, 1]; the
BGR channel order and integer quantization stay contained here.
"""

from __future__ import annotations

import os

import cv2
import numpy as np


def read_png(path):
    """8-bit (or 16-bit) PNG -> float64 RGB in [0, 1], shape (H, W, 3).
    Grayscale inputs are broadcast to three channels."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read image {path}")
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    rgb = raw[:, :, ::-1].astype(np.float64)
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    return rgb / scale


def read_png_gray(path):
    """PNG -> float64 (H, W) in [0, 1], averaging channels if needed."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read image {path}")
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    img = raw.astype(np.float64) / scale
    if img.ndim == 3:
        img = img[:, :, : min(3, img.shape[2])].mean(axis=2)
    return img


def read_png_labels(path):
    """PNG -> int32 (H, W) class labels (first channel, raw values)."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read image {path}")
    if raw.ndim == 3:
        raw = raw[:, :, 0]
    return raw.astype(np.int32)


def write_png(path, rgb):
    """float RGB in [0, 1] -> 8-bit PNG."""
    arr = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    u8 = np.rint(arr * 255.0).astype(np.uint8)
    _write(path, u8[:, :, ::-1] if u8.ndim == 3 else u8)


def write_png_labels(path, labels):
    """int class labels -> single-channel 8-bit PNG."""
    arr = np.asarray(labels)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError("labels outside uint8 range")
    _write(path, arr.astype(np.uint8))


def write_png16(path, rgb):
    """float RGB in [0, 1] -> 16-bit PNG. round(x*65535) survives a
    read_png16/write_png16 round trip bit-exactly."""
    arr = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    u16 = np.rint(arr * 65535.0).astype(np.uint16)
    _write(path, u16[:, :, ::-1] if u16.ndim == 3 else u16)


def read_png16(path):
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"cannot read image {path}")
    if raw.dtype != np.uint16:
        raise ValueError(f"{path} is not a 16-bit PNG")
    if raw.ndim == 3:
        raw = raw[:, :, ::-1]
    return raw.astype(np.float64) / 65535.0


def _write(path, bgr):
    path = str(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if not cv2.imwrite(path, np.ascontiguousarray(bgr)):
        raise IOError(f"cannot write image {path}")
