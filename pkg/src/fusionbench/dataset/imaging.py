"""Image decoding, resizing and normalisation for paired examples."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DataError
from .types import PairedExample, SensorId, TrialRecord

DEPTH_MAX = 65535.0
COLOR_MAX = 255.0


def read_image(path: str | Path) -> np.ndarray:
    """Decode a PNG to an (H, W, C) float64 array of raw pixel values (C is 1 or 3)."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGB", "L"):
                arr = np.asarray(im, dtype=np.float64)
            elif im.mode in ("RGBA", "P", "LA"):
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
            else:  # 16-bit / 32-bit integer grayscale
                arr = np.asarray(im).astype(np.float64)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def image_size(path: str | Path) -> tuple[int, int]:
    """(width, height) read from the file header only."""
    try:
        with Image.open(path) as im:
            return im.size
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def resize_bilinear(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize of an (H, W, C) float array, channel by channel.

    Downscaling widens the triangle filter to the scale factor (area-aware
    bilinear), so a 2x2 checkerboard shrinks to its mean.
    """
    if image.shape[1] == width and image.shape[0] == height:
        return image.astype(np.float64, copy=True)
    channels = [
        np.asarray(
            Image.fromarray(image[:, :, c].astype(np.float32)).resize((width, height), Image.BILINEAR),
            dtype=np.float64,
        )
        for c in range(image.shape[2])
    ]
    return np.stack(channels, axis=-1)


def normalise(image: np.ndarray, sensor: SensorId, depth_max: float = DEPTH_MAX) -> np.ndarray:
    scale = depth_max if sensor is SensorId.DEPTH else COLOR_MAX
    return np.clip(image / scale, 0.0, 1.0)


def load_paired_example(
    record: TrialRecord,
    target_size: int = 64,
    depth_max: float = DEPTH_MAX,
    root: str | Path | None = None,
    dtype=np.float32,
) -> PairedExample:
    """Resize both phases to ``target_size`` squared, scale into [0, 1], stack initial then final."""
    phases = []
    for rel in (record.initial_image_path, record.final_image_path):
        path = Path(root, rel) if root is not None else Path(rel)
        img = read_image(path)
        if img.shape[2] != record.sensor.channels:
            raise DataError(f"{path}: expected {record.sensor.channels} channel(s) for {record.sensor}, got {img.shape[2]}")
        img = resize_bilinear(img, target_size, target_size)
        phases.append(normalise(img, record.sensor, depth_max))
    stacked = np.concatenate(phases, axis=-1).astype(dtype)
    return PairedExample(input=stacked, label=record.action, key=record.key)
