"""Batch loading of a sensor's split into model-ready arrays."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from .imaging import DEPTH_MAX, load_paired_example
from .manifest import Manifest, SplitAssignment
from .types import SensorId, TrialKey


@dataclass
class SplitData:
    """Arrays for one partition: ``x`` is (N, H, W, 2C) or (N, D), ``y`` holds action codes."""

    x: np.ndarray
    y: np.ndarray
    keys: list[TrialKey]

    def __len__(self) -> int:
        return len(self.y)

    def flattened(self) -> "SplitData":
        """MLP form: per example, the initial image flattened then the final image flattened."""
        if self.x.ndim == 2:
            return self
        n = len(self.x)
        c = self.x.shape[-1] // 2
        flat = np.concatenate([self.x[..., :c].reshape(n, -1), self.x[..., c:].reshape(n, -1)], axis=1)
        return SplitData(flat, self.y, self.keys)


def load_arrays_for_sensor(
    manifest: Manifest,
    splits: SplitAssignment,
    sensor: SensorId | str,
    target_size: int = 64,
    depth_max: float = DEPTH_MAX,
    root: str | Path | None = None,
) -> dict[str, SplitData]:
    """Load train/validation/test arrays for ``sensor`` in split order."""
    sensor = SensorId.parse(sensor)
    root = root if root is not None else manifest.root
    by_key = {r.key: r for r in manifest.for_sensor(sensor)}
    out = {}
    for part in ("train", "validation", "test"):
        keys = list(splits.part(part))
        missing = [k for k in keys if k not in by_key]
        if missing:
            raise DataError(f"{sensor}: {len(missing)} {part} trial(s) absent from the manifest, e.g. {missing[:3]}")
        examples = [load_paired_example(by_key[k], target_size, depth_max, root) for k in keys]
        c = 2 * sensor.channels
        x = np.stack([e.input for e in examples]) if examples else np.zeros((0, target_size, target_size, c), np.float32)
        y = np.array([int(e.label) for e in examples], dtype=np.int64)
        out[part] = SplitData(x, y, keys)
    return out
