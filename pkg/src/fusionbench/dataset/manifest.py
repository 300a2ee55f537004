"""Dataset layout scanning, the manifest index file, and train/validation/test splits.

On-disk layout::

    root/<Sensor>/object_<k>/tool_<k>/<Action>/rep_<k>/{initial,final}.png

``<Sensor>`` is one of ``Color``, ``Depth``, ``ICubLeft``, ``ICubRight``;
``<Action>`` is ``Push``, ``Pull``, ``LeftToRight`` or ``RightToLeft`` (the
numeric code is accepted too).  Index directories are parsed by their
trailing integer, so ``object_7`` and ``7`` are equivalent.

An optional ``root/dataset.json`` declares the native image size of
synthetic data; without it images must be 640x480.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import DataError
from .imaging import image_size
from .types import ActionLabel, SensorId, TrialKey, TrialRecord, key_str, parse_key

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = "fusionbench-manifest-v1"
SPLIT_SCHEMA = "fusionbench-split-v1"
DATASET_INFO = "dataset.json"
REAL_NATIVE_SIZE = (640, 480)
PHASES = ("initial", "final")

_TRAILING_INT = re.compile(r"(\d+)$")


@dataclass
class Manifest:
    records: list[TrialRecord]
    root: str | None = None
    native_size: tuple[int, int] = REAL_NATIVE_SIZE
    incomplete: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def for_sensor(self, sensor: SensorId | str) -> list[TrialRecord]:
        sensor = SensorId.parse(sensor)
        return [r for r in self.records if r.sensor is sensor]

    def sensors(self) -> list[SensorId]:
        present = {r.sensor for r in self.records}
        return [s for s in SensorId if s in present]

    def trial_keys(self) -> list[TrialKey]:
        return sorted({r.key for r in self.records})

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.records:
            out[r.sensor.value] = out.get(r.sensor.value, 0) + 1
        return out

    def write(self, path: str | Path) -> None:
        header = {
            "schema": MANIFEST_SCHEMA,
            "root": self.root,
            "native_size": list(self.native_size),
            "count": len(self.records),
            "incomplete": self.incomplete,
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for r in self.records:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "Manifest":
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip()]
        if not lines:
            raise DataError(f"{path}: empty manifest file")
        header = json.loads(lines[0])
        if header.get("schema") != MANIFEST_SCHEMA:
            raise DataError(f"{path}: unsupported manifest schema {header.get('schema')!r}")
        records = [TrialRecord.from_dict(json.loads(ln)) for ln in lines[1:]]
        if len(records) != header.get("count", len(records)):
            raise DataError(f"{path}: header declares {header['count']} records, found {len(records)}")
        return cls(
            records=records,
            root=header.get("root"),
            native_size=tuple(header.get("native_size", REAL_NATIVE_SIZE)),
            incomplete=header.get("incomplete", []),
        )


def _index(name: str, what: str, path: Path) -> int:
    m = _TRAILING_INT.search(name)
    if not m:
        raise DataError(f"{path}: cannot parse {what} index from directory name {name!r}")
    return int(m.group(1))


def _subdirs(path: Path) -> list[Path]:
    return sorted(p for p in path.iterdir() if p.is_dir())


def scan_dataset(root: str | Path, check_images: bool = True) -> Manifest:
    """Index every trial under ``root``.

    Trials with a missing phase image are excluded and listed in
    ``Manifest.incomplete``; unreadable images, wrong image sizes and
    duplicate trial keys raise :class:`DataError`.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    native = REAL_NATIVE_SIZE
    info_path = root / DATASET_INFO
    if info_path.exists():
        info = json.loads(info_path.read_text())
        native = tuple(info.get("native_size", native))

    records: list[TrialRecord] = []
    incomplete: list[dict] = []
    seen: dict[tuple, Path] = {}
    for sensor_dir in _subdirs(root):
        try:
            sensor = SensorId.parse(sensor_dir.name)
        except ValueError:
            log.debug("skipping non-sensor directory %s", sensor_dir)
            continue
        for obj_dir in _subdirs(sensor_dir):
            obj = _index(obj_dir.name, "object", obj_dir)
            for tool_dir in _subdirs(obj_dir):
                tool = _index(tool_dir.name, "tool", tool_dir)
                for action_dir in _subdirs(tool_dir):
                    try:
                        action = ActionLabel.parse(action_dir.name)
                    except ValueError as exc:
                        raise DataError(f"{action_dir}: {exc}") from None
                    for rep_dir in _subdirs(action_dir):
                        rep = _index(rep_dir.name, "repetition", rep_dir)
                        key = (sensor.value, obj, tool, int(action), rep)
                        if key in seen:
                            raise DataError(f"duplicate trial {key}: {seen[key]} and {rep_dir}")
                        seen[key] = rep_dir
                        paths = {ph: rep_dir / f"{ph}.png" for ph in PHASES}
                        missing = [ph for ph, p in paths.items() if not p.is_file()]
                        if missing:
                            incomplete.append(
                                {"sensor": sensor.value, "key": key_str(key[1:]), "missing": missing, "dir": str(rep_dir.relative_to(root))}
                            )
                            continue
                        if check_images:
                            for p in paths.values():
                                size = image_size(p)
                                if tuple(size) != tuple(native):
                                    raise DataError(f"{p}: image size {size} differs from the dataset's native size {tuple(native)}")
                        records.append(
                            TrialRecord(
                                sensor=sensor,
                                object_id=obj,
                                tool_id=tool,
                                action=action,
                                repetition=rep,
                                initial_image_path=str(paths["initial"].relative_to(root)),
                                final_image_path=str(paths["final"].relative_to(root)),
                            )
                        )

    manifest = Manifest(records=records, root=str(root), native_size=tuple(native), incomplete=incomplete)
    if not records:
        manifest.warnings.append(f"no trials found under {root}")
        log.warning("no trials found under %s", root)
    if incomplete:
        msg = f"{len(incomplete)} incomplete trial(s) excluded"
        manifest.warnings.append(msg)
        log.warning("%s under %s", msg, root)
    return manifest


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitAssignment:
    seed: int
    train: tuple[TrialKey, ...]
    validation: tuple[TrialKey, ...]
    test: tuple[TrialKey, ...]

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def part(self, name: str) -> tuple[TrialKey, ...]:
        if name in ("val", "validation"):
            return self.validation
        if name not in ("train", "test"):
            raise KeyError(name)
        return getattr(self, name)

    def write(self, path: str | Path) -> None:
        doc = {
            "schema": SPLIT_SCHEMA,
            "seed": self.seed,
            "train": [key_str(k) for k in self.train],
            "validation": [key_str(k) for k in self.validation],
            "test": [key_str(k) for k in self.test],
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "SplitAssignment":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema") != SPLIT_SCHEMA:
            raise DataError(f"{path}: unsupported split schema {doc.get('schema')!r}")
        parts = {name: tuple(parse_key(k) for k in doc[name]) for name in ("train", "validation", "test")}
        return cls(seed=int(doc["seed"]), **parts)


def split_sizes(n: int) -> tuple[int, int, int]:
    """60/20/20 with validation and test rounded down; train takes the remainder."""
    held = n // 5
    return n - 2 * held, held, held


def split(manifest: Manifest | Iterable[TrialRecord] | Sequence[TrialKey], seed: int) -> SplitAssignment:
    """Seeded random 60/20/20 partition of the distinct trial keys.

    Keys are shared across sensors, so every sensor sees the same partition and
    per-sensor predictions stay aligned for fusion.
    """
    if isinstance(manifest, Manifest):
        keys = manifest.trial_keys()
    else:
        items = list(manifest)
        keys = sorted({r.key if isinstance(r, TrialRecord) else tuple(r) for r in items})
    n = len(keys)
    if n < 5:
        raise DataError(f"need at least 5 trials to form three non-empty splits, got {n}")
    n_train, n_val, _ = split_sizes(n)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [keys[i] for i in order]
    return SplitAssignment(
        seed=seed,
        train=tuple(shuffled[:n_train]),
        validation=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
    )
