"""Decision-level fusion of per-sensor class-probability matrices.

Three methods are supported: the plain average, a weighted average whose
coefficients come from a random search on validation data, and a weighted
average with externally fixed coefficients.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset.types import SENSORS, TrialKey, key_str, parse_key
from .errors import DataError, FusionBenchError
from .evaluation import MetricsReport, confusion, metrics

log = logging.getLogger(__name__)

PROBS_SCHEMA = "fusionbench-probs-v1"
WEIGHTS_SCHEMA = "fusionbench-weights-v1"
ROW_TOL = 1e-6
WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class ProbabilityMatrix:
    """Per-example class probabilities from one model; ``keys[i]`` names row ``i``."""

    probs: np.ndarray
    keys: tuple[TrialKey, ...] | None = None
    sensor: str | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"probability matrix must be 2-D, got shape {p.shape}")
        if p.size and ((p < -ROW_TOL).any() or (p > 1 + ROW_TOL).any()):
            raise ValueError("probabilities must lie in [0, 1]")
        bad = np.flatnonzero(np.abs(p.sum(axis=1) - 1.0) > ROW_TOL)
        if bad.size:
            raise ValueError(f"{bad.size} row(s) do not sum to 1 (first: row {bad[0]})")
        object.__setattr__(self, "probs", p)
        if self.keys is not None:
            keys = tuple(tuple(k) for k in self.keys)
            if len(keys) != len(p):
                raise ValueError(f"{len(keys)} keys for {len(p)} rows")
            object.__setattr__(self, "keys", keys)

    def __len__(self) -> int:
        return len(self.probs)

    @property
    def labels_from_keys(self) -> np.ndarray:
        """Action codes carried in the trial keys (third field)."""
        if self.keys is None:
            raise DataError("matrix has no trial keys")
        return np.array([k[2] for k in self.keys], dtype=np.int64)

    def reordered(self, keys: Sequence[TrialKey]) -> "ProbabilityMatrix":
        index = {k: i for i, k in enumerate(self.keys)}
        missing = [k for k in keys if tuple(k) not in index]
        if missing:
            raise DataError(f"{len(missing)} key(s) absent from {self.sensor or 'matrix'}: {[key_str(k) for k in missing[:5]]}")
        rows = [index[tuple(k)] for k in keys]
        return ProbabilityMatrix(self.probs[rows], tuple(keys), self.sensor)

    def write(self, path: str | Path) -> None:
        if self.keys is None:
            raise DataError("cannot write a probability file without trial keys")
        header = {"schema": PROBS_SCHEMA, "sensor": self.sensor, "n_classes": self.probs.shape[1], "count": len(self)}
        with open(path, "w") as fh:
            fh.write(json.dumps(header) + "\n")
            for k, row in zip(self.keys, self.probs):
                fh.write(json.dumps({"key": key_str(k), "sensor": self.sensor, "probs": row.tolist()}) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "ProbabilityMatrix":
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip()]
        if not lines:
            raise DataError(f"{path}: empty probability file")
        header = json.loads(lines[0])
        if header.get("schema") != PROBS_SCHEMA:
            raise DataError(f"{path}: unsupported schema {header.get('schema')!r}")
        recs = [json.loads(ln) for ln in lines[1:]]
        probs = np.array([r["probs"] for r in recs], dtype=np.float64).reshape(len(recs), header.get("n_classes", 4))
        try:
            return cls(probs, tuple(parse_key(r["key"]) for r in recs), header.get("sensor"))
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class FusionWeights:
    """One non-negative coefficient per sensor, stored normalised to sum 1."""

    values: tuple[float, ...]
    sensors: tuple[str, ...] = tuple(s.value for s in SENSORS)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if len(v) != len(self.sensors):
            raise ValueError(f"{len(v)} weights for {len(self.sensors)} sensors")
        if (v < 0).any() or not np.isfinite(v).all():
            raise ValueError(f"fusion weights must be finite and non-negative, got {v.tolist()}")
        total = v.sum()
        if total <= 0:
            raise ValueError("fusion weights must not all be zero")
        object.__setattr__(self, "values", tuple((v / total).tolist()))
        object.__setattr__(self, "sensors", tuple(str(s) for s in self.sensors))

    @classmethod
    def equal(cls, sensors: Sequence[str] = tuple(s.value for s in SENSORS)) -> "FusionWeights":
        return cls((1.0,) * len(sensors), tuple(sensors))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.values)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.sensors, self.values))

    def write(self, path: str | Path) -> None:
        doc = {"schema": WEIGHTS_SCHEMA, "weights": self.as_dict()}
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "FusionWeights":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema") != WEIGHTS_SCHEMA:
            raise DataError(f"{path}: unsupported weights schema {doc.get('schema')!r}")
        w = doc["weights"]
        return cls(tuple(w.values()), tuple(w.keys()))

    @classmethod
    def parse(cls, text: str, sensors: Sequence[str] = tuple(s.value for s in SENSORS)) -> "FusionWeights":
        """From a comma-separated list such as ``"0.40,0.05,0.15,0.40"``."""
        try:
            values = tuple(float(v) for v in text.split(","))
        except ValueError:
            raise ValueError(f"cannot parse weights {text!r}") from None
        return cls(values, tuple(sensors))


Matrices = Sequence[ProbabilityMatrix | np.ndarray]


def _stack(mats: Matrices, minimum: int = 1) -> np.ndarray:
    """(S, N, C) array after checking shapes and key alignment."""
    if len(mats) < minimum:
        raise ValueError(f"need at least {minimum} probability matrices, got {len(mats)}")
    arrays = [m.probs if isinstance(m, ProbabilityMatrix) else np.asarray(m, dtype=np.float64) for m in mats]
    shape = arrays[0].shape
    for i, a in enumerate(arrays):
        if a.shape != shape:
            raise ValueError(f"matrix {i} has shape {a.shape}, expected {shape}")
    keyed = [m for m in mats if isinstance(m, ProbabilityMatrix) and m.keys is not None]
    if len(keyed) > 1:
        ref = keyed[0].keys
        offenders = []
        for m in keyed[1:]:
            rows = [i for i, (a, b) in enumerate(zip(ref, m.keys)) if a != b]
            if rows:
                offenders.append(f"{m.sensor or '?'}: rows {rows[:5]}{'...' if len(rows) > 5 else ''}")
        if offenders:
            raise DataError("probability matrices are not aligned by trial key: " + "; ".join(offenders))
    return np.stack(arrays)


def _wrap(out: np.ndarray, mats: Matrices, name: str) -> ProbabilityMatrix:
    first = mats[0]
    keys = first.keys if isinstance(first, ProbabilityMatrix) else None
    return ProbabilityMatrix(out, keys, name)


def align(mats: Sequence[ProbabilityMatrix]) -> list[ProbabilityMatrix]:
    """Reorder every matrix to the first matrix's key order."""
    ref = mats[0].keys
    return [mats[0]] + [m.reordered(ref) for m in mats[1:]]


def fuse_average(mats: Matrices) -> ProbabilityMatrix:
    """Elementwise mean of the matrices (summing then renormalising is the same thing)."""
    stacked = _stack(mats, minimum=2)
    return _wrap(stacked.sum(axis=0) / len(stacked), mats, "average")


def _weight_vector(weights, n: int) -> np.ndarray:
    if isinstance(weights, FusionWeights):
        w = weights.array
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if (w < 0).any():
            raise ValueError(f"fusion weights must be non-negative, got {w.tolist()}")
        if w.sum() <= 0:
            raise ValueError("fusion weights must not all be zero")
        w = w / w.sum()
    if len(w) != n:
        raise ValueError(f"{len(w)} weights for {n} matrices")
    return w


def fuse_weighted(mats: Matrices, weights: FusionWeights | Sequence[float]) -> ProbabilityMatrix:
    """Convex combination ``sum_s w_s * P_s``; raw weight sequences are normalised first."""
    stacked = _stack(mats)
    w = _weight_vector(weights, len(stacked))
    return _wrap(np.tensordot(w, stacked, axes=1), mats, "weighted")


def decide(mat: ProbabilityMatrix | np.ndarray) -> np.ndarray:
    """Per-row argmax; ties resolve to the lowest class code."""
    p = mat.probs if isinstance(mat, ProbabilityMatrix) else np.asarray(mat)
    return p.argmax(axis=1)


def _accuracies(stacked: np.ndarray, candidates: np.ndarray, labels: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty(len(candidates))
    for start in range(0, len(candidates), chunk):
        c = candidates[start : start + chunk]
        fused = np.einsum("ks,snc->knc", c, stacked)
        out[start : start + chunk] = (fused.argmax(axis=2) == labels).mean(axis=1)
    return out


@dataclass
class WeightSearch:
    weights: FusionWeights
    winners: list[np.ndarray]
    winner_accuracies: list[float]
    equal_accuracy: float
    final_accuracy: float
    fallback: bool = False
    repeats: int = field(default=0)


def search_weights_detailed(
    mats: Matrices,
    labels: Sequence[int],
    n_repeats: int = 10,
    n_candidates_per_repeat: int = 1000,
    seed: int = 0,
    candidates: np.ndarray | None = None,
    sensors: Sequence[str] | None = None,
    guard: bool = True,
) -> WeightSearch:
    """Random coefficient search on validation predictions.

    Each repeat draws ``n_candidates_per_repeat`` vectors uniformly from
    [0, 1]^S, appends the equal-weights vector, and keeps the candidate with
    the best validation accuracy (ties: earliest in the pool).  The raw
    winners are averaged and the mean is normalised.  If ``candidates`` is given it replaces the random
    draws in every repeat.

    Averaging winners can land on a vector that scores below equal weights.
    With ``guard`` on, the best single winner is returned in that case, so
    the result never scores below the plain average on validation.
    """
    stacked = _stack(mats)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(y) == 0 or stacked.shape[1] == 0:
        raise ValueError("validation set is empty")
    if len(y) != stacked.shape[1]:
        raise ValueError(f"{len(y)} labels for {stacked.shape[1]} rows")
    n_sensors = stacked.shape[0]
    if sensors is None:
        sensors = [m.sensor for m in mats if isinstance(m, ProbabilityMatrix)]
        if len(sensors) != n_sensors or any(s is None for s in sensors):
            sensors = [s.value for s in SENSORS] if n_sensors == len(SENSORS) else [f"s{i}" for i in range(n_sensors)]
    equal = np.full(n_sensors, 1.0 / n_sensors)
    equal_acc = float(_accuracies(stacked, equal[None], y)[0])

    rng = np.random.default_rng(seed)
    winners, winner_accs = [], []
    for _ in range(n_repeats):
        if candidates is None:
            pool = rng.uniform(0.0, 1.0, size=(n_candidates_per_repeat, n_sensors))
        else:
            pool = np.asarray(candidates, dtype=np.float64).reshape(-1, n_sensors)
        pool = np.vstack([pool, equal])
        pool = pool[pool.sum(axis=1) > 0]
        accs = _accuracies(stacked, pool, y)
        best = int(np.argmax(accs))
        winners.append(pool[best].copy())
        winner_accs.append(float(accs[best]))

    mean = np.mean(winners, axis=0)
    final_acc = float(_accuracies(stacked, mean[None], y)[0])
    fallback = False
    if guard and final_acc < equal_acc:
        best = int(np.argmax(winner_accs))
        log.info("averaged weights score %.4f < equal weights %.4f; using best single winner", final_acc, equal_acc)
        mean, final_acc, fallback = winners[best], winner_accs[best], True
    mean = mean / mean.sum()
    return WeightSearch(
        weights=FusionWeights(tuple(mean), tuple(sensors)),
        winners=winners,
        winner_accuracies=winner_accs,
        equal_accuracy=equal_acc,
        final_accuracy=final_acc,
        fallback=fallback,
        repeats=n_repeats,
    )


def search_weights(
    mats: Matrices,
    labels: Sequence[int],
    n_repeats: int = 10,
    n_candidates_per_repeat: int = 1000,
    seed: int = 0,
    **kwargs,
) -> FusionWeights:
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    return search_weights_detailed(mats, labels, n_repeats, n_candidates_per_repeat, seed, **kwargs).weights


def evaluate_fixed_weights(mats: Matrices, labels: Sequence[int], weights: FusionWeights | Sequence[float]) -> MetricsReport:
    """Fuse with the given coefficients, decide, and score against ``labels``."""
    fused = fuse_weighted(mats, weights)
    pred = decide(fused)
    y = np.asarray(labels, dtype=np.int64)
    if len(y) != len(pred):
        raise FusionBenchError(f"{len(y)} labels for {len(pred)} fused rows")
    return metrics(confusion(y, pred, fused.probs.shape[1]))
