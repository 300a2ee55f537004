"""Seeded mini-batch training, per-sensor model selection and hyperparameter search."""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .dataset.loader import SplitData
from .engine import backward, cross_entropy, one_hot, optimizer_step
from .engine.optim import OptimizerState
from .errors import NumericError
from .models import Model, ModelConfig, build, predict_proba

log = logging.getLogger(__name__)

DEFAULT_EPOCHS = {"MLP": 500, "CNN1": 20, "CNN2": 20}
DEFAULT_OPTIMIZER = {"MLP": "sgd", "CNN1": "adam", "CNN2": "adam"}
DEFAULT_LR = {"sgd": 0.01, "adam": 0.001}


@dataclass(frozen=True)
class TrainConfig:
    """``None`` fields resolve per model kind: MLP -> SGD for 500 epochs, CNNs -> Adam for 20."""

    epochs: int | None = None
    batch_size: int = 32
    optimizer: str | None = None
    learning_rate: float | None = None
    seed: int = 0
    abort_on_nan: bool = True
    verbose: bool = False

    def __post_init__(self):
        if self.epochs is not None and self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer is not None and self.optimizer.lower() not in DEFAULT_LR:
            raise ValueError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")

    def resolved(self, kind: str) -> "TrainConfig":
        opt = (self.optimizer or DEFAULT_OPTIMIZER[kind]).lower()
        return replace(
            self,
            epochs=DEFAULT_EPOCHS[kind] if self.epochs is None else self.epochs,
            optimizer=opt,
            learning_rate=self.learning_rate or DEFAULT_LR[opt],
        )

    def make_optimizer(self) -> OptimizerState:
        return OptimizerState(kind=self.optimizer, learning_rate=self.learning_rate)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def final_val_accuracy(self) -> float:
        return self.epochs[-1].val_accuracy if self.epochs else float("nan")

    @property
    def losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    def write(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for e in self.epochs:
                fh.write(json.dumps(asdict(e)) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "TrainHistory":
        with open(path) as fh:
            return cls([EpochRecord(**json.loads(ln)) for ln in fh if ln.strip()])


def match_form(data: SplitData, model: Model) -> SplitData:
    """Flatten CNN-form arrays when the model is an MLP."""
    if data.x.ndim == 4 and len(model.config.input_shape) == 1:
        return data.flattened()
    return data


def accuracy(model: Model, data: SplitData) -> float:
    data = match_form(data, model)
    if len(data) == 0:
        return float("nan")
    return float((predict_proba(model, data.x).argmax(axis=1) == data.y).mean())


def train(
    model: Model,
    splits: Mapping[str, SplitData],
    config: TrainConfig = TrainConfig(),
) -> tuple[Model, TrainHistory]:
    """Train ``model`` in place on ``splits["train"]``; validation accuracy is logged per epoch.

    Each epoch reshuffles the training set with a generator seeded from
    ``config.seed``; dropout masks come from a second seeded stream.  The
    model is returned in eval mode.
    """
    cfg = config.resolved(model.config.kind)
    tr = match_form(splits["train"], model)
    val = splits.get("validation")
    n_classes = model.config.n_classes
    shuffle_rng = np.random.default_rng([cfg.seed, 0])
    dropout_rng = np.random.default_rng([cfg.seed, 1])
    opt = cfg.make_optimizer()
    params = model.parameters()
    history = TrainHistory()
    targets = one_hot(tr.y, n_classes, dtype=model.dtype)

    for epoch in range(cfg.epochs):
        model.train()
        order = shuffle_rng.permutation(len(tr))
        total_loss = 0.0
        correct = 0
        seen = 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            try:
                probs = model.forward(tr.x[idx], rng=dropout_rng)
                loss = cross_entropy(probs, targets[idx])
                value = loss.item()
                problem = None if math.isfinite(value) else f"non-finite loss {value}"
            except NumericError as exc:
                problem = str(exc)
            if problem is not None:
                msg = f"{problem} at epoch {epoch}, batch {b}"
                if cfg.abort_on_nan:
                    raise NumericError(msg)
                log.warning("%s; skipping update", msg)
                continue
            backward(loss, params)
            optimizer_step(params, opt)
            total_loss += value * len(idx)
            correct += int((probs.data.argmax(axis=1) == tr.y[idx]).sum())
            seen += len(idx)
            if cfg.verbose:
                log.info("epoch %d batch %d loss %.5f", epoch, b, value)
        model.eval()
        record = EpochRecord(
            epoch=epoch,
            train_loss=total_loss / seen if seen else float("nan"),
            train_accuracy=correct / seen if seen else float("nan"),
            val_accuracy=accuracy(model, val) if val is not None else float("nan"),
        )
        history.epochs.append(record)
        log.debug("epoch %d: %s", epoch, record)
    model.eval()
    return model, history


def best_index(histories: Sequence[TrainHistory]) -> int:
    """Index of the highest final validation accuracy; ties go to the earlier entry."""
    if not histories:
        raise ValueError("no candidates to select from")
    best, best_acc = 0, -math.inf
    for i, h in enumerate(histories):
        acc = h.final_val_accuracy
        if not math.isnan(acc) and acc > best_acc:
            best, best_acc = i, acc
    return best


def select_best_per_sensor(candidates: Mapping[Any, Sequence[tuple[Model, TrainHistory]]]) -> dict[Any, Model]:
    out = {}
    for sensor, pool in candidates.items():
        if not pool:
            raise ValueError(f"sensor {sensor} has no candidate models")
        out[sensor] = pool[best_index([h for _, h in pool])][0]
    return out


# ---------------------------------------------------------------------------
# hyperparameter search
# ---------------------------------------------------------------------------

_MODEL_FIELDS = {f.name for f in fields(ModelConfig)}
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}


@dataclass
class SearchTrial:
    index: int
    point: dict[str, Any]
    score: float | None
    error: str | None = None


@dataclass
class SearchResult:
    model_config: ModelConfig
    train_config: TrainConfig
    score: float
    point: dict[str, Any]
    trials: list[SearchTrial]


def grid_points(space: Mapping[str, Sequence]) -> list[dict[str, Any]]:
    names = list(space)
    return [dict(zip(names, combo)) for combo in itertools.product(*(list(space[n]) for n in names))]


def _sample(spec, rng: np.random.Generator):
    if isinstance(spec, Mapping):
        lo, hi = float(spec["low"]), float(spec["high"])
        if spec.get("log"):
            return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        value = rng.uniform(lo, hi)
        return int(round(value)) if spec.get("integer") else float(value)
    values = list(spec)
    return values[int(rng.integers(len(values)))]


def random_points(space: Mapping[str, Any], budget: int, seed: int) -> list[dict[str, Any]]:
    """``budget`` independent draws; list-valued dims are sampled uniformly, ``{low, high[, log]}`` dims continuously."""
    rng = np.random.default_rng(seed)
    return [{name: _sample(spec, rng) for name, spec in space.items()} for _ in range(budget)]


def apply_point(point: Mapping[str, Any], model_config: ModelConfig, train_config: TrainConfig) -> tuple[ModelConfig, TrainConfig]:
    m_over, t_over = {}, {}
    for name, value in point.items():
        if name in _TRAIN_FIELDS:
            t_over[name] = value
        elif name in _MODEL_FIELDS:
            m_over[name] = value
        else:
            raise KeyError(f"search dimension {name!r} is neither a ModelConfig nor a TrainConfig field")
    return replace(model_config, **m_over), replace(train_config, **t_over)


def hyperparameter_search(
    space: Mapping[str, Any],
    data: Mapping[str, SplitData],
    model_config: ModelConfig,
    train_config: TrainConfig = TrainConfig(),
    strategy: str = "grid",
    budget: int | None = None,
    seed: int = 0,
    log_path: str | Path | None = None,
    model_seed: int = 0,
) -> SearchResult:
    """Train one model per search point and keep the best validation accuracy.

    Grid search enumerates the Cartesian product (truncated to ``budget`` when
    given); random search draws ``budget`` points.  Ties keep the earlier
    trial.  Every trial is appended to ``log_path`` (JSON lines) in trial order.
    """
    if not space:
        raise ValueError("search space is empty")
    if strategy == "grid":
        points = grid_points(space)
        if budget is not None:
            if budget < 1:
                raise ValueError("budget must be >= 1")
            points = points[:budget]
    elif strategy == "random":
        if budget is None or budget < 1:
            raise ValueError("random search needs budget >= 1")
        points = random_points(space, budget, seed)
    else:
        raise ValueError(f"strategy must be 'grid' or 'random', got {strategy!r}")

    trials: list[SearchTrial] = []
    best: tuple[float, int, ModelConfig, TrainConfig] | None = None
    log_fh = open(log_path, "w") if log_path else None
    try:
        for i, point in enumerate(points):
            m_cfg, t_cfg = apply_point(point, model_config, train_config)
            try:
                model = build(m_cfg, seed=model_seed)
                _, hist = train(model, data, t_cfg)
                score = hist.final_val_accuracy if len(hist) else accuracy(model, data["validation"])
                trial = SearchTrial(i, dict(point), None if math.isnan(score) else score)
            except NumericError as exc:
                trial = SearchTrial(i, dict(point), None, str(exc))
            trials.append(trial)
            if log_fh:
                log_fh.write(json.dumps(asdict(trial), default=_jsonable) + "\n")
                log_fh.flush()
            if trial.score is not None and (best is None or trial.score > best[0]):
                best = (trial.score, i, m_cfg, t_cfg)
    finally:
        if log_fh:
            log_fh.close()
    if best is None:
        raise NumericError(f"all {len(trials)} search trials failed or produced NaN")
    score, i, m_cfg, t_cfg = best
    return SearchResult(m_cfg, t_cfg, score, dict(points[i]), trials)


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"not serialisable: {obj!r}")


def train_candidates(
    configs: Iterable[tuple[ModelConfig, TrainConfig]],
    data: Mapping[str, SplitData],
    model_seed: int = 0,
) -> list[tuple[Model, TrainHistory]]:
    """Build and train each (model, training) configuration on the same data."""
    out = []
    for m_cfg, t_cfg in configs:
        model = build(m_cfg, seed=model_seed)
        out.append(train(model, data, t_cfg))
    return out
