"""Experiment configuration: a single YAML file resolved against the built-in defaults.

Validation errors carry the dotted field path and, when the value came from
a file, its line number.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .dataset.types import SensorId
from .errors import ConfigError
from .models import KINDS

OUTPUT_ROOT_ENV = "FUSIONBENCH_OUTPUT_ROOT"
FUSION_METHODS = ("average", "weighted", "fixed")


@dataclass
class SynthSettings:
    n_objects: int = 20
    n_tools: int = 4
    n_repetitions: int = 10
    noise_level: float = 0.02
    seed: int = 0
    width: int = 128
    height: int = 96


@dataclass
class DatasetSettings:
    source: str = "synth"  # "synth" or "real"
    root: str | None = None
    synth: SynthSettings = field(default_factory=SynthSettings)
    image_size: int = 64
    depth_max: float = 65535.0
    split_seed: int = 0


@dataclass
class TrainSettings:
    epochs: int | None = None
    batch_size: int = 32
    optimizer: str | None = None
    learning_rate: float | None = None
    seed: int = 0


@dataclass
class ModelEntry:
    kind: str = "CNN1"
    model_seed: int = 0
    train: TrainSettings = field(default_factory=TrainSettings)
    overrides: dict[str, Any] = field(default_factory=dict)


@dataclass
class FusionSettings:
    methods: list[str] = field(default_factory=lambda: ["average", "weighted"])
    n_repeats: int = 10
    n_candidates: int = 1000
    seed: int = 0
    fixed_weights: list[float] | None = None


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    output_dir: str | None = None
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    sensors: list[str] = field(default_factory=lambda: [s.value for s in SensorId])
    models: dict[str, list[ModelEntry]] = field(default_factory=dict)
    fusion: FusionSettings = field(default_factory=FusionSettings)

    def run_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / self.name

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def seeds(self) -> dict[str, Any]:
        return {
            "split_seed": self.dataset.split_seed,
            "synth_seed": self.dataset.synth.seed if self.dataset.source == "synth" else None,
            "fusion_seed": self.fusion.seed,
            "models": {s: [(e.kind, e.model_seed, e.train.seed) for e in entries] for s, entries in self.models.items()},
        }


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def _line_index(node, path: str = "", out: dict | None = None) -> dict[str, int]:
    """Map dotted paths to 1-based source lines from a composed YAML node tree."""
    out = {} if out is None else out
    if node is None:
        return out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            sub = f"{path}.{k.value}" if path else str(k.value)
            out[sub] = k.start_mark.line + 1
            _line_index(v, sub, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, f"{path}[{i}]", out)
    return out


class _Reader:
    def __init__(self, lines: dict[str, int]):
        self.lines = lines

    def fail(self, path: str, message: str):
        line = None
        p = path
        while p and line is None:
            line = self.lines.get(p)
            p = p.rsplit(".", 1)[0] if "." in p else ""
        raise ConfigError(message, field=path, line=line)

    def mapping(self, raw, path: str, cls):
        if raw is None:
            return {}
        if not isinstance(raw, dict):
            self.fail(path, f"expected a mapping, got {type(raw).__name__}")
        known = {f for f in cls.__dataclass_fields__}
        for k in raw:
            if k not in known:
                self.fail(f"{path}.{k}" if path else str(k), f"unknown field; expected one of {sorted(known)}")
        return raw

    def integer(self, raw, path, minimum=None, optional=False):
        if raw is None and optional:
            return None
        if isinstance(raw, bool) or not isinstance(raw, int):
            self.fail(path, f"expected an integer, got {raw!r}")
        if minimum is not None and raw < minimum:
            self.fail(path, f"must be >= {minimum}, got {raw}")
        return raw

    def number(self, raw, path, positive=False, optional=False, minimum=None):
        if raw is None and optional:
            return None
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            self.fail(path, f"expected a number, got {raw!r}")
        if positive and not raw > 0:
            self.fail(path, f"must be positive, got {raw}")
        if minimum is not None and raw < minimum:
            self.fail(path, f"must be >= {minimum}, got {raw}")
        return float(raw)

    def choice(self, raw, path, options, optional=False):
        if raw is None and optional:
            return None
        if not isinstance(raw, str) or raw not in options:
            self.fail(path, f"expected one of {list(options)}, got {raw!r}")
        return raw


def _read_train(r: _Reader, raw, path) -> TrainSettings:
    raw = r.mapping(raw, path, TrainSettings)
    d = TrainSettings()
    if "epochs" in raw:
        d.epochs = r.integer(raw["epochs"], f"{path}.epochs", minimum=0, optional=True)
    if "batch_size" in raw:
        d.batch_size = r.integer(raw["batch_size"], f"{path}.batch_size", minimum=1)
    if "optimizer" in raw:
        opt = raw["optimizer"]
        d.optimizer = r.choice(opt.lower() if isinstance(opt, str) else opt, f"{path}.optimizer", ("sgd", "adam"), optional=True)
    if "learning_rate" in raw:
        d.learning_rate = r.number(raw["learning_rate"], f"{path}.learning_rate", positive=True, optional=True)
    if "seed" in raw:
        d.seed = r.integer(raw["seed"], f"{path}.seed")
    return d


_OVERRIDES = ("hidden_units", "hidden_activations", "conv_filters", "kernel_size", "dropout")


def _read_model(r: _Reader, raw, path) -> ModelEntry:
    if isinstance(raw, str):
        raw = {"kind": raw}
    raw = r.mapping(raw, path, ModelEntry)
    e = ModelEntry()
    kind = raw.get("kind", e.kind)
    norm = kind.upper().replace("-", "") if isinstance(kind, str) else kind
    e.kind = r.choice(norm, f"{path}.kind", KINDS)
    if "model_seed" in raw:
        e.model_seed = r.integer(raw["model_seed"], f"{path}.model_seed")
    e.train = _read_train(r, raw.get("train"), f"{path}.train")
    ov = raw.get("overrides") or {}
    if not isinstance(ov, dict):
        r.fail(f"{path}.overrides", "expected a mapping")
    for k in ov:
        if k not in _OVERRIDES:
            r.fail(f"{path}.overrides.{k}", f"unknown override; expected one of {list(_OVERRIDES)}")
    e.overrides = dict(ov)
    return e


def config_from_dict(raw: dict | None, lines: dict[str, int] | None = None) -> ExperimentConfig:
    r = _Reader(lines or {})
    raw = r.mapping(raw or {}, "", ExperimentConfig)
    cfg = ExperimentConfig()
    if "name" in raw:
        if not isinstance(raw["name"], str) or not raw["name"]:
            r.fail("name", "expected a non-empty string")
        cfg.name = raw["name"]
    if raw.get("output_dir") is not None:
        cfg.output_dir = str(raw["output_dir"])

    ds_raw = r.mapping(raw.get("dataset"), "dataset", DatasetSettings)
    ds = cfg.dataset
    ds.source = r.choice(ds_raw.get("source", ds.source), "dataset.source", ("synth", "real"))
    ds.root = ds_raw.get("root")
    if ds.source == "real" and not ds.root:
        r.fail("dataset.root", "required when dataset.source is 'real'")
    syn_raw = r.mapping(ds_raw.get("synth"), "dataset.synth", SynthSettings)
    for name in ("n_objects", "n_tools", "n_repetitions", "width", "height"):
        if name in syn_raw:
            setattr(ds.synth, name, r.integer(syn_raw[name], f"dataset.synth.{name}", minimum=1))
    if "seed" in syn_raw:
        ds.synth.seed = r.integer(syn_raw["seed"], "dataset.synth.seed")
    if "noise_level" in syn_raw:
        ds.synth.noise_level = r.number(syn_raw["noise_level"], "dataset.synth.noise_level", minimum=0)
    if "image_size" in ds_raw:
        ds.image_size = r.integer(ds_raw["image_size"], "dataset.image_size", minimum=1)
    if "depth_max" in ds_raw:
        ds.depth_max = r.number(ds_raw["depth_max"], "dataset.depth_max", positive=True)
    if "split_seed" in ds_raw:
        ds.split_seed = r.integer(ds_raw["split_seed"], "dataset.split_seed")

    if "sensors" in raw:
        sensors = raw["sensors"]
        if not isinstance(sensors, list) or not sensors:
            r.fail("sensors", "expected a non-empty list of sensor names")
        parsed = []
        for i, s in enumerate(sensors):
            try:
                parsed.append(SensorId.parse(s).value)
            except ValueError as exc:
                r.fail(f"sensors[{i}]", str(exc))
        if len(set(parsed)) != len(parsed):
            r.fail("sensors", "duplicate sensor")
        cfg.sensors = parsed

    models_raw = raw.get("models", ["CNN1"])
    if isinstance(models_raw, list):
        entries = [_read_model(r, m, f"models[{i}]") for i, m in enumerate(models_raw)]
        if not entries:
            r.fail("models", "at least one model is required")
        cfg.models = {s: entries for s in cfg.sensors}
    elif isinstance(models_raw, dict):
        cfg.models = {}
        for key, lst in models_raw.items():
            try:
                sensor = SensorId.parse(key).value
            except ValueError as exc:
                r.fail(f"models.{key}", str(exc))
            if not isinstance(lst, list) or not lst:
                r.fail(f"models.{key}", "expected a non-empty list of models")
            cfg.models[sensor] = [_read_model(r, m, f"models.{key}[{i}]") for i, m in enumerate(lst)]
        missing = [s for s in cfg.sensors if s not in cfg.models]
        if missing:
            r.fail("models", f"no models listed for sensor(s) {missing}")
        cfg.models = {s: cfg.models[s] for s in cfg.sensors}
    else:
        r.fail("models", "expected a list of models or a mapping sensor -> list")

    fu_raw = r.mapping(raw.get("fusion"), "fusion", FusionSettings)
    fu = cfg.fusion
    if "methods" in fu_raw:
        methods = fu_raw["methods"]
        if not isinstance(methods, list) or not methods:
            r.fail("fusion.methods", "expected a non-empty list")
        fu.methods = [r.choice(m, f"fusion.methods[{i}]", FUSION_METHODS) for i, m in enumerate(methods)]
    if "n_repeats" in fu_raw:
        fu.n_repeats = r.integer(fu_raw["n_repeats"], "fusion.n_repeats", minimum=1)
    if "n_candidates" in fu_raw:
        fu.n_candidates = r.integer(fu_raw["n_candidates"], "fusion.n_candidates", minimum=1)
    if "seed" in fu_raw:
        fu.seed = r.integer(fu_raw["seed"], "fusion.seed")
    if fu_raw.get("fixed_weights") is not None:
        w = fu_raw["fixed_weights"]
        if isinstance(w, str):
            w = [v.strip() for v in w.split(",")]
        if not isinstance(w, list) or len(w) != len(cfg.sensors):
            r.fail("fusion.fixed_weights", f"expected {len(cfg.sensors)} weights, one per sensor")
        fu.fixed_weights = [r.number(float(v) if isinstance(v, str) else v, f"fusion.fixed_weights[{i}]", minimum=0) for i, v in enumerate(w)]
    if "fixed" in fu.methods and fu.fixed_weights is None:
        r.fail("fusion.fixed_weights", "required when 'fixed' is among fusion.methods")
    if len(cfg.sensors) < 2 and any(m in fu.methods for m in ("average", "weighted")):
        r.fail("fusion.methods", "average/weighted fusion needs at least two sensors")
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", line=mark.line + 1 if mark else None) from exc
    return config_from_dict(raw, _line_index(node))


def bundled_config(name: str = "small_synth") -> Path:
    return Path(__file__).parent / "configs" / f"{name}.yaml"
