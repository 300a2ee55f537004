"""Experiment stages and the run-directory layout.

::

    <run>/config.resolved.yaml
    <run>/synth/                     generated dataset (synthetic source only)
    <run>/prepare/manifest.jsonl, split.json
    <run>/train/<Sensor>/<i>_<kind>/params.fbp, history.jsonl
    <run>/train/<Sensor>/selected.json
    <run>/train/probs/<Sensor>.<part>.jsonl
    <run>/fuse/<method>.<part>.jsonl, <method>.weights.json
    <run>/evaluate/metrics.json
    <run>/report/metrics.json, <row>.confusion.csv, <row>.confusion.ppm, table.txt

Each stage writes a ``.complete`` marker last; completed stages are skipped
unless forced, which makes interrupted runs resumable.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ExperimentConfig
from .dataset import Manifest, SplitAssignment, SynthConfig, load_arrays_for_sensor, scan_dataset, split, synth_generate
from .dataset.types import SensorId
from .errors import DataError
from .evaluation import ConfusionMatrix, MetricsReport, confusion, format_table, metrics, report
from .fusion import FusionWeights, ProbabilityMatrix, decide, fuse_average, fuse_weighted, search_weights_detailed
from .models import ModelConfig, build, input_shape_for, load_model, predict_proba
from .training import TrainConfig, best_index, match_form, train

log = logging.getLogger(__name__)

MARKER = ".complete"
PARTS = ("validation", "test")
STAGES = ("synth", "prepare", "train", "fuse", "evaluate", "report")


def stage_done(run_dir: Path, stage: str) -> bool:
    return (run_dir / stage / MARKER).exists()


def _finish(stage_dir: Path, info: dict | None = None) -> None:
    (stage_dir / MARKER).write_text(json.dumps(info or {}, sort_keys=True) + "\n")


def _fresh_stage(run_dir: Path, stage: str, force: bool) -> Path | None:
    d = run_dir / stage
    if stage_done(run_dir, stage) and not force:
        log.info("stage %s already complete in %s; skipping", stage, run_dir)
        return None
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_resolved_config(cfg: ExperimentConfig, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    text = "# resolved configuration; every default is spelled out\n" + cfg.dump()
    text += "# seeds\n" + "\n".join(f"# {k}: {v}" for k, v in cfg.seeds().items()) + "\n"
    (run_dir / "config.resolved.yaml").write_text(text)


def dataset_root(cfg: ExperimentConfig, run_dir: Path) -> Path:
    if cfg.dataset.source == "real":
        return Path(cfg.dataset.root)
    return run_dir / "synth"


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def run_synth(cfg: ExperimentConfig, run_dir: Path, force: bool = False) -> None:
    if cfg.dataset.source != "synth":
        log.info("dataset source is %r; nothing to generate", cfg.dataset.source)
        return
    d = _fresh_stage(run_dir, "synth", force)
    if d is None:
        return
    s = cfg.dataset.synth
    synth_generate(
        SynthConfig(
            out_dir=str(d),
            n_objects=s.n_objects,
            n_tools=s.n_tools,
            n_repetitions=s.n_repetitions,
            noise_level=s.noise_level,
            seed=s.seed,
            width=s.width,
            height=s.height,
        )
    )
    _finish(d)


def run_prepare(cfg: ExperimentConfig, run_dir: Path, force: bool = False) -> None:
    d = _fresh_stage(run_dir, "prepare", force)
    if d is None:
        return
    root = dataset_root(cfg, run_dir)
    if cfg.dataset.source == "synth" and not stage_done(run_dir, "synth"):
        raise DataError(f"synthetic dataset missing in {root}; run the 'synth' stage first")
    manifest = scan_dataset(root)
    for w in manifest.warnings:
        log.warning(w)
    absent = [s for s in cfg.sensors if not manifest.for_sensor(s)]
    if absent:
        raise DataError(f"no trials for sensor(s) {absent} under {root}")
    manifest.root = str(root.resolve())
    manifest.write(d / "manifest.jsonl")
    split(manifest, cfg.dataset.split_seed).write(d / "split.json")
    _finish(d, {"trials": len(manifest), "incomplete": len(manifest.incomplete)})


def _load_prepared(run_dir: Path) -> tuple[Manifest, SplitAssignment]:
    if not stage_done(run_dir, "prepare"):
        raise DataError(f"no completed 'prepare' stage in {run_dir}")
    return Manifest.read(run_dir / "prepare" / "manifest.jsonl"), SplitAssignment.read(run_dir / "prepare" / "split.json")


def run_train(cfg: ExperimentConfig, run_dir: Path, force: bool = False) -> None:
    d = _fresh_stage(run_dir, "train", force)
    if d is None:
        return
    manifest, splits = _load_prepared(run_dir)
    probs_dir = d / "probs"
    probs_dir.mkdir(exist_ok=True)
    summary = {}
    for sensor_name in cfg.sensors:
        sensor = SensorId.parse(sensor_name)
        data = load_arrays_for_sensor(manifest, splits, sensor, cfg.dataset.image_size, cfg.dataset.depth_max)
        sensor_dir = d / sensor.value
        sensor_dir.mkdir(exist_ok=True)
        histories, paths = [], []
        for i, entry in enumerate(cfg.models[sensor.value]):
            shape = input_shape_for(entry.kind, cfg.dataset.image_size, sensor.channels)
            m_cfg = ModelConfig(kind=entry.kind, input_shape=shape, **entry.overrides)
            t = entry.train
            t_cfg = TrainConfig(epochs=t.epochs, batch_size=t.batch_size, optimizer=t.optimizer, learning_rate=t.learning_rate, seed=t.seed)
            log.info("training %s %s (%d/%d)", sensor.value, entry.kind, i + 1, len(cfg.models[sensor.value]))
            model, hist = train(build(m_cfg, seed=entry.model_seed), data, t_cfg)
            cand_dir = sensor_dir / f"{i}_{m_cfg.kind}"
            cand_dir.mkdir(exist_ok=True)
            model.save(cand_dir / "params.fbp")
            hist.write(cand_dir / "history.jsonl")
            histories.append(hist)
            paths.append(cand_dir)
        best = best_index(histories)
        chosen = paths[best]
        model = load_model(chosen / "params.fbp")
        selected = {
            "index": best,
            "kind": model.config.kind,
            "dir": chosen.name,
            "val_accuracies": [h.final_val_accuracy for h in histories],
        }
        (sensor_dir / "selected.json").write_text(json.dumps(selected, indent=1) + "\n")
        for part in PARTS:
            part_data = match_form(data[part], model)
            probs = predict_proba(model, part_data.x)
            ProbabilityMatrix(probs, tuple(part_data.keys), sensor.value).write(probs_dir / f"{sensor.value}.{part}.jsonl")
        summary[sensor.value] = selected
    _finish(d, summary)


def load_probabilities(probs_dir: Path, sensors: list[str], part: str) -> list[ProbabilityMatrix]:
    mats = []
    for s in sensors:
        path = probs_dir / f"{s}.{part}.jsonl"
        if not path.exists():
            raise DataError(f"missing probability file {path}")
        mats.append(ProbabilityMatrix.read(path))
    # files may come from elsewhere; put them in a common row order
    ref = mats[0].keys
    return [mats[0]] + [m.reordered(ref) for m in mats[1:]]


def fuse_directory(
    probs_dir: Path,
    out_dir: Path,
    sensors: list[str],
    methods: list[str],
    n_repeats: int = 10,
    n_candidates: int = 1000,
    seed: int = 0,
    fixed_weights: list[float] | None = None,
) -> dict[str, FusionWeights]:
    """Fuse ``<Sensor>.<part>.jsonl`` files from ``probs_dir`` into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    parts = {p: load_probabilities(probs_dir, sensors, p) for p in PARTS if (probs_dir / f"{sensors[0]}.{p}.jsonl").exists()}
    if not parts:
        raise DataError(f"no probability files for {sensors} in {probs_dir}")
    weights: dict[str, FusionWeights] = {}
    for method in methods:
        if method == "average":
            w = FusionWeights.equal(sensors)
        elif method == "weighted":
            if "validation" not in parts:
                raise DataError("weighted fusion needs validation probability files")
            val = parts["validation"]
            res = search_weights_detailed(val, val[0].labels_from_keys, n_repeats, n_candidates, seed, sensors=sensors)
            w = res.weights
            (out_dir / "weighted.search.json").write_text(
                json.dumps(
                    {
                        "winners": [x.tolist() for x in res.winners],
                        "winner_accuracies": res.winner_accuracies,
                        "equal_accuracy": res.equal_accuracy,
                        "final_accuracy": res.final_accuracy,
                        "fallback": res.fallback,
                    },
                    indent=1,
                )
                + "\n"
            )
        elif method == "fixed":
            if fixed_weights is None:
                raise DataError("fixed fusion needs explicit weights")
            w = FusionWeights(tuple(fixed_weights), tuple(sensors))
        else:
            raise ValueError(f"unknown fusion method {method!r}")
        w.write(out_dir / f"{method}.weights.json")
        weights[method] = w
        for part, mats in parts.items():
            fused = fuse_average(mats) if method == "average" else fuse_weighted(mats, w)
            ProbabilityMatrix(fused.probs, fused.keys, method).write(out_dir / f"{method}.{part}.jsonl")
    return weights


def run_fuse(cfg: ExperimentConfig, run_dir: Path, force: bool = False, probs_dir: Path | None = None) -> None:
    d = _fresh_stage(run_dir, "fuse", force)
    if d is None:
        return
    src = probs_dir or run_dir / "train" / "probs"
    if probs_dir is None and not stage_done(run_dir, "train"):
        raise DataError(f"no completed 'train' stage in {run_dir}")
    f = cfg.fusion
    w = fuse_directory(src, d, cfg.sensors, f.methods, f.n_repeats, f.n_candidates, f.seed, f.fixed_weights)
    _finish(d, {m: x.as_dict() for m, x in w.items()})


ROW_NAMES = {"average": "Average DLF", "weighted": "Weighted average DLF", "fixed": "Weighted average DLF (fixed weights)"}


def evaluate_directory(probs_dir: Path | None, fused_dir: Path | None, sensors: list[str], methods: list[str], part: str = "test"):
    """Rows of (name, MetricsReport, ConfusionMatrix): single sensors first, then fusion methods."""
    rows: list[tuple[str, MetricsReport, ConfusionMatrix]] = []
    sources = []
    if probs_dir is not None:
        sources += [(f"{s} sensor", probs_dir / f"{s}.{part}.jsonl") for s in sensors]
    if fused_dir is not None:
        sources += [(ROW_NAMES.get(m, m), fused_dir / f"{m}.{part}.jsonl") for m in methods]
    for name, path in sources:
        if not path.exists():
            raise DataError(f"missing probability file {path}")
        mat = ProbabilityMatrix.read(path)
        cm = confusion(mat.labels_from_keys, decide(mat), mat.probs.shape[1])
        rows.append((name, metrics(cm), cm))
    return rows


def run_evaluate(cfg: ExperimentConfig, run_dir: Path, force: bool = False) -> list:
    d = _fresh_stage(run_dir, "evaluate", force)
    if d is None:
        return []
    rows = evaluate_directory(run_dir / "train" / "probs", run_dir / "fuse", cfg.sensors, cfg.fusion.methods)
    doc = {
        "schema": "fusionbench-metrics-v1",
        "part": "test",
        "rows": [{"name": n, **r.to_dict(), "confusion": cm.counts.tolist()} for n, r, cm in rows],
    }
    (d / "metrics.json").write_text(json.dumps(doc, indent=1) + "\n")
    _finish(d)
    return rows


def _rows_from_metrics(path: Path):
    doc = json.loads(path.read_text())
    rows = []
    for row in doc["rows"]:
        cm = ConfusionMatrix(np.array(row["confusion"]))
        rows.append((row["name"], metrics(cm, row.get("average", "weighted")), cm))
    return rows


def run_report(cfg: ExperimentConfig | None, run_dir: Path, force: bool = False) -> str:
    src = run_dir / "evaluate" / "metrics.json"
    if not src.exists():
        raise DataError(f"no evaluation metrics in {run_dir}")
    rows = _rows_from_metrics(src)
    table = format_table([(n, r) for n, r, _ in rows])
    d = _fresh_stage(run_dir, "report", force)
    if d is not None:
        report(rows, d)
        (d / "table.txt").write_text(table + "\n")
        _finish(d)
    return table


STAGE_FUNCS: dict[str, Callable] = {
    "synth": run_synth,
    "prepare": run_prepare,
    "train": run_train,
    "fuse": run_fuse,
    "evaluate": run_evaluate,
    "report": run_report,
}


def reproduce(cfg: ExperimentConfig, run_dir: Path | None = None, force: bool = False) -> str:
    """Run every stage in order, skipping those already complete."""
    run_dir = run_dir or cfg.run_dir()
    write_resolved_config(cfg, run_dir)
    for stage in STAGES[:-1]:
        STAGE_FUNCS[stage](cfg, run_dir, force)
    return run_report(cfg, run_dir, force)
