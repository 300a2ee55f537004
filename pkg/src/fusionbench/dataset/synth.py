"""Procedural stand-in for the robot capture rig.

Each trial places a coloured object on a table seen in perspective by four
cameras.  The world frame has ``x`` pointing right and ``z`` pointing away from
the cameras; the table is the plane below the cameras, so objects further
away sit higher in the image and look smaller.  Actions move the object:

* Push: away from the camera (up in the image, shrinking)
* Pull: toward the camera (down in the image, growing)
* LeftToRight / RightToLeft: +x / -x translation

The depth sensor shares the Color camera's viewpoint and stores an
inverse-distance intensity map as 16-bit grayscale.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .manifest import DATASET_INFO, Manifest
from .types import ActionLabel, SensorId, TrialRecord

SYNTH_SCHEMA = "fusionbench-synth-v1"


@dataclass(frozen=True)
class Camera:
    x_offset: float  # lateral camera position
    height: float  # camera height above the table
    focal: float  # focal length as a fraction of image width
    horizon: float  # horizon row as a fraction of image height
    tint: tuple[float, float, float]


CAMERAS = {
    SensorId.COLOR: Camera(0.0, 1.0, 0.9, 0.30, (1.0, 1.0, 1.0)),
    SensorId.DEPTH: Camera(0.0, 1.0, 0.9, 0.30, (1.0, 1.0, 1.0)),
    SensorId.ICUB_LEFT: Camera(-0.15, 0.85, 0.8, 0.36, (1.05, 0.97, 0.92)),
    SensorId.ICUB_RIGHT: Camera(0.15, 0.85, 0.8, 0.36, (0.93, 0.98, 1.06)),
}

SHAPES = ("disc", "box", "triangle", "diamond", "bar")
PALETTE = np.array(
    [
        [0.85, 0.15, 0.15],
        [0.15, 0.55, 0.90],
        [0.95, 0.80, 0.10],
        [0.20, 0.75, 0.30],
        [0.70, 0.25, 0.80],
    ]
)
TOOL_COLORS = np.array([[0.1, 0.1, 0.1], [0.9, 0.9, 0.9], [0.9, 0.45, 0.1], [0.3, 0.8, 0.8]])
WALL = np.array([0.78, 0.80, 0.82])
TABLE = np.array([0.55, 0.42, 0.30])
WALL_DEPTH = 9.0
DEPTH_REF = 1.5  # distance mapped to full intensity


@dataclass(frozen=True)
class SynthConfig:
    out_dir: str
    n_objects: int = 20
    n_tools: int = 4
    n_repetitions: int = 10
    noise_level: float = 0.02
    seed: int = 0
    width: int = 128
    height: int = 96


@dataclass(frozen=True)
class ObjectPose:
    x: float
    z: float


@dataclass(frozen=True)
class Trial:
    object_id: int
    tool_id: int
    action: ActionLabel
    repetition: int
    initial: ObjectPose
    final: ObjectPose
    size: float
    brightness: float


def object_style(object_id: int) -> tuple[str, np.ndarray, float]:
    shape = SHAPES[object_id % len(SHAPES)]
    color = PALETTE[(object_id // len(SHAPES)) % len(PALETTE)]
    size = 0.22 + 0.04 * ((object_id * 7) % 4)
    return shape, color, size


def sample_trial(seed: int, object_id: int, tool_id: int, action: ActionLabel, repetition: int) -> Trial:
    """Scene parameters for one trial, shared by all sensors."""
    rng = np.random.default_rng([seed, object_id, tool_id, int(action), repetition])
    reach = 1.0 + 0.12 * tool_id  # longer tools move objects further
    mid_x = rng.uniform(-0.55, 0.55)
    mid_z = rng.uniform(3.4, 4.6)
    if action in (ActionLabel.LEFT_TO_RIGHT, ActionLabel.RIGHT_TO_LEFT):
        d = rng.uniform(0.6, 0.9) * reach
        sign = 1.0 if action is ActionLabel.LEFT_TO_RIGHT else -1.0
        dz = rng.uniform(-0.15, 0.15)
        initial = ObjectPose(mid_x - sign * d / 2, mid_z - dz / 2)
        final = ObjectPose(mid_x + sign * d / 2, mid_z + dz / 2)
    else:
        d = rng.uniform(1.0, 1.5) * reach
        sign = 1.0 if action is ActionLabel.PUSH else -1.0
        dx = rng.uniform(-0.1, 0.1)
        initial = ObjectPose(mid_x - dx / 2, mid_z - sign * d / 2)
        final = ObjectPose(mid_x + dx / 2, mid_z + sign * d / 2)
    _, _, size = object_style(object_id)
    return Trial(
        object_id=object_id,
        tool_id=tool_id,
        action=action,
        repetition=repetition,
        initial=initial,
        final=final,
        size=size * rng.uniform(0.9, 1.1),
        brightness=rng.uniform(0.9, 1.1),
    )


def _project(cam: Camera, pose: ObjectPose, width: int, height: int) -> tuple[float, float, float]:
    f = cam.focal * width
    u = width / 2 + f * (pose.x - cam.x_offset) / pose.z
    v = cam.horizon * height + f * cam.height / pose.z
    return u, v, f / pose.z


def _shape_mask(shape: str, u: float, v: float, radius: float, width: int, height: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width] + 0.5
    dx = (xx - u) / radius
    dy = (yy - (v - radius)) / radius  # object rests on the table at row v
    if shape == "disc":
        return dx * dx + dy * dy <= 1.0
    if shape == "box":
        return (np.abs(dx) <= 0.85) & (np.abs(dy) <= 0.85)
    if shape == "triangle":
        return (dy <= 1.0) & (dy >= -1.0) & (np.abs(dx) <= (dy + 1.0) / 2)
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= 1.0
    return (np.abs(dx) <= 1.3) & (np.abs(dy) <= 0.5)


def _background(cam: Camera, width: int, height: int, depth: bool) -> tuple[np.ndarray, np.ndarray]:
    """(rgb, distance) of the empty scene."""
    rows = np.arange(height) + 0.5
    horizon = cam.horizon * height
    f = cam.focal * width
    below = rows > horizon + 1e-6
    dist = np.full(height, WALL_DEPTH)
    dist[below] = np.minimum(WALL_DEPTH, f * cam.height / (rows[below] - horizon))
    dist = np.repeat(dist[:, None], width, axis=1)
    rgb = np.where(below[:, None, None], TABLE, WALL) * np.ones((height, width, 3))
    # mild shading toward the bottom of the table
    rgb = rgb * (0.9 + 0.1 * (rows / height))[:, None, None]
    return rgb, dist


def render(trial: Trial, sensor: SensorId, phase: str, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free render of one phase.  Returns ``(image, object_mask)``.

    ``image`` is (H, W, 3) in [0, 1] for colour sensors and (H, W, 1)
    inverse-distance intensity in [0, 1] for depth.
    """
    cam = CAMERAS[sensor]
    depth = sensor is SensorId.DEPTH
    pose = trial.initial if phase == "initial" else trial.final
    shape, color, _ = object_style(trial.object_id)
    rgb, dist = _background(cam, width, height, depth)
    u, v, scale = _project(cam, pose, width, height)
    radius = max(trial.size * scale, 1.0)
    mask = _shape_mask(shape, u, v, radius, width, height)
    rgb[mask] = color
    dist[mask] = pose.z
    if phase == "final":
        # the tool rests where it finished the stroke, behind the object's path
        direction = np.sign(trial.final.x - trial.initial.x) if trial.action in (ActionLabel.LEFT_TO_RIGHT, ActionLabel.RIGHT_TO_LEFT) else 0.0
        tu = u - direction * 1.8 * radius
        tv = v + (0.0 if direction else (1.2 * radius if trial.action is ActionLabel.PUSH else -2.6 * radius))
        tool = _shape_mask("bar", tu, tv, 0.45 * radius, width, height) & ~mask
        rgb[tool] = TOOL_COLORS[trial.tool_id % len(TOOL_COLORS)]
        dist[tool] = pose.z
    if depth:
        img = np.clip(DEPTH_REF / dist, 0.0, 1.0)[:, :, None]
    else:
        img = np.clip(rgb * np.array(cam.tint) * trial.brightness, 0.0, 1.0)
    return img, mask


def _encode(img: np.ndarray, depth: bool) -> Image.Image:
    if depth:
        return Image.fromarray(np.round(img[:, :, 0] * 65535).astype(np.uint16))
    return Image.fromarray(np.round(img * 255).astype(np.uint8))


def trial_dir(sensor: SensorId, object_id: int, tool_id: int, action: ActionLabel, repetition: int) -> Path:
    return Path(sensor.value, f"object_{object_id:02d}", f"tool_{tool_id}", action.title, f"rep_{repetition:02d}")


def synth_generate(config: SynthConfig) -> Manifest:
    """Render every (object, tool, action, repetition) trial for all four sensors and write the manifest."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w, h = config.width, config.height
    records: list[TrialRecord] = []
    for s_idx, sensor in enumerate(SensorId):
        depth = sensor is SensorId.DEPTH
        for obj in range(config.n_objects):
            for tool in range(config.n_tools):
                for action in ActionLabel:
                    for rep in range(config.n_repetitions):
                        trial = sample_trial(config.seed, obj, tool, action, rep)
                        rel = trial_dir(sensor, obj, tool, action, rep)
                        (out / rel).mkdir(parents=True, exist_ok=True)
                        for p_idx, phase in enumerate(("initial", "final")):
                            img, _ = render(trial, sensor, phase, w, h)
                            if config.noise_level > 0:
                                noise_rng = np.random.default_rng([config.seed, obj, tool, int(action), rep, s_idx, p_idx, 1])
                                img = np.clip(img + noise_rng.normal(0.0, config.noise_level, img.shape), 0.0, 1.0)
                            _encode(img, depth).save(out / rel / f"{phase}.png")
                        records.append(
                            TrialRecord(sensor, obj, tool, action, rep, str(rel / "initial.png"), str(rel / "final.png"))
                        )
    info = {"schema": SYNTH_SCHEMA, "native_size": [w, h], "config": asdict(config)}
    (out / DATASET_INFO).write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    manifest = Manifest(records=records, root=str(out), native_size=(w, h))
    manifest.write(out / "manifest.jsonl")
    return manifest
