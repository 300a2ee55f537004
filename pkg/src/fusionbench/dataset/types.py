from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np


class SensorId(str, Enum):
    COLOR = "Color"
    DEPTH = "Depth"
    ICUB_LEFT = "ICubLeft"
    ICUB_RIGHT = "ICubRight"

    @property
    def channels(self) -> int:
        return 1 if self is SensorId.DEPTH else 3

    @classmethod
    def parse(cls, value: "str | SensorId") -> "SensorId":
        if isinstance(value, SensorId):
            return value
        key = str(value).replace("_", "").replace("-", "").replace(" ", "").lower()
        for s in cls:
            if s.value.lower() == key:
                return s
        raise ValueError(f"unknown sensor {value!r}; expected one of {[s.value for s in cls]}")

    def __str__(self) -> str:
        return self.value


SENSORS: tuple[SensorId, ...] = tuple(SensorId)


class ActionLabel(IntEnum):
    """Frozen action codes: Push=0, Pull=1, LeftToRight=2, RightToLeft=3."""

    PUSH = 0
    PULL = 1
    LEFT_TO_RIGHT = 2
    RIGHT_TO_LEFT = 3

    @property
    def title(self) -> str:
        return _ACTION_NAMES[self]

    @classmethod
    def parse(cls, value: "str | int | ActionLabel") -> "ActionLabel":
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).replace("_", "").replace("-", "").replace(" ", "").lower()
        for a, name in _ACTION_NAMES.items():
            if name.lower() == key:
                return a
        if key.isdigit():
            return cls(int(key))
        raise ValueError(f"unknown action {value!r}")


_ACTION_NAMES = {
    ActionLabel.PUSH: "Push",
    ActionLabel.PULL: "Pull",
    ActionLabel.LEFT_TO_RIGHT: "LeftToRight",
    ActionLabel.RIGHT_TO_LEFT: "RightToLeft",
}

N_ACTIONS = len(ActionLabel)

# (object_id, tool_id, action code, repetition): identifies a trial across sensors
TrialKey = tuple[int, int, int, int]


def key_str(key: TrialKey) -> str:
    o, t, a, r = key
    return f"o{o:02d}-t{t}-a{a}-r{r:02d}"


def parse_key(text: str) -> TrialKey:
    try:
        o, t, a, r = text.split("-")
        return int(o[1:]), int(t[1:]), int(a[1:]), int(r[1:])
    except (ValueError, IndexError):
        raise ValueError(f"malformed trial key {text!r}") from None


@dataclass(frozen=True)
class TrialRecord:
    sensor: SensorId
    object_id: int
    tool_id: int
    action: ActionLabel
    repetition: int
    initial_image_path: str
    final_image_path: str

    @property
    def key(self) -> TrialKey:
        return (self.object_id, self.tool_id, int(self.action), self.repetition)

    @property
    def full_key(self) -> tuple[str, int, int, int, int]:
        return (self.sensor.value,) + self.key

    def to_dict(self) -> dict:
        return {
            "sensor": self.sensor.value,
            "object_id": self.object_id,
            "tool_id": self.tool_id,
            "action": self.action.title,
            "repetition": self.repetition,
            "initial_image_path": self.initial_image_path,
            "final_image_path": self.final_image_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(
            sensor=SensorId.parse(d["sensor"]),
            object_id=int(d["object_id"]),
            tool_id=int(d["tool_id"]),
            action=ActionLabel.parse(d["action"]),
            repetition=int(d["repetition"]),
            initial_image_path=str(d["initial_image_path"]),
            final_image_path=str(d["final_image_path"]),
        )


@dataclass(frozen=True)
class PairedExample:
    """Model-ready trial: ``input`` is (H, W, 2C) with initial channels first, then final."""

    input: np.ndarray
    label: ActionLabel
    key: TrialKey | None = None

    def flat(self) -> np.ndarray:
        """MLP form: initial image flattened, then final image flattened."""
        c = self.input.shape[-1] // 2
        return np.concatenate([self.input[..., :c].reshape(-1), self.input[..., c:].reshape(-1)])
