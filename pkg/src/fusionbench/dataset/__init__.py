"""Trial records, image loading, splits and the synthetic scene generator."""

from .imaging import load_paired_example
from .loader import SplitData, load_arrays_for_sensor
from .manifest import Manifest, SplitAssignment, scan_dataset, split, split_sizes
from .synth import SynthConfig, synth_generate
from .types import SENSORS, ActionLabel, PairedExample, SensorId, TrialRecord

__all__ = [
    "SENSORS",
    "ActionLabel",
    "Manifest",
    "PairedExample",
    "SensorId",
    "SplitAssignment",
    "SplitData",
    "SynthConfig",
    "TrialRecord",
    "load_arrays_for_sensor",
    "load_paired_example",
    "scan_dataset",
    "split",
    "split_sizes",
    "synth_generate",
]
