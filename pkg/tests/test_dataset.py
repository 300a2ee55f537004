import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from fusionbench.dataset import (
    ActionLabel,
    Manifest,
    SensorId,
    SynthConfig,
    TrialRecord,
    load_arrays_for_sensor,
    load_paired_example,
    scan_dataset,
    split,
    split_sizes,
    synth_generate,
)
from fusionbench.dataset.imaging import resize_bilinear
from fusionbench.dataset.synth import render, sample_trial
from fusionbench.dataset.types import PairedExample, parse_key, key_str
from fusionbench.errors import DataError


def tiny(tmp_path, **kw):
    cfg = dict(out_dir=str(tmp_path / "ds"), n_objects=1, n_tools=1, n_repetitions=2, width=32, height=24)
    cfg.update(kw)
    return synth_generate(SynthConfig(**cfg))


def test_action_codes_frozen():
    assert [(a.title, int(a)) for a in ActionLabel] == [("Push", 0), ("Pull", 1), ("LeftToRight", 2), ("RightToLeft", 3)]
    assert ActionLabel.parse("left_to_right") is ActionLabel.LEFT_TO_RIGHT


def test_sensor_channels():
    assert [s.channels for s in SensorId] == [3, 1, 3, 3]
    assert SensorId.parse("icub_left") is SensorId.ICUB_LEFT


def test_key_roundtrip():
    assert parse_key(key_str((19, 3, 2, 9))) == (19, 3, 2, 9)


# ---------------------------------------------------------------------------
# scan
# ---------------------------------------------------------------------------


class TestScan:
    def test_empty_directory(self, tmp_path, caplog):
        m = scan_dataset(tmp_path)
        assert len(m) == 0
        assert m.warnings
        assert any("no trials" in r.message for r in caplog.records)

    def test_full_factorial_counts(self, full_synth):
        root, generated = full_synth
        m = scan_dataset(root)
        assert m.counts() == {s.value: 3200 for s in SensorId}
        assert len(generated) == 4 * 3200
        assert sum(1 for _ in root.rglob("*.png")) == 25600

    def test_missing_final_image_reported(self, tmp_path):
        tiny(tmp_path)
        root = tmp_path / "ds"
        victim = root / "Depth/object_00/tool_0/Pull/rep_01/final.png"
        victim.unlink()
        m = scan_dataset(root)
        assert len(m) == 4 * 8 - 1
        assert (SensorId.DEPTH, (0, 0, 1, 1)) not in {(r.sensor, r.key) for r in m}
        assert m.incomplete == [
            {"sensor": "Depth", "key": "o00-t0-a1-r01", "missing": ["final"], "dir": "Depth/object_00/tool_0/Pull/rep_01"}
        ]

    def test_unreadable_image(self, tmp_path):
        tiny(tmp_path)
        bad = tmp_path / "ds/Color/object_00/tool_0/Push/rep_00/initial.png"
        bad.write_bytes(b"not a png")
        with pytest.raises(DataError, match="initial.png"):
            scan_dataset(tmp_path / "ds")

    def test_duplicate_key(self, tmp_path):
        tiny(tmp_path)
        src = tmp_path / "ds/Color/object_00"
        shutil.copytree(src, tmp_path / "ds/Color/object_0")
        with pytest.raises(DataError, match="duplicate"):
            scan_dataset(tmp_path / "ds")

    def test_real_data_must_be_640x480(self, tmp_path):
        tiny(tmp_path)
        (tmp_path / "ds/dataset.json").unlink()
        with pytest.raises(DataError, match="640"):
            scan_dataset(tmp_path / "ds")

    def test_manifest_file_roundtrip(self, tmp_path):
        m = tiny(tmp_path)
        path = tmp_path / "m.jsonl"
        m.write(path)
        first = json.loads(path.read_text().splitlines()[0])
        assert first["schema"] == "fusionbench-manifest-v1"
        back = Manifest.read(path)
        assert back.records == m.records
        assert back.native_size == (32, 24)


# ---------------------------------------------------------------------------
# paired examples
# ---------------------------------------------------------------------------


def _write_pair(tmp_path, sensor, initial, final):
    d = tmp_path / "pair"
    d.mkdir(exist_ok=True)
    Image.fromarray(initial).save(d / "initial.png")
    Image.fromarray(final).save(d / "final.png")
    return TrialRecord(sensor, 0, 0, ActionLabel.PULL, 0, str(d / "initial.png"), str(d / "final.png"))


class TestLoadPaired:
    def test_white_pair_is_all_ones(self, tmp_path):
        white = np.full((480, 640, 3), 255, np.uint8)
        ex = load_paired_example(_write_pair(tmp_path, SensorId.COLOR, white, white))
        assert ex.input.shape == (64, 64, 6)
        assert np.array_equal(ex.input, np.ones((64, 64, 6), np.float32))
        assert ex.label is ActionLabel.PULL

    def test_depth_channels(self, tmp_path):
        depth = np.full((480, 640), 65535, np.uint16)
        ex = load_paired_example(_write_pair(tmp_path, SensorId.DEPTH, depth, depth // 2))
        assert ex.input.shape == (64, 64, 2)
        np.testing.assert_allclose(ex.input[..., 0], 1.0)
        np.testing.assert_allclose(ex.input[..., 1], 32767 / 65535, rtol=1e-6)

    def test_initial_channels_first(self, tmp_path):
        black = np.zeros((24, 32, 3), np.uint8)
        white = np.full((24, 32, 3), 255, np.uint8)
        ex = load_paired_example(_write_pair(tmp_path, SensorId.ICUB_LEFT, black, white), target_size=8)
        assert ex.input[..., :3].max() == 0 and ex.input[..., 3:].min() == 1

    def test_checkerboard_to_single_pixel(self):
        # bilinear-average oracle: a 2x2 checkerboard collapses to the mean, 0.5 * max
        board = np.array([[0.0, 255.0], [255.0, 0.0]])[:, :, None]
        assert resize_bilinear(board, 1, 1)[0, 0, 0] == pytest.approx(127.5)

    def test_decode_failure_names_path(self, tmp_path):
        p = tmp_path / "broken.png"
        p.write_bytes(b"\x89PNG garbage")
        rec = TrialRecord(SensorId.COLOR, 0, 0, ActionLabel.PUSH, 0, str(p), str(p))
        with pytest.raises(DataError, match="broken.png"):
            load_paired_example(rec)

    def test_values_in_unit_range_and_flat_is_permutation(self, tmp_path):
        m = tiny(tmp_path, noise_level=0.2)
        for rec in m.records[:6]:
            ex = load_paired_example(rec, target_size=16, root=m.root)
            assert ex.input.min() >= 0 and ex.input.max() <= 1
            flat = ex.flat()
            assert flat.shape == (ex.input.size,)
            assert np.array_equal(np.sort(flat), np.sort(ex.input.reshape(-1)))
            c = ex.input.shape[-1] // 2
            assert np.array_equal(flat[: flat.size // 2], ex.input[..., :c].reshape(-1))


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def _keys(n):
    return [(i // 160, (i // 40) % 4, (i // 10) % 4, i % 10) for i in range(n)]


class TestSplit:
    def test_full_sized_split(self):
        assert split(_keys(3200), 0).sizes() == (1920, 640, 640)

    def test_ten_trials(self):
        assert split(_keys(10), 0).sizes() == (6, 2, 2)

    def test_seed_determinism(self):
        keys = _keys(200)
        assert split(keys, 1) == split(keys, 1)
        assert split(keys, 1) != split(keys, 2)

    def test_too_few(self):
        with pytest.raises(DataError):
            split(_keys(4), 0)

    def test_sensors_share_partition(self, tmp_path):
        m = tiny(tmp_path, n_repetitions=3)
        s = split(m, 0)
        assert len(s.train) + len(s.validation) + len(s.test) == 12

    def test_file_roundtrip(self, tmp_path):
        s = split(_keys(50), 3)
        s.write(tmp_path / "split.json")
        from fusionbench.dataset import SplitAssignment

        assert SplitAssignment.read(tmp_path / "split.json") == s

    @settings(max_examples=200, deadline=None)
    @given(n=st.integers(5, 400), seed=st.integers(0, 2**32 - 1))
    def test_disjoint_exhaustive_sized(self, n, seed):
        keys = _keys(n)
        s = split(keys, seed)
        parts = [set(s.train), set(s.validation), set(s.test)]
        assert sum(len(p) for p in parts) == n
        assert set().union(*parts) == set(keys)
        assert s.sizes() == split_sizes(n) == (n - 2 * (n // 5), n // 5, n // 5)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------


class TestSynth:
    def test_noise_free_is_bit_identical(self, tmp_path):
        a = tiny(tmp_path / "a", noise_level=0.0, seed=5)
        b = tiny(tmp_path / "b", noise_level=0.0, seed=5)
        for ra, rb in zip(a.records, b.records):
            for pa, pb in ((ra.initial_image_path, rb.initial_image_path), (ra.final_image_path, rb.final_image_path)):
                assert (tmp_path / "a/ds" / pa).read_bytes() == (tmp_path / "b/ds" / pb).read_bytes()

    def test_seeded_noise_is_reproducible(self, tmp_path):
        a = tiny(tmp_path / "a", noise_level=0.1, seed=5)
        b = tiny(tmp_path / "b", noise_level=0.1, seed=5)
        r = a.records[0]
        assert (tmp_path / "a/ds" / r.initial_image_path).read_bytes() == (tmp_path / "b/ds" / r.initial_image_path).read_bytes()

    def test_counts_are_products(self, tmp_path):
        m = synth_generate(SynthConfig(str(tmp_path / "ds"), n_objects=3, n_tools=2, n_repetitions=2, width=16, height=12))
        assert m.counts() == {s.value: 3 * 2 * 4 * 2 for s in SensorId}
        assert scan_dataset(tmp_path / "ds").counts() == m.counts()

    @pytest.mark.parametrize("sensor", list(SensorId))
    @pytest.mark.parametrize("seed", range(5))
    def test_action_geometry(self, sensor, seed):
        def centroid(trial, phase):
            _, mask = render(trial, sensor, phase, 128, 96)
            ys, xs = np.nonzero(mask)
            return xs.mean(), ys.mean(), mask.sum()

        for obj in range(0, 20, 3):
            lr = sample_trial(seed, obj, obj % 4, ActionLabel.LEFT_TO_RIGHT, 0)
            assert centroid(lr, "final")[0] > centroid(lr, "initial")[0]
            rl = sample_trial(seed, obj, obj % 4, ActionLabel.RIGHT_TO_LEFT, 0)
            assert centroid(rl, "final")[0] < centroid(rl, "initial")[0]
            push = sample_trial(seed, obj, obj % 4, ActionLabel.PUSH, 0)
            (_, y0, a0), (_, y1, a1) = centroid(push, "initial"), centroid(push, "final")
            assert y1 < y0 and a1 < a0
            pull = sample_trial(seed, obj, obj % 4, ActionLabel.PULL, 0)
            (_, y0, a0), (_, y1, a1) = centroid(pull, "initial"), centroid(pull, "final")
            assert y1 > y0 and a1 > a0

    def test_left_to_right_on_disk(self, tmp_path):
        """Generator self-test on the written files: object centroid moves right."""
        m = tiny(tmp_path, noise_level=0.0)
        trial = sample_trial(0, 0, 0, ActionLabel.LEFT_TO_RIGHT, 0)
        rec = next(r for r in m.for_sensor("Color") if r.action is ActionLabel.LEFT_TO_RIGHT)
        xs = []
        for phase, rel in (("initial", rec.initial_image_path), ("final", rec.final_image_path)):
            img = np.asarray(Image.open(tmp_path / "ds" / rel)).astype(float) / 255
            ref, mask = render(trial, SensorId.COLOR, phase, 32, 24)
            obj_color = ref[mask][0]
            hit = np.all(np.abs(img - obj_color) < 2 / 255, axis=2)
            xs.append(np.nonzero(hit)[1].mean())
        assert xs[1] > xs[0]

    def test_depth_is_16_bit(self, tmp_path):
        m = tiny(tmp_path)
        rec = m.for_sensor("Depth")[0]
        with Image.open(tmp_path / "ds" / rec.initial_image_path) as im:
            assert im.mode.startswith("I")
            assert np.asarray(im).max() > 255

    def test_class_balance(self, full_synth):
        _, m = full_synth
        for s in SensorId:
            actions = np.array([int(r.action) for r in m.for_sensor(s)])
            assert np.bincount(actions, minlength=4).tolist() == [800] * 4


def test_load_arrays_for_sensor(tmp_path):
    m = tiny(tmp_path, n_repetitions=3)
    s = split(m, 0)
    data = load_arrays_for_sensor(m, s, "Depth", target_size=12)
    assert data["train"].x.shape == (len(s.train), 12, 12, 2)
    assert data["train"].keys == list(s.train)
    assert data["train"].y.tolist() == [k[2] for k in s.train]
    flat = data["test"].flattened()
    assert flat.x.shape == (len(s.test), 2 * 12 * 12)
