import json
import math

import numpy as np
import pytest

from fusionbench.dataset.loader import SplitData
from fusionbench.errors import NumericError
from fusionbench.models import ModelConfig, build
from fusionbench.training import (
    EpochRecord,
    TrainConfig,
    TrainHistory,
    accuracy,
    best_index,
    grid_points,
    hyperparameter_search,
    random_points,
    select_best_per_sensor,
    train,
)


def blobs(n, seed, d=2, shift=2.0):
    """Linearly separable 2-class-per-axis toy set with 4 labels."""
    r = np.random.default_rng(seed)
    y = np.arange(n) % 4
    centers = np.array([[shift, 0], [-shift, 0], [0, shift], [0, -shift]])[:, :d]
    x = (centers[y] + 0.3 * r.normal(size=(n, d))).astype(np.float32)
    keys = [(0, 0, int(c), i) for i, c in enumerate(y)]
    return SplitData(x, y, keys)


def toy_splits(seed=0, n=64):
    return {"train": blobs(n, seed), "validation": blobs(n // 2, seed + 100), "test": blobs(n // 2, seed + 200)}


def small_mlp(seed=0):
    return build(ModelConfig("MLP", (2,), hidden_units=(8,), hidden_activations=("tanh",)), seed=seed)


def history(*accs):
    return TrainHistory([EpochRecord(0, 1.0, 0.5, a) for a in accs][-1:])


class TestTrain:
    def test_zero_epochs(self):
        m = small_mlp()
        before = m.state_dict()
        m.train()
        out, hist = train(m, toy_splits(), TrainConfig(epochs=0))
        assert len(hist) == 0
        assert not out.training
        assert all(np.array_equal(before[k], v) for k, v in out.state_dict().items())

    def test_bit_identical(self):
        runs = []
        for _ in range(2):
            m, h = train(small_mlp(3), toy_splits(1), TrainConfig(epochs=5, batch_size=7, seed=9))
            runs.append((m.state_dict(), h))
        (a, ha), (b, hb) = runs
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert ha == hb

    def test_data_seed_changes_result(self):
        a, _ = train(small_mlp(3), toy_splits(1), TrainConfig(epochs=3, seed=1))
        b, _ = train(small_mlp(3), toy_splits(1), TrainConfig(epochs=3, seed=2))
        assert not np.array_equal(a.state_dict()["dense1.weight"], b.state_dict()["dense1.weight"])

    def test_history_length_and_learning(self):
        m, h = train(small_mlp(), toy_splits(), TrainConfig(epochs=30, learning_rate=0.1))
        assert len(h) == 30 and [e.epoch for e in h.epochs] == list(range(30))
        assert h.final_val_accuracy >= 0.95
        assert accuracy(m, toy_splits()["test"]) >= 0.95

    def test_defaults_per_kind(self):
        assert TrainConfig().resolved("MLP").epochs == 500
        assert TrainConfig().resolved("MLP").optimizer == "sgd"
        cnn = TrainConfig().resolved("CNN2")
        assert (cnn.epochs, cnn.optimizer, cnn.learning_rate, cnn.batch_size) == (20, "adam", 0.001, 32)

    @pytest.mark.parametrize("kw", [dict(epochs=-1), dict(batch_size=0)])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_nan_loss_aborts_with_context(self):
        splits = toy_splits()
        bad = splits["train"]
        x = bad.x.copy()
        x[40] = np.nan
        splits["train"] = SplitData(x, bad.y, bad.keys)
        with pytest.raises(NumericError, match=r"epoch 0, batch \d+"):
            train(small_mlp(), splits, TrainConfig(epochs=2))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_skipped_when_not_aborting(self):
        splits = toy_splits()
        x = splits["train"].x.copy()
        x[0] = np.inf
        splits["train"] = SplitData(x, splits["train"].y, splits["train"].keys)
        m, h = train(small_mlp(), splits, TrainConfig(epochs=2, abort_on_nan=False))
        assert len(h) == 2
        assert all(np.isfinite(v).all() for v in m.state_dict().values())

    def test_mlp_accepts_image_form(self):
        r = np.random.default_rng(0)
        img = SplitData(r.random((8, 4, 4, 2), dtype=np.float32), np.arange(8) % 4, [(0, 0, i % 4, i) for i in range(8)])
        m = build(ModelConfig("MLP", (32,), hidden_units=(4,), hidden_activations=("tanh",)))
        _, h = train(m, {"train": img, "validation": img}, TrainConfig(epochs=1))
        assert len(h) == 1

    def test_history_roundtrip(self, tmp_path):
        _, h = train(small_mlp(), toy_splits(), TrainConfig(epochs=3))
        h.write(tmp_path / "h.jsonl")
        assert TrainHistory.read(tmp_path / "h.jsonl") == h

    @pytest.mark.parametrize("seed", range(5))
    def test_small_lr_loss_is_monotone(self, seed):
        data = blobs(8, seed)
        m = small_mlp(seed)
        _, h = train(m, {"train": data}, TrainConfig(epochs=50, batch_size=8, learning_rate=1e-3, optimizer="sgd", seed=seed))
        steps = np.diff(h.losses)
        upticks = int((steps > 1e-6).sum())
        assert upticks <= 0.1 * len(steps)


class TestSelection:
    def test_tie_goes_to_earlier(self):
        assert best_index([history(0.90), history(0.95), history(0.95)]) == 1

    def test_single_candidate(self):
        m = small_mlp()
        assert select_best_per_sensor({"Color": [(m, history(0.5))]}) == {"Color": m}

    def test_empty_pool(self):
        with pytest.raises(ValueError):
            select_best_per_sensor({"Depth": []})

    def test_nan_histories_never_win(self):
        assert best_index([history(float("nan")), history(0.1)]) == 1

    def test_permutation_of_equal_scores(self):
        r = np.random.default_rng(0)
        for _ in range(50):
            accs = list(r.choice([0.5, 0.7, 0.9], size=6))
            i = best_index([history(a) for a in accs])
            assert accs[i] == max(accs) and i == accs.index(max(accs))


class TestSearch:
    def test_grid_single_point(self):
        res = hyperparameter_search({"learning_rate": [0.05]}, toy_splits(), small_mlp().config, TrainConfig(epochs=2))
        assert res.point == {"learning_rate": 0.05}
        assert res.train_config.learning_rate == 0.05

    def test_random_budget_one_deterministic(self):
        space = {"learning_rate": {"low": 1e-3, "high": 1e-1, "log": True}, "hidden_units": [[4], [8]]}
        a = hyperparameter_search(space, toy_splits(), small_mlp().config, TrainConfig(epochs=1), "random", 1, seed=5)
        b = hyperparameter_search(space, toy_splits(), small_mlp().config, TrainConfig(epochs=1), "random", 1, seed=5)
        assert len(a.trials) == 1 and a.point == b.point == random_points(space, 1, 5)[0]
        assert 1e-3 <= a.point["learning_rate"] <= 1e-1

    def test_grid_lr_matches_exhaustive_oracle(self, tmp_path):
        splits = toy_splits(4, n=48)
        cfg = small_mlp().config
        base = TrainConfig(epochs=15, optimizer="sgd", seed=2)
        oracle = {}
        for lr in (0.1, 0.01):
            m = build(cfg, seed=0)
            _, h = train(m, splits, TrainConfig(epochs=15, optimizer="sgd", seed=2, learning_rate=lr))
            oracle[lr] = h.final_val_accuracy
        expected = max(oracle, key=lambda lr: (oracle[lr], lr == 0.1))  # tie -> earlier grid point
        res = hyperparameter_search({"learning_rate": [0.1, 0.01]}, splits, cfg, base, log_path=tmp_path / "log.jsonl")
        assert res.point["learning_rate"] == expected
        assert res.score == oracle[expected]
        lines = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert [l["index"] for l in lines] == [0, 1]
        assert [l["score"] for l in lines] == [oracle[0.1], oracle[0.01]]

    def test_grid_points_product(self):
        pts = grid_points({"a": [1, 2], "b": ["x", "y", "z"]})
        assert len(pts) == 6 and pts[0] == {"a": 1, "b": "x"}

    def test_all_nan_trials_error(self):
        splits = toy_splits()
        x = splits["train"].x.copy()
        x[:] = np.nan
        splits["train"] = SplitData(x, splits["train"].y, splits["train"].keys)
        with pytest.raises(NumericError, match="all 2"):
            hyperparameter_search({"learning_rate": [0.1, 0.01]}, splits, small_mlp().config, TrainConfig(epochs=1))

    def test_unknown_dimension(self):
        with pytest.raises(KeyError):
            hyperparameter_search({"momentum": [0.9]}, toy_splits(), small_mlp().config)

    @pytest.mark.parametrize("kw", [dict(strategy="random", budget=None), dict(strategy="grid", budget=0), dict(strategy="bayes")])
    def test_bad_search_args(self, kw):
        with pytest.raises(ValueError):
            hyperparameter_search({"learning_rate": [0.1]}, toy_splits(), small_mlp().config, **kw)

    def test_empty_space(self):
        with pytest.raises(ValueError):
            hyperparameter_search({}, toy_splits(), small_mlp().config)
