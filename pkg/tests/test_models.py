import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import numerical_grad, rel_error
from fusionbench.engine import backward, cross_entropy, load_arrays, one_hot, save_arrays
from fusionbench.errors import DataError, ShapeError
from fusionbench.models import (
    ModelConfig,
    build,
    count_parameters,
    input_shape_for,
    load_model,
    predict_proba,
    structure,
)

# Golden layer sequences for the default configurations.
CONV_STACK = [
    "conv1: conv2d(32, 3x3, valid)", "conv1_relu: relu", "pool1: maxpool2d(2x2)",
    "conv2: conv2d(64, 3x3, valid)", "conv2_relu: relu", "pool2: maxpool2d(2x2)",
    "conv3: conv2d(128, 3x3, valid)", "conv3_relu: relu", "pool3: maxpool2d(2x2)",
    "flatten: flatten",
]
GOLDEN = {
    "MLP": [
        "dense1: dense(120)", "dense1_tanh: tanh",
        "dense2: dense(80)", "dense2_tanh: tanh",
        "dense3: dense(40)", "dense3_tanh: tanh",
        "output: dense(4)", "output_softmax: softmax",
    ],
    "CNN1": CONV_STACK + ["dense1: dense(128)", "dense1_relu: relu", "output: dense(4)", "output_softmax: softmax"],
    "CNN2": CONV_STACK + [
        "dropout: dropout(0.2)",
        "dense1: dense(480)", "dense1_sigmoid: sigmoid",
        "dense2: dense(224)", "dense2_relu: relu",
        "dense3: dense(32)", "dense3_relu: relu",
        "output: dense(4)", "output_softmax: softmax",
    ],
}


@pytest.mark.parametrize("kind", ["MLP", "CNN1", "CNN2"])
def test_golden_structure(kind):
    shape = input_shape_for(kind, 64, 3)
    assert structure(ModelConfig(kind, shape)) == GOLDEN[kind]


def test_kind_aliases():
    assert ModelConfig("cnn-1", (8, 8, 2)).kind == "CNN1"
    with pytest.raises(ValueError):
        ModelConfig("RNN", (4,))


class TestParameterCount:
    # hand-expanded layer arithmetic; 64 -> conv 62 -> pool 31 -> 29 -> 14 -> 12 -> 6
    CNN1_64x64x6 = (3 * 3 * 6 * 32 + 32) + (3 * 3 * 32 * 64 + 64) + (3 * 3 * 64 * 128 + 128) + (4608 * 128 + 128) + (128 * 4 + 4)

    def test_cnn1_total(self):
        assert self.CNN1_64x64x6 == 684_580
        cfg = ModelConfig("CNN1", (64, 64, 6))
        assert count_parameters(cfg) == 684_580
        assert build(cfg).n_parameters() == 684_580

    def test_cnn1_layer_shapes(self):
        m = build(ModelConfig("CNN1", (64, 64, 6)))
        shapes = {n: p.shape for n, p in m.named_parameters().items()}
        assert shapes["conv1.kernel"] == (3, 3, 6, 32)
        assert shapes["dense1.weight"] == (4608, 128)
        assert shapes["output.weight"] == (128, 4)

    @pytest.mark.parametrize("kind,size,ch", [("MLP", 16, 1), ("CNN1", 32, 3), ("CNN2", 32, 1), ("CNN2", 24, 3)])
    def test_arithmetic_matches_built(self, kind, size, ch):
        cfg = ModelConfig(kind, input_shape_for(kind, size, ch))
        assert count_parameters(cfg) == build(cfg).n_parameters()


def test_mlp_first_weight_shape():
    m = build(ModelConfig("MLP", (2 * 64 * 64 * 3,)))
    assert m.named_parameters()["dense1.weight"].shape == (24576, 120)


def test_inconsistent_input_shape():
    with pytest.raises(ShapeError):
        build(ModelConfig("MLP", (8, 8, 2)))
    with pytest.raises(ShapeError):
        build(ModelConfig("CNN1", (64,)))
    with pytest.raises(ShapeError, match="too small"):
        build(ModelConfig("CNN2", (20, 20, 6)))
    m = build(ModelConfig("CNN1", (16, 16, 2), conv_filters=(4,)))
    with pytest.raises(ShapeError):
        predict_proba(m, np.zeros((3, 16, 16, 6), np.float32))


def test_same_seed_same_init():
    cfg = ModelConfig("CNN2", (24, 24, 2))
    a, b = build(cfg, seed=3).state_dict(), build(cfg, seed=3).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    c = build(cfg, seed=4).state_dict()
    assert not np.array_equal(a["conv1.kernel"], c["conv1.kernel"])


class TestPredictProba:
    def test_untrained_rows_are_distributions(self, rng):
        m = build(ModelConfig("CNN1", (24, 24, 6)))
        x = rng.random((7, 24, 24, 6), dtype=np.float32)
        p = predict_proba(m, x)
        assert p.shape == (7, 4) and p.dtype == np.float64
        assert np.all((p > 0) & (p < 1))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_dropout_disabled_and_mode_restored(self, rng):
        m = build(ModelConfig("CNN2", (24, 24, 2))).train()
        x = rng.random((5, 24, 24, 2), dtype=np.float32)
        a = predict_proba(m, x, batch_size=2)
        b = predict_proba(m, x)
        assert np.array_equal(a, b) or np.allclose(a, b, atol=1e-7)
        assert np.array_equal(predict_proba(m, x), b)
        assert m.training

    def test_empty_batch(self):
        m = build(ModelConfig("MLP", (6,)))
        assert predict_proba(m, np.zeros((0, 6), np.float32)).shape == (0, 4)

    @settings(max_examples=30, deadline=None)
    @given(scale=st.floats(0.01, 50.0), seed=st.integers(0, 10_000))
    def test_random_weights_still_distributions(self, scale, seed):
        r = np.random.default_rng(seed)
        m = build(ModelConfig("CNN2", (12, 12, 2), conv_filters=(3, 4), hidden_units=(6, 5, 4)), seed=seed)
        for p in m.parameters():
            p.value.data = (r.normal(size=p.shape) * scale).astype(np.float32)
        probs = predict_proba(m, r.random((4, 12, 12, 2), dtype=np.float32) * 10)
        assert np.all(np.isfinite(probs)) and np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)


def test_composite_cnn2_gradient_float64(rng):
    cfg = ModelConfig("CNN2", (12, 12, 2), conv_filters=(3, 4), hidden_units=(6, 5, 4))
    m = build(cfg, seed=7, dtype=np.float64).train()
    x = rng.random((3, 12, 12, 2))
    y = one_hot(np.array([0, 2, 3]), 4, dtype=np.float64)

    def loss():
        return cross_entropy(m.forward(x, rng=np.random.default_rng(99)), y)

    grads = backward(loss(), m.parameters())
    for p in m.parameters():
        num = numerical_grad(lambda: loss().item(), p.value.data, h=1e-6)
        assert rel_error(grads[p.name], num) < 1e-4, p.name


class TestPersistence:
    def test_save_load_roundtrip(self, tmp_path, rng):
        cfg = ModelConfig("CNN2", (16, 16, 6), conv_filters=(4, 4), hidden_units=(8, 8, 8))
        m = build(cfg, seed=11)
        m.save(tmp_path / "m.fbp")
        back = load_model(tmp_path / "m.fbp")
        assert back.config == cfg and back.describe() == m.describe()
        x = rng.random((3, 16, 16, 6), dtype=np.float32)
        assert np.array_equal(predict_proba(m, x), predict_proba(back, x))

    def test_archive_header(self, tmp_path):
        arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], np.float64)}
        save_arrays(tmp_path / "x.fbp", arrays, {"note": "hi"})
        raw = (tmp_path / "x.fbp").read_bytes()
        assert raw.startswith(b"FBPARAMS")
        back, meta = load_arrays(tmp_path / "x.fbp")
        assert meta["note"] == "hi"
        for k in arrays:
            assert back[k].dtype == arrays[k].dtype and np.array_equal(back[k], arrays[k])

    def test_corrupt_archive(self, tmp_path):
        (tmp_path / "bad.fbp").write_bytes(b"NOTPARAMS")
        with pytest.raises(DataError):
            load_arrays(tmp_path / "bad.fbp")

    def test_state_dict_mismatch(self):
        m = build(ModelConfig("MLP", (6,)))
        sd = m.state_dict()
        sd.pop("output.bias")
        with pytest.raises(DataError, match="output.bias"):
            m.load_state_dict(sd)
