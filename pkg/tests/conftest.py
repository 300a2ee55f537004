import numpy as np
import pytest


def numerical_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(|a|, |b|, 1e-8), the usual gradcheck metric."""
    num = np.abs(a - b).max()
    den = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(num / den)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


FULL_SYNTH = dict(n_objects=20, n_tools=4, n_repetitions=10, noise_level=0.02, seed=2024, width=96, height=72)


@pytest.fixture(scope="session")
def full_synth(tmp_path_factory):
    """The full 20x4x4x10 factorial synthetic dataset, generated once per session."""
    from fusionbench.dataset import SynthConfig, synth_generate

    out = tmp_path_factory.mktemp("full_synth")
    manifest = synth_generate(SynthConfig(out_dir=str(out), **FULL_SYNTH))
    return out, manifest


# acceptance bookkeeping: one line per criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
