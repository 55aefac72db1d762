import sys

import numpy as np
import pytest

from cforge.core.graph import Dataset, LayerDescriptor, ModelGraph


def conv_layer(t, c_in, c_out, k=3, stride=1, pad=1, source=-1, relu=True, rng=None,
               dtype=np.float64):
    rng = rng or np.random.default_rng(t)
    w = rng.normal(0, 0.5, (c_out, c_in, k, k)).astype(dtype)
    b = rng.normal(0, 0.1, c_out).astype(dtype)
    return LayerDescriptor("conv", w, b, t, stride, pad, source=source, relu=relu)


def fc_layer(t, n_in, n_out, source=-1, relu=False, rng=None, dtype=np.float64,
             in_transform="flatten"):
    rng = rng or np.random.default_rng(100 + t)
    w = rng.normal(0, 0.5, (n_out, n_in)).astype(dtype)
    b = rng.normal(0, 0.1, n_out).astype(dtype)
    return LayerDescriptor("fc", w, b, t, source=source, relu=relu, in_transform=in_transform)


def residual_toy(dtype=np.float64, width=8, seed=0):
    """stem -> (shortcut 1x1 s2 | conv s2 -> conv) add -> fc."""
    rng = np.random.default_rng(seed)
    layers = [
        conv_layer(0, 2, width, rng=rng, dtype=dtype),
        conv_layer(1, width, width, k=1, stride=2, pad=0, source=0, relu=False, rng=rng,
                   dtype=dtype),
        conv_layer(2, width, width, stride=2, source=0, rng=rng, dtype=dtype),
        conv_layer(3, width, width, source=2, rng=rng, dtype=dtype),
        fc_layer(4, width * 4 * 4, 5, source=3, rng=rng, dtype=dtype),
    ]
    return ModelGraph((2, 8, 8), layers, [(1, 3)])


def toy_batch(n=16, shape=(2, 8, 8), classes=5, seed=0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n,) + shape).astype(dtype), rng.integers(0, classes, n))


@pytest.fixture
def toy_model():
    return residual_toy()


@pytest.fixture
def toy_data():
    return toy_batch()


@pytest.fixture(scope="session")
def fixture_bundle():
    from cforge.fixtures import load_fixture

    return load_fixture()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for check in sorted(mod.RESULTS, key=lambda c: c.number):
        terminalreporter.write_line(check.line())
