import numpy as np
import pytest
from hypothesis import settings

from zbdetect.head import FeatureExtractor, LabeledDataset, Layer, ZeroBiasHead

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_model(rng, n_in=6, hidden=(5,), n1=4, c=3, activation="tanh"):
    layers = []
    fan = n_in
    for w in hidden:
        layers.append(Layer(rng.normal(size=(w, fan)), rng.normal(size=w), activation))
        fan = w
    head = ZeroBiasHead(rng.normal(size=(n1, fan)), rng.normal(size=n1), rng.normal(size=(c, n1)))
    return FeatureExtractor(layers), head


def random_batch(rng, n_in=6, c=3, q=8):
    return LabeledDataset(rng.normal(size=(n_in, q)), rng.integers(0, c, q))





@pytest.fixture(scope="session")
def fitted():
    """The default configuration trained and converted once per session."""
    from types import SimpleNamespace

    from zbdetect.boundary import compute_bounds
    from zbdetect.config import load_config, mc_config, train_config
    from zbdetect.harness import Experiment, build_model, convert
    from zbdetect.head import train

    cfg = load_config(overrides={"scenario": {"trials": 100, "length": 2000}})
    exp = Experiment.from_config(cfg)
    ex, head = build_model(cfg)
    res = train(ex, head, exp.train, exp.val, train_config(cfg))
    det = convert(cfg, res.extractor, res.head, exp)
    return SimpleNamespace(cfg=cfg, exp=exp, det=det, bounds=compute_bounds(det.boundaries, det.alpha, mc_config(cfg)))


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
