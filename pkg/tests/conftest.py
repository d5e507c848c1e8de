import dataclasses

import numpy as np
import pytest

from bsgal.ingest.world import WorldConfig, make_world
from bsgal.model import ClassifierConfig, MLPClassifier, ModelConfig
from bsgal.transform.gate import GateConfig
from bsgal.transform.trainer import RunConfig
from bsgal.utils import Batch

TINY_WORLD = WorldConfig(num_classes=4, input_dim=6, head_count=40, eval_size=200)


@pytest.fixture
def world_config() -> WorldConfig:
    return TINY_WORLD


@pytest.fixture
def world(world_config):
    return make_world(world_config)


@pytest.fixture
def model() -> MLPClassifier:
    return MLPClassifier(ClassifierConfig(input_dim=6, hidden_dim=8, num_classes=4, seed=0))


@pytest.fixture
def params(model):
    return model.init_params()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def make_batch():
    """Random batch factory: make_batch(rng, n, generated=False)."""
    def _make(rng: np.random.Generator, n: int, generated: bool = False, input_dim: int = 6, num_classes: int = 4) -> Batch:
        return Batch(
            features=rng.normal(size=(n, input_dim)),
            labels=rng.integers(0, num_classes, size=n),
            generated=np.full(n, generated),
            noise_scales=np.zeros(n),
            ids=np.arange(n) + (1000 if generated else 0),
        )
    return _make


@pytest.fixture
def tiny_run():
    """RunConfig factory for a few-second run on the tiny world."""
    def _make(**changes) -> RunConfig:
        base = RunConfig(
            iterations=20,
            batch_accept=4,
            batch_test=8,
            num_workers=2,
            max_paste=3,
            eval_every=5,
            world=TINY_WORLD,
            model=ModelConfig(hidden_dim=8),
            gate=GateConfig(window=16, warmup=4),
        )
        return dataclasses.replace(base, **changes)
    return _make
