import numpy as np
import pytest

from microexit import model as modelmod
from microexit import preprocess, synth, trainer


@pytest.fixture(scope="session")
def synthetic_segments():
    return synth.generate(synth.SyntheticSpec(n_classes=4, per_class=200, seed=0))


@pytest.fixture(scope="session")
def synthetic_arrays(synthetic_segments):
    return preprocess.stack(synthetic_segments)


@pytest.fixture(scope="session")
def trained(synthetic_arrays):
    """4-class synthetic model trained on all 800 segments (100 epochs, lr 0.007)."""
    x, _, y = synthetic_arrays
    net = modelmod.build(modelmod.ModelConfig(num_classes=4), seed=0)
    cfg = trainer.TrainConfig(epochs=100, learning_rate=0.007, batch_size=32, seed=0)
    return trainer.train(net, x, y, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
