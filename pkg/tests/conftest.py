import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybridcodec.frameio import Frame, synth_sequence

settings.register_profile("repo", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def translate64():
    return list(synth_sequence("translate", 64, 64, 8, seed=1))


def random_frame(rng, h=32, w=32):
    return Frame.from_pixels(rng.integers(0, 256, size=(h, w), dtype=np.uint8))
