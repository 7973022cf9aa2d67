import numpy as np
import pytest

from blendpipe import pipeline, synth


@pytest.fixture(scope="session")
def face_spec():
    return synth.default_spec(seed=3)


@pytest.fixture(scope="session")
def ramp_dataset(face_spec):
    """Noise-free JawOpen ramp: the standard training pair."""
    return synth.generate(
        face_spec, synth.ramp_driver("JawOpen", steps=50, dwell_s=0.2), frames=300, fps=30
    )


@pytest.fixture(scope="session")
def trained_model(ramp_dataset):
    lm, bs = ramp_dataset
    return pipeline.train(pipeline.TrainConfig(), lm.frames, bs.frames)


@pytest.fixture(scope="session")
def sine_dataset(face_spec):
    return synth.generate(face_spec, synth.sine_driver("JawOpen"), frames=300, fps=30)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
