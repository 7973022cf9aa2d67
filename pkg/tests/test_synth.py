import io

import numpy as np
import pytest

from blendpipe import core
from blendpipe.core import BLENDSHAPE_COUNT, blendshape_index
from blendpipe.geometry import AffineBasis
from blendpipe.synth import (
    MotionVector,
    SyntheticFaceSpec,
    default_spec,
    generate,
    multi_sine_driver,
    ramp_driver,
    sine_driver,
    zero_driver,
)


def constant_driver(channel, value):
    idx = blendshape_index(channel)

    def drive(t):
        w = np.zeros(BLENDSHAPE_COUNT)
        w[idx] = value
        return w

    return drive


class TestGenerate:
    def test_zero_driver_keeps_neutral(self):
        spec = default_spec(seed=1)
        lm, bs = generate(spec, zero_driver(), frames=5)
        for frame in lm.frames:
            np.testing.assert_array_equal(frame.points, spec.neutral)
        for frame in bs.frames:
            assert frame.weights.sum() == 0.0

    def test_single_landmark_displacement(self):
        neutral = np.zeros((10, 3))
        neutral[0] = (0.5, 0.52, 0.0)
        neutral[1] = (0.65, 0.38, 0.0)
        neutral[2] = (0.35, 0.38, 0.0)
        neutral[7] = (0.4, 0.6, 0.0)
        spec = SyntheticFaceSpec(
            neutral=neutral,
            basis=AffineBasis(anchor_nose=0, anchor_eye_left=1, anchor_eye_right=2),
            motion={"JawOpen": (MotionVector(landmark=7, direction=(0, 1, 0), gain=0.1),)},
        )
        lm, _ = generate(spec, constant_driver("JawOpen", 0.5), frames=1)
        np.testing.assert_allclose(
            lm.frames[0].points[7], neutral[7] + np.array([0.0, 0.05, 0.0]), atol=1e-15
        )

    def test_ground_truth_equals_driver_exactly(self):
        spec = default_spec(seed=2)
        driver = sine_driver("JawOpen", period_s=2.0, amplitude=1.0)
        _, bs = generate(spec, driver, frames=300, fps=30)
        idx = blendshape_index("JawOpen")
        for i, frame in enumerate(bs.frames):
            t = round(i * 1000.0 / 30) / 1000.0
            assert frame.weights[idx] == driver(t)[idx]

    def test_nonlinearity_exponent(self):
        neutral = np.zeros((5, 3))
        neutral[0] = (0.5, 0.52, 0.0)
        neutral[1] = (0.65, 0.38, 0.0)
        neutral[2] = (0.35, 0.38, 0.0)
        spec = SyntheticFaceSpec(
            neutral=neutral,
            basis=AffineBasis(anchor_nose=0, anchor_eye_left=1, anchor_eye_right=2),
            motion={"CheekPuff": (MotionVector(landmark=4, direction=(1, 0, 0), gain=0.1),)},
            exponent={"CheekPuff": 2.0},
        )
        lm, _ = generate(spec, constant_driver("CheekPuff", 0.5), frames=1)
        assert lm.frames[0].points[4][0] == pytest.approx(0.25 * 0.1)

    def test_seeded_noise_deterministic(self):
        spec = default_spec(seed=4, noise_sigma=0.002)
        lm1, _ = generate(spec, zero_driver(), frames=10, seed=9)
        lm2, _ = generate(spec, zero_driver(), frames=10, seed=9)
        for f1, f2 in zip(lm1.frames, lm2.frames):
            np.testing.assert_array_equal(f1.points, f2.points)

    def test_noise_on_xy_only_by_default(self):
        spec = default_spec(seed=4, noise_sigma=0.01)
        lm, _ = generate(spec, zero_driver(), frames=5, seed=1)
        for frame in lm.frames:
            np.testing.assert_array_equal(frame.points[:, 2], spec.neutral[:, 2])

    def test_streams_roundtrip_standard_formats(self):
        spec = default_spec(seed=1)
        lm, bs = generate(spec, sine_driver("JawOpen"), frames=20)
        buf = io.StringIO()
        core.write_landmark_stream(lm, buf)
        buf.seek(0)
        assert len(core.read_landmark_stream(buf)) == 20
        buf = io.StringIO()
        core.write_blendshape_stream(bs, buf)
        buf.seek(0)
        assert len(core.read_blendshape_stream(buf)) == 20


class TestDrivers:
    def test_ramp_levels(self):
        driver = ramp_driver("JawOpen", steps=10, dwell_s=1.0)
        idx = blendshape_index("JawOpen")
        values = [driver(float(k))[idx] for k in range(10)]
        np.testing.assert_allclose(values, np.arange(10) / 9.0, atol=1e-15)
        assert driver(99.0)[idx] == 1.0  # holds the top level

    def test_sine_zero_at_start_peak_at_amplitude(self):
        driver = sine_driver("JawOpen", period_s=2.0, amplitude=0.8)
        idx = blendshape_index("JawOpen")
        assert driver(0.0)[idx] == 0.0
        assert driver(1.0)[idx] == pytest.approx(0.8)  # half period = peak
        peak = max(driver(t / 100)[idx] for t in range(400))
        assert peak <= 0.8 + 1e-12

    def test_sine_amplitude_validation(self):
        with pytest.raises(ValueError):
            sine_driver("JawOpen", amplitude=0.0)
        with pytest.raises(ValueError):
            sine_driver("JawOpen", amplitude=1.5)

    def test_multi_sine_covers_all_channels(self):
        driver = multi_sine_driver()
        w = driver(0.9)
        assert w.shape == (BLENDSHAPE_COUNT,)
        assert (w >= 0).all() and (w <= 1).all()
        assert (w > 0).sum() > 40

    def test_unknown_channel_rejected(self):
        with pytest.raises(KeyError):
            ramp_driver("NotAShape", steps=5)


class TestEndToEndIdentity:
    def test_linear_motion_recovers_driver(self, trained_model, face_spec):
        """Noise-free linear motion: train-then-predict reproduces the
        driver with MSE below 1e-4."""
        from blendpipe.pipeline import StreamSession, predict_frame

        lm, bs = generate(
            face_spec, ramp_driver("JawOpen", steps=50, dwell_s=0.2), frames=300, fps=30
        )
        session = StreamSession(trained_model)
        pred = np.array(
            [predict_frame(trained_model, session, f).weight("JawOpen") for f in lm.frames]
        )
        assert float(np.mean((pred - bs.channel("JawOpen")) ** 2)) < 1e-4


class TestDefaultSpec:
    def test_eight_landmarks_per_channel_disjoint(self):
        spec = default_spec(seed=0)
        seen = set()
        for name, vecs in spec.motion.items():
            assert len(vecs) == 8
            for v in vecs:
                assert v.landmark not in seen
                seen.add(v.landmark)

    def test_anchors_never_move(self):
        spec = default_spec(seed=0)
        anchors = {
            spec.basis.anchor_nose,
            spec.basis.anchor_eye_left,
            spec.basis.anchor_eye_right,
        }
        for vecs in spec.motion.values():
            for v in vecs:
                assert v.landmark not in anchors

    def test_identical_seed_identical_spec(self):
        a = default_spec(seed=12)
        b = default_spec(seed=12)
        np.testing.assert_array_equal(a.neutral, b.neutral)
        assert a.motion == b.motion
