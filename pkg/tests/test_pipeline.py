import io
import json

import numpy as np
import pytest

from blendpipe import smooth, synth
from blendpipe.core import BLENDSHAPE_NAMES, BlendshapeFrame, LandmarkFrame
from blendpipe.errors import (
    AlignmentFailure,
    DegenerateAnchors,
    NonMonotonicTimestamp,
    SchemaViolation,
    VersionMismatch,
)
from blendpipe.features import FeatureSelector
from blendpipe.geometry import AffineBasis
from blendpipe.pipeline import (
    ChannelConfig,
    ChannelModel,
    PipelineModel,
    StreamSession,
    TrainConfig,
    load_model,
    predict_frame,
    save_model,
    train,
)
from blendpipe.regress import CorrectionParams, RegressorModel, predict_raw
from blendpipe.smooth import SmootherConfig, make_state
from blendpipe.transforms import build_chain


class TestTrain:
    def test_ramp_dataset_high_r2(self, trained_model):
        rep = trained_model.channels["JawOpen"].regressor.fit_report
        assert rep.r2 >= 0.99

    def test_constant_zero_channel_disabled_with_note(self, trained_model):
        cm = trained_model.channels["CheekPuff"]
        assert not cm.enabled
        assert "insufficient" in cm.note
        assert "variance" in cm.note

    def test_tongue_out_present_but_disabled_by_default(self, trained_model):
        assert "TongueOut" in trained_model.channels
        assert not trained_model.channels["TongueOut"].enabled

    def test_mismatched_timestamps_alignment_error(self, ramp_dataset):
        lm, bs = ramp_dataset
        shifted = tuple(
            BlendshapeFrame(timestamp_ms=f.timestamp_ms + 1, weights=f.weights)
            for f in bs.frames
        )
        with pytest.raises(AlignmentFailure):
            train(TrainConfig(), lm.frames, shifted)

    def test_mismatched_length_alignment_error(self, ramp_dataset):
        lm, bs = ramp_dataset
        with pytest.raises(AlignmentFailure):
            train(TrainConfig(), lm.frames[:-1], bs.frames)

    def test_too_few_samples_disables(self, ramp_dataset):
        lm, bs = ramp_dataset
        model = train(TrainConfig(), lm.frames[:30], bs.frames[:30])
        assert model.enabled_channels() == []
        assert "30 samples" in model.channels["JawOpen"].note

    def test_all_disabled_by_config(self, ramp_dataset):
        lm, bs = ramp_dataset
        cfg = TrainConfig(defaults=ChannelConfig(enabled=False))
        model = train(cfg, lm.frames, bs.frames)
        assert model.enabled_channels() == []

    def test_config_from_dict_with_overrides(self):
        cfg = TrainConfig.from_dict(
            {
                "percentile": 0.03,
                "defaults": {"family": "ols", "smoother": {"kind": "ewma", "alpha": 0.4}},
                "channels": {
                    "CheekPuff": {
                        "family": "exponential",
                        "correction": {
                            "eta": 2.0, "gamma": 0.0, "k": 0.001,
                            "g_preset": "upper_quadratic",
                            "beta_0": 0.0, "beta_response": 0.15,
                        },
                    }
                },
            }
        )
        assert cfg.percentile == 0.03
        assert cfg.channel_config("JawOpen").family == "ols"
        assert cfg.channel_config("JawOpen").smoother.kind == "ewma"
        cheek = cfg.channel_config("CheekPuff")
        assert cheek.family == "exponential"
        assert cheek.correction.eta == 2.0
        assert len(cheek.correction.g_table) == 33

    def test_unknown_channel_in_config_rejected(self):
        with pytest.raises(SchemaViolation):
            TrainConfig.from_dict({"channels": {"NotAShape": {}}})


class TestPredict:
    def test_neutral_frame_gives_near_zero_weights(self, face_spec, trained_model):
        lm, _ = synth.generate(face_spec, synth.zero_driver(), frames=3)
        session = StreamSession(trained_model)
        for frame in lm.frames:
            out = predict_frame(trained_model, session, frame)
            for name in trained_model.enabled_channels():
                assert out.weight(name) <= 0.02

    def test_output_weights_in_unit_interval(self, face_spec, trained_model):
        lm, _ = synth.generate(face_spec, synth.sine_driver("JawOpen"), frames=100)
        session = StreamSession(trained_model)
        for frame in lm.frames:
            out = predict_frame(trained_model, session, frame)
            assert (out.weights >= 0).all() and (out.weights <= 1).all()

    def test_manual_composition_oracle(self):
        """Single enabled channel with a bare chain and known OLS weights:
        pipeline output must equal clamp(w.f + b) fed through the smoother."""
        basis = AffineBasis(anchor_nose=0, anchor_eye_left=1, anchor_eye_right=2)
        k = 2  # selected landmarks 3 and 4
        selector = FeatureSelector(blendshape="JawOpen", indices=(3, 4), scores=(1.0, 1.0))
        chain = build_chain([], input_dim=3 * k)
        regressor = RegressorModel(
            family="ols",
            weights=np.array([0.5, 0.0, 0.0, 0.4, 0.0, 0.0]),
            bias=0.05,
        )
        smoother = SmootherConfig(kind="gated_ma", window=3)
        channels = {
            name: ChannelModel(enabled=False) for name in BLENDSHAPE_NAMES
        }
        channels["JawOpen"] = ChannelModel(
            enabled=True,
            selector=selector,
            chain=chain,
            regressor=regressor,
            correction=CorrectionParams(),
            smoother=smoother,
        )
        model = PipelineModel(basis=basis, channels=channels)

        rng = np.random.default_rng(0)
        base = np.array(
            [(0.0, 0.0, 0.0), (0.5, 0.3, 0.0), (-0.5, 0.3, 0.0), (0.1, 0.2, 0.0), (0.3, 0.1, 0.0)]
        )
        session = StreamSession(model)
        sm_state = make_state(smoother)
        for i in range(20):
            pts = base.copy()
            pts[3:] += rng.normal(0, 0.05, size=(2, 3))
            frame = LandmarkFrame(timestamp_ms=i * 33, points=pts)
            out = predict_frame(model, session, frame)
            # oracle: same public pieces, composed by hand
            from blendpipe.geometry import normalize_frame
            from blendpipe.features import apply_selection
            from blendpipe.transforms import apply_chain

            norm = normalize_frame(frame, basis)
            feats = apply_chain(chain, apply_selection(norm, selector))
            raw = predict_raw(regressor, feats)
            clamped = min(max(raw, 0.0), 1.0)
            expected, sm_state = smooth.step(smoother, sm_state, clamped)
            assert out.weight("JawOpen") == expected

    def test_degenerate_frame_leaves_session_unchanged(self, face_spec, trained_model):
        lm, _ = synth.generate(face_spec, synth.sine_driver("JawOpen"), frames=10)
        session = StreamSession(trained_model)
        outs_a = [predict_frame(trained_model, session, f) for f in lm.frames[:5]]

        bad_pts = lm.frames[5].points.copy()
        basis = trained_model.basis
        bad_pts[basis.anchor_eye_left] = bad_pts[basis.anchor_eye_right]
        bad = LandmarkFrame(timestamp_ms=lm.frames[5].timestamp_ms, points=bad_pts)
        with pytest.raises(DegenerateAnchors):
            predict_frame(trained_model, session, bad)

        # session state unaffected: continuing matches an uninterrupted run
        cont = [predict_frame(trained_model, session, f) for f in lm.frames[6:]]
        replay = StreamSession(trained_model)
        outs_b = [predict_frame(trained_model, replay, f) for f in lm.frames[:5]]
        cont_b = [
            predict_frame(trained_model, replay, f) for f in lm.frames[6:]
        ]
        for x, y in zip(outs_a + cont, outs_b + cont_b):
            np.testing.assert_array_equal(x.weights, y.weights)

    def test_short_frame_rejected(self, trained_model):
        from blendpipe.errors import IndexOutOfRange

        session = StreamSession(trained_model)
        small = LandmarkFrame(
            timestamp_ms=0,
            points=np.array([(0.0, 0.0, 0.0), (0.5, 0.3, 0.0), (-0.5, 0.3, 0.0)]),
        )
        with pytest.raises(IndexOutOfRange):
            predict_frame(trained_model, session, small)

    def test_non_monotonic_frame_rejected(self, face_spec, trained_model):
        lm, _ = synth.generate(face_spec, synth.sine_driver("JawOpen"), frames=3)
        session = StreamSession(trained_model)
        predict_frame(trained_model, session, lm.frames[1])
        with pytest.raises(NonMonotonicTimestamp):
            predict_frame(trained_model, session, lm.frames[0])

    def test_stage_order_instrumented(self, face_spec, trained_model):
        lm, _ = synth.generate(face_spec, synth.sine_driver("JawOpen"), frames=5)
        session = StreamSession(trained_model, collect_timings=True)
        for frame in lm.frames:
            predict_frame(trained_model, session, frame)
        assert len(session.stage_timings) == 5
        for timings in session.stage_timings:
            assert [name for name, _ in timings] == ["T_a", "S", "T_d", "R", "F"]
            assert all(ns >= 0 for _, ns in timings)

    def test_stateless_replay_identical(self, face_spec, trained_model):
        lm, _ = synth.generate(
            face_spec, synth.sine_driver("JawOpen"), frames=50
        )
        session = StreamSession(trained_model)
        first = [predict_frame(trained_model, session, f).weights for f in lm.frames]
        session.reset()
        second = [predict_frame(trained_model, session, f).weights for f in lm.frames]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_gap_resets_smoother_buffers(self, trained_model):
        """After a >250 ms gap the moving-average warm-up starts over."""
        basis = AffineBasis(anchor_nose=0, anchor_eye_left=1, anchor_eye_right=2)
        selector = FeatureSelector(blendshape="JawOpen", indices=(3,), scores=(1.0,))
        chain = build_chain([], input_dim=3)
        regressor = RegressorModel(family="ols", weights=np.array([1.0, 0.0, 0.0]), bias=0.0)
        channels = {name: ChannelModel(enabled=False) for name in BLENDSHAPE_NAMES}
        channels["JawOpen"] = ChannelModel(
            enabled=True,
            selector=selector,
            chain=chain,
            regressor=regressor,
            correction=CorrectionParams(),
            smoother=SmootherConfig(kind="ma", window=5),
        )
        model = PipelineModel(basis=basis, channels=channels)

        def frame(t, x):
            pts = np.array(
                [(0.0, 0.0, 0.0), (0.5, 0.3, 0.0), (-0.5, 0.3, 0.0), (x, 0.0, 0.0)]
            )
            return LandmarkFrame(timestamp_ms=t, points=pts)

        session = StreamSession(model)
        for i in range(5):
            predict_frame(model, session, frame(i * 33, 0.0))
        # small gap: buffer kept, MA averages the jump down
        out_small = predict_frame(model, session, frame(5 * 33 + 200, 1.0))
        assert out_small.weight("JawOpen") == pytest.approx(1.0 / 5.0)

        session.reset()
        for i in range(5):
            predict_frame(model, session, frame(i * 33, 0.0))
        # large gap: buffer reset, MA sees only the new sample
        out_large = predict_frame(model, session, frame(5 * 33 + 300, 1.0))
        assert out_large.weight("JawOpen") == 1.0


class TestPersistence:
    def test_roundtrip_bit_identical_predictions(self, face_spec, trained_model):
        lm, _ = synth.generate(face_spec, synth.sine_driver("JawOpen"), frames=100)
        buf = io.StringIO()
        save_model(trained_model, buf)
        buf.seek(0)
        clone = load_model(buf)
        s1, s2 = StreamSession(trained_model), StreamSession(clone)
        for frame in lm.frames:
            a = predict_frame(trained_model, s1, frame)
            b = predict_frame(clone, s2, frame)
            np.testing.assert_array_equal(a.weights, b.weights)

    def test_footprint_bounds(self, trained_model):
        buf = io.StringIO()
        sizes = save_model(trained_model, buf)
        assert sizes["JawOpen"] <= 8 * 1024
        assert len(buf.getvalue().encode()) <= 1024 * 1024

    def test_corrupted_version_field(self, trained_model):
        doc = trained_model.to_dict()
        doc["version"] = 99
        with pytest.raises(VersionMismatch):
            PipelineModel.from_dict(doc)

    def test_wrong_format_marker(self):
        with pytest.raises(SchemaViolation):
            PipelineModel.from_dict({"format": "something-else", "version": 1})

    def test_schema_violation_on_missing_component(self, trained_model):
        doc = trained_model.to_dict()
        del doc["channels"]["JawOpen"]["regressor"]
        with pytest.raises(SchemaViolation):
            PipelineModel.from_dict(doc)

    def test_schema_violation_on_bad_json(self):
        with pytest.raises(SchemaViolation):
            load_model(io.StringIO("{not json"))

    def test_missing_channel_rejected(self, trained_model):
        doc = trained_model.to_dict()
        del doc["channels"]["JawOpen"]
        with pytest.raises(SchemaViolation):
            PipelineModel.from_dict(doc)

    def test_model_file_is_diffable_json(self, trained_model, tmp_path):
        path = tmp_path / "model.json"
        with open(path, "w", encoding="utf-8") as fh:
            save_model(trained_model, fh)
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        assert doc["format"] == "blendpipe-model"
        assert doc["version"] == 1
        assert set(doc["channels"]) == set(BLENDSHAPE_NAMES)


class TestOverrides:
    def test_no_correction_override(self, trained_model):
        altered = trained_model.with_overrides(no_correction=True)
        for name in altered.enabled_channels():
            assert altered.channels[name].correction.is_neutral

    def test_smoother_override(self, trained_model):
        cfg = SmootherConfig(kind="ewma", alpha=0.7)
        altered = trained_model.with_overrides(smoother=cfg)
        for name in altered.enabled_channels():
            assert altered.channels[name].smoother == cfg
