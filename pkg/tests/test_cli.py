import json
import os

import numpy as np
import pytest

from blendpipe import cli, core, pipeline, synth


def run_cli(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Synthesized ramp pair on disk plus a trained model file."""
    root = tmp_path_factory.mktemp("cli")
    lm_path = str(root / "train_lm.jsonl")
    bs_path = str(root / "train_bs.jsonl")
    assert run_cli(
        "synth", "--driver", "ramp", "--channel", "JawOpen",
        "--frames", "300", "--steps", "50",
        "--out-landmarks", lm_path, "--out-targets", bs_path,
    ) == 0
    model_path = str(root / "model.json")
    assert run_cli(
        "train", "--landmarks", lm_path, "--targets", bs_path, "--out", model_path
    ) == 0
    sine_lm = str(root / "sine_lm.jsonl")
    sine_bs = str(root / "sine_bs.jsonl")
    assert run_cli(
        "synth", "--driver", "sine", "--channel", "JawOpen", "--frames", "300",
        "--out-landmarks", sine_lm, "--out-targets", sine_bs,
    ) == 0
    return {
        "root": root,
        "train_lm": lm_path,
        "train_bs": bs_path,
        "model": model_path,
        "sine_lm": sine_lm,
        "sine_bs": sine_bs,
    }


class TestTrainCommand:
    def test_report_printed(self, dataset, capsys):
        out_model = str(dataset["root"] / "model2.json")
        code = run_cli(
            "train", "--landmarks", dataset["train_lm"],
            "--targets", dataset["train_bs"], "--out", out_model,
        )
        captured = capsys.readouterr().out
        assert code == 0
        assert "JawOpen" in captured
        assert "R2" in captured and "Bytes" in captured
        # the driven channel fits essentially perfectly on noise-free data
        jaw_line = [l for l in captured.splitlines() if l.startswith("JawOpen")][0]
        assert float(jaw_line.split()[2]) >= 0.99

    def test_missing_targets_file_exit_2(self, dataset, capsys):
        code = run_cli(
            "train", "--landmarks", dataset["train_lm"],
            "--targets", "/nonexistent/targets.jsonl",
            "--out", str(dataset["root"] / "x.json"),
        )
        assert code == 2
        assert "/nonexistent/targets.jsonl" in capsys.readouterr().err

    def test_config_disabling_all_exit_1(self, dataset, capsys, tmp_path):
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps({"defaults": {"enabled": False}}))
        code = run_cli(
            "train", "--landmarks", dataset["train_lm"],
            "--targets", dataset["train_bs"],
            "--config", str(cfg_path),
            "--out", str(tmp_path / "x.json"),
        )
        assert code == 1
        assert "no enabled channels" in capsys.readouterr().err


class TestRunCommand:
    def test_full_stream(self, dataset, tmp_path):
        out_path = str(tmp_path / "out.jsonl")
        code = run_cli(
            "run", "--model", dataset["model"],
            "--in", dataset["sine_lm"], "--out", out_path,
        )
        assert code == 0
        with open(out_path, encoding="utf-8") as fh:
            stream = core.read_blendshape_stream(fh)
        assert len(stream) == 300

    def test_corrupted_line_skipped(self, dataset, tmp_path):
        src = open(dataset["sine_lm"], encoding="utf-8").read().splitlines()
        src[150] = '{"corrupted": true}'
        bad_path = tmp_path / "bad.jsonl"
        bad_path.write_text("\n".join(src) + "\n")
        out_path = str(tmp_path / "out.jsonl")
        code = run_cli("run", "--model", dataset["model"], "--in", str(bad_path), "--out", out_path)
        assert code == 0
        with open(out_path, encoding="utf-8") as fh:
            stream = core.read_blendshape_stream(fh)
        assert len(stream) == 299

    def test_no_correction_matches_library_path(self, dataset, tmp_path):
        out_path = str(tmp_path / "out.jsonl")
        assert run_cli(
            "run", "--model", dataset["model"], "--in", dataset["sine_lm"],
            "--out", out_path, "--no-correction",
        ) == 0
        with open(dataset["model"], encoding="utf-8") as fh:
            model = pipeline.load_model(fh).with_overrides(no_correction=True)
        with open(dataset["sine_lm"], encoding="utf-8") as fh:
            lm = core.read_landmark_stream(fh)
        expected = list(pipeline.predict_stream(model, lm.frames))
        with open(out_path, encoding="utf-8") as fh:
            got = core.read_blendshape_stream(fh)
        for e, g in zip(expected, got.frames):
            np.testing.assert_allclose(g.weights, e.weights, atol=5e-7)  # 6-dp wire

    def test_latency_log(self, dataset, tmp_path):
        log_path = tmp_path / "lat.csv"
        assert run_cli(
            "run", "--model", dataset["model"], "--in", dataset["sine_lm"],
            "--out", str(tmp_path / "o.jsonl"), "--latency-log", str(log_path),
        ) == 0
        lines = log_path.read_text().strip().splitlines()
        assert lines[0] == "frame_t_ms,latency_ms"
        assert len(lines) == 301

    def test_missing_model_exit_2(self, tmp_path, capsys):
        assert run_cli("run", "--model", "/nope.json", "--in", "-", "--out", "-") == 2


class TestEvalCommand:
    def test_self_comparison(self, dataset, tmp_path, capsys):
        prefix = str(tmp_path / "report")
        code = run_cli(
            "eval", "--a", dataset["sine_bs"], "--b", dataset["sine_bs"],
            "--out", prefix, "--no-figures",
        )
        assert code == 0
        rows = open(prefix + ".csv", encoding="utf-8").read().splitlines()
        accuracy_col = rows[0].split(",").index("Accuracy")
        for row in rows[1:]:
            assert row.split(",")[accuracy_col] == "1.00"
        full = json.load(open(prefix + "-full.json", encoding="utf-8"))
        assert all(ch["msd"] == 0.0 for ch in full["channels"])

    def test_offset_comparison_msd(self, tmp_path):
        # headroom below 1.0 so the constant offset never clips
        rng = np.random.default_rng(17)
        idx = core.blendshape_index("JawOpen")
        series = rng.uniform(0.1, 0.9, 200)

        def to_file(values, path):
            frames = []
            for i, v in enumerate(values):
                w = np.zeros(core.BLENDSHAPE_COUNT)
                w[idx] = v
                frames.append(core.BlendshapeFrame(timestamp_ms=i * 33, weights=w))
            with open(path, "w", encoding="utf-8") as fh:
                core.write_blendshape_stream(core.BlendshapeStream(frames=tuple(frames)), fh)

        a_path, b_path = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        to_file(series, a_path)
        to_file(series + 0.01, b_path)
        prefix = str(tmp_path / "report")
        assert run_cli(
            "eval", "--a", str(a_path), "--b", str(b_path),
            "--out", prefix, "--no-figures",
        ) == 0
        full = json.load(open(prefix + "-full.json", encoding="utf-8"))
        jaw = [c for c in full["channels"] if c["blendshape"] == "JawOpen"][0]
        assert jaw["msd"] == pytest.approx(1e-4, rel=1e-3)

    def test_missing_annotations_degrades_with_warning(self, dataset, tmp_path, capsys):
        prefix = str(tmp_path / "report")
        code = run_cli(
            "eval", "--a", dataset["sine_bs"], "--b", dataset["sine_bs"],
            "--annotations", "/nonexistent/annos.jsonl",
            "--out", prefix, "--no-figures",
        )
        assert code == 0
        assert "correlations-only" in capsys.readouterr().err
        assert os.path.exists(prefix + ".csv")

    def test_figures_written(self, dataset, tmp_path):
        annos = tmp_path / "annos.jsonl"
        annos.write_text('{"bs": "JawOpen", "frame": 20}\n')
        prefix = str(tmp_path / "rep")
        assert run_cli(
            "eval", "--a", dataset["sine_bs"], "--b", dataset["sine_bs"],
            "--annotations", str(annos), "--out", prefix,
        ) == 0
        assert os.path.exists(prefix + "-summary.png")
        assert os.path.exists(prefix + "-JawOpen.png")

    def test_alignment_failure_exit_1(self, dataset, tmp_path):
        with open(dataset["sine_bs"], encoding="utf-8") as fh:
            stream = core.read_blendshape_stream(fh)
        short = core.BlendshapeStream(frames=stream.frames[:100])
        b_path = tmp_path / "short.jsonl"
        with open(b_path, "w", encoding="utf-8") as fh:
            core.write_blendshape_stream(short, fh)
        assert run_cli(
            "eval", "--a", dataset["sine_bs"], "--b", str(b_path),
            "--out", str(tmp_path / "r"), "--no-figures",
        ) == 1


class TestBenchCommand:
    def test_bench_report(self, dataset, tmp_path, capsys):
        prefix = str(tmp_path / "bench")
        code = run_cli(
            "bench", "--model", dataset["model"], "--in", dataset["sine_lm"],
            "--repetitions", "2", "--out", prefix, "--no-figures",
        )
        assert code == 0
        out = capsys.readouterr().out
        p50 = float([l for l in out.splitlines() if "p50" in l][0].split("=")[1].split()[0])
        p95 = float([l for l in out.splitlines() if "p95" in l][0].split("=")[1].split()[0])
        assert p50 <= p95
        rows = open(prefix + "-cdf.csv", encoding="utf-8").read().strip().splitlines()
        assert len(rows) == 1 + 300 * 2  # header + frames x repetitions


class TestSynthCommand:
    def test_zero_frames_rejected(self, tmp_path, capsys):
        assert run_cli(
            "synth", "--frames", "0",
            "--out-landmarks", str(tmp_path / "a"), "--out-targets", str(tmp_path / "b"),
        ) == 1

    def test_usage_error_exit_2(self):
        with pytest.raises(SystemExit) as err:
            run_cli("synth")  # missing required arguments
        assert err.value.code == 2
