"""Command line surface: train, run, eval, synth, bench.

Exit codes: 0 success, 1 domain error (bad data, failed fit, alignment),
2 usage or I/O error. `run` reads landmark records from a file or standard
input and writes blendshape records to a file or standard output, so any
external detector process can pipe frames in live. Log verbosity comes
from the BLENDPIPE_LOG environment variable (debug/info/warning/error).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

from . import bench as bench_mod
from . import core, evaluate, figures, synth
from .errors import BlendpipeError, DegenerateAnchors, MalformedRecord, PointCountMismatch
from .pipeline import (
    PipelineModel,
    StreamSession,
    TrainConfig,
    load_model,
    predict_frame,
    save_model,
    train,
)
from .smooth import SmootherConfig

log = logging.getLogger("blendpipe")

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _setup_logging():
    level = os.environ.get("BLENDPIPE_LOG", "warning").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _open_read(path: str):
    if path == "-":
        return sys.stdin
    return open(path, "r", encoding="utf-8")


def _open_write(path: str):
    if path == "-":
        return sys.stdout
    return open(path, "w", encoding="utf-8")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    try:
        with open(args.landmarks, "r", encoding="utf-8") as fh:
            landmarks = core.read_landmark_stream(fh)
        with open(args.targets, "r", encoding="utf-8") as fh:
            targets = core.read_blendshape_stream(fh)
    except OSError as exc:
        print(f"error: cannot read input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BlendpipeError as exc:
        print(f"error: malformed input stream: {exc}", file=sys.stderr)
        return EXIT_DOMAIN

    config = TrainConfig()
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                config = TrainConfig.from_dict(json.load(fh))
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except (json.JSONDecodeError, BlendpipeError, TypeError, ValueError) as exc:
            print(f"error: bad config: {exc}", file=sys.stderr)
            return EXIT_DOMAIN

    try:
        model = train(config, landmarks.frames, targets.frames)
    except BlendpipeError as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return EXIT_DOMAIN

    enabled = model.enabled_channels()
    if not enabled:
        print("error: no enabled channels", file=sys.stderr)
        for name, cm in model.channels.items():
            if cm.note:
                log.info("%s: %s", name, cm.note)
        return EXIT_DOMAIN

    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            sizes = save_model(model, fh)
    except OSError as exc:
        print(f"error: cannot write model: {exc}", file=sys.stderr)
        return EXIT_USAGE

    print(f"{'Blendshape':<22}{'Family':<16}{'R2':>8}{'xi':>8}{'MSE':>10}"
          f"{'DW':>8}{'SW':>8}{'Bytes':>8}")
    for name in enabled:
        cm = model.channels[name]
        rep = cm.regressor.fit_report

        def fmt(v, nd=4):
            return "-" if v is None else f"{v:.{nd}f}"

        print(f"{name:<22}{cm.regressor.family:<16}{fmt(rep.r2):>8}{fmt(rep.xi):>8}"
              f"{fmt(rep.mse):>10}{fmt(rep.durbin_watson):>8}{fmt(rep.shapiro_wilk):>8}"
              f"{sizes[name]:>8}")
    by_note: dict[str, list[str]] = {}
    for name, cm in model.channels.items():
        if not cm.enabled:
            by_note.setdefault(cm.note, []).append(name)
    for note, names in sorted(by_note.items()):
        shown = ", ".join(names[:4]) + (", ..." if len(names) > 4 else "")
        print(f"{len(names)} channel(s) disabled ({note}): {shown}")
        log.info("disabled (%s): %s", note, ", ".join(names))
    print(f"model written to {args.out} ({len(enabled)} enabled channels)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _load_model_arg(path: str) -> PipelineModel | int:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return load_model(fh)
    except OSError as exc:
        print(f"error: cannot read model: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BlendpipeError as exc:
        print(f"error: bad model file: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


_SMOOTHER_DEFAULTS = {
    "gated_ma": SmootherConfig(kind="gated_ma", window=5),
    "ma": SmootherConfig(kind="ma", window=5),
    "ewma": SmootherConfig(kind="ewma", alpha=0.5),
    "lowpass": SmootherConfig(kind="lowpass", cutoff_hz=3.0, fps=30.0),
    "kalman": SmootherConfig(kind="kalman", q=1e-4, r=1e-2),
}


def cmd_run(args) -> int:
    model = _load_model_arg(args.model)
    if isinstance(model, int):
        return model
    if args.no_correction or args.smoother:
        model = model.with_overrides(
            no_correction=args.no_correction,
            smoother=_SMOOTHER_DEFAULTS[args.smoother] if args.smoother else None,
        )

    try:
        src = _open_read(args.input)
    except OSError as exc:
        print(f"error: cannot open input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        dst = _open_write(args.output)
    except OSError as exc:
        print(f"error: cannot open output: {exc}", file=sys.stderr)
        return EXIT_USAGE

    latency_log = None
    if args.latency_log:
        latency_log = open(args.latency_log, "w", encoding="utf-8")
        latency_log.write("frame_t_ms,latency_ms\n")

    session = StreamSession(model)
    written = 0
    try:
        try:
            expected_points, _, _ = core.read_landmark_header(src)
        except BlendpipeError as exc:
            print(f"error: bad stream header: {exc}", file=sys.stderr)
            return EXIT_DOMAIN
        dst.write(core.blendshape_header_line() + "\n")
        for line_no, line in enumerate(src, start=2):
            if not line.strip():
                continue
            try:
                frame = core.parse_landmark_record(line, line_no, expected_points)
            except (MalformedRecord, PointCountMismatch) as exc:
                log.warning("skipping frame: %s", exc)
                continue
            if session.last_t is not None and frame.timestamp_ms <= session.last_t:
                log.warning("skipping frame: line %d timestamp %d not increasing",
                            line_no, frame.timestamp_ms)
                continue
            t0 = time.perf_counter_ns()
            try:
                out = predict_frame(model, session, frame)
            except DegenerateAnchors as exc:
                log.warning("skipping frame t=%d: %s", frame.timestamp_ms, exc)
                continue
            if latency_log:
                latency_log.write(
                    f"{frame.timestamp_ms},{(time.perf_counter_ns() - t0) / 1e6:.6f}\n"
                )
            dst.write(core.blendshape_record_line(out) + "\n")
            if args.output == "-":
                dst.flush()
            written += 1
    finally:
        if src is not sys.stdin:
            src.close()
        if dst is not sys.stdout:
            dst.close()
        if latency_log:
            latency_log.close()
    log.info("wrote %d frames", written)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    try:
        with open(args.a, "r", encoding="utf-8") as fh:
            stream_a = core.read_blendshape_stream(fh)
        with open(args.b, "r", encoding="utf-8") as fh:
            stream_b = core.read_blendshape_stream(fh)
    except OSError as exc:
        print(f"error: cannot read stream: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BlendpipeError as exc:
        print(f"error: malformed stream: {exc}", file=sys.stderr)
        return EXIT_DOMAIN

    annotations = []
    if args.annotations:
        try:
            with open(args.annotations, "r", encoding="utf-8") as fh:
                annotations = evaluate.read_annotations(fh)
        except OSError as exc:
            print(f"warning: no annotation file ({exc}); "
                  "writing correlations-only report", file=sys.stderr)
        except BlendpipeError as exc:
            print(f"error: bad annotation file: {exc}", file=sys.stderr)
            return EXIT_DOMAIN

    config = evaluate.EventMatchConfig(f_min=args.f_min, delta_k=args.delta_k)
    try:
        report = evaluate.compare_streams(stream_a, stream_b, annotations, config)
    except BlendpipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN

    out = args.out
    csv_path = f"{out}.csv"
    full_path = f"{out}-full.json"
    try:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            evaluate.write_report_csv(report, fh)
        with open(full_path, "w", encoding="utf-8") as fh:
            json.dump(evaluate.report_to_dict(report), fh, indent=2)
    except OSError as exc:
        print(f"error: cannot write report: {exc}", file=sys.stderr)
        return EXIT_USAGE

    written = [csv_path, full_path]
    if not args.no_figures:
        written.append(figures.save_report_summary(report, f"{out}-summary.png"))
        annotated = {a.blendshape for a in annotations}
        for name in sorted(annotated):
            written.append(
                figures.save_channel_overlay(
                    stream_a, stream_b, name, f"{out}-{name}.png"
                )
            )
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    exponent = {}
    if args.exponent != 1.0:
        if not args.channel:
            print("error: --exponent needs --channel", file=sys.stderr)
            return EXIT_USAGE
        exponent[args.channel] = args.exponent
    try:
        spec = synth.default_spec(seed=args.seed, exponent=exponent, noise_sigma=args.sigma)
        if args.driver == "ramp":
            driver = synth.ramp_driver(args.channel, steps=args.steps, dwell_s=args.dwell)
        elif args.driver == "sine":
            driver = synth.sine_driver(args.channel, period_s=args.period, amplitude=args.amplitude)
        elif args.driver == "multi":
            driver = synth.multi_sine_driver()
        else:
            driver = synth.zero_driver()
        landmarks, targets = synth.generate(
            spec, driver, frames=args.frames, fps=args.fps, seed=args.seed
        )
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    try:
        with open(args.out_landmarks, "w", encoding="utf-8") as fh:
            core.write_landmark_stream(landmarks, fh)
        with open(args.out_targets, "w", encoding="utf-8") as fh:
            core.write_blendshape_stream(targets, fh)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"wrote {args.out_landmarks} and {args.out_targets} ({args.frames} frames)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    model = _load_model_arg(args.model)
    if isinstance(model, int):
        return model
    try:
        with open(args.input, "r", encoding="utf-8") as fh:
            stream = core.read_landmark_stream(fh)
    except OSError as exc:
        print(f"error: cannot read input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BlendpipeError as exc:
        print(f"error: malformed input stream: {exc}", file=sys.stderr)
        return EXIT_DOMAIN

    if args.repetitions < 1 or not stream.frames:
        print("error: need at least one frame and one repetition", file=sys.stderr)
        return EXIT_DOMAIN
    result = bench_mod.run_bench(model, stream.frames, repetitions=args.repetitions)

    cdf_path = f"{args.out}-cdf.csv"
    with open(cdf_path, "w", encoding="utf-8") as fh:
        rows = bench_mod.write_cdf_csv(result, fh)
    print(f"frames={result.frames} repetitions={result.repetitions} samples={rows}")
    print(f"latency p50 = {result.p50_ms:.4f} ms")
    print(f"latency p95 = {result.p95_ms:.4f} ms")
    print(f"pipeline peak traced memory = {result.peak_traced_bytes / 1024:.1f} KiB")
    print(f"process max RSS = {result.max_rss_bytes / (1024 * 1024):.1f} MiB")
    print(f"wrote {cdf_path}")
    if not args.no_figures:
        fig_path = figures.save_latency_cdf(result.latencies_ms, f"{args.out}-cdf.png")
        print(f"wrote {fig_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blendpipe",
        description="Convert 3D facial landmark streams into 52-channel blendshape streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a pipeline model from aligned streams")
    p.add_argument("--landmarks", required=True, help="landmark stream file")
    p.add_argument("--targets", required=True, help="ground-truth blendshape stream file")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--out", required=True, help="output model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="stream frames through a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", default="-", help="landmark stream file or - for stdin")
    p.add_argument("--out", dest="output", default="-", help="blendshape stream file or - for stdout")
    p.add_argument("--no-correction", action="store_true",
                   help="neutral correction parameters (clamp(raw) mode)")
    p.add_argument("--smoother", choices=sorted(_SMOOTHER_DEFAULTS),
                   help="override every channel's smoother")
    p.add_argument("--latency-log", help="write per-frame latency CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="compare two blendshape streams")
    p.add_argument("--a", required=True, help="first stream (reference)")
    p.add_argument("--b", required=True, help="second stream")
    p.add_argument("--annotations", help="event annotation file (jsonl)")
    p.add_argument("--f-min", type=float, default=evaluate.DEFAULT_F_MIN)
    p.add_argument("--delta-k", type=int, default=evaluate.DEFAULT_DELTA_K)
    p.add_argument("--out", required=True, help="report path prefix")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic landmark/target pair")
    p.add_argument("--driver", choices=("ramp", "sine", "multi", "zero"), default="ramp")
    p.add_argument("--channel", default="JawOpen")
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--steps", type=int, default=50, help="ramp levels")
    p.add_argument("--dwell", type=float, default=0.2, help="ramp level dwell seconds")
    p.add_argument("--period", type=float, default=2.0, help="sine period seconds")
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--exponent", type=float, default=1.0,
                   help="motion nonlinearity for --channel")
    p.add_argument("--sigma", type=float, default=0.0, help="x/y jitter sigma")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-landmarks", required=True)
    p.add_argument("--out-targets", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="measure pipeline-only latency and memory")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True, help="landmark stream file")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--out", default="bench", help="output path prefix")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BlendpipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
