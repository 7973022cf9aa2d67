"""Latency and memory measurement of the prediction stage.

Measures pipeline-only time (landmark detection is outside this package):
wall-clock per predict_frame call over all frames times repetitions, with a
fresh session per repetition. Memory runs as a separate pass so allocation
tracking never distorts the timing numbers.
"""

from __future__ import annotations

import resource
import time
import tracemalloc
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .core import LandmarkFrame
from .pipeline import PipelineModel, StreamSession, predict_frame


@dataclass(frozen=True)
class BenchResult:
    latencies_ms: np.ndarray
    p50_ms: float
    p95_ms: float
    frames: int
    repetitions: int
    peak_traced_bytes: int
    max_rss_bytes: int

    @property
    def total_samples(self) -> int:
        return int(self.latencies_ms.size)


def run_bench(
    model: PipelineModel,
    frames: Sequence[LandmarkFrame],
    repetitions: int = 1,
    measure_memory: bool = True,
) -> BenchResult:
    frames = list(frames)
    if not frames or repetitions < 1:
        raise ValueError("need at least one frame and one repetition")

    latencies = np.empty(len(frames) * repetitions)
    pos = 0
    for _ in range(repetitions):
        session = StreamSession(model)
        for frame in frames:
            t0 = time.perf_counter_ns()
            predict_frame(model, session, frame)
            latencies[pos] = (time.perf_counter_ns() - t0) / 1e6
            pos += 1

    peak_traced = 0
    if measure_memory:
        tracemalloc.start()
        session = StreamSession(model)
        for frame in frames:
            predict_frame(model, session, frame)
        _, peak_traced = tracemalloc.get_traced_memory()
        tracemalloc.stop()

    max_rss_kib = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return BenchResult(
        latencies_ms=latencies,
        p50_ms=float(np.percentile(latencies, 50)),
        p95_ms=float(np.percentile(latencies, 95)),
        frames=len(frames),
        repetitions=repetitions,
        peak_traced_bytes=int(peak_traced),
        max_rss_bytes=int(max_rss_kib) * 1024,
    )


def write_cdf_csv(result: BenchResult, sink: IO) -> int:
    """One sorted latency sample per row with its cumulative fraction."""
    lat = np.sort(result.latencies_ms)
    n = lat.size
    sink.write("latency_ms,cumulative_fraction\n")
    for i, v in enumerate(lat, start=1):
        sink.write(f"{v:.6f},{i / n:.8f}\n")
    return n
