"""Stream comparison protocol: windowed event F1 plus per-channel statistics.

Events are the rising edges of threshold crossings; detections match
annotations one-to-one inside a +/- delta_k frame window (greedy, in time
order, so one detection can never satisfy two annotations). Each channel
additionally reports Pearson/Spearman/xi correlation, mean squared
difference, maximum absolute deviation and a thresholded frame accuracy.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from . import stats
from .core import BLENDSHAPE_NAMES, BlendshapeStream, blendshape_index
from .errors import AlignmentFailure, MalformedRecord, ZeroVariance

DEFAULT_F_MIN = 0.5
DEFAULT_DELTA_K = 15


@dataclass(frozen=True)
class EventAnnotation:
    """Ground-truth expression event: a channel name and a frame index."""

    blendshape: str
    frame_index: int

    def __post_init__(self):
        blendshape_index(self.blendshape)
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")


@dataclass(frozen=True)
class EventMatchConfig:
    f_min: float = DEFAULT_F_MIN
    delta_k: int = DEFAULT_DELTA_K
    f_min_per_channel: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.f_min < 1.0:
            raise ValueError("f_min must be in (0, 1)")
        if self.delta_k < 0:
            raise ValueError("delta_k must be >= 0")
        for name, v in self.f_min_per_channel.items():
            blendshape_index(name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"f_min for {name} must be in (0, 1)")

    def threshold(self, name: str) -> float:
        return self.f_min_per_channel.get(name, self.f_min)


def detect_events(predictions: Sequence[float], config: EventMatchConfig, channel: str = "") -> list[int]:
    """First frame of each maximal run at or above the sensitivity threshold."""
    series = np.asarray(predictions, dtype=float)
    if series.size == 0:
        raise ValueError("series must be non-empty")
    f_min = config.threshold(channel) if channel else config.f_min
    above = series >= f_min
    rising = above & ~np.concatenate(([False], above[:-1]))
    return [int(i) for i in np.flatnonzero(rising)]


def match_events(
    detections: Sequence[int], annotations: Sequence[int], config: EventMatchConfig
) -> tuple[int, int, int]:
    """Greedy one-to-one matching in time order; returns (TP, FP, FN)."""
    dets = sorted(detections)
    annos = sorted(annotations)
    matched = [False] * len(annos)
    tp = 0
    for d in dets:
        for i, a in enumerate(annos):
            if matched[i]:
                continue
            if a - config.delta_k <= d <= a + config.delta_k:
                matched[i] = True
                tp += 1
                break
            if a - config.delta_k > d:
                break
    return tp, len(dets) - tp, len(annos) - tp


def f1(n_tp: int, n_fp: int, n_fn: int) -> tuple[float, float, float]:
    """(precision, recall, F1); all zero when nothing was detected or annotated."""
    if min(n_tp, n_fp, n_fn) < 0:
        raise ValueError("counts must be non-negative")
    precision = n_tp / (n_tp + n_fp) if n_tp + n_fp else 0.0
    recall = n_tp / (n_tp + n_fn) if n_tp + n_fn else 0.0
    score = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, score


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelComparison:
    blendshape: str
    a_precision: float | None = None
    a_recall: float | None = None
    a_f1: float | None = None
    b_precision: float | None = None
    b_recall: float | None = None
    b_f1: float | None = None
    pearson: float | None = None
    spearman: float | None = None
    xi: float | None = None
    accuracy: float = 0.0
    msd: float = 0.0
    deviation: float = 0.0


_COLUMNS = (
    "a_precision", "a_recall", "a_f1",
    "b_precision", "b_recall", "b_f1",
    "pearson", "spearman", "xi", "accuracy", "msd", "deviation",
)


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[ChannelComparison, ...]
    averages: ChannelComparison

    def row(self, name: str) -> ChannelComparison:
        for r in self.rows:
            if r.blendshape == name:
                return r
        raise KeyError(name)


def _safe(fn, a, b) -> float | None:
    try:
        return fn(a, b)
    except (ZeroVariance, ValueError):
        return None


def compare_streams(
    a: BlendshapeStream,
    b: BlendshapeStream,
    annotations: Sequence[EventAnnotation] = (),
    config: EventMatchConfig | None = None,
) -> EvalReport:
    """Per-channel comparison of two aligned streams plus an averages row.

    Channels enter the report when they are non-constant in either stream
    or carry annotations; event metrics need at least one annotation for
    the channel, correlation needs variance on both sides (None otherwise).
    """
    config = config or EventMatchConfig()
    if len(a) != len(b):
        raise AlignmentFailure(f"stream lengths differ: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise AlignmentFailure("cannot compare empty streams")
    ta, tb = a.timestamps(), b.timestamps()
    if not np.array_equal(ta, tb):
        raise AlignmentFailure("stream timestamps differ")

    anno_by_channel: dict[str, list[int]] = {}
    for ann in annotations:
        if ann.frame_index >= len(a):
            raise ValueError(
                f"annotation frame {ann.frame_index} beyond stream length {len(a)}"
            )
        anno_by_channel.setdefault(ann.blendshape, []).append(ann.frame_index)

    wa = np.stack([f.weights for f in a.frames])
    wb = np.stack([f.weights for f in b.frames])

    rows = []
    for ci, name in enumerate(BLENDSHAPE_NAMES):
        sa, sb = wa[:, ci], wb[:, ci]
        varies = sa.var() > 0.0 or sb.var() > 0.0
        annos = anno_by_channel.get(name)
        if not varies and annos is None:
            continue
        f_min = config.threshold(name)
        diff = sa - sb
        event_cols: dict[str, float | None] = {
            "a_precision": None, "a_recall": None, "a_f1": None,
            "b_precision": None, "b_recall": None, "b_f1": None,
        }
        if annos:
            for prefix, series in (("a", sa), ("b", sb)):
                dets = detect_events(series, config, channel=name)
                p, r, f = f1(*match_events(dets, annos, config))
                event_cols[f"{prefix}_precision"] = p
                event_cols[f"{prefix}_recall"] = r
                event_cols[f"{prefix}_f1"] = f
        rows.append(
            ChannelComparison(
                blendshape=name,
                pearson=_safe(stats.pearson, sa, sb),
                spearman=_safe(stats.spearman, sa, sb),
                xi=_safe(stats.xi_correlation, sa, sb),
                accuracy=float(np.mean(np.abs(diff) <= f_min)),
                msd=float(np.mean(diff**2)),
                deviation=float(np.max(np.abs(diff))),
                **event_cols,
            )
        )

    avg_vals = {}
    for col in _COLUMNS:
        vals = [getattr(r, col) for r in rows if getattr(r, col) is not None]
        avg_vals[col] = float(np.mean(vals)) if vals else None
    averages = ChannelComparison(blendshape="Average", **avg_vals)
    return EvalReport(rows=tuple(rows), averages=averages)


# ---------------------------------------------------------------------------
# annotation file + report rendering
# ---------------------------------------------------------------------------

def read_annotations(source: IO) -> list[EventAnnotation]:
    """Line-delimited records: {"bs": <name>, "frame": <int>}."""
    out = []
    for line_no, line in enumerate(source, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(line_no, f"invalid JSON: {exc.msg}") from None
        if not isinstance(obj, dict) or "bs" not in obj or "frame" not in obj:
            raise MalformedRecord(line_no, "annotation needs 'bs' and 'frame' fields")
        if not isinstance(obj["frame"], int) or isinstance(obj["frame"], bool):
            raise MalformedRecord(line_no, "'frame' must be an integer")
        try:
            out.append(EventAnnotation(blendshape=obj["bs"], frame_index=obj["frame"]))
        except (KeyError, ValueError) as exc:
            raise MalformedRecord(line_no, str(exc)) from None
    return out


_CSV_HEADER = (
    "Blendshape",
    "A_Pr", "A_Re", "A_F1",
    "B_Pr", "B_Re", "B_F1",
    "PCorr", "SCorr", "Xi", "Accuracy", "MSD", "Deviation",
)


def write_report_csv(report: EvalReport, sink: IO) -> None:
    """Rendered table, values rounded to 2 decimals (empty where undefined)."""
    writer = csv.writer(sink)
    writer.writerow(_CSV_HEADER)
    for row in list(report.rows) + [report.averages]:
        cells = [row.blendshape]
        for col in _COLUMNS:
            v = getattr(row, col)
            cells.append("" if v is None else f"{v:.2f}")
        writer.writerow(cells)


def report_to_dict(report: EvalReport) -> dict:
    """Full-precision machine-readable variant of the rendered table."""

    def row_dict(r: ChannelComparison) -> dict:
        d = {"blendshape": r.blendshape}
        for col in _COLUMNS:
            v = getattr(r, col)
            d[col] = None if v is None or not math.isfinite(v) else float(v)
        return d

    return {
        "channels": [row_dict(r) for r in report.rows],
        "averages": row_dict(report.averages),
    }
