"""Domain types and line-delimited stream formats.

A landmark stream is a UTF-8 text stream: one JSON header line
``{"points": N, "convention": "...", "fps_hint": f|null}`` followed by one
``{"t": ms, "lm": [[x,y,z],...]}`` line per frame. A blendshape stream is a
``{"channels": [... 52 names ...]}`` header followed by
``{"t": ms, "w": [... 52 floats ...]}`` lines. Weights serialize at 6
decimal places; streams round-trip exactly at that precision.

All types are immutable after construction; readers validate invariants at
ingest so later stages never see a bad frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterator

import numpy as np

from .errors import (
    MalformedRecord,
    NonMonotonicTimestamp,
    PointCountMismatch,
    SinkFailure,
)

DEFAULT_POINT_COUNT = 478
DEFAULT_CONVENTION = "norm-xy-reldepth"

# The 52-channel de-facto standard set, in canonical order. Index in this
# tuple is the channel's wire position everywhere in the package.
BLENDSHAPE_NAMES: tuple[str, ...] = (
    "EyeBlinkLeft", "EyeLookDownLeft", "EyeLookInLeft", "EyeLookOutLeft",
    "EyeLookUpLeft", "EyeSquintLeft", "EyeWideLeft",
    "EyeBlinkRight", "EyeLookDownRight", "EyeLookInRight", "EyeLookOutRight",
    "EyeLookUpRight", "EyeSquintRight", "EyeWideRight",
    "JawForward", "JawLeft", "JawRight", "JawOpen",
    "MouthClose", "MouthFunnel", "MouthPucker", "MouthLeft", "MouthRight",
    "MouthSmileLeft", "MouthSmileRight", "MouthFrownLeft", "MouthFrownRight",
    "MouthDimpleLeft", "MouthDimpleRight", "MouthStretchLeft", "MouthStretchRight",
    "MouthRollLower", "MouthRollUpper", "MouthShrugLower", "MouthShrugUpper",
    "MouthPressLeft", "MouthPressRight", "MouthLowerDownLeft", "MouthLowerDownRight",
    "MouthUpperUpLeft", "MouthUpperUpRight",
    "BrowDownLeft", "BrowDownRight", "BrowInnerUp",
    "BrowOuterUpLeft", "BrowOuterUpRight",
    "CheekPuff", "CheekSquintLeft", "CheekSquintRight",
    "NoseSneerLeft", "NoseSneerRight",
    "TongueOut",
)

BLENDSHAPE_COUNT = len(BLENDSHAPE_NAMES)
BLENDSHAPE_INDEX: dict[str, int] = {n: i for i, n in enumerate(BLENDSHAPE_NAMES)}

WEIGHT_DECIMALS = 6


def blendshape_index(name: str) -> int:
    try:
        return BLENDSHAPE_INDEX[name]
    except KeyError:
        raise KeyError(f"unknown blendshape name: {name!r}") from None


@dataclass(frozen=True)
class LandmarkFrame:
    """One timestamped frame of N 3D landmark positions.

    ``points`` is an (N, 3) float array; x,y in normalized image units,
    z relative depth. All coordinates must be finite.
    """

    timestamp_ms: int
    points: np.ndarray

    def __post_init__(self):
        if self.timestamp_ms < 0:
            raise ValueError("timestamp_ms must be non-negative")
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("landmark coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def point_count(self) -> int:
        return int(self.points.shape[0])


@dataclass(frozen=True)
class BlendshapeFrame:
    """One timestamped vector of 52 weights, each in [0, 1]."""

    timestamp_ms: int
    weights: np.ndarray

    def __post_init__(self):
        if self.timestamp_ms < 0:
            raise ValueError("timestamp_ms must be non-negative")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (BLENDSHAPE_COUNT,):
            raise ValueError(f"weights must have shape ({BLENDSHAPE_COUNT},), got {w.shape}")
        # single fused range check; NaN fails the comparison too
        if not ((w >= 0.0) & (w <= 1.0)).all():
            raise ValueError("weights must be finite and lie in [0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def weight(self, name: str) -> float:
        return float(self.weights[blendshape_index(name)])


@dataclass(frozen=True)
class LandmarkStream:
    point_count: int = DEFAULT_POINT_COUNT
    convention: str = DEFAULT_CONVENTION
    fps_hint: float | None = None
    frames: tuple[LandmarkFrame, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        last = -1
        for f in self.frames:
            if f.point_count != self.point_count:
                raise PointCountMismatch(
                    f"frame t={f.timestamp_ms} has {f.point_count} points, header says {self.point_count}"
                )
            if f.timestamp_ms <= last:
                raise NonMonotonicTimestamp(
                    f"timestamp {f.timestamp_ms} not greater than previous {last}"
                )
            last = f.timestamp_ms

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class BlendshapeStream:
    frames: tuple[BlendshapeFrame, ...] = field(default_factory=tuple)
    channels: tuple[str, ...] = BLENDSHAPE_NAMES

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.channels != BLENDSHAPE_NAMES:
            raise ValueError("channels must be the canonical 52-name set in canonical order")
        last = -1
        for f in self.frames:
            if f.timestamp_ms <= last:
                raise NonMonotonicTimestamp(
                    f"timestamp {f.timestamp_ms} not greater than previous {last}"
                )
            last = f.timestamp_ms

    def __len__(self) -> int:
        return len(self.frames)

    def channel(self, name: str) -> np.ndarray:
        """Per-frame series of one named channel."""
        idx = blendshape_index(name)
        return np.array([f.weights[idx] for f in self.frames])

    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp_ms for f in self.frames], dtype=np.int64)


# ---------------------------------------------------------------------------
# landmark stream I/O
# ---------------------------------------------------------------------------

def _parse_json_line(line: str, line_no: int) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(line_no, f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise MalformedRecord(line_no, "record is not a JSON object")
    return obj


def _landmark_frame_from_record(obj: dict, line_no: int, expected_points: int) -> LandmarkFrame:
    if "t" not in obj or "lm" not in obj:
        raise MalformedRecord(line_no, "frame record needs 't' and 'lm' fields")
    t = obj["t"]
    if not isinstance(t, int) or isinstance(t, bool) or t < 0:
        raise MalformedRecord(line_no, "'t' must be a non-negative integer (milliseconds)")
    lm = obj["lm"]
    try:
        pts = np.asarray(lm, dtype=float)
    except (TypeError, ValueError):
        raise MalformedRecord(line_no, "'lm' must be a list of [x,y,z] triples") from None
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise MalformedRecord(line_no, "'lm' must be a list of [x,y,z] triples")
    if pts.shape[0] != expected_points:
        raise PointCountMismatch(
            f"line {line_no}: expected {expected_points} points, got {pts.shape[0]}"
        )
    if not np.isfinite(pts).all():
        raise MalformedRecord(line_no, "non-finite landmark coordinate")
    return LandmarkFrame(timestamp_ms=t, points=pts)


def parse_landmark_record(line: str, line_no: int, expected_points: int) -> LandmarkFrame:
    """Parse one frame record line; raises per-record errors so streaming
    callers can skip a bad line and keep reading."""
    obj = _parse_json_line(line, line_no)
    return _landmark_frame_from_record(obj, line_no, expected_points)


def read_landmark_header(source: IO) -> tuple[int, str, float | None]:
    """Consume and parse the header line; returns (points, convention, fps_hint)."""
    line = source.readline()
    if isinstance(line, bytes):
        raise TypeError("source must be a text stream")
    if not line.strip():
        raise MalformedRecord(1, "missing header line")
    header = _parse_json_line(line, 1)
    if "points" not in header:
        raise MalformedRecord(1, "header needs a 'points' field")
    points = header["points"]
    if not isinstance(points, int) or isinstance(points, bool) or points < 1:
        raise MalformedRecord(1, "'points' must be a positive integer")
    return points, header.get("convention", DEFAULT_CONVENTION), header.get("fps_hint")


def iter_landmark_records(source: IO) -> Iterator[tuple[int, LandmarkFrame]]:
    """Incrementally yield (line_no, frame) pairs from an open stream.

    The header line is consumed and validated first. Per-record errors are
    raised as they are encountered, so a caller may catch and skip while
    continuing iteration; timestamp monotonicity is still enforced across
    successfully yielded frames.
    """
    expected, _, _ = read_landmark_header(source)
    last_t = -1
    for line_no, line in enumerate(source, start=2):
        if not line.strip():
            continue
        obj = _parse_json_line(line, line_no)
        frame = _landmark_frame_from_record(obj, line_no, expected)
        if frame.timestamp_ms <= last_t:
            raise NonMonotonicTimestamp(
                f"line {line_no}: timestamp {frame.timestamp_ms} not greater than {last_t}"
            )
        last_t = frame.timestamp_ms
        yield line_no, frame


def read_landmark_stream(source: IO) -> LandmarkStream:
    """Read a whole landmark stream, validating every frame at ingest."""
    points, convention, fps_hint = read_landmark_header(source)
    last_t = -1
    frames: list[LandmarkFrame] = []
    for line_no, line in enumerate(source, start=2):
        if not line.strip():
            continue
        obj = _parse_json_line(line, line_no)
        frame = _landmark_frame_from_record(obj, line_no, points)
        if frame.timestamp_ms <= last_t:
            raise NonMonotonicTimestamp(
                f"line {line_no}: timestamp {frame.timestamp_ms} not greater than {last_t}"
            )
        last_t = frame.timestamp_ms
        frames.append(frame)
    return LandmarkStream(
        point_count=points, convention=convention, fps_hint=fps_hint, frames=tuple(frames)
    )


def write_landmark_stream(stream: LandmarkStream, sink: IO) -> int:
    header = {
        "points": stream.point_count,
        "convention": stream.convention,
        "fps_hint": stream.fps_hint,
    }
    try:
        sink.write(json.dumps(header) + "\n")
        for f in stream.frames:
            rec = {"t": f.timestamp_ms, "lm": f.points.tolist()}
            sink.write(json.dumps(rec) + "\n")
    except OSError as exc:
        raise SinkFailure(str(exc)) from exc
    return len(stream.frames)


# ---------------------------------------------------------------------------
# blendshape stream I/O
# ---------------------------------------------------------------------------

def read_blendshape_stream(source: IO) -> BlendshapeStream:
    header_line = source.readline()
    if not header_line.strip():
        raise MalformedRecord(1, "missing header line")
    header = _parse_json_line(header_line, 1)
    channels = header.get("channels")
    if channels != list(BLENDSHAPE_NAMES):
        raise MalformedRecord(1, "header 'channels' must list the canonical 52 names in order")
    frames: list[BlendshapeFrame] = []
    last_t = -1
    for line_no, line in enumerate(source, start=2):
        if not line.strip():
            continue
        obj = _parse_json_line(line, line_no)
        if "t" not in obj or "w" not in obj:
            raise MalformedRecord(line_no, "frame record needs 't' and 'w' fields")
        t = obj["t"]
        if not isinstance(t, int) or isinstance(t, bool) or t < 0:
            raise MalformedRecord(line_no, "'t' must be a non-negative integer (milliseconds)")
        w = obj["w"]
        if not isinstance(w, list) or len(w) != BLENDSHAPE_COUNT:
            raise MalformedRecord(line_no, f"'w' must be a list of {BLENDSHAPE_COUNT} numbers")
        try:
            weights = np.asarray(w, dtype=float)
        except (TypeError, ValueError):
            raise MalformedRecord(line_no, "'w' must contain only numbers") from None
        if not np.isfinite(weights).all():
            raise MalformedRecord(line_no, "non-finite weight")
        if (weights < 0).any() or (weights > 1).any():
            raise MalformedRecord(line_no, "weight outside [0, 1]")
        if t <= last_t:
            raise NonMonotonicTimestamp(
                f"line {line_no}: timestamp {t} not greater than {last_t}"
            )
        last_t = t
        frames.append(BlendshapeFrame(timestamp_ms=t, weights=weights))
    return BlendshapeStream(frames=tuple(frames))


def blendshape_header_line() -> str:
    return json.dumps({"channels": list(BLENDSHAPE_NAMES)})


def blendshape_record_line(frame: BlendshapeFrame) -> str:
    """One wire record; weights carry 6 decimals."""
    w = [round(float(v), WEIGHT_DECIMALS) for v in frame.weights]
    return json.dumps({"t": frame.timestamp_ms, "w": w})


def write_blendshape_stream(stream: BlendshapeStream, sink: IO) -> int:
    """Write a blendshape stream; weights carry 6 decimals on the wire."""
    try:
        sink.write(blendshape_header_line() + "\n")
        n = 0
        for f in stream.frames:
            sink.write(blendshape_record_line(f) + "\n")
            n += 1
    except OSError as exc:
        raise SinkFailure(str(exc)) from exc
    return n
