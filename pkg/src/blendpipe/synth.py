"""Synthetic landmark/blendshape stream generator.

Builds a deterministic pseudo-face layout, moves a small set of landmarks
per blendshape along fixed displacement directions as a driver function
sweeps channel weights, and emits paired landmark/ground-truth streams in
the standard formats. Optional per-channel nonlinearity (weight raised to
an exponent) produces heteroskedastic channels; optional x/y gaussian
noise mimics detector jitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    BLENDSHAPE_COUNT,
    BLENDSHAPE_NAMES,
    BlendshapeFrame,
    BlendshapeStream,
    LandmarkFrame,
    LandmarkStream,
    blendshape_index,
)
from .geometry import AffineBasis

# Detector-level jitter scale in normalized image units (around one pixel
# of a VGA-class webcam frame).
DETECTOR_JITTER_SIGMA = 0.001

DEFAULT_LANDMARKS_PER_CHANNEL = 8
DEFAULT_GAIN = 0.1

Driver = Callable[[float], np.ndarray]


@dataclass(frozen=True)
class MotionVector:
    landmark: int
    direction: tuple[float, float, float]
    gain: float


@dataclass(frozen=True)
class SyntheticFaceSpec:
    neutral: np.ndarray
    basis: AffineBasis
    motion: dict[str, tuple[MotionVector, ...]]
    exponent: dict[str, float] = field(default_factory=dict)
    noise_sigma: float = 0.0
    noise_z: bool = False

    def __post_init__(self):
        pts = np.asarray(self.neutral, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("neutral layout must be (N, 3)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        n = pts.shape[0]
        for name, vecs in self.motion.items():
            blendshape_index(name)
            for v in vecs:
                if not 0 <= v.landmark < n:
                    raise ValueError(f"{name}: landmark {v.landmark} out of range")
                if not all(math.isfinite(c) for c in v.direction) or not math.isfinite(v.gain):
                    raise ValueError(f"{name}: non-finite motion vector")
        pts.setflags(write=False)
        object.__setattr__(self, "neutral", pts)

    def channel_exponent(self, name: str) -> float:
        return self.exponent.get(name, 1.0)


def default_spec(
    seed: int = 0,
    n_points: int = 478,
    channels: Sequence[str] = BLENDSHAPE_NAMES,
    landmarks_per_channel: int = DEFAULT_LANDMARKS_PER_CHANNEL,
    gain: float = DEFAULT_GAIN,
    exponent: dict[str, float] | None = None,
    noise_sigma: float = 0.0,
) -> SyntheticFaceSpec:
    """Deterministic face layout with disjoint motion landmarks per channel.

    The three anchor landmarks are pinned to fixed positions and never move,
    so the per-frame normalization stays decoupled from expression motion.
    """
    basis = AffineBasis()
    rng = np.random.default_rng(seed)
    neutral = np.empty((n_points, 3))
    neutral[:, 0] = rng.uniform(0.25, 0.75, n_points)
    neutral[:, 1] = rng.uniform(0.25, 0.75, n_points)
    neutral[:, 2] = rng.uniform(-0.05, 0.05, n_points)
    anchors = (basis.anchor_nose, basis.anchor_eye_left, basis.anchor_eye_right)
    neutral[basis.anchor_nose] = (0.5, 0.52, 0.0)
    neutral[basis.anchor_eye_left] = (0.65, 0.38, 0.0)
    neutral[basis.anchor_eye_right] = (0.35, 0.38, 0.0)

    candidates = [i for i in range(n_points) if i not in anchors]
    needed = landmarks_per_channel * len(channels)
    if needed > len(candidates):
        raise ValueError(
            f"{len(channels)} channels x {landmarks_per_channel} landmarks "
            f"exceed the {len(candidates)} available points"
        )
    picks = rng.permutation(candidates)[:needed]
    motion: dict[str, tuple[MotionVector, ...]] = {}
    for ci, name in enumerate(channels):
        blendshape_index(name)
        block = picks[ci * landmarks_per_channel : (ci + 1) * landmarks_per_channel]
        vecs = []
        for li in block:
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            vecs.append(MotionVector(landmark=int(li), direction=tuple(d), gain=gain))
        motion[name] = tuple(vecs)
    return SyntheticFaceSpec(
        neutral=neutral,
        basis=basis,
        motion=motion,
        exponent=dict(exponent or {}),
        noise_sigma=noise_sigma,
    )


# ---------------------------------------------------------------------------
# drivers: deterministic weight generators, time in seconds
# ---------------------------------------------------------------------------

def zero_driver() -> Driver:
    def drive(t: float) -> np.ndarray:
        return np.zeros(BLENDSHAPE_COUNT)

    return drive


def ramp_driver(channel: str, steps: int, dwell_s: float = 0.2) -> Driver:
    """Staircase sweep of [0, 1] in `steps` equal levels, one level per dwell."""
    if steps < 2:
        raise ValueError("ramp needs at least 2 steps")
    idx = blendshape_index(channel)

    def drive(t: float) -> np.ndarray:
        w = np.zeros(BLENDSHAPE_COUNT)
        level = min(int(t / dwell_s), steps - 1)
        w[idx] = level / (steps - 1)
        return w

    return drive


def sine_driver(channel: str, period_s: float = 2.0, amplitude: float = 1.0) -> Driver:
    """Raised-cosine wave: 0 at t=0, peaking at `amplitude` each period."""
    if not 0.0 < amplitude <= 1.0:
        raise ValueError("amplitude must be in (0, 1]")
    idx = blendshape_index(channel)
    omega = 2.0 * math.pi / period_s

    def drive(t: float) -> np.ndarray:
        w = np.zeros(BLENDSHAPE_COUNT)
        w[idx] = amplitude * 0.5 * (1.0 - math.cos(omega * t))
        return w

    return drive


def multi_sine_driver(channels: Sequence[str] = BLENDSHAPE_NAMES) -> Driver:
    """Every listed channel runs its own raised-cosine with a distinct
    period and phase, so all channels vary and stay weakly cross-correlated."""
    idx = np.array([blendshape_index(c) for c in channels])
    periods = np.array([1.5 + 0.11 * i for i in range(len(channels))])
    phases = np.array([0.37 * i for i in range(len(channels))])

    def drive(t: float) -> np.ndarray:
        w = np.zeros(BLENDSHAPE_COUNT)
        w[idx] = 0.5 * (1.0 - np.cos(2.0 * math.pi * (t / periods) + phases))
        return w

    return drive


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate(
    spec: SyntheticFaceSpec,
    driver: Driver,
    frames: int,
    fps: float = 30.0,
    seed: int = 0,
) -> tuple[LandmarkStream, BlendshapeStream]:
    """Render `frames` frames at `fps`; returns (landmarks, ground truth).

    Landmark position = neutral + sum over channels of
    weight^exponent * gain * direction, plus optional gaussian jitter.
    The blendshape stream carries the exact driver values.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    rng = np.random.default_rng(seed)
    lm_frames = []
    bs_frames = []
    for i in range(frames):
        t_ms = round(i * 1000.0 / fps)
        t_s = t_ms / 1000.0
        weights = np.asarray(driver(t_s), dtype=float)
        if weights.shape != (BLENDSHAPE_COUNT,):
            raise ValueError("driver must return one weight per channel")
        if weights.min() < 0.0 or weights.max() > 1.0:
            raise ValueError("driver weights must lie in [0, 1]")
        pts = spec.neutral.copy()
        for name, vecs in spec.motion.items():
            w = weights[blendshape_index(name)]
            if w == 0.0:
                continue
            w_eff = w ** spec.channel_exponent(name)
            for v in vecs:
                pts[v.landmark] += w_eff * v.gain * np.asarray(v.direction)
        if spec.noise_sigma > 0.0:
            noise = rng.normal(0.0, spec.noise_sigma, size=(pts.shape[0], 3))
            if not spec.noise_z:
                noise[:, 2] = 0.0
            pts += noise
        lm_frames.append(LandmarkFrame(timestamp_ms=t_ms, points=pts))
        bs_frames.append(BlendshapeFrame(timestamp_ms=t_ms, weights=weights))
    lm_stream = LandmarkStream(
        point_count=spec.neutral.shape[0], fps_hint=fps, frames=tuple(lm_frames)
    )
    return lm_stream, BlendshapeStream(frames=tuple(bs_frames))
