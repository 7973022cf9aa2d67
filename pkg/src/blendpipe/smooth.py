"""Temporal filters over per-blendshape scalar streams.

Five interchangeable smoothers: a variance-gated moving average (averaging
is bypassed whenever the new sample leaves the running one-sigma band, so
large genuine movements pass through in a single frame), a plain moving
average, an exponentially weighted average, a first-order low-pass whose
coefficient derives from a cutoff frequency and frame interval, and a 1D
constant-position Kalman filter. All of them map [0,1] inputs to [0,1]
outputs and are deterministic for a given input sequence.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

SMOOTHER_KINDS = ("gated_ma", "ma", "ewma", "lowpass", "kalman")

DEFAULT_GATED_WINDOW = 5


@dataclass(frozen=True)
class SmootherConfig:
    kind: str = "gated_ma"
    window: int = DEFAULT_GATED_WINDOW
    alpha: float | None = None
    cutoff_hz: float | None = None
    fps: float = 30.0
    q: float = 1e-4
    r: float = 1e-2

    def __post_init__(self):
        if self.kind not in SMOOTHER_KINDS:
            raise ValueError(f"unknown smoother kind {self.kind!r}")
        if self.kind in ("gated_ma", "ma") and self.window < 1:
            raise ValueError("window must be a positive integer")
        if self.kind == "ewma":
            if self.alpha is None or not 0.0 < self.alpha <= 1.0:
                raise ValueError("ewma needs alpha in (0, 1]")
        if self.kind == "lowpass":
            if self.alpha is None and self.cutoff_hz is None:
                raise ValueError("lowpass needs alpha or cutoff_hz")
            if self.cutoff_hz is not None and self.cutoff_hz <= 0:
                raise ValueError("cutoff_hz must be positive")
            if self.alpha is not None and not 0.0 < self.alpha <= 1.0:
                raise ValueError("lowpass alpha must be in (0, 1]")
        if self.kind == "kalman" and (self.q <= 0 or self.r <= 0):
            raise ValueError("kalman needs positive q and r noise variances")

    def effective_alpha(self) -> float:
        """IIR coefficient; for lowpass derived from cutoff and frame rate."""
        if self.alpha is not None:
            return self.alpha
        dt = 1.0 / self.fps
        rc = 1.0 / (2.0 * math.pi * self.cutoff_hz)
        return dt / (rc + dt)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "window": self.window,
            "alpha": self.alpha,
            "cutoff_hz": self.cutoff_hz,
            "fps": self.fps,
            "q": self.q,
            "r": self.r,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SmootherConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass
class SmootherState:
    """Mutable per-(stream, blendshape) filter state."""

    buffer: deque = field(default_factory=deque)
    acc: float | None = None
    k_mean: float | None = None
    k_var: float = 0.0


def make_state(config: SmootherConfig) -> SmootherState:
    maxlen = config.window if config.kind in ("gated_ma", "ma") else None
    return SmootherState(buffer=deque(maxlen=maxlen))


def gated_step(config: SmootherConfig, state: SmootherState, f_i: float) -> tuple[float, SmootherState]:
    """Variance-gated moving average over the last N accepted values.

    In-band samples are pulled toward the running mean with weight N/(N+1);
    out-of-band samples pass through unfiltered, as does everything during
    warm-up (fewer than N buffered values). The band is mean +/- sample
    standard deviation of the buffer.
    """
    n = config.window
    buf = state.buffer
    if len(buf) < n:
        out = f_i
    else:
        total = 0.0
        for v in buf:
            total += v
        f_avg = total / n
        if n > 1:
            ss = 0.0
            for v in buf:
                d = v - f_avg
                ss += d * d
            f_var = math.sqrt(ss / (n - 1))
        else:
            f_var = 0.0
        if f_avg - f_var <= f_i <= f_avg + f_var:
            out = (f_i + n * f_avg) / (n + 1)
        else:
            out = f_i
    buf.append(f_i)
    return out, state


def ma_step(config: SmootherConfig, state: SmootherState, f_i: float) -> tuple[float, SmootherState]:
    state.buffer.append(f_i)
    return sum(state.buffer) / len(state.buffer), state


def ewma_step(config: SmootherConfig, state: SmootherState, f_i: float) -> tuple[float, SmootherState]:
    alpha = config.alpha
    state.acc = f_i if state.acc is None else alpha * f_i + (1.0 - alpha) * state.acc
    return state.acc, state


def lowpass_step(config: SmootherConfig, state: SmootherState, f_i: float) -> tuple[float, SmootherState]:
    alpha = config.effective_alpha()
    state.acc = f_i if state.acc is None else alpha * f_i + (1.0 - alpha) * state.acc
    return state.acc, state


def kalman_step(config: SmootherConfig, state: SmootherState, f_i: float) -> tuple[float, SmootherState]:
    """1D constant-position filter: predict inflates variance by q, update
    blends the measurement with the standard gain."""
    if state.k_mean is None:
        state.k_mean = f_i
        state.k_var = config.r
        return f_i, state
    var = state.k_var + config.q
    gain = var / (var + config.r)
    state.k_mean = state.k_mean + gain * (f_i - state.k_mean)
    state.k_var = (1.0 - gain) * var
    return state.k_mean, state


_STEPS = {
    "gated_ma": gated_step,
    "ma": ma_step,
    "ewma": ewma_step,
    "lowpass": lowpass_step,
    "kalman": kalman_step,
}


def step(config: SmootherConfig, state: SmootherState, f_i: float) -> tuple[float, SmootherState]:
    return _STEPS[config.kind](config, state, f_i)
