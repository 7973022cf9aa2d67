"""Per-blendshape landmark selection by correlation ranking.

Scores each landmark by the strongest per-axis linear correlation between
its displacement (relative to the stream's neutral frame) and the target
channel, keeps the top percentile, and applies the resulting 0/1 selection
to frames. A univariate F-score ranking is provided as a cross-check; on
noise-free data both orderings agree because F is a monotone function of
the squared correlation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import math

import numpy as np

from .core import LandmarkFrame
from .errors import IndexOutOfRange, InsufficientSamples, LengthMismatch

# Cap applied when a landmark correlates perfectly (F diverges); keeps
# scores totally ordered and serializable.
F_MAX = 1e12

DEFAULT_PERCENTILE = 0.02


@dataclass(frozen=True)
class FeatureSelector:
    """Selected landmark indices for one blendshape, with their scores."""

    blendshape: str
    indices: tuple[int, ...]
    scores: tuple[float, ...]
    method: str = "correlation"

    def __post_init__(self):
        if len(self.indices) == 0:
            raise ValueError("selector needs at least one index")
        if list(self.indices) != sorted(set(self.indices)):
            raise ValueError("indices must be distinct and sorted ascending")
        if any(i < 0 for i in self.indices):
            raise ValueError("indices must be non-negative")
        if len(self.scores) != len(self.indices):
            raise ValueError("scores length must match indices length")
        if not all(math.isfinite(s) for s in self.scores):
            raise ValueError("scores must be finite")
        if self.method not in ("correlation", "f_regression"):
            raise ValueError(f"unknown selection method {self.method!r}")

    def __len__(self) -> int:
        return len(self.indices)


def _stacked_displacements(
    frames: Sequence[LandmarkFrame], targets: Sequence[float]
) -> tuple[np.ndarray, np.ndarray]:
    if len(frames) != len(targets):
        raise LengthMismatch(f"{len(frames)} frames vs {len(targets)} targets")
    if len(frames) < 3:
        raise InsufficientSamples(f"need at least 3 samples, got {len(frames)}")
    t = np.asarray(targets, dtype=float)
    pts = np.stack([f.points for f in frames])  # (n, N, 3)
    # displacement reference: the first frame with a zero target, else frame 0
    zero = np.flatnonzero(t == 0.0)
    ref = int(zero[0]) if zero.size else 0
    return pts - pts[ref], t


def _per_axis_abs_pearson(disp: np.ndarray, t: np.ndarray) -> np.ndarray:
    """|Pearson| per (landmark, axis); zero-variance series score 0."""
    tc = t - t.mean()
    st = float(np.sum(tc**2))
    dc = disp - disp.mean(axis=0)
    cov = np.einsum("nka,n->ka", dc, tc)
    var = np.sum(dc**2, axis=0)
    denom2 = var * st
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom2 > 0.0, cov / np.sqrt(np.where(denom2 > 0, denom2, 1.0)), 0.0)
    return np.clip(np.abs(r), 0.0, 1.0)


def correlation_map(frames: Sequence[LandmarkFrame], targets: Sequence[float]) -> np.ndarray:
    """Per-landmark correlation scores in [0, 1], max over the three axes."""
    disp, t = _stacked_displacements(frames, targets)
    return _per_axis_abs_pearson(disp, t).max(axis=1)


def f_regression_scores(frames: Sequence[LandmarkFrame], targets: Sequence[float]) -> np.ndarray:
    """Univariate F-score per landmark: r²(n-2)/(1-r²), max over axes.

    Perfect correlation reports the F_MAX cap instead of infinity.
    """
    disp, t = _stacked_displacements(frames, targets)
    r = _per_axis_abs_pearson(disp, t)
    n = disp.shape[0]
    r2 = r**2
    with np.errstate(divide="ignore"):
        f = r2 * (n - 2) / (1.0 - r2)
    f = np.where(np.isfinite(f), np.minimum(f, F_MAX), F_MAX)
    f = np.where(r2 > 0.0, f, 0.0)
    return f.max(axis=1)


def select_top_percentile(
    scores: np.ndarray,
    percentile: float = DEFAULT_PERCENTILE,
    blendshape: str = "",
    method: str = "correlation",
) -> FeatureSelector:
    """Keep the ceil(percentile * N) highest-scoring landmarks.

    Ties break toward the lower landmark index; the returned selector lists
    indices ascending.
    """
    if not 0.0 < percentile < 1.0:
        raise ValueError(f"percentile must be in (0, 1), got {percentile}")
    s = np.asarray(scores, dtype=float)
    n = s.size
    k = math.ceil(percentile * n)
    order = np.lexsort((np.arange(n), -s))  # descending score, ascending index
    chosen = np.sort(order[:k])
    return FeatureSelector(
        blendshape=blendshape,
        indices=tuple(int(i) for i in chosen),
        scores=tuple(float(s[i]) for i in chosen),
        method=method,
    )


def apply_selection(frame: LandmarkFrame, sel: FeatureSelector) -> np.ndarray:
    """Extract the selected points, in selector order; shape (k, 3).

    Equivalent to multiplying the frame by the 0/1 segmentation matrix.
    """
    if sel.indices[-1] >= frame.point_count:
        raise IndexOutOfRange(
            f"selector index {sel.indices[-1]} out of range for {frame.point_count} points"
        )
    return frame.points[list(sel.indices)]
