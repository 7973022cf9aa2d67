"""Feature transform chains applied between selection and regression.

A chain is an ordered list of steps applied to the flattened selected
points of one frame. Point-shaped steps (displacement, aspect_ratio)
reshape the flat vector to (k, 3) internally; the remaining steps are
plain vector operations. Chains are fitted once at training time and are
immutable afterwards, so application is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateAnchorPair,
    DegenerateCovariance,
    DimensionMismatch,
    DomainViolation,
    LengthMismatch,
)

EPS_GEO = 1e-6

STEP_KINDS = ("pcd_project", "displacement", "aspect_ratio", "log1p", "exp_scale", "standardize")


@dataclass(frozen=True)
class TransformStep:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in STEP_KINDS:
            raise ValueError(f"unknown step kind {self.kind!r}")
        cache: dict = {}
        if self.kind == "pcd_project":
            comps = np.asarray(self.params["components"], dtype=float)
            if comps.ndim != 2:
                raise ValueError("pcd_project components must be a 2D array")
            gram = comps @ comps.T
            if not np.allclose(gram, np.eye(comps.shape[0]), atol=1e-9):
                raise ValueError("pcd_project components must be unit-norm and orthogonal")
            cache["components"] = comps
            cache["mean"] = np.asarray(self.params["mean"], dtype=float)
        elif self.kind == "standardize":
            scale = np.asarray(self.params["scale"], dtype=float)
            if np.any(scale <= 0):
                raise ValueError("standardize scale must be positive")
            cache["scale"] = scale
            cache["mean"] = np.asarray(self.params["mean"], dtype=float)
        elif self.kind == "displacement":
            cache["neutral"] = np.asarray(self.params["neutral"], dtype=float)
        elif self.kind == "aspect_ratio":
            cache["neutral"] = np.asarray(self.params["neutral"], dtype=float).reshape(-1, 3)
            cache["pairs"] = [tuple(p) for p in self.params["pairs"]]
        elif self.kind == "exp_scale":
            cache["rate"] = float(self.params["rate"])
        # per-kind ndarray views of params, so application never re-parses
        object.__setattr__(self, "_cache", cache)
        object.__setattr__(self, "_fn", _compile_step(self.kind, cache))

    def output_dim(self, input_dim: int) -> int:
        if self.kind == "pcd_project":
            return int(self._cache["components"].shape[0])
        if self.kind == "aspect_ratio":
            return len(self.params["pairs"])
        return input_dim

    def input_dim(self) -> int | None:
        """Required input dimension, or None when any dimension is accepted."""
        if self.kind == "pcd_project":
            return int(self._cache["components"].shape[1])
        if self.kind == "displacement":
            return len(self.params["neutral"])
        return None


@dataclass(frozen=True)
class TransformChain:
    steps: tuple[TransformStep, ...]
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))


def build_chain(steps: Sequence[TransformStep], input_dim: int) -> TransformChain:
    """Validate step-to-step dimensions and record the final output size."""
    dim = input_dim
    for step in steps:
        want = step.input_dim()
        if want is not None and want != dim:
            raise DimensionMismatch(f"step {step.kind} expects dim {want}, chain carries {dim}")
        if step.kind in ("displacement", "aspect_ratio") and dim % 3 != 0:
            raise DimensionMismatch(f"step {step.kind} needs a point-shaped input, got dim {dim}")
        dim = step.output_dim(dim)
    return TransformChain(steps=tuple(steps), output_dim=dim)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def fit_pcd(samples: np.ndarray, components: int = 1) -> TransformStep:
    """Principal component decomposition of the sample covariance.

    Components are unit eigenvectors ordered by descending eigenvalue, each
    sign-fixed so its first nonzero entry is positive.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
        raise ValueError("fit_pcd needs a (n>=2, d>=1) sample matrix")
    if components < 1 or components > X.shape[1]:
        raise ValueError("retained component count out of range")
    mean = X.mean(axis=0)
    cov = np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
    if float(np.trace(cov)) == 0.0:
        raise DegenerateCovariance("samples have zero variance in every direction")
    evals, evecs = np.linalg.eigh(cov)
    # stable descending sort: equal eigenvalues keep axis order
    order = np.argsort(-evals, kind="stable")
    vecs = evecs[:, order[:components]].T.copy()
    for v in vecs:
        nz = np.flatnonzero(np.abs(v) > 1e-12)
        if nz.size and v[nz[0]] < 0:
            v *= -1.0
    return TransformStep(
        kind="pcd_project",
        params={
            "mean": mean.tolist(),
            "components": vecs.tolist(),
            "eigenvalues": evals[order[:components]].tolist(),
        },
    )


# ---------------------------------------------------------------------------
# step primitives
# ---------------------------------------------------------------------------

def step_displacement(points: np.ndarray, neutral_points: np.ndarray) -> np.ndarray:
    """Signed per-axis displacement from the neutral pose, flattened."""
    p = np.asarray(points, dtype=float)
    q = np.asarray(neutral_points, dtype=float)
    if p.shape != q.shape:
        raise LengthMismatch(f"points {p.shape} vs neutral {q.shape}")
    return (p - q).ravel()


def step_aspect_ratio(
    points: np.ndarray, neutral_points: np.ndarray, pairs: Sequence[tuple[int, int]]
) -> np.ndarray:
    """Per-pair distance relative to the same pair's neutral distance."""
    p = np.asarray(points, dtype=float)
    q = np.asarray(neutral_points, dtype=float)
    out = np.empty(len(pairs))
    for i, (a, b) in enumerate(pairs):
        d0 = float(np.linalg.norm(q[a] - q[b]))
        if d0 <= EPS_GEO:
            raise DegenerateAnchorPair(f"pair ({a},{b}) degenerate in the neutral frame")
        out[i] = float(np.linalg.norm(p[a] - p[b])) / d0
    return out


def _compile_step(kind: str, cache: dict):
    """Bind each step's parameters into a closure once, at construction."""
    if kind == "displacement":
        neutral = cache["neutral"]
        size = neutral.size

        def fn(x):
            if x.size != size:
                raise DimensionMismatch(f"displacement expects dim {size}, got {x.size}")
            return x - neutral

    elif kind == "aspect_ratio":
        neutral = cache["neutral"]
        pairs = cache["pairs"]

        def fn(x):
            return step_aspect_ratio(x.reshape(-1, 3), neutral, pairs)

    elif kind == "pcd_project":
        comps = cache["components"]
        mean = cache["mean"]
        in_dim = comps.shape[1]

        def fn(x):
            if x.size != in_dim:
                raise DimensionMismatch(f"pcd_project expects dim {in_dim}, got {x.size}")
            return comps @ (x - mean)

    elif kind == "log1p":

        def fn(x):
            if np.any(x <= -1.0):
                raise DomainViolation("log1p input must exceed -1")
            return np.log1p(x)

    elif kind == "exp_scale":
        rate = cache["rate"]

        def fn(x):
            return np.exp(rate * x)

    else:  # standardize
        mean = cache["mean"]
        scale = cache["scale"]

        def fn(x):
            return (x - mean) / scale

    return fn


def _apply_step(step: TransformStep, x: np.ndarray) -> np.ndarray:
    return step._fn(np.asarray(x, dtype=float).ravel())


def apply_chain(chain: TransformChain, x: np.ndarray) -> np.ndarray:
    """Run every step in order; empty chains are the identity."""
    v = np.asarray(x, dtype=float).ravel()
    for step in chain.steps:
        v = step._fn(v)
    if v.size != chain.output_dim:
        raise DimensionMismatch(f"chain produced dim {v.size}, declared {chain.output_dim}")
    return v


# ---------------------------------------------------------------------------
# residual (dependent-variable) transforms, used only during fitting
# ---------------------------------------------------------------------------

RESIDUAL_KINDS = ("identity", "log", "box_cox")


@dataclass(frozen=True)
class ResidualTransform:
    kind: str = "identity"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in RESIDUAL_KINDS:
            raise ValueError(f"unknown residual transform {self.kind!r}")
        if self.kind == "box_cox" and not np.isfinite(self.params.get("lambda", 0.0)):
            raise ValueError("box_cox lambda must be finite")


def apply_residual_transform(t: ResidualTransform, residuals: np.ndarray) -> np.ndarray:
    r = np.asarray(residuals, dtype=float)
    if t.kind == "identity":
        return r.copy()
    offset = float(t.params.get("offset", 0.0))
    shifted = r + offset
    if np.any(shifted <= 0.0):
        raise DomainViolation("residual + offset must be positive for log/box_cox")
    if t.kind == "log":
        return np.log(shifted)
    lam = float(t.params["lambda"])
    if abs(lam) < 1e-12:
        return np.log(shifted)
    return (shifted**lam - 1.0) / lam
