"""Per-blendshape regressors and the time-dependent output correction.

Six model families share one interface: plain least squares, per-feature
polynomial expansion, projection regression on principal components,
partial least squares (NIPALS), and two exponential families (one with a
log-compressed output link) whose per-feature rates come from a bounded
golden-section search.

The correction wrapper rescales the raw regression output by a weight
table / damping / bias triple and applies a time-decaying shift that
restores the top of the dynamic range after threshold crossings; with
neutral parameters the wrapper reduces exactly to clamp(raw).
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import stats
from .errors import (
    NonConvergence,
    SampleSizeOutOfRange,
    SingularDesign,
    ZeroResiduals,
    ZeroVariance,
)
from .transforms import fit_pcd

FAMILIES = ("ols", "polynomial", "pca_reg", "pls", "exponential", "log_exponential")

RATE_BOUND = 20.0
RATE_TOL = 1e-8
RATE_MAX_ITER = 200
_EXP_CLIP = 300.0


# ---------------------------------------------------------------------------
# fit quality report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitReport:
    """In-sample diagnostics; fields are None where a measure is undefined
    (e.g. Durbin-Watson on a perfect fit)."""

    r2: float | None = None
    mse: float | None = None
    durbin_watson: float | None = None
    breusch_pagan_stat: float | None = None
    breusch_pagan_p: float | None = None
    f_statistic: float | None = None
    pearson_resid_truth: float | None = None
    xi: float | None = None
    shapiro_wilk: float | None = None
    model_bytes: int = 0

    def to_dict(self) -> dict:
        def clean(v):
            if v is None or isinstance(v, int):
                return v
            return float(v) if math.isfinite(v) else None

        return {
            "r2": clean(self.r2),
            "mse": clean(self.mse),
            "durbin_watson": clean(self.durbin_watson),
            "breusch_pagan_stat": clean(self.breusch_pagan_stat),
            "breusch_pagan_p": clean(self.breusch_pagan_p),
            "f_statistic": clean(self.f_statistic),
            "pearson_resid_truth": clean(self.pearson_resid_truth),
            "xi": clean(self.xi),
            "shapiro_wilk": clean(self.shapiro_wilk),
            "model_bytes": int(self.model_bytes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        return cls(**{k: d.get(k) for k in cls.__dataclass_fields__})


# ---------------------------------------------------------------------------
# regressor model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegressorModel:
    family: str
    weights: np.ndarray
    bias: float
    params: dict = field(default_factory=dict)
    fit_report: FitReport = field(default_factory=FitReport)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        w = np.asarray(self.weights, dtype=float)
        if not np.isfinite(w).all() or not math.isfinite(self.bias):
            raise ValueError("weights and bias must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        cache: dict = {}
        if self.family == "polynomial":
            if int(self.params.get("degree", 0)) < 1:
                raise ValueError("polynomial degree must be >= 1")
            cache["degree"] = int(self.params["degree"])
        elif self.family == "pca_reg":
            cache["mean"] = np.asarray(self.params["mean"], dtype=float)
            cache["axes"] = np.asarray(self.params["axes"], dtype=float)
        elif self.family in ("exponential", "log_exponential"):
            cache["rates"] = np.asarray(self.params["rates"], dtype=float)
        object.__setattr__(self, "_cache", cache)
        object.__setattr__(self, "_predict", _compile_predictor(self.family, w, self.bias, cache))

    @property
    def input_dim(self) -> int:
        if self.family == "polynomial":
            return self.weights.size // int(self.params["degree"])
        if self.family == "pca_reg":
            return len(self.params["mean"])
        return self.weights.size

    def to_dict(self, include_report: bool = True) -> dict:
        d = {
            "family": self.family,
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "params": self.params,
        }
        if include_report:
            d["fit_report"] = self.fit_report.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorModel":
        report = FitReport.from_dict(d.get("fit_report", {})) if "fit_report" in d else FitReport()
        return cls(
            family=d["family"],
            weights=np.asarray(d["weights"], dtype=float),
            bias=float(d["bias"]),
            params=d.get("params", {}),
            fit_report=report,
        )


def _expand_polynomial(X: np.ndarray, degree: int) -> np.ndarray:
    """Per-feature power expansion, power-major: [X, X^2, ..., X^degree]."""
    return np.hstack([X**p for p in range(1, degree + 1)])


def _solve_least_squares(features: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    design = np.column_stack([features, np.ones(features.shape[0])])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise SingularDesign(f"design matrix rank-deficient ({design.shape[1]} columns)")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef[:-1], float(coef[-1])


def _exp_features(X: np.ndarray, rates: np.ndarray) -> np.ndarray:
    return np.exp(np.clip(X * rates, -_EXP_CLIP, _EXP_CLIP))


def _golden_section(fn, lo: float, hi: float) -> float:
    """Minimize a unimodal scalar function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(RATE_MAX_ITER):
        if b - a < RATE_TOL:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def _fit_rate(x: np.ndarray, y: np.ndarray) -> float:
    """Best exponential rate for a single feature, by 1D least squares."""

    def sse(r: float) -> float:
        z = np.exp(np.clip(r * x, -_EXP_CLIP, _EXP_CLIP))
        zc = z - z.mean()
        var = float(zc @ zc)
        if var <= 1e-30:
            yc = y - y.mean()
            return float(yc @ yc)
        a = float(zc @ (y - y.mean())) / var
        resid = (y - y.mean()) - a * zc
        v = float(resid @ resid)
        return v if math.isfinite(v) else math.inf

    return _golden_section(sse, -RATE_BOUND, RATE_BOUND)


def _nipals_pls1(X: np.ndarray, y: np.ndarray, components: int) -> tuple[np.ndarray, float]:
    """Single-response NIPALS; returns the collapsed coefficient vector."""
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    n, p = X.shape
    W = np.zeros((p, components))
    P = np.zeros((p, components))
    q = np.zeros(components)
    for a in range(components):
        w = Xc.T @ yc
        norm = float(np.linalg.norm(w))
        if norm < 1e-12:
            raise NonConvergence(
                f"component {a + 1} of {components}: no covariance left to extract"
            )
        w /= norm
        t = Xc @ w
        tt = float(t @ t)
        if tt < 1e-30:
            raise NonConvergence(f"component {a + 1}: degenerate scores")
        q_a = float(t @ yc) / tt
        p_a = (Xc.T @ t) / tt
        Xc = Xc - np.outer(t, p_a)
        yc = yc - q_a * t
        W[:, a], P[:, a], q[a] = w, p_a, q_a
    B = W @ np.linalg.solve(P.T @ W, q)
    bias = y_mean - float(x_mean @ B)
    return B, bias


def fit(
    family: str,
    X: np.ndarray,
    y: np.ndarray,
    *,
    degree: int = 2,
    components: int = 1,
) -> RegressorModel:
    """Fit one regressor family; the returned model carries a full FitReport."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    n, p = X.shape
    if n != y.size:
        raise ValueError("X rows and y length differ")
    if y.min() < -1e-9 or y.max() > 1.0 + 1e-9:
        raise ValueError("targets must lie in [0, 1]")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")

    params: dict = {}
    if family == "ols":
        if n <= p:
            raise SingularDesign(f"need more rows than columns, got {n}x{p}")
        w, b = _solve_least_squares(X, y)
    elif family == "polynomial":
        if degree < 1:
            raise ValueError("polynomial degree must be >= 1")
        expanded = _expand_polynomial(X, degree)
        if n <= expanded.shape[1]:
            raise SingularDesign(
                f"need more rows than expanded columns, got {n}x{expanded.shape[1]}"
            )
        w, b = _solve_least_squares(expanded, y)
        params = {"degree": degree}
    elif family == "pca_reg":
        if components < 1:
            raise ValueError("components must be >= 1")
        step = fit_pcd(X, components=components)
        comps = np.asarray(step.params["components"], dtype=float)
        mean = np.asarray(step.params["mean"], dtype=float)
        Z = (X - mean) @ comps.T
        w, b = _solve_least_squares(Z, y)
        params = {"components": components, "mean": mean.tolist(), "axes": comps.tolist()}
    elif family == "pls":
        if components < 1 or components > min(n - 1, p):
            raise ValueError(f"components must be in [1, {min(n - 1, p)}]")
        w, b = _nipals_pls1(X, y, components)
        params = {"components": components}
    else:  # exponential / log_exponential
        target = np.log1p(y) if family == "log_exponential" else y
        rates = np.array([_fit_rate(X[:, j], target) for j in range(p)])
        phi = _exp_features(X, rates)
        w, b = _solve_least_squares(phi, target)
        params = {"rates": rates.tolist()}
        if family == "log_exponential":
            params["link"] = "log1p"

    model = RegressorModel(family=family, weights=w, bias=b, params=params)
    y_pred = np.array([predict_raw(model, X[i]) for i in range(n)])
    report = _build_report(model, X, y, y_pred)
    return replace(model, fit_report=report)


def _build_report(model: RegressorModel, X: np.ndarray, y: np.ndarray, y_pred: np.ndarray) -> FitReport:
    resid = y - y_pred

    def guarded(fn, *a):
        try:
            return fn(*a)
        except (ZeroVariance, ZeroResiduals, ValueError):
            return None

    bp_stat = bp_p = None
    try:
        bp = stats.breusch_pagan(resid, X)
        bp_stat, bp_p = bp.statistic, bp.p_value
    except (SingularDesign, ValueError):
        pass
    sw = None
    if 3 <= y.size:
        sub = resid if resid.size <= 5000 else resid[:: resid.size // 5000 + 1]
        try:
            sw = stats.shapiro_wilk(sub).statistic
        except (ZeroVariance, SampleSizeOutOfRange):
            sw = None
    n_params = int(model.weights.size)
    f_stat = None
    if y.size > n_params + 1:
        f_stat = stats.f_statistic(y, y_pred, n_params)
    core = json.dumps(model.to_dict(include_report=False)).encode()
    return FitReport(
        r2=guarded(stats.r_squared, y, y_pred),
        mse=stats.mse(y, y_pred),
        durbin_watson=guarded(stats.durbin_watson, resid),
        breusch_pagan_stat=bp_stat,
        breusch_pagan_p=bp_p,
        f_statistic=f_stat,
        pearson_resid_truth=guarded(stats.pearson, y_pred, y),
        xi=guarded(stats.xi_correlation, y, y_pred),
        shapiro_wilk=sw,
        model_bytes=len(core),
    )


def _compile_predictor(family: str, w: np.ndarray, b: float, cache: dict):
    """Bind one family's evaluation into a closure at construction time."""
    if family in ("ols", "pls"):
        size = w.size

        def predict(x):
            if x.size != size:
                raise_dim(x.size, size)
            return float(w @ x) + b

    elif family == "polynomial":
        degree = cache["degree"]
        size = w.size

        def predict(x):
            if x.size * degree != size:
                raise_dim(x.size, size // degree)
            expanded = np.concatenate([x**p for p in range(1, degree + 1)])
            return float(w @ expanded) + b

    elif family == "pca_reg":
        mean = cache["mean"]
        comps = cache["axes"]
        size = mean.size

        def predict(x):
            if x.size != size:
                raise_dim(x.size, size)
            return float(w @ (comps @ (x - mean))) + b

    else:  # exponential / log_exponential
        rates = cache["rates"]
        size = rates.size
        log_link = family == "log_exponential"

        def predict(x):
            if x.size != size:
                raise_dim(x.size, size)
            inner = float(w @ np.exp(np.clip(rates * x, -_EXP_CLIP, _EXP_CLIP))) + b
            return float(np.expm1(inner)) if log_link else inner

    return predict


def predict_raw(model: RegressorModel, features: np.ndarray) -> float:
    """Family-specific evaluation of the uncorrected, unclamped estimate."""
    return model._predict(np.asarray(features, dtype=float).ravel())


def raise_dim(got: int, want: int):
    from .errors import DimensionMismatch

    raise DimensionMismatch(f"feature dim {got}, model expects {want}")


# ---------------------------------------------------------------------------
# output correction (weight table, damping, bias, time-decaying shift)
# ---------------------------------------------------------------------------

def _sample_knots(fn, n: int = 33) -> tuple[tuple[float, float], ...]:
    xs = np.linspace(0.0, 1.0, n)
    return tuple((float(x), float(fn(x))) for x in xs)


def _upper_quadratic(f: float) -> float:
    return max(0.0, (f - 0.7) / 0.3) ** 2


def _upper_sigmoid(f: float) -> float:
    s0 = 1.0 / (1.0 + math.exp(9.6))
    s = 1.0 / (1.0 + math.exp(-12.0 * (f - 0.8)))
    return max(0.0, (s - s0) / (1.0 - s0))


# Empirical weight-function presets: both boost the upper end of the range,
# where real faces rarely reach the nominal extreme.
ZERO_G_TABLE: tuple[tuple[float, float], ...] = ((0.0, 0.0), (1.0, 0.0))
G_TABLE_PRESETS: dict[str, tuple[tuple[float, float], ...]] = {
    "zero": ZERO_G_TABLE,
    "upper_quadratic": _sample_knots(_upper_quadratic),
    "upper_sigmoid": _sample_knots(_upper_sigmoid),
}


@dataclass(frozen=True)
class CorrectionParams:
    """Parameters of the output correction stage.

    ``beta_response`` scales the shift applied when the trigger threshold is
    crossed (shift = beta_response * (1 - raw)); zero disables the shift
    mechanism entirely, making the stage a pure rescale. ``k`` is the decay
    timescale per timestamp unit (milliseconds in streams).
    """

    eta: float = 1.0
    gamma: float = 0.0
    k: float = 0.0
    g_table: tuple[tuple[float, float], ...] = ZERO_G_TABLE
    beta_0: float = 0.0
    beta_response: float = 0.0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        table = tuple((float(x), float(v)) for x, v in self.g_table)
        xs = [x for x, _ in table]
        if len(xs) < 2 or xs[0] != 0.0 or xs[-1] != 1.0:
            raise ValueError("g_table knots must span [0, 1]")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("g_table abscissae must be strictly increasing")
        if not all(math.isfinite(v) for _, v in table):
            raise ValueError("g_table values must be finite")
        object.__setattr__(self, "g_table", table)
        object.__setattr__(self, "_xs", tuple(xs))
        object.__setattr__(self, "_ys", tuple(v for _, v in table))
        object.__setattr__(
            self,
            "_neutral",
            self.gamma == 0.0
            and self.beta_0 == 0.0
            and self.beta_response == 0.0
            and all(v == 0.0 for _, v in table),
        )

    @property
    def is_neutral(self) -> bool:
        """True when the stage reduces exactly to clamp(raw)."""
        return self._neutral

    def g(self, f: float) -> float:
        """Piecewise-linear weight function over [0, 1]."""
        xs, ys = self._xs, self._ys
        i = bisect.bisect_right(xs, f) - 1
        if i >= len(xs) - 1:
            return ys[-1]
        if i < 0:
            return ys[0]
        return ys[i] + (ys[i + 1] - ys[i]) * (f - xs[i]) / (xs[i + 1] - xs[i])

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "gamma": self.gamma,
            "k": self.k,
            "g_table": [list(k) for k in self.g_table],
            "beta_0": self.beta_0,
            "beta_response": self.beta_response,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorrectionParams":
        return cls(
            eta=float(d["eta"]),
            gamma=float(d["gamma"]),
            k=float(d["k"]),
            g_table=tuple((float(x), float(v)) for x, v in d["g_table"]),
            beta_0=float(d["beta_0"]),
            beta_response=float(d["beta_response"]),
        )


@dataclass(frozen=True)
class CorrectionState:
    """Running shift state: current shift, reference value and its time."""

    beta: float = 0.0
    f_min_value: float | None = None
    t_o: int | None = None
    t_last: int | None = None


def init_correction_state(params: CorrectionParams) -> CorrectionState:
    return CorrectionState(beta=params.beta_0)


def apply_correction(
    params: CorrectionParams, state: CorrectionState, raw: float, t: int
) -> tuple[float, CorrectionState]:
    """One correction step; returns (corrected value in [0,1], new state).

    Trigger rule: the shift fires when raw exceeds the reference value plus
    exp(k * (t_o - t)), a threshold that relaxes with elapsed time. Between
    triggers the shift decays toward beta_0 at the same timescale.
    """
    if params._neutral:
        # beta stays at zero and g/gamma vanish: algebraically identical to
        # the general expression, with no state to advance
        return min(max(raw, 0.0), 1.0), state
    if state.t_o is None:
        beta = params.beta_0
        new_state = CorrectionState(beta=beta, f_min_value=raw, t_o=t, t_last=t)
    else:
        dt = t - state.t_last
        beta = params.beta_0 + (state.beta - params.beta_0) * math.exp(-params.k * dt)
        if params.beta_response != 0.0 and raw > state.f_min_value + math.exp(
            params.k * (state.t_o - t)
        ):
            beta = params.beta_response * (1.0 - raw)
            new_state = CorrectionState(beta=beta, f_min_value=raw, t_o=t, t_last=t)
        else:
            new_state = CorrectionState(
                beta=beta, f_min_value=state.f_min_value, t_o=state.t_o, t_last=t
            )
    g_val = params.g(min(max(raw, 0.0), 1.0))
    out = (1.0 + g_val / params.eta - params.gamma) * (raw + beta)
    return min(max(out, 0.0), 1.0), new_state
