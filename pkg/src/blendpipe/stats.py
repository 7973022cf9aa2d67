"""Statistical measures used for model selection and stream comparison.

Scalar implementations over numpy arrays: goodness-of-fit (R², MSE,
F-statistic), residual diagnostics (Durbin-Watson, Breusch-Pagan,
Shapiro-Wilk) and correlation measures (Pearson, Spearman, Chatterjee's xi).
scipy is used only for distribution tail probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc, ndtr, ndtri

from .errors import (
    SampleSizeOutOfRange,
    SingularDesign,
    ZeroResiduals,
    ZeroVariance,
)

# Sentinel for test statistics that diverge on a perfect fit.
F_INFINITY = math.inf


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float | None = None


def _as1d(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).ravel()
    return a


# ---------------------------------------------------------------------------
# goodness of fit
# ---------------------------------------------------------------------------

def r_squared(y_true, y_pred) -> float:
    """Coefficient of determination, 1 - SS_res/SS_tot."""
    yt, yp = _as1d(y_true), _as1d(y_pred)
    if yt.size == 0 or yt.size != yp.size:
        raise ValueError("r_squared needs equal non-empty inputs")
    ss_tot = float(np.sum((yt - yt.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("R^2 undefined for constant y_true")
    ss_res = float(np.sum((yt - yp) ** 2))
    return 1.0 - ss_res / ss_tot


def mse(y_true, y_pred) -> float:
    yt, yp = _as1d(y_true), _as1d(y_pred)
    if yt.size == 0 or yt.size != yp.size:
        raise ValueError("mse needs equal non-empty inputs")
    return float(np.mean((yt - yp) ** 2))


def f_statistic(y_true, y_pred, n_params: int) -> float:
    """Overall regression F: (SS_reg/df_reg)/(SS_res/df_res).

    Returns the documented infinity sentinel when the fit is exact.
    """
    yt, yp = _as1d(y_true), _as1d(y_pred)
    n = yt.size
    if n <= n_params + 1:
        raise ValueError(f"need n > n_params + 1, got n={n}, n_params={n_params}")
    ss_reg = float(np.sum((yp - yt.mean()) ** 2))
    ss_res = float(np.sum((yt - yp) ** 2))
    df_reg = n_params
    df_res = n - n_params - 1
    if ss_res == 0.0:
        return F_INFINITY
    return (ss_reg / df_reg) / (ss_res / df_res)


# ---------------------------------------------------------------------------
# residual diagnostics
# ---------------------------------------------------------------------------

def durbin_watson(residuals) -> float:
    """Sum of squared first differences over sum of squares; range [0, 4]."""
    e = _as1d(residuals)
    if e.size < 2:
        raise ValueError("durbin_watson needs at least 2 residuals")
    denom = float(np.sum(e**2))
    if denom == 0.0:
        raise ZeroResiduals("all residuals are zero")
    return float(np.sum(np.diff(e) ** 2)) / denom


def breusch_pagan(residuals, X) -> TestResult:
    """LM heteroskedasticity test: n * R² of e² regressed on X.

    p-value from the chi-square tail with cols(X) degrees of freedom.
    """
    e = _as1d(residuals)
    Xm = np.asarray(X, dtype=float)
    if Xm.ndim == 1:
        Xm = Xm[:, None]
    n, p = Xm.shape
    if n != e.size:
        raise ValueError("residuals and X row count differ")
    if n <= p + 1:
        raise ValueError("breusch_pagan needs rows(X) > cols(X) + 1")
    e2 = e**2
    ss_tot = float(np.sum((e2 - e2.mean()) ** 2))
    if ss_tot == 0.0:
        return TestResult(statistic=0.0, p_value=1.0)
    design = np.column_stack([np.ones(n), Xm])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise SingularDesign("auxiliary design is rank-deficient")
    coef, *_ = np.linalg.lstsq(design, e2, rcond=None)
    fitted = design @ coef
    ss_res = float(np.sum((e2 - fitted) ** 2))
    lm = n * (1.0 - ss_res / ss_tot)
    p_value = float(gammaincc(p / 2.0, max(lm, 0.0) / 2.0))
    return TestResult(statistic=lm, p_value=p_value)


# ---------------------------------------------------------------------------
# correlation measures
# ---------------------------------------------------------------------------

def pearson(x, y) -> float:
    xa, ya = _as1d(x), _as1d(y)
    if xa.size < 2 or xa.size != ya.size:
        raise ValueError("pearson needs equal inputs of length >= 2")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    denom = math.sqrt(float(np.sum(xc**2)) * float(np.sum(yc**2)))
    if denom == 0.0:
        raise ZeroVariance("pearson undefined for constant input")
    return float(np.sum(xc * yc)) / denom


def _average_ranks(v: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the group average."""
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=float)
    sorted_v = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation of average-ranked data."""
    xa, ya = _as1d(x), _as1d(y)
    if xa.size < 2 or xa.size != ya.size:
        raise ValueError("spearman needs equal inputs of length >= 2")
    return pearson(_average_ranks(xa), _average_ranks(ya))


def xi_correlation(x, y) -> float:
    """Chatterjee's rank-based dependence coefficient of y on x.

    Sorts by x with ties broken by original index (deterministic, no
    randomization), then applies the general tied-rank formula; with
    distinct y it reduces to 1 - 3*sum|r_{i+1}-r_i|/(n^2-1).
    Returns 0 when y is constant (no dependence information).
    """
    xa, ya = _as1d(x), _as1d(y)
    n = xa.size
    if n < 2 or n != ya.size:
        raise ValueError("xi_correlation needs equal inputs of length >= 2")
    order = np.lexsort((np.arange(n), xa))
    y_ord = ya[order]
    # r_i = #{j: y_j <= y_i}, l_i = #{j: y_j >= y_i}, both over the full sample
    sorted_y = np.sort(y_ord)
    r = np.searchsorted(sorted_y, y_ord, side="right").astype(float)
    l = n - np.searchsorted(sorted_y, y_ord, side="left").astype(float)
    denom = 2.0 * float(np.sum(l * (n - l)))
    if denom == 0.0:
        return 0.0
    return 1.0 - n * float(np.sum(np.abs(np.diff(r)))) / denom


# ---------------------------------------------------------------------------
# Shapiro-Wilk
# ---------------------------------------------------------------------------

def shapiro_wilk(sample) -> TestResult:
    """W normality test via the polynomial-coefficient approximation.

    Valid for 3 <= n <= 5000. W = (sum a_i x_(i))^2 / sum (x_i - mean)^2
    with weights from the normal order-statistic approximation; the p-value
    uses the standard normalizing transform for each sample-size regime.
    """
    x = np.sort(_as1d(sample))
    n = x.size
    if n < 3 or n > 5000:
        raise SampleSizeOutOfRange(f"shapiro_wilk valid for 3 <= n <= 5000, got {n}")
    ss = float(np.sum((x - x.mean()) ** 2))
    if ss == 0.0:
        raise ZeroVariance("shapiro_wilk undefined for constant sample")

    m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    mm = float(m @ m)
    u = 1.0 / math.sqrt(n)
    a = np.empty(n)
    if n == 3:
        a[0], a[1], a[2] = -math.sqrt(0.5), 0.0, math.sqrt(0.5)
    else:
        c = m / math.sqrt(mm)
        a_n = (c[-1] + 0.221157 * u - 0.147981 * u**2 - 2.071190 * u**3
               + 4.434685 * u**4 - 2.706056 * u**5)
        if n > 5:
            a_n1 = (c[-2] + 0.042981 * u - 0.293762 * u**2 - 1.752461 * u**3
                    + 5.682633 * u**4 - 3.582633 * u**5)
            phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * a_n**2 - 2 * a_n1**2)
            a[2:-2] = m[2:-2] / math.sqrt(phi)
            a[-2], a[-1] = a_n1, a_n
            a[0], a[1] = -a_n, -a_n1
        else:
            phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * a_n**2)
            a[1:-1] = m[1:-1] / math.sqrt(phi)
            a[-1] = a_n
            a[0] = -a_n

    w = float(a @ x) ** 2 / ss
    w = min(w, 1.0)

    if n == 3:
        p = (6.0 / math.pi) * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        p = min(max(p, 0.0), 1.0)
        return TestResult(statistic=w, p_value=p)
    one_minus_w = max(1.0 - w, 1e-15)
    if n <= 11:
        g = -2.273 + 0.459 * n
        wt = -math.log(max(g - math.log(one_minus_w), 1e-15))
        mu = 0.5440 - 0.39978 * n + 0.025054 * n**2 - 0.0006714 * n**3
        sigma = math.exp(1.3822 - 0.77857 * n + 0.062767 * n**2 - 0.0020322 * n**3)
    else:
        ln_n = math.log(n)
        wt = math.log(one_minus_w)
        mu = -1.5861 - 0.31082 * ln_n - 0.083751 * ln_n**2 + 0.0038915 * ln_n**3
        sigma = math.exp(-0.4803 - 0.082676 * ln_n + 0.0030302 * ln_n**2)
    z = (wt - mu) / sigma
    p = float(1.0 - ndtr(z))
    return TestResult(statistic=w, p_value=p)
