"""Norm-dynamics bookkeeping: exact recursion checks, fits, predictions.

The squared weight norm obeys an exact per-step identity,

    ||W_n||^2 - ||W_{n-1}||^2 = (||v_new||^2 - ||v_old||^2) / ||k||^2,

in plain coordinates when C = I, and in whitened coordinates
(W -> W C^{1/2}, k -> C^{-1/2} k) for general C. Combining the identity
with the empirical linear laws E[||v||^2 | W] = s ||W||^2 + b and a
near-constant K = E ||k||^-2 gives an affine recursion for E ||W_n||^2
whose closed form is either exponential growth (rho > 1) or a bounded
approach to a fixed point (0 < rho < 1, the anchored regime).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .linalg import NumericError

REGIME_DIVERGENT = "divergent"
REGIME_STABLE = "stable"


class InsufficientData(ValueError):
    """Not enough points for the requested fit."""


class DegenerateSlopes(ValueError):
    """Fitted slopes too close for the divergent reparametrization."""


@dataclass
class TraceRecord:
    """One row of a run trace; n counts committed edits (1-based)."""

    n: int
    w_norm_sq: float
    r_n: float
    v_old_norm_sq: float
    v_new_norm_sq: float
    v_new_unconstrained_norm_sq: float
    key_norm_sq: float
    key_c_norm_sq: float
    w_tilde_norm_sq: float


TRACE_FIELDS = (
    "n",
    "w_norm_sq",
    "r_n",
    "v_old_norm_sq",
    "v_new_norm_sq",
    "v_new_unconstrained_norm_sq",
    "key_norm_sq",
    "key_c_norm_sq",
    "w_tilde_norm_sq",
)


@dataclass
class FitResult:
    """Ordinary least squares summary for y against x."""

    slope: float
    intercept: float
    r_squared: float
    n_points: int
    slope_se: float = float("nan")
    intercept_se: float = float("nan")


@dataclass
class RecurrenceParams:
    """Fitted constants of the affine norm recursion.

    rho = 1 + K (s_new - s_old); gamma = (b_new - b_old)/(s_new - s_old).
    Divergent regime (rho > 1): R = rho, alpha = gamma. Stable regime
    (0 < rho < 1): r = rho, beta = -gamma; with an anchor a the stable
    constants specialize to r = 1 - K s_old, beta = (a - b_old)/s_old.
    """

    K: float
    s_new: float
    b_new: float
    s_old: float
    b_old: float
    rho: float
    gamma: float
    regime: str
    fit_new: FitResult | None = None
    fit_old: FitResult | None = None

    @property
    def alpha(self) -> float:
        return self.gamma

    @property
    def beta(self) -> float:
        return -self.gamma


def ols(x: np.ndarray, y: np.ndarray) -> FitResult:
    """Least squares line with R^2 and standard errors.

    Zero-variance convention: when both residual and total variance are
    below 1e-24, R^2 is defined as 1 (constant data fits a constant
    model perfectly).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InsufficientData("ols expects two equal-length 1-D arrays")
    n = x.size
    if n < 2:
        raise InsufficientData("ols needs at least 2 points")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise InsufficientData("ols x values are all identical")
    sxy = float(np.sum((x - xm) * (y - ym)))
    slope = sxy / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - ym) ** 2))
    if ss_res / n < 1e-24 and ss_tot / n < 1e-24:
        r2 = 1.0
    elif ss_tot == 0.0:
        r2 = 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    if n > 2:
        sigma2 = ss_res / (n - 2)
        slope_se = math.sqrt(sigma2 / sxx)
        intercept_se = math.sqrt(sigma2 * (1.0 / n + xm**2 / sxx))
    else:
        slope_se = intercept_se = float("nan")
    return FitResult(slope, intercept, r2, n, slope_se, intercept_se)


def _transitions(
    trace: Sequence[TraceRecord],
    use_whitened: bool,
    w0_norm_sq: Optional[float],
) -> Iterable[tuple[float, float, float, float]]:
    """(prev_w2, cur_w2, value_gap, key2) per verifiable transition."""
    get_w = (lambda r: r.w_tilde_norm_sq) if use_whitened else (lambda r: r.w_norm_sq)
    get_k = (lambda r: r.key_c_norm_sq) if use_whitened else (lambda r: r.key_norm_sq)
    prev: Optional[float] = w0_norm_sq
    for rec in trace:
        cur = get_w(rec)
        if prev is not None:
            yield prev, cur, rec.v_new_norm_sq - rec.v_old_norm_sq, get_k(rec)
        prev = cur


def verify_recursion(
    trace: Sequence[TraceRecord],
    use_whitened: bool = False,
    w0_norm_sq: Optional[float] = None,
) -> float:
    """Max relative residual of the exact norm recursion over a trace.

    Residuals are measured relative to max(|lhs|, |rhs|, weight scale):
    the identity is exact in real arithmetic, and the float defect of a
    difference of two accumulated squared norms is only meaningful
    relative to their magnitude. Pass w0_norm_sq (the whitened one when
    use_whitened) to include the first transition from W0.
    """
    if len(trace) < 2 and w0_norm_sq is None:
        raise InsufficientData("need at least two records (or w0) to verify")
    worst = 0.0
    for prev_w2, cur_w2, gap, key2 in _transitions(trace, use_whitened, w0_norm_sq):
        if key2 <= 0:
            raise NumericError("non-positive key norm in trace")
        lhs = cur_w2 - prev_w2
        rhs = gap / key2
        denom = max(abs(lhs), abs(rhs), prev_w2, cur_w2, 1.0)
        worst = max(worst, abs(lhs - rhs) / denom)
    return worst


def fit_log_rn(
    trace: Sequence[TraceRecord],
    window: tuple[int, int] | None = None,
) -> FitResult:
    """OLS of log R_n against n over an inclusive step window."""
    if window is None:
        recs = list(trace)
    else:
        lo, hi = window
        recs = [r for r in trace if lo <= r.n <= hi]
    if len(recs) < 3:
        raise InsufficientData(f"log R_n fit needs >= 3 points, got {len(recs)}")
    r = np.array([rec.r_n for rec in recs])
    if np.any(r <= 0):
        raise NumericError("log R_n fit requires all r_n > 0")
    n = np.array([rec.n for rec in recs], dtype=np.float64)
    return ols(n, np.log(r))


@dataclass
class ValueLawSample:
    """Per-checkpoint probe batch means for the value-norm regressions.

    Probes are hypothetical edits computed from (and discarded against)
    the checkpoint state, so the conditioning weight norm is the state's
    own; inverse key norms are averaged directly to keep K unbiased.
    """

    n: int
    w_norm_sq: float
    w_tilde_norm_sq: float
    v_new_norm_sq: float
    v_old_norm_sq: float
    inv_key_norm_sq: float
    inv_key_c_norm_sq: float
    batch: int = 1


def _law_points_from_trace(
    trace: Sequence[TraceRecord],
    use_whitened: bool,
    w0_norm_sq: Optional[float],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Regression arrays (x, y_new, y_old, inv_key2) from per-step records.

    The value at step n was generated against W_{n-1}, so x is the
    previous record's weight norm (w0 for the first step when given).
    """
    xs, y_new, y_old, inv_k = [], [], [], []
    get_w = (lambda r: r.w_tilde_norm_sq) if use_whitened else (lambda r: r.w_norm_sq)
    get_k = (lambda r: r.key_c_norm_sq) if use_whitened else (lambda r: r.key_norm_sq)
    prev = w0_norm_sq
    for rec in trace:
        if prev is not None:
            xs.append(prev)
            y_new.append(rec.v_new_norm_sq)
            y_old.append(rec.v_old_norm_sq)
            inv_k.append(1.0 / get_k(rec))
        prev = get_w(rec)
    return (np.array(xs), np.array(y_new), np.array(y_old), np.array(inv_k))


def recurrence_from_constants(
    K: float,
    s_new: float,
    b_new: float,
    s_old: float,
    b_old: float,
    anchor: Optional[float] = None,
    fit_new: FitResult | None = None,
    fit_old: FitResult | None = None,
    min_slope_gap: float = 1e-12,
) -> RecurrenceParams:
    """Map fitted law constants to (rho, gamma) and classify the regime."""
    rho = 1.0 + K * (s_new - s_old)
    if rho > 1.0:
        if abs(s_new - s_old) < min_slope_gap:
            raise DegenerateSlopes("|s_new - s_old| below resolvable floor")
        gamma = (b_new - b_old) / (s_new - s_old)
        regime = REGIME_DIVERGENT
    elif 0.0 < rho < 1.0:
        regime = REGIME_STABLE
        if anchor is not None and s_old > 0:
            # anchored specialization: effective s_new = 0, b_new = a
            rho = 1.0 - K * s_old
            gamma = (anchor - b_old) / (0.0 - s_old)
        else:
            if abs(s_new - s_old) < min_slope_gap:
                raise DegenerateSlopes("|s_new - s_old| below resolvable floor")
            gamma = (b_new - b_old) / (s_new - s_old)
    else:
        raise DegenerateSlopes(f"recurrence ratio rho={rho:.6g} outside (0, 1) u (1, inf)")
    return RecurrenceParams(
        K=K, s_new=s_new, b_new=b_new, s_old=s_old, b_old=b_old,
        rho=rho, gamma=gamma, regime=regime, fit_new=fit_new, fit_old=fit_old,
    )


def _derive_params(
    x: np.ndarray,
    y_new: np.ndarray,
    y_old: np.ndarray,
    inv_key2: np.ndarray,
    anchor: Optional[float],
) -> RecurrenceParams:
    if x.size < 10:
        raise InsufficientData(f"value-law fit needs >= 10 points, got {x.size}")
    fit_new = ols(x, y_new)
    fit_old = ols(x, y_old)
    return recurrence_from_constants(
        K=float(np.mean(inv_key2)),
        s_new=fit_new.slope, b_new=fit_new.intercept,
        s_old=fit_old.slope, b_old=fit_old.intercept,
        anchor=anchor, fit_new=fit_new, fit_old=fit_old,
    )


def fit_value_norm_laws(
    trace: Sequence[TraceRecord],
    use_whitened: bool = False,
    w0_norm_sq: Optional[float] = None,
    anchor: Optional[float] = None,
) -> RecurrenceParams:
    """Fit the linear value-norm laws and K from per-step trace records."""
    x, y_new, y_old, inv_k = _law_points_from_trace(trace, use_whitened, w0_norm_sq)
    return _derive_params(x, y_new, y_old, inv_k, anchor)


def fit_value_norm_laws_from_samples(
    samples: Sequence[ValueLawSample],
    use_whitened: bool = False,
    anchor: Optional[float] = None,
) -> RecurrenceParams:
    """Fit the laws from per-checkpoint probe batch means."""
    if use_whitened:
        x = np.array([s.w_tilde_norm_sq for s in samples])
        inv_k = np.array([s.inv_key_c_norm_sq for s in samples])
    else:
        x = np.array([s.w_norm_sq for s in samples])
        inv_k = np.array([s.inv_key_norm_sq for s in samples])
    y_new = np.array([s.v_new_norm_sq for s in samples])
    y_old = np.array([s.v_old_norm_sq for s in samples])
    return _derive_params(x, y_new, y_old, inv_k, anchor)


def predict_trajectory(
    params: RecurrenceParams,
    w0_norm_sq: float,
    n_max: int,
) -> np.ndarray:
    """Closed-form E||W_n||^2 for n = 0..n_max.

    Both regimes share rho^n w0 + gamma (rho^n - 1); for 0 < rho < 1 this
    is r^n w0 + beta (1 - r^n), which converges to beta.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    n = np.arange(n_max + 1, dtype=np.float64)
    powers = params.rho**n
    return powers * w0_norm_sq + params.gamma * (powers - 1.0)


def collapse_point(
    scores: Sequence[tuple[int, float]],
    threshold: float = 60.0,
) -> Optional[int]:
    """Earliest checkpoint whose score is at or below the threshold."""
    prev = None
    for checkpoint, score in scores:
        if prev is not None and checkpoint <= prev:
            raise ValueError("checkpoints must be strictly increasing")
        prev = checkpoint
        if score <= threshold:
            return checkpoint
    return None
