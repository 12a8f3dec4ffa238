"""Least-squares fits for the scaling laws: linear regression and a damped
Gauss-Newton (Levenberg-Marquardt) solver with analytic Jacobians.

Also contains the two time-series reductions built on them: the onset time of
a depletion curve and the first revival time of a fidelity trace.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .meanfield import TimeSeries


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class ModelSpec:
    name: str
    arity: int
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray]  # shape (len(x), arity)
    param_names: tuple[str, ...]
    domain: Callable[[np.ndarray, np.ndarray], bool] = lambda p, x: True

    def __call__(self, params, x):
        return self.evaluator(np.asarray(params, dtype=float), np.asarray(x, dtype=float))


def _linear(p, x):
    return p[0] * x + p[1]


def _linear_jac(p, x):
    return np.stack([x, np.ones_like(x)], axis=1)


def _tanh(p, x):
    A, B, C, D = p
    return A * np.tanh(B * (x + C)) + D


def _tanh_jac(p, x):
    A, B, C, D = p
    th = np.tanh(B * (x + C))
    sech2 = 1.0 - th * th
    return np.stack([th, A * sech2 * (x + C), A * sech2 * B, np.ones_like(x)], axis=1)


def _power_offset(p, x):
    a, b, c = p
    return a * x**b + c


def _power_offset_jac(p, x):
    a, b, c = p
    xb = x**b
    return np.stack([xb, a * xb * np.log(x), np.ones_like(x)], axis=1)


def _shifted_power(p, x):
    alpha, beta, delta = p
    return alpha * (x + beta) ** delta


def _shifted_power_jac(p, x):
    alpha, beta, delta = p
    s = x + beta
    sd = s**delta
    return np.stack([sd, alpha * delta * s ** (delta - 1.0), alpha * sd * np.log(s)], axis=1)


LINEAR = ModelSpec("linear", 2, _linear, _linear_jac, ("slope", "intercept"))
TANH_ONSET = ModelSpec("tanh_onset", 4, _tanh, _tanh_jac, ("A", "B", "C", "D"))
POWER_OFFSET = ModelSpec(
    "power_offset", 3, _power_offset, _power_offset_jac, ("a", "b", "c"),
    domain=lambda p, x: bool(np.all(x > 0)),
)
SHIFTED_POWER = ModelSpec(
    "shifted_power", 3, _shifted_power, _shifted_power_jac, ("alpha", "beta", "delta"),
    domain=lambda p, x: bool(np.all(x + p[1] > 0)),
)
MODELS = {m.name: m for m in (LINEAR, TANH_ONSET, POWER_OFFSET, SHIFTED_POWER)}


def get_model(name: str) -> ModelSpec:
    try:
        return MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


# --------------------------------------------------------------------------
# results


@dataclass
class FitResult:
    params: np.ndarray
    std_errs: np.ndarray
    r2: float
    converged: bool
    iterations: int
    residual_norm: float
    model: str = ""
    message: str = ""

    def __getitem__(self, name: str) -> float:
        return float(self.params[get_model(self.model).param_names.index(name)])

    def err(self, name: str) -> float:
        return float(self.std_errs[get_model(self.model).param_names.index(name)])

    def to_dict(self) -> dict:
        names = get_model(self.model).param_names if self.model in MODELS else range(len(self.params))
        return {
            "model": self.model,
            "params": {str(k): float(v) for k, v in zip(names, self.params)},
            "std_errs": {str(k): float(v) for k, v in zip(names, self.std_errs)},
            "r2": self.r2,
            "converged": self.converged,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def r_squared(y: np.ndarray, yhat: np.ndarray) -> float:
    """``1 - SS_res/SS_tot``; 0 for constant data."""
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 0.0
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def _as_xy(x, y, min_len: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} points, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite data")
    return x, y


def linear_fit(x, y) -> FitResult:
    """Ordinary least squares ``y = slope * x + intercept``."""
    x, y = _as_xy(x, y, 3)
    if np.ptp(x) == 0.0:
        raise ValueError("degenerate x: all values equal")
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym))) / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    s2 = ss_res / (n - 2)
    se_slope = math.sqrt(s2 / sxx)
    se_icpt = math.sqrt(s2 * (1.0 / n + xm * xm / sxx))
    return FitResult(
        np.array([slope, intercept]), np.array([se_slope, se_icpt]), r_squared(y, y - resid),
        True, 1, math.sqrt(ss_res), "linear",
    )


def nonlinear_fit(
    model: ModelSpec | str,
    x,
    y,
    init: Sequence[float],
    max_iter: int = 500,
    tol: float = 1e-10,
) -> FitResult:
    """Levenberg-Marquardt minimisation of the sum of squared residuals.

    A trial step is accepted only if it lowers the residual and keeps the
    parameters inside the model domain; otherwise damping is increased.
    Convergence requires both a small relative step and a small scaled
    gradient. Standard errors come from ``s^2 (J^T J)^-1`` at the optimum.
    """
    if isinstance(model, str):
        model = get_model(model)
    x, y = _as_xy(x, y, model.arity + 1)
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    p = np.asarray(init, dtype=float).copy()
    if p.size != model.arity:
        raise ValueError(f"{model.name} takes {model.arity} parameters, got {p.size}")
    if not model.domain(p, x):
        raise ValueError(f"initial parameters {p} outside the {model.name} domain")

    def residual(q):
        with np.errstate(all="ignore"):
            return y - model.evaluator(q, x)

    r = residual(p)
    if not np.all(np.isfinite(r)):
        raise ValueError("model not finite at the initial parameters")
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, max_iter + 1):
        J = model.jacobian(p, x)
        g = J.T @ r
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag == 0.0] = 1.0
        # gradient scaled by the residual and Jacobian column norms
        gscale = np.abs(g) / (np.sqrt(diag) * max(math.sqrt(cost), 1e-300))
        if cost == 0.0 or np.max(gscale) < tol:
            converged, message = True, "gradient below tolerance"
            break
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = p + step
            if model.domain(trial, x):
                rt = residual(trial)
                ct = float(rt @ rt)
                if np.isfinite(ct) and ct < cost:
                    accepted = True
                    break
            lam *= 10.0
        if not accepted:
            # no descent direction at any damping: we are at a minimum to
            # numerical precision
            converged = bool(np.max(gscale) < math.sqrt(tol))
            message = "no improving step" + ("" if converged else " (stalled)")
            break
        rel = np.max(np.abs(step) / np.maximum(np.abs(p), 1e-12))
        small_drop = (cost - ct) <= tol * cost
        p, r, cost = trial, rt, ct
        lam = max(lam / 10.0, 1e-12)
        if rel < tol or (small_drop and rel < math.sqrt(tol)):
            converged, message = True, "relative step below tolerance"
            break

    J = model.jacobian(p, x)
    dof = max(1, x.size - model.arity)
    try:
        cov = np.linalg.inv(J.T @ J) * (cost / dof)
        std = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        std = np.full(model.arity, np.inf)
        converged = False
        message = "singular normal matrix"
    return FitResult(p, std, r_squared(y, y - r), converged, it, math.sqrt(cost), model.name, message)


# --------------------------------------------------------------------------
# initial guesses


def init_tanh_onset(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Half-range amplitude, midpoint crossing and 10-90% rise time."""
    lo, hi = float(np.min(y)), float(np.max(y))
    A = 0.5 * (hi - lo)
    D = 0.5 * (hi + lo)
    if A == 0.0:
        raise ValueError("flat data")

    def first_cross(level):
        return float(t[np.argmax(y >= level)])

    t10, t50, t90 = (first_cross(lo + f * (hi - lo)) for f in (0.1, 0.5, 0.9))
    span = t90 - t10 if t90 > t10 else (t[-1] - t[0]) / 10.0
    B = 2.0 * math.atanh(0.8) / span
    return np.array([A, B, -t50, D])


def init_power_law(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``(a, b, 0)`` from a log-log line through the data, ignoring the offset."""
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return np.array([float(np.mean(y)) or 1.0, 0.5, 0.0])
    lf = linear_fit(np.log(x[ok]), np.log(y[ok])) if ok.sum() >= 3 else None
    if lf is None:
        b = math.log(y[ok][1] / y[ok][0]) / math.log(x[ok][1] / x[ok][0])
        return np.array([y[ok][0] / x[ok][0] ** b, b, 0.0])
    return np.array([math.exp(lf.params[1]), lf.params[0], 0.0])


def fit_power_offset(N, T, **kw) -> FitResult:
    """``T = a N^b + c``."""
    N, T = _as_xy(N, T, 4)
    return nonlinear_fit(POWER_OFFSET, N, T, init_power_law(N, T), **kw)


def fit_shifted_power(N, C, **kw) -> FitResult:
    """``C = alpha (N + beta)^delta``."""
    N, C = _as_xy(N, C, 4)
    a, d, _ = init_power_law(N, C)
    return nonlinear_fit(SHIFTED_POWER, N, C, [a, 0.0, d], **kw)


# --------------------------------------------------------------------------
# depletion onset


class FitRejected(ValueError):
    def __init__(self, message: str, fit: FitResult | None = None):
        super().__init__(message)
        self.fit = fit


class Onset(NamedTuple):
    time: float
    fit: FitResult
    window_end: float


def onset_window_end(t: np.ndarray, y: np.ndarray, rise_fraction: float = 0.8, margin: float | None = None) -> float:
    """End of the stretch covering the initial rise of ``y``.

    Uses twice the time to reach ``rise_fraction`` of the early maximum (the
    maximum over the first half of the record), plus ``margin``.
    """
    half = max(2, t.size // 2)
    y0 = y[0]
    peak = float(np.max(y[:half]))
    if peak <= y0:
        return float(t[-1])
    t80 = float(t[np.argmax(y >= y0 + rise_fraction * (peak - y0))])
    if margin is None:
        margin = (t[-1] - t[0]) / 200.0
    return float(min(t[-1], 2.0 * (t80 - t[0]) + t[0] + margin))


def depletion_onset_time(
    depletion: TimeSeries,
    *,
    window_end: float | str | None = "auto",
    time_unit: float = 1.0,
    r2_min: float = 0.9,
    margin: float | None = None,
) -> Onset:
    """Turning point ``-C`` of ``A tanh(B (t + C)) + D`` fitted to a depletion rise.

    ``window_end="auto"`` restricts the fit to the initial rise (see
    :func:`onset_window_end`); ``None`` fits the whole record. Times are
    divided by ``time_unit`` during the fit, and the result is returned in
    the original units. Raises :class:`FitRejected` when the curve has no
    rise, ``R^2 < r2_min`` or the turning point lies outside the window.
    """
    t = depletion.times / time_unit
    y = depletion.values
    if window_end == "auto":
        end = onset_window_end(t, y, margin=None if margin is None else margin / time_unit)
    elif window_end is None:
        end = float(t[-1])
    else:
        end = float(window_end) / time_unit
    sel = t <= end
    ts, ys = t[sel], y[sel]
    if ts.size < 8:
        raise FitRejected("too few samples in the onset window")
    if np.max(ys) - ys[0] <= 0.0 or np.argmax(ys) == 0:
        raise FitRejected("series does not rise: no onset")
    fit = nonlinear_fit(TANH_ONSET, ts, ys, init_tanh_onset(ts, ys))
    turning = -fit.params[2]
    if fit.r2 < r2_min:
        raise FitRejected(f"tanh fit R^2 = {fit.r2:.3f} < {r2_min}", fit)
    if not ts[0] <= turning <= ts[-1]:
        raise FitRejected(f"turning point {turning:.3g} outside [{ts[0]:.3g}, {ts[-1]:.3g}]", fit)
    return Onset(turning * time_unit, fit, end * time_unit)


# --------------------------------------------------------------------------
# revivals


class Revival(NamedTuple):
    time: float  # nan when no revival is found
    found: bool
    decayed: bool
    start: float = math.nan
    stop: float = math.nan


NO_REVIVAL = math.nan


def running_max(x: np.ndarray, width: int) -> np.ndarray:
    """Centered running maximum over ``width`` samples."""
    if width <= 1:
        return x.copy()
    from numpy.lib.stride_tricks import sliding_window_view

    h = width // 2
    padded = np.pad(x, (h, width - 1 - h), mode="edge")
    return sliding_window_view(padded, width).max(axis=1)


def revival_time(
    fidelity: TimeSeries,
    threshold: float = 0.75,
    *,
    burn_in_level: float = 0.5,
    envelope_window: float | None = None,
) -> Revival:
    """Mean time of the first above-threshold revival after the initial decay.

    The search starts once the fidelity first drops below ``burn_in_level``.
    With ``envelope_window`` set (in time units), the decision is made on the
    running maximum over that window, so that fast oscillations under a slow
    envelope count as one revival; the returned time is still the mean over
    raw samples above ``threshold`` inside the revival.
    A revival that is never found gives ``time = nan`` and ``found = False``;
    ``decayed = False`` additionally means the burn-in never ended.
    """
    f = fidelity.values
    t = fidelity.times
    if np.any(f < -1e-9) or np.any(f > 1 + 1e-9):
        raise ValueError("fidelity outside [0, 1]")
    width = 1 if envelope_window is None else max(1, int(round(envelope_window / fidelity.dt)))
    env = running_max(f, width)
    below = np.nonzero(env < burn_in_level)[0]
    if below.size == 0:
        return Revival(NO_REVIVAL, False, False)
    i0 = below[0]
    above = np.nonzero(env[i0:] >= threshold)[0]
    if above.size == 0:
        return Revival(NO_REVIVAL, False, True)
    a = i0 + above[0]
    gaps = np.nonzero(env[a:] < threshold)[0]
    b = a + gaps[0] if gaps.size else f.size
    raw = np.nonzero(f[a:b] >= threshold)[0] + a
    if raw.size == 0:
        return Revival(NO_REVIVAL, False, True)
    return Revival(float(t[raw].mean()), True, True, float(t[a]), float(t[b - 1]))
