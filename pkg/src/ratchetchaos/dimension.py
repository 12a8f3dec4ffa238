"""Delay embedding and correlation dimension (Grassberger-Procaccia).

Distances use the maximum norm. Pairs closer in time than the Theiler
window are excluded from the correlation sum.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numba
import numpy as np

from .meanfield import TimeSeries


class DegenerateSeriesWarning(UserWarning):
    pass


class DimensionError(RuntimeError):
    """No usable scaling region or no plateau in embedding dimension."""


def _values(series) -> np.ndarray:
    return series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)


# --------------------------------------------------------------------------
# delay selection


def _bin_indices(x: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = x.min(), x.max()
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def _mi_from_indices(a: np.ndarray, b: np.ndarray, bins: int) -> float:
    joint = np.bincount(a * bins + b, minlength=bins * bins).astype(float)
    joint /= joint.sum()
    pa = joint.reshape(bins, bins).sum(axis=1)
    pb = joint.reshape(bins, bins).sum(axis=0)
    outer = np.outer(pa, pb).ravel()
    nz = joint > 0
    return float(max(0.0, np.sum(joint[nz] * np.log(joint[nz] / outer[nz]))))


def mutual_information(series, lag: int, bins: int = 64) -> float:
    """Histogram estimate (nats) of the mutual information of ``x_t`` and ``x_{t+lag}``.

    Both axes use the same ``bins`` equal-width bins over the series range.
    A constant series carries no information; 0 is returned with a warning.
    """
    x = _values(series)
    if lag < 0 or bins < 4:
        raise ValueError("need lag >= 0 and bins >= 4")
    if x.size - lag < 100:
        raise ValueError("series too short for this lag")
    if np.ptp(x) == 0.0:
        warnings.warn("constant series has zero entropy", DegenerateSeriesWarning, stacklevel=2)
        return 0.0
    idx = _bin_indices(x, bins)
    return _mi_from_indices(idx[: x.size - lag], idx[lag:], bins)


def mutual_information_curve(series, max_lag: int, bins: int = 64) -> np.ndarray:
    """Mutual information for lags ``0..max_lag``."""
    x = _values(series)
    if np.ptp(x) == 0.0:
        raise ValueError("constant series: mutual information undefined")
    idx = _bin_indices(x, bins)
    return np.array([_mi_from_indices(idx[: x.size - k], idx[k:], bins) for k in range(max_lag + 1)])


class DelayChoice(NamedTuple):
    tau: int
    interior_minimum: bool
    mi: np.ndarray


def select_delay(series, max_lag: int | None = None, bins: int = 64, flat_tol: float = 0.02) -> DelayChoice:
    """First local minimum of the mutual information.

    A curve whose variation over lags ``1..max_lag`` is below ``flat_tol``
    times the marginal entropy carries no delay information (white noise):
    lag 1 is returned with ``interior_minimum=False`` and a warning. Without
    an interior minimum the global minimum over ``[1, max_lag]`` is returned,
    also flagged.
    """
    x = _values(series)
    if max_lag is None:
        max_lag = x.size // 10 - 1
    if max_lag < 2 or max_lag >= x.size / 10:
        raise ValueError(f"max_lag must be in [2, N/10); got {max_lag} for N={x.size}")
    mi = mutual_information_curve(x, max_lag, bins)
    if np.ptp(mi[1:]) <= flat_tol * mi[0]:
        warnings.warn("mutual information is flat; using lag 1", DegenerateSeriesWarning, stacklevel=2)
        return DelayChoice(1, False, mi)
    for lag in range(1, max_lag):
        if mi[lag - 1] > mi[lag] <= mi[lag + 1]:
            return DelayChoice(lag, True, mi)
    warnings.warn("no interior minimum of the mutual information", DegenerateSeriesWarning, stacklevel=2)
    return DelayChoice(1 + int(np.argmin(mi[1:])), False, mi)


def delay_embed(series, m: int, tau: int) -> np.ndarray:
    """Delay vectors ``(x_i, x_{i+tau}, ..., x_{i+(m-1)tau})`` as rows."""
    x = _values(series)
    n = x.size - (m - 1) * tau
    if m < 1 or tau < 1:
        raise ValueError("m and tau must be positive")
    if n < m:
        raise ValueError(f"series of length {x.size} too short for m={m}, tau={tau}")
    return np.stack([x[k * tau : k * tau + n] for k in range(m)], axis=1)


# --------------------------------------------------------------------------
# correlation sum


@numba.njit(cache=True)
def _count_row(pts, j, k_lo, k_hi, eps, counts):
    m = pts.shape[1]
    emax = eps[-1]
    for k in range(k_lo, k_hi):
        d = 0.0
        for a in range(m):
            diff = abs(pts[j, a] - pts[k, a])
            if diff > d:
                d = diff
                if d >= emax:
                    break
        if d >= emax:
            counts[eps.size] += 1
        else:
            counts[np.searchsorted(eps, d, side="right")] += 1


@numba.njit(cache=True)
def _pair_counts_all(pts, eps, w):
    n = pts.shape[0]
    counts = np.zeros(eps.size + 1, np.int64)
    for j in range(w + 1, n):
        _count_row(pts, j, 0, j - w, eps, counts)
    return counts


@numba.njit(cache=True)
def _pair_counts_rows(pts, eps, w, rows, selected):
    # each pair (j, k) with |j - k| > w is seen once: from j if j is a selected
    # row, and from k only when k is selected but j is not
    n = pts.shape[0]
    counts = np.zeros(eps.size + 1, np.int64)
    npairs = 0
    for r in range(rows.size):
        j = rows[r]
        lo = j + w + 1
        if j - w > 0:
            _count_row(pts, j, 0, j - w, eps, counts)
            npairs += j - w
        for k in range(lo, n):
            if selected[k]:
                continue
            d = 0.0
            for a in range(pts.shape[1]):
                diff = abs(pts[j, a] - pts[k, a])
                if diff > d:
                    d = diff
                    if d >= eps[-1]:
                        break
            if d >= eps[-1]:
                counts[eps.size] += 1
            else:
                counts[np.searchsorted(eps, d, side="right")] += 1
            npairs += 1
    return counts, npairs


def total_pairs(n_points: int, theiler_w: int) -> int:
    k = max(0, n_points - theiler_w - 1)
    return k * (k + 1) // 2


class CorrelationSum(NamedTuple):
    epsilons: np.ndarray
    C: np.ndarray
    pair_counts: np.ndarray  # pairs closer than each epsilon
    n_pairs: int
    subsampled: bool
    degenerate: bool


def correlation_sum(
    points: np.ndarray,
    epsilons: Sequence[float],
    theiler_w: int = 0,
    max_pairs: int | None = None,
    seed: int = 0,
) -> CorrelationSum:
    """Fraction of pairs ``(j, k)``, ``j - k > w``, with ``max|v_j - v_k| < eps``.

    If the number of admissible pairs exceeds ``max_pairs``, a uniformly
    random subset of reference rows is used; every admissible pair touching a
    selected row is counted exactly once, so pairs are sampled uniformly.
    """
    pts = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    if pts.shape[0] == 1 and np.ndim(points) == 1:
        pts = pts.T
    eps = np.asarray(epsilons, dtype=float)
    if theiler_w < 0:
        raise ValueError("theiler_w must be >= 0")
    if np.any(eps <= 0) or np.any(np.diff(eps) <= 0):
        raise ValueError("epsilons must be positive and strictly ascending")
    n = pts.shape[0]
    full = total_pairs(n, theiler_w)
    if full == 0:
        raise ValueError("no admissible pairs; series too short for this Theiler window")
    if max_pairs is None or full <= max_pairs:
        counts = _pair_counts_all(pts, eps, int(theiler_w))
        npairs, subsampled = full, False
    else:
        rng = np.random.default_rng(seed)
        # each selected row contributes about 2 * full / n pairs
        n_rows = max(1, min(n, int(math.ceil(max_pairs * n / (2.0 * full)))))
        rows = np.sort(rng.choice(n, size=n_rows, replace=False))
        selected = np.zeros(n, dtype=np.bool_)
        selected[rows] = True
        counts, npairs = _pair_counts_rows(pts, eps, int(theiler_w), rows, selected)
        subsampled = True
    below = np.cumsum(counts[:-1])
    C = below / npairs
    degenerate = bool(counts[0] == npairs)  # every pair at zero distance
    return CorrelationSum(eps, C, below, int(npairs), subsampled, degenerate)


# --------------------------------------------------------------------------
# scaling region and dimension


class ScalingRegion(NamedTuple):
    lo: int
    hi: int  # inclusive
    slope: float
    slope_err: float
    r2: float
    intercept: float


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float]:
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    sxy = np.sum((x - xm) * (y - ym))
    syy = np.sum((y - ym) ** 2)
    slope = sxy / sxx
    intercept = ym - slope * xm
    ss_res = max(0.0, syy - slope * sxy)
    r2 = 1.0 - ss_res / syy if syy > 0 else 0.0
    err = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else math.inf
    return slope, intercept, err, r2


def find_scaling_region(
    log_eps: Sequence[float],
    log_C: Sequence[float],
    r2_min: float = 0.99,
    min_points: int = 5,
) -> ScalingRegion | None:
    """Longest contiguous window with ``R^2 >= r2_min``; ties go to the smallest slope error.

    Non-finite ``log_C`` entries (empty radii) are dropped first. Indices in
    the result refer to the input arrays. Returns ``None`` if no window
    qualifies.
    """
    le = np.asarray(log_eps, dtype=float)
    lc = np.asarray(log_C, dtype=float)
    keep = np.nonzero(np.isfinite(lc) & np.isfinite(le))[0]
    x, y = le[keep], lc[keep]
    best = None
    for length in range(x.size, min_points - 1, -1):
        for start in range(0, x.size - length + 1):
            sl = slice(start, start + length)
            if np.ptp(y[sl]) == 0.0:
                continue
            slope, icpt, err, r2 = _linfit(x[sl], y[sl])
            if r2 >= r2_min and (best is None or err < best.slope_err):
                best = ScalingRegion(int(keep[start]), int(keep[start + length - 1]), slope, err, r2, icpt)
        if best is not None:
            return best
    return None


@dataclass
class EmbeddingConfig:
    delay_tau: int
    theiler_w: int
    dims_m: Sequence[int] = tuple(range(2, 13))
    epsilon_grid: Sequence[float] | None = None
    n_eps: int = 40
    eps_span: tuple[float, float] = (1e-3, 1.0)
    r2_min: float = 0.99
    max_pairs: int | None = 500_000_000
    seed: int = 0
    plateau_tol: float = 0.15
    plateau_min_len: int = 3
    min_pair_count: int = 10

    def validate(self, n: int) -> None:
        if self.delay_tau < 1 or self.theiler_w < 0:
            raise ValueError("delay_tau must be >= 1 and theiler_w >= 0")
        dims = list(self.dims_m)
        if dims != sorted(set(dims)) or dims[0] < 1:
            raise ValueError("dims_m must be ascending, distinct and positive")
        if max(dims) * self.delay_tau >= n:
            raise ValueError(f"max(dims_m) * delay_tau = {max(dims) * self.delay_tau} >= series length {n}")
        grid = self.epsilon_grid
        if grid is not None:
            g = np.asarray(grid, dtype=float)
            if g.size < 12 or np.any(g <= 0):
                raise ValueError("epsilon_grid needs >= 12 positive radii")
        elif self.n_eps < 12:
            raise ValueError("n_eps must be >= 12")


@dataclass
class DimensionRow:
    m: int
    slope: float
    slope_err: float
    scaling_lo: float
    scaling_hi: float
    r2: float
    accepted: bool


@dataclass
class DimensionEstimate:
    d2: float
    d2_err: float
    per_m: list[DimensionRow]
    plateau_start_m: int
    label: str = ""
    tau: int = 0
    w: int = 0
    seed: int = 0
    sums: dict[int, CorrelationSum] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "tau": self.tau,
            "w": self.w,
            "seed": self.seed,
            "d2": self.d2,
            "d2_err": self.d2_err,
            "plateau_start_m": self.plateau_start_m,
            "per_m": [vars(r) for r in self.per_m],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def sums_csv(self) -> str:
        lines = ["m,epsilon,C"]
        for m, cs in sorted(self.sums.items()):
            lines += [f"{m},{e:.10g},{c:.10g}" for e, c in zip(cs.epsilons, cs.C)]
        return "\n".join(lines) + "\n"


def default_theiler_window(n: int) -> int:
    return int(math.ceil(math.sqrt(n)))


def epsilon_grid_for(points: np.ndarray, n_eps: int = 40, span: tuple[float, float] = (1e-3, 1.0)) -> np.ndarray:
    """Log-spaced radii spanning ``span`` times the max-norm diameter."""
    diameter = float(np.max(np.ptp(points, axis=0)))
    if diameter == 0.0:
        raise ValueError("all points coincide")
    return diameter * np.logspace(math.log10(span[0]), math.log10(span[1]), n_eps)


def plateau_start(slopes: Sequence[float], tol: float, min_len: int) -> int | None:
    """Earliest index after which every consecutive slope change is within ``tol``."""
    s = np.asarray(slopes, dtype=float)
    for i in range(0, s.size - min_len + 1):
        if np.all(np.abs(np.diff(s[i:])) <= tol):
            return i
    return None


def slopes_by_dimension(series, config: EmbeddingConfig) -> tuple[list[DimensionRow], dict[int, CorrelationSum]]:
    x = _values(series)
    config.validate(x.size)
    rows, sums = [], {}
    for m in config.dims_m:
        pts = delay_embed(x, m, config.delay_tau)
        eps = (np.asarray(config.epsilon_grid, dtype=float) if config.epsilon_grid is not None
               else epsilon_grid_for(pts, config.n_eps, config.eps_span))
        cs = correlation_sum(pts, eps, config.theiler_w, config.max_pairs, config.seed + m)
        sums[m] = cs
        with np.errstate(divide="ignore"):
            logC = np.where(cs.pair_counts >= config.min_pair_count, np.log(cs.C), -np.inf)
        # radii at which every pair is already counted carry no scaling information
        logC[cs.pair_counts >= cs.n_pairs] = -np.inf
        region = find_scaling_region(np.log(eps), logC, config.r2_min)
        if region is None:
            rows.append(DimensionRow(m, math.nan, math.nan, math.nan, math.nan, math.nan, False))
        else:
            rows.append(DimensionRow(m, region.slope, region.slope_err, float(eps[region.lo]),
                                     float(eps[region.hi]), region.r2, True))
    return rows, sums


def correlation_dimension(series, config: EmbeddingConfig) -> DimensionEstimate:
    """Correlation dimension from the plateau of scaling slopes over ``m``.

    The estimate is the mean slope over the plateau; its error combines the
    mean fit error with the spread of the plateau slopes in quadrature.
    Raises :class:`DimensionError` when no plateau is found.
    """
    rows, sums = slopes_by_dimension(series, config)
    good = [r for r in rows if r.accepted]
    if len(good) < config.plateau_min_len:
        raise DimensionError(f"only {len(good)} embedding dimensions passed the R^2 filter")
    slopes = [r.slope for r in good]
    start = plateau_start(slopes, config.plateau_tol, config.plateau_min_len)
    if start is None:
        raise DimensionError(f"no plateau in slopes {np.round(slopes, 3).tolist()}")
    plat = good[start:]
    s = np.array([r.slope for r in plat])
    e = np.array([r.slope_err for r in plat])
    fit_err = math.sqrt(np.sum(e**2)) / s.size
    spread = float(np.std(s, ddof=1)) if s.size > 1 else 0.0
    label = series.label if isinstance(series, TimeSeries) else ""
    return DimensionEstimate(
        float(s.mean()), math.hypot(fit_err, spread), rows, plat[0].m, label,
        config.delay_tau, config.theiler_w, config.seed, sums,
    )
