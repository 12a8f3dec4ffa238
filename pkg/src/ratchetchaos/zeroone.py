"""Binary 0-1 test for chaos.

A scalar record ``x`` is projected onto a plane,

    p_j = sum_{i<=j} x_i cos(i c),    q_j = sum_{i<=j} x_i sin(i c),

and the growth of the mean squared displacement of ``(p, q)`` with lag
is correlated against the lag itself. Bounded (regular) motion gives
``K ~ 0``; diffusive (chaotic) motion gives ``K ~ 1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .meanfield import TimeSeries

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0


class PQTrajectory(NamedTuple):
    c: float
    p: np.ndarray
    q: np.ndarray


@dataclass
class ZeroOneResult:
    K_median: float
    K_per_c: list[tuple[float, float]]
    c_max: float
    label: str = ""
    degenerate: bool = False
    n_c: int = field(init=False)

    def __post_init__(self):
        self.n_c = len(self.K_per_c)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "K_median": self.K_median,
            "c_max": self.c_max,
            "n_c": self.n_c,
            "degenerate": self.degenerate,
            "per_c": [{"c": c, "K": k} for c, k in self.K_per_c],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _values(series) -> np.ndarray:
    return series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)


def pq_map(series, c: float) -> PQTrajectory:
    x = _values(series)
    if not 0.0 < c < math.pi:
        raise ValueError(f"c must lie in (0, pi), got {c}")
    if x.size < 10:
        raise ValueError("need at least 10 samples")
    i = np.arange(1, x.size + 1)
    return PQTrajectory(c, np.cumsum(x * np.cos(i * c)), np.cumsum(x * np.sin(i * c)))


def _oscillatory_term(mean: float, j: np.ndarray, c: float) -> np.ndarray:
    return mean**2 * (1.0 - np.cos(j * c)) / (1.0 - math.cos(c))


def modified_msd(series, pq: PQTrajectory, j: int) -> float:
    """``M(j)`` by direct summation over all ``N - j`` displacement pairs.

    The counter-oscillatory term is subtracted: it cancels the bounded
    ``(1 - cos jc)`` growth that a nonzero mean adds to the displacement,
    which makes ``K_c`` independent of a constant offset in the input.
    """
    x = _values(series)
    n_max = x.size // 10
    if not 1 <= j <= n_max:
        raise ValueError(f"lag j={j} outside [1, {n_max}]")
    dp = pq.p[j:] - pq.p[:-j]
    dq = pq.q[j:] - pq.q[:-j]
    return float(np.mean(dp**2 + dq**2) - _oscillatory_term(x.mean(), np.array(j), pq.c))


def _msd_fft(p: np.ndarray, n_lags: int) -> np.ndarray:
    """Mean of ``(p[i+j] - p[i])**2`` over i for j = 1..n_lags, exact, O(N log N)."""
    N = p.size
    nfft = 1 << (2 * N - 1).bit_length()
    f = np.fft.rfft(p, nfft)
    acf = np.fft.irfft(f * np.conj(f), nfft)[1 : n_lags + 1]
    sq = np.concatenate([[0.0], np.cumsum(p * p)])
    j = np.arange(1, n_lags + 1)
    total = (sq[N] - sq[j]) + sq[N - j] - 2.0 * acf
    return total / (N - j)


def _msd_direct(p: np.ndarray, n_lags: int, stride: int) -> np.ndarray:
    out = np.empty(n_lags)
    for j in range(1, n_lags + 1):
        d = p[j::stride] - p[: p.size - j : stride]
        out[j - 1] = np.mean(d * d)
    return out


def msd_curve(series, pq: PQTrajectory, *, stride: int = 1, method: str = "fft") -> np.ndarray:
    """``M(j)`` for ``j = 1 .. floor(N/10)``.

    ``method="fft"`` is exact. ``method="direct"`` averages over every
    ``stride``-th starting index, which is cheaper in memory but only an
    estimate when ``stride > 1``.
    """
    x = _values(series)
    n_lags = x.size // 10
    if method == "fft":
        d = _msd_fft(pq.p, n_lags) + _msd_fft(pq.q, n_lags)
    elif method == "direct":
        d = _msd_direct(pq.p, n_lags, stride) + _msd_direct(pq.q, n_lags, stride)
    else:
        raise ValueError(f"unknown method {method!r}")
    return d - _oscillatory_term(x.mean(), np.arange(1, n_lags + 1), pq.c)


def correlation_coefficient(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """Pearson correlation; ``(0.0, True)`` when either vector has no spread."""
    da = a - a.mean()
    db = b - b.mean()
    va = float(np.dot(da, da))
    vb = float(np.dot(db, db))
    scale = max(float(np.dot(b, b)), 1e-300)
    if va == 0.0 or vb <= 1e-24 * scale:
        return 0.0, True
    return float(np.clip(np.dot(da, db) / math.sqrt(va * vb), -1.0, 1.0)), False


def _kc(x: np.ndarray, c: float, stride: int = 1, method: str = "fft") -> tuple[float, bool]:
    if np.ptp(x) == 0.0:
        return 0.0, True
    pq = pq_map(x, c)
    m = msd_curve(x, pq, stride=stride, method=method)
    lags = np.arange(1, m.size + 1, dtype=float)
    return correlation_coefficient(lags, m)


def kc_statistic(series, c: float, *, stride: int = 1, method: str = "fft") -> float:
    """Correlation between lag and modified MSD for one value of ``c``.

    Returns 0 for degenerate input (no growth at all, e.g. a constant record).
    """
    return _kc(_values(series), c, stride, method)[0]


def golden_c_values(c_max: float, n_c: int = 100) -> np.ndarray:
    """``c_max * frac(k * phi)`` for k = 1..n_c, sorted and deduplicated.

    Fractional parts of golden-ratio multiples are distinct and evenly spread
    over (0, 1), so the values never coincide and avoid low-order resonances.
    """
    k = np.arange(1, n_c + 1)
    frac = np.mod(k * GOLDEN_RATIO, 1.0)
    return np.unique(c_max * frac)


def near_rational_ratio(c_values: Sequence[float], c_ref: float, *, max_denominator: int = 12, tol: float = 1e-6) -> list[float]:
    """Members of ``c_values`` within ``tol`` of ``(p/q) * c_ref`` for small q."""
    bad = []
    for c in c_values:
        r = c / c_ref
        approx = Fraction(r).limit_denominator(max_denominator)
        if abs(r - float(approx)) < tol:
            bad.append(float(c))
    return bad


def rabi_fmax(rabi_period: float) -> float:
    """Upper frequency cut ``2 phi / T_R`` (cycles per unit time)."""
    return 2.0 * GOLDEN_RATIO / rabi_period


def spectral_cutoff(series: TimeSeries, power_fraction: float = 0.99) -> float:
    """Lowest frequency below which ``power_fraction`` of the non-DC power lies."""
    x = series.values - series.values.mean()
    power = np.abs(np.fft.rfft(x)) ** 2
    power[0] = 0.0
    total = power.sum()
    freqs = np.fft.rfftfreq(x.size, d=series.dt)
    if total == 0.0:
        return float(freqs[-1])
    cum = np.cumsum(power) / total
    return float(freqs[np.searchsorted(cum, power_fraction)])


def zero_one_test(
    series,
    sample_freq_fs: float | None = None,
    f_max: float | None = None,
    n_c: int = 100,
    *,
    stride: int = 1,
    method: str = "fft",
) -> ZeroOneResult:
    """Median ``K_c`` over golden-ratio spaced ``c`` in ``(0, c_max)``.

    ``c_max = 2 pi f_max / f_s``. With ``f_max=None`` the full range
    ``(0, pi)`` is used. ``sample_freq_fs`` defaults to ``1/dt`` for a
    :class:`TimeSeries`.
    """
    x = _values(series)
    label = series.label if isinstance(series, TimeSeries) else ""
    if sample_freq_fs is None:
        if not isinstance(series, TimeSeries):
            raise ValueError("sample_freq_fs is required for bare arrays")
        sample_freq_fs = series.sample_freq
    if n_c < 10:
        raise ValueError("use at least 10 values of c")
    if f_max is None:
        c_max = math.pi
    else:
        c_max = 2.0 * math.pi * f_max / sample_freq_fs
        if c_max >= math.pi:
            raise ValueError(
                f"c_max = {c_max:.3f} >= pi: sampling too coarse for f_max={f_max} (f_s={sample_freq_fs})"
            )
    cs = golden_c_values(c_max, n_c)
    per_c = []
    flags = []
    for c in cs:
        k, degenerate = _kc(x, float(c), stride, method)
        per_c.append((float(c), k))
        flags.append(degenerate)
    K = float(np.median([k for _, k in per_c]))
    return ZeroOneResult(K, per_c, c_max, label, degenerate=all(flags))
