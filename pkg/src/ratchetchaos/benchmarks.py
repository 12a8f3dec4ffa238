"""Reference signals with known chaos and dimension properties."""
from __future__ import annotations

import numba
import numpy as np

from .meanfield import TimeSeries


@numba.njit(cache=True)
def _lorenz_rk4(state, dt, n_steps, stride, sigma, rho, beta):
    x, y, z = state[0], state[1], state[2]
    out = np.empty((n_steps // stride, 3))
    k = 0
    for i in range(n_steps):
        k1x = sigma * (y - x)
        k1y = x * (rho - z) - y
        k1z = x * y - beta * z
        x2, y2, z2 = x + 0.5 * dt * k1x, y + 0.5 * dt * k1y, z + 0.5 * dt * k1z
        k2x = sigma * (y2 - x2)
        k2y = x2 * (rho - z2) - y2
        k2z = x2 * y2 - beta * z2
        x3, y3, z3 = x + 0.5 * dt * k2x, y + 0.5 * dt * k2y, z + 0.5 * dt * k2z
        k3x = sigma * (y3 - x3)
        k3y = x3 * (rho - z3) - y3
        k3z = x3 * y3 - beta * z3
        x4, y4, z4 = x + dt * k3x, y + dt * k3y, z + dt * k3z
        k4x = sigma * (y4 - x4)
        k4y = x4 * (rho - z4) - y4
        k4z = x4 * y4 - beta * z4
        x += dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        y += dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        z += dt / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
        if (i + 1) % stride == 0 and k < out.shape[0]:
            out[k, 0] = x
            out[k, 1] = y
            out[k, 2] = z
            k += 1
    return out


def lorenz(
    n_samples: int,
    dt: float = 0.01,
    sample_stride: int = 1,
    transient: float = 50.0,
    initial=(1.0, 1.0, 1.0),
    sigma: float = 10.0,
    rho: float = 28.0,
    beta: float = 8.0 / 3.0,
) -> np.ndarray:
    """Lorenz trajectory by fixed-step RK4, shape ``(n_samples, 3)``.

    The first ``transient`` time units are discarded.
    """
    skip = int(round(transient / dt))
    warm = _lorenz_rk4(np.asarray(initial, dtype=float), dt, skip, max(1, skip), sigma, rho, beta)
    start = warm[-1] if skip > 0 else np.asarray(initial, dtype=float)
    return _lorenz_rk4(start, dt, n_samples * sample_stride, sample_stride, sigma, rho, beta)


def lorenz_x(n_samples: int, dt: float = 0.01, sample_stride: int = 1, **kw) -> TimeSeries:
    return TimeSeries(dt * sample_stride, lorenz(n_samples, dt, sample_stride, **kw)[:, 0], "lorenz_x")


def logistic_map(n_samples: int, r: float = 3.97, x0: float = 0.4, transient: int = 1000) -> np.ndarray:
    x = x0
    for _ in range(transient):
        x = r * x * (1.0 - x)
    out = np.empty(n_samples)
    for i in range(n_samples):
        x = r * x * (1.0 - x)
        out[i] = x
    return out


def henon_map(n_samples: int, a: float = 1.4, b: float = 0.3, transient: int = 1000) -> np.ndarray:
    """x-coordinate of the Henon map."""
    x, y = 0.1, 0.1
    out = np.empty(n_samples)
    for i in range(n_samples + transient):
        x, y = 1.0 - a * x * x + y, b * x
        if i >= transient:
            out[i - transient] = x
    return out


def sine(n_samples: int, period_samples: float = 100.0, phase: float = 0.0) -> np.ndarray:
    return np.sin(2.0 * np.pi * np.arange(n_samples) / period_samples + phase)


def circle_points(n: int, seed: int = 0) -> np.ndarray:
    """Uniform random points on the unit circle."""
    theta = np.random.default_rng(seed).uniform(0.0, 2.0 * np.pi, n)
    return np.stack([np.cos(theta), np.sin(theta)], axis=1)


def square_points(n: int, seed: int = 0) -> np.ndarray:
    """I.i.d. uniform points in the unit square."""
    return np.random.default_rng(seed).uniform(0.0, 1.0, (n, 2))
