"""Mean-field dynamics of the driven ring condensate.

Two models are integrated here:

* the driven discrete nonlinear Schroedinger equation (DNLS) on an
  ``L``-site ring, and
* the three-mode Gross-Pitaevskii model (3GP) over the angular momentum
  modes ``(+, 0, -)``.

Units are "hopping units" by default (``hbar = J = 1``); both constants are
carried by :class:`RatchetParams` so dimensions can be restored.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numba
import numpy as np

# default drive amplitudes, in units of J
DEFAULT_E_PLUS = 0.0225
DEFAULT_E_MINUS = 0.0075

NORM_TOL = 1e-10


class IntegrationError(ArithmeticError):
    """Raised when an integrator produces non-finite amplitudes."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite amplitude at step {step}; dt too large?")


@dataclass(frozen=True)
class RatchetParams:
    """Physical, drive and discretization parameters of the ratchet.

    ``coupling_g`` is the mean-field interaction ``N U / J``. When
    ``drive_freq_omega`` is left as ``None`` the resonant value
    ``2 J [1 - cos(2 pi / L)] / hbar`` is used.
    """

    hop_J: float = 1.0
    drive_plus_E: float | None = None
    drive_minus_E: float | None = None
    drive_freq_omega: float | None = None
    sites_L: int = 6
    coupling_g: float = 0.0
    hbar: float = 1.0

    def __post_init__(self):
        if self.hop_J <= 0 or self.hbar <= 0:
            raise ValueError("hop_J and hbar must be positive")
        if self.drive_plus_E is None:
            object.__setattr__(self, "drive_plus_E", DEFAULT_E_PLUS * self.hop_J)
        if self.drive_minus_E is None:
            object.__setattr__(self, "drive_minus_E", DEFAULT_E_MINUS * self.hop_J)
        if self.drive_freq_omega is None:
            omega = 2.0 * self.hop_J * (1.0 - math.cos(2.0 * math.pi / self.sites_L)) / self.hbar
            object.__setattr__(self, "drive_freq_omega", omega)
        if int(self.sites_L) != self.sites_L or self.sites_L < 3:
            raise ValueError(f"sites_L must be an integer >= 3, got {self.sites_L}")
        object.__setattr__(self, "sites_L", int(self.sites_L))
        for name in ("drive_plus_E", "drive_minus_E", "coupling_g"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def interaction_NU(self) -> float:
        return self.coupling_g * self.hop_J

    @property
    def rabi_freq(self) -> float:
        """Angular Rabi frequency ``sqrt(E+^2 + E-^2) / hbar``."""
        return math.hypot(self.drive_plus_E, self.drive_minus_E) / self.hbar

    @property
    def rabi_period(self) -> float:
        return 2.0 * math.pi / self.rabi_freq

    @property
    def drive_period(self) -> float:
        return 2.0 * math.pi / self.drive_freq_omega

    @property
    def default_dt(self) -> float:
        return self.drive_period / 200.0

    def replace(self, **changes) -> "RatchetParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TimeSeries:
    """Uniformly sampled real observable. ``t0`` is the time of the first sample."""

    dt: float
    values: np.ndarray
    label: str = ""
    t0: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.values.ndim != 1 or self.values.size < 2:
            raise ValueError("a time series needs at least two samples")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"time series {self.label!r} contains non-finite values")

    def __len__(self):
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    @property
    def sample_freq(self) -> float:
        return 1.0 / self.dt

    def normalized(self) -> "TimeSeries":
        """Divide by the maximum absolute value over the record."""
        peak = np.max(np.abs(self.values))
        vals = self.values / peak if peak > 0 else self.values.copy()
        return TimeSeries(self.dt, vals, self.label, self.t0)

    def decimate(self, stride: int) -> "TimeSeries":
        return TimeSeries(self.dt * stride, self.values[::stride], self.label, self.t0)

    def window(self, t_start: float, t_stop: float) -> "TimeSeries":
        t = self.times
        mask = (t >= t_start) & (t <= t_stop)
        first = int(np.argmax(mask))
        return TimeSeries(self.dt, self.values[mask], self.label, float(t[first]))


def check_normalized(amps: np.ndarray, tol: float = NORM_TOL) -> np.ndarray:
    amps = np.asarray(amps, dtype=complex)
    norm = float(np.sum(np.abs(amps) ** 2))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"state norm {norm!r} differs from 1 by more than {tol}")
    return amps


# --------------------------------------------------------------------------
# right-hand sides


def drive_potential(site_index: int, t: float, params: RatchetParams) -> float:
    """Drive ``V_j(t) = E+ cos(theta_j - w t) + E- cos(theta_j + w t)``."""
    if not 0 <= site_index < params.sites_L:
        raise IndexError(f"site {site_index} outside ring of {params.sites_L} sites")
    theta = 2.0 * math.pi * site_index / params.sites_L
    wt = params.drive_freq_omega * t
    return params.drive_plus_E * math.cos(theta - wt) + params.drive_minus_E * math.cos(theta + wt)


def drive_profile(t: float, params: RatchetParams) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(params.sites_L) / params.sites_L
    wt = params.drive_freq_omega * t
    return params.drive_plus_E * np.cos(theta - wt) + params.drive_minus_E * np.cos(theta + wt)


def dnls_rhs(state: np.ndarray, t: float, params: RatchetParams) -> np.ndarray:
    """Time derivative of the lattice amplitudes under the driven DNLS."""
    phi = np.asarray(state, dtype=complex)
    hop = np.roll(phi, -1) + np.roll(phi, 1)
    h_phi = (
        -params.hop_J * hop
        + drive_profile(t, params) * phi
        + params.interaction_NU * np.abs(phi) ** 2 * phi
    )
    return -1j / params.hbar * h_phi


def dnls_local_rhs(state: np.ndarray, t: float, params: RatchetParams) -> np.ndarray:
    """The on-site part of :func:`dnls_rhs` (drive plus interaction), without hopping."""
    phi = np.asarray(state, dtype=complex)
    h_phi = (drive_profile(t, params) + params.interaction_NU * np.abs(phi) ** 2) * phi
    return -1j / params.hbar * h_phi


def hopping_propagator(params: RatchetParams, tau: float) -> np.ndarray:
    """Exact ``exp(-i H_hop tau / hbar)`` for nearest-neighbour hopping on the ring.

    The hopping is diagonal in lattice momentum with energies ``-2J cos k``.
    """
    L = params.sites_L
    j = np.arange(L)
    F = np.exp(-2j * np.pi * np.outer(j, j) / L) / math.sqrt(L)
    eps = -2.0 * params.hop_J * np.cos(2.0 * np.pi * j / L)
    return F.conj().T @ (np.exp(-1j * eps * tau / params.hbar)[:, None] * F)


def gp3_matrix(state: np.ndarray, params: RatchetParams) -> np.ndarray:
    """The (state-dependent) 3x3 mean-field matrix acting on ``(phi+, phi0, phi-)``."""
    phi = np.asarray(state, dtype=complex)
    a = -params.interaction_NU / params.sites_L
    ep = params.drive_plus_E / 2.0
    em = params.drive_minus_E / 2.0
    mat = np.array([[0.0, ep, 0.0], [ep, 0.0, em], [0.0, em, 0.0]], dtype=complex)
    mat[np.diag_indices(3)] = a * np.abs(phi) ** 2
    return mat


def gp3_rhs(state: np.ndarray, t: float, params: RatchetParams) -> np.ndarray:
    """Time derivative of the three mode amplitudes; ``t`` is unused (autonomous)."""
    phi = np.asarray(state, dtype=complex)
    return -1j / params.hbar * (gp3_matrix(phi, params) @ phi)


def gp3_energy(state: np.ndarray, params: RatchetParams) -> float:
    """Gross-Pitaevskii energy functional conserved by the 3GP flow."""
    phi = np.asarray(state, dtype=complex)
    lin = gp3_matrix(np.zeros(3), params)
    kinetic = np.real(np.conj(phi) @ lin @ phi)
    a = -params.interaction_NU / params.sites_L
    return float(kinetic + 0.5 * a * np.sum(np.abs(phi) ** 4))


# --------------------------------------------------------------------------
# initial states and observables


def initial_state_dnls(params: RatchetParams) -> np.ndarray:
    """Zero-momentum ground state of the undriven, non-interacting ring."""
    L = params.sites_L
    return np.full(L, 1.0 / math.sqrt(L), dtype=complex)


def initial_state_3gp() -> np.ndarray:
    return np.array([0.0, 1.0, 0.0], dtype=complex)


def mode_numbers(L: int) -> np.ndarray:
    """Angular momentum label of each FFT bin, in ``{-floor(L/2)+1, ..., floor(L/2)}``."""
    q = np.arange(L)
    half = L // 2
    return np.where(q <= half, q, q - L)


def current_meanfield(state: np.ndarray) -> float:
    """Mode-occupation current.

    Three amplitudes are read as ``(phi+, phi0, phi-)`` and give
    ``|phi+|^2 - |phi-|^2``; longer vectors are lattice states and give
    ``sum_m m |phi~_m|^2`` with ``phi~`` the unitary DFT over sites.
    """
    phi = np.asarray(state, dtype=complex)
    if phi.size == 3:
        return float(abs(phi[0]) ** 2 - abs(phi[2]) ** 2)
    L = phi.size
    modes = np.fft.fft(phi) / math.sqrt(L)
    return float(np.sum(mode_numbers(L) * np.abs(modes) ** 2))


def local_density(state: np.ndarray, site: int) -> float:
    phi = np.asarray(state, dtype=complex)
    if not 0 <= site < phi.size:
        raise IndexError(f"site {site} outside lattice of {phi.size} sites")
    return float(abs(phi[site]) ** 2)


# --------------------------------------------------------------------------
# generic RK4


def rk4_step(rhs: Callable, y: np.ndarray, t: float, dt: float) -> np.ndarray:
    k1 = rhs(y, t)
    k2 = rhs(y + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(y + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(y + dt * k3, t + dt)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4ip_step(prop_half: np.ndarray, rhs: Callable, y: np.ndarray, t: float, dt: float) -> np.ndarray:
    """One RK4 step in the interaction picture of a linear part.

    ``prop_half`` is the exact propagator of the linear part over ``dt / 2``
    and ``rhs`` the remaining terms. Linear evolution is then exact, so the
    amplitude error of fast linear modes does not accumulate.
    """
    yi = prop_half @ y
    k1 = prop_half @ rhs(y, t)
    k2 = rhs(yi + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(yi + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(prop_half @ (yi + dt * k3), t + dt)
    return prop_half @ (yi + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3)) + dt / 6.0 * k4


def rk4_evolve(
    initial: np.ndarray,
    rhs: Callable[[np.ndarray, float], np.ndarray],
    t0: float,
    t1: float,
    dt: float,
    samplers: Mapping[str, Callable[[np.ndarray], float]],
    sample_stride: int = 1,
) -> tuple[np.ndarray, dict[str, TimeSeries]]:
    """Classical fixed-step RK4 from ``t0`` to ``t1``.

    ``rhs(y, t)`` returns ``dy/dt``. Every sampler is evaluated on the
    initial state and after every ``sample_stride`` steps. Returns the
    final state and one :class:`TimeSeries` per sampler.

    The number of steps is ``round((t1 - t0) / dt)``; ``dt`` is not
    adjusted to hit ``t1`` exactly.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    nsteps = int(round((t1 - t0) / dt))
    if nsteps < 1:
        raise ValueError("interval shorter than one step")
    if not samplers:
        raise ValueError("register at least one observable")

    y = np.array(initial, dtype=complex)
    records: dict[str, list[float]] = {k: [f(y)] for k, f in samplers.items()}
    for step in range(1, nsteps + 1):
        y = rk4_step(rhs, y, t0 + (step - 1) * dt, dt)
        if step % sample_stride == 0:
            if not np.all(np.isfinite(y)):
                raise IntegrationError(step)
            for k, f in samplers.items():
                records[k].append(f(y))
    if not np.all(np.isfinite(y)):
        raise IntegrationError(nsteps)
    series = {
        k: TimeSeries(dt * sample_stride, np.asarray(v), k, t0) for k, v in records.items()
    }
    return y, series


# --------------------------------------------------------------------------
# compiled long-run integrators


@numba.njit(cache=True)
def _dnls_local(y, out, t, hbar, NU, Ep, Em, omega, theta):
    for j in range(y.size):
        V = Ep * math.cos(theta[j] - omega * t) + Em * math.cos(theta[j] + omega * t)
        a = y[j]
        out[j] = -1j / hbar * (V + NU * (a.real * a.real + a.imag * a.imag)) * a


@numba.njit(cache=True)
def _apply(P, x, out):
    L = x.size
    for i in range(L):
        acc = 0j
        for j in range(L):
            acc += P[i, j] * x[j]
        out[i] = acc


@numba.njit(cache=True)
def _dnls_kernel(y0, t0, dt, nsteps, stride, P, hbar, NU, Ep, Em, omega, site):
    # RK4 in the interaction picture of the hopping; P propagates it over dt/2
    L = y0.size
    theta = 2.0 * np.pi * np.arange(L) / L
    modes = np.empty(L)
    for q in range(L):
        modes[q] = q if q <= L // 2 else q - L
    phase = np.empty((L, L), dtype=np.complex128)
    for q in range(L):
        for j in range(L):
            phase[q, j] = np.exp(-2j * np.pi * q * j / L) / math.sqrt(L)
    nsamp = nsteps // stride + 1
    cur = np.empty(nsamp)
    dens = np.empty(nsamp)
    norm = np.empty(nsamp)
    y = y0.copy()
    yi = np.empty(L, np.complex128)
    k1 = np.empty(L, np.complex128)
    k2 = np.empty(L, np.complex128)
    k3 = np.empty(L, np.complex128)
    k4 = np.empty(L, np.complex128)
    tmp = np.empty(L, np.complex128)
    tmp2 = np.empty(L, np.complex128)
    k = 0
    bad = -1
    for step in range(nsteps + 1):
        if step > 0:
            t = t0 + (step - 1) * dt
            _apply(P, y, yi)
            _dnls_local(y, tmp, t, hbar, NU, Ep, Em, omega, theta)
            _apply(P, tmp, k1)
            for j in range(L):
                tmp[j] = yi[j] + 0.5 * dt * k1[j]
            _dnls_local(tmp, k2, t + 0.5 * dt, hbar, NU, Ep, Em, omega, theta)
            for j in range(L):
                tmp[j] = yi[j] + 0.5 * dt * k2[j]
            _dnls_local(tmp, k3, t + 0.5 * dt, hbar, NU, Ep, Em, omega, theta)
            for j in range(L):
                tmp[j] = yi[j] + dt * k3[j]
            _apply(P, tmp, tmp2)
            _dnls_local(tmp2, k4, t + dt, hbar, NU, Ep, Em, omega, theta)
            for j in range(L):
                tmp[j] = yi[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j])
            _apply(P, tmp, y)
            for j in range(L):
                y[j] += dt / 6.0 * k4[j]
        if step % stride == 0:
            I = 0.0
            nrm = 0.0
            for q in range(L):
                acc = 0j
                for j in range(L):
                    acc += phase[q, j] * y[j]
                I += modes[q] * (acc.real * acc.real + acc.imag * acc.imag)
            for j in range(L):
                nrm += y[j].real * y[j].real + y[j].imag * y[j].imag
            if not np.isfinite(nrm):
                bad = step
                break
            cur[k] = I
            dens[k] = y[site].real * y[site].real + y[site].imag * y[site].imag
            norm[k] = nrm
            k += 1
    return y, cur[:k], dens[:k], norm[:k], bad


@numba.njit(cache=True, inline="always")
def _gp3_deriv(pr, pi, zr, zi, mr, mi, a, ep, em):
    # real components of -i H(phi) phi with hbar = 1; scaled by 1/hbar in the caller
    gp = a * (pr * pr + pi * pi)
    gz = a * (zr * zr + zi * zi)
    gm = a * (mr * mr + mi * mi)
    xr = gp * pr + ep * zr
    xi = gp * pi + ep * zi
    yr = ep * pr + gz * zr + em * mr
    yi = ep * pi + gz * zi + em * mi
    wr = em * zr + gm * mr
    wi = em * zi + gm * mi
    return xi, -xr, yi, -yr, wi, -wr


@numba.njit(cache=True)
def _gp3_steps(p, z, m, nsteps, dt, a, ep, em):
    # real arithmetic keeps the serial dependency chain short
    pr, pi, zr, zi, mr, mi = p.real, p.imag, z.real, z.imag, m.real, m.imag
    h = 0.5 * dt
    s = dt / 6.0
    for _ in range(nsteps):
        a1, b1, c1, d1, e1, f1 = _gp3_deriv(pr, pi, zr, zi, mr, mi, a, ep, em)
        a2, b2, c2, d2, e2, f2 = _gp3_deriv(pr + h * a1, pi + h * b1, zr + h * c1, zi + h * d1,
                                            mr + h * e1, mi + h * f1, a, ep, em)
        a3, b3, c3, d3, e3, f3 = _gp3_deriv(pr + h * a2, pi + h * b2, zr + h * c2, zi + h * d2,
                                            mr + h * e2, mi + h * f2, a, ep, em)
        a4, b4, c4, d4, e4, f4 = _gp3_deriv(pr + dt * a3, pi + dt * b3, zr + dt * c3, zi + dt * d3,
                                            mr + dt * e3, mi + dt * f3, a, ep, em)
        pr += s * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        pi += s * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        zr += s * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        zi += s * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        mr += s * (e1 + 2.0 * e2 + 2.0 * e3 + e4)
        mi += s * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
    return complex(pr, pi), complex(zr, zi), complex(mr, mi)


@numba.njit(cache=True)
def _gp3_kernel(y0, dt, nsteps, stride, hbar, a, ep, em):
    nsamp = nsteps // stride + 1
    cur = np.empty(nsamp)
    norm = np.empty(nsamp)
    energy = np.empty(nsamp)
    y = y0.copy()
    c = 1.0 / hbar
    p, z, m = y[0], y[1], y[2]
    k = 0
    bad = -1
    for k in range(nsamp):
        if k > 0:
            p, z, m = _gp3_steps(p, z, m, stride, dt, a * c, ep * c, em * c)
        n0 = p.real * p.real + p.imag * p.imag
        n1 = z.real * z.real + z.imag * z.imag
        n2 = m.real * m.real + m.imag * m.imag
        tot = n0 + n1 + n2
        if not np.isfinite(tot):
            bad = k * stride
            break
        cur[k] = n0 - n2
        norm[k] = tot
        kin = 2.0 * ep * (p.real * z.real + p.imag * z.imag) + 2.0 * em * (z.real * m.real + z.imag * m.imag)
        energy[k] = kin + 0.5 * a * (n0 * n0 + n1 * n1 + n2 * n2)
    else:
        k = nsamp
        p, z, m = _gp3_steps(p, z, m, nsteps - (nsamp - 1) * stride, dt, a * c, ep * c, em * c)
    y[0], y[1], y[2] = p, z, m
    return y, cur[:k], norm[:k], energy[:k], bad


@dataclass
class Trajectory:
    """Output of a compiled integration run."""

    final_state: np.ndarray
    series: dict[str, TimeSeries] = field(default_factory=dict)

    def __getitem__(self, key: str) -> TimeSeries:
        return self.series[key]


def _steps_and_dt(duration: float, dt: float | None, params: RatchetParams) -> tuple[int, float]:
    dt = params.default_dt if dt is None else dt
    if dt <= 0 or duration <= 0:
        raise ValueError("duration and dt must be positive")
    return int(round(duration / dt)), dt


def integrate_dnls(
    params: RatchetParams,
    duration: float,
    *,
    dt: float | None = None,
    sample_stride: int = 1,
    density_site: int = 3,
    initial: np.ndarray | None = None,
) -> Trajectory:
    """Integrate the DNLS, recording current, one local density and the norm.

    The step is RK4 in the interaction picture of the hopping (see
    :func:`rk4ip_step`). Plain RK4 at the default step loses about 1e-5 of
    the norm per Rabi period through the fast hopping modes.

    Series labels: ``current``, ``density<site>``, ``norm``.
    """
    nsteps, dt = _steps_and_dt(duration, dt, params)
    y0 = initial_state_dnls(params) if initial is None else np.array(initial, dtype=complex)
    if y0.size != params.sites_L:
        raise ValueError("initial state length does not match sites_L")
    local_density(y0, density_site)  # range check
    y, cur, dens, norm, bad = _dnls_kernel(
        y0, 0.0, dt, nsteps, int(sample_stride), hopping_propagator(params, 0.5 * dt), params.hbar,
        params.interaction_NU, params.drive_plus_E, params.drive_minus_E,
        params.drive_freq_omega, int(density_site),
    )
    if bad >= 0:
        raise IntegrationError(bad)
    sdt = dt * sample_stride
    return Trajectory(y, {
        "current": TimeSeries(sdt, cur, "current"),
        f"density{density_site}": TimeSeries(sdt, dens, f"density{density_site}"),
        "norm": TimeSeries(sdt, norm, "norm"),
    })


def integrate_gp3(
    params: RatchetParams,
    duration: float,
    *,
    dt: float | None = None,
    sample_stride: int = 1,
    initial: np.ndarray | None = None,
) -> Trajectory:
    """RK4-integrate the 3GP model. Series labels: ``current``, ``norm``, ``energy``."""
    nsteps, dt = _steps_and_dt(duration, dt, params)
    y0 = initial_state_3gp() if initial is None else np.array(initial, dtype=complex)
    a = -params.interaction_NU / params.sites_L
    y, cur, norm, energy, bad = _gp3_kernel(
        y0, dt, nsteps, int(sample_stride), params.hbar, a,
        params.drive_plus_E / 2.0, params.drive_minus_E / 2.0,
    )
    if bad >= 0:
        raise IntegrationError(bad)
    sdt = dt * sample_stride
    return Trajectory(y, {
        "current": TimeSeries(sdt, cur, "current"),
        "norm": TimeSeries(sdt, norm, "norm"),
        "energy": TimeSeries(sdt, energy, "energy"),
    })


def stride_for_samples(duration: float, dt: float, n_samples: int) -> int:
    """Step stride giving roughly ``n_samples`` samples over ``duration``."""
    return max(1, int(round(duration / dt / n_samples)))


def dominant_frequency(series: TimeSeries) -> float:
    """Frequency (cycles per unit time) of the largest non-DC periodogram peak."""
    x = series.values - series.values.mean()
    spec = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(x.size, d=series.dt)
    return float(freqs[1 + np.argmax(spec[1:])])
