"""Exact dynamics of the three-level N-boson model (3LS).

The Hilbert space is spanned by occupation triples ``(n+, n0, n-)`` with
``n+ + n0 + n- = N``. The Hamiltonian is dense and real symmetric, so
time evolution goes through a full eigendecomposition.

A small Bose-Hubbard ring builder is included as a cross-check for the
mean-field lattice model; it is limited to a handful of particles.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .meanfield import RatchetParams, TimeSeries, drive_potential

MAX_PARTICLES = 60
PLUS, ZERO, MINUS = 0, 1, 2


@dataclass(frozen=True)
class FockBasis:
    particle_count_N: int
    states: np.ndarray  # (dim, modes) integer occupations
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self._index:
            self._index.update({tuple(int(v) for v in s): i for i, s in enumerate(self.states)})

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[0]

    def index(self, occupation: Sequence[int]) -> int:
        try:
            return self._index[tuple(int(v) for v in occupation)]
        except KeyError:
            raise KeyError(f"{tuple(occupation)} is not in the N={self.particle_count_N} basis") from None


def _occupations(N: int, modes: int) -> np.ndarray:
    """All occupation tuples over ``modes`` modes summing to ``N``, descending lexicographic."""
    if modes == 1:
        return np.array([[N]], dtype=np.int64)
    rows = []
    for first in range(N, -1, -1):
        rest = _occupations(N - first, modes - 1)
        rows.append(np.column_stack([np.full(len(rest), first), rest]))
    return np.vstack(rows)


def build_fock_basis(N: int) -> FockBasis:
    """Three-mode basis for N bosons, ordered (N,0,0), (N-1,1,0), ..., (0,0,N)."""
    if int(N) != N or not 1 <= N <= MAX_PARTICLES:
        raise ValueError(f"N must be an integer in [1, {MAX_PARTICLES}], got {N}")
    return FockBasis(int(N), _occupations(int(N), 3))


@dataclass
class ManyBodyState:
    basis: FockBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (self.basis.dim,):
            raise ValueError("coefficient vector does not match the basis dimension")

    @property
    def norm(self) -> float:
        return float(np.vdot(self.coeffs, self.coeffs).real)


@dataclass
class Eigensystem:
    energies: np.ndarray
    vectors: np.ndarray  # columns are eigenvectors
    basis: FockBasis | None = None


def _hop_tables(basis: FockBasis, mu: int, nu: int):
    """Index maps for ``a_mu^dag a_nu``: src -> dst with bosonic amplitude."""
    occ = basis.states
    src = np.nonzero(occ[:, nu] > 0)[0]
    new = occ[src].copy()
    amp = np.sqrt((new[:, mu] + 1.0) * new[:, nu])
    new[:, mu] += 1
    new[:, nu] -= 1
    dst = np.array([basis.index(s) for s in new], dtype=np.int64)
    return src, dst, amp


def interaction_U(params: RatchetParams, N: int) -> float:
    """On-site ``U`` holding ``N U = g J`` fixed."""
    return params.coupling_g * params.hop_J / N


def build_h3ls(params: RatchetParams, N: int, basis: FockBasis | None = None) -> np.ndarray:
    """Dense real-symmetric 3LS Hamiltonian over ``build_fock_basis(N)``."""
    basis = build_fock_basis(N) if basis is None else basis
    if basis.particle_count_N != N:
        raise ValueError(f"basis holds {basis.particle_count_N} particles, expected {N}")
    occ = basis.states.astype(float)
    U = interaction_U(params, N)
    H = np.zeros((basis.dim, basis.dim))
    # fill one triangle, then mirror: exact symmetry by construction
    for mu, E in ((PLUS, params.drive_plus_E), (MINUS, params.drive_minus_E)):
        src, dst, amp = _hop_tables(basis, mu, ZERO)
        lo = np.maximum(src, dst)
        hi = np.minimum(src, dst)
        H[lo, hi] += 0.5 * E * amp
    H = H + np.tril(H, -1).T
    H[np.diag_indices(basis.dim)] = -U / (2.0 * params.sites_L) * np.sum(occ * (occ - 1.0), axis=1)
    return H


def diagonalize(H: np.ndarray, basis: FockBasis | None = None) -> Eigensystem:
    energies, vectors = np.linalg.eigh(H)
    return Eigensystem(energies, vectors, basis)


def _cache_key(params: RatchetParams, N: int) -> str:
    key = f"{N}|{params.coupling_g!r}|{params.drive_plus_E!r}|{params.drive_minus_E!r}|{params.sites_L}|{params.hop_J!r}"
    return hashlib.sha1(key.encode()).hexdigest()[:16]


def eigensystem_3ls(params: RatchetParams, N: int, cache_dir: str | Path | None = None) -> Eigensystem:
    """Diagonalize the 3LS, optionally through an on-disk ``.npz`` cache."""
    basis = build_fock_basis(N)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"eig3ls_N{N}_{_cache_key(params, N)}.npz"
        if path.exists():
            with np.load(path) as data:
                return Eigensystem(data["energies"], data["vectors"], basis)
    eig = diagonalize(build_h3ls(params, N, basis), basis)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, energies=eig.energies, vectors=eig.vectors)
        tmp.replace(path)
    return eig


def initial_state_3ls(basis: FockBasis) -> ManyBodyState:
    """All particles in the zero-momentum mode."""
    coeffs = np.zeros(basis.dim, dtype=complex)
    coeffs[basis.index((0, basis.particle_count_N, 0))] = 1.0
    return ManyBodyState(basis, coeffs)


def evolve_coeffs(eig: Eigensystem, psi0: np.ndarray, times: np.ndarray, hbar: float = 1.0) -> np.ndarray:
    """Coefficient matrix of shape ``(len(times), dim)``."""
    times = np.asarray(times, dtype=float)
    overlaps = eig.vectors.conj().T @ np.asarray(psi0, dtype=complex)
    phases = np.exp(-1j * np.outer(times, eig.energies) / hbar)
    return (phases * overlaps) @ eig.vectors.T


def evolve_3ls(eig: Eigensystem, psi0: ManyBodyState, times: Sequence[float], hbar: float = 1.0) -> list[ManyBodyState]:
    times = np.asarray(times, dtype=float)
    if times.size > 1 and np.any(np.diff(times) < 0):
        raise ValueError("times must be ascending")
    coeffs = evolve_coeffs(eig, psi0.coeffs, times, hbar)
    return [ManyBodyState(psi0.basis, c) for c in coeffs]


# --------------------------------------------------------------------------
# observables


class _SpdmTables:
    def __init__(self, basis: FockBasis):
        self.occ = basis.states.astype(float)
        self.hops = {
            (mu, nu): _hop_tables(basis, mu, nu)
            for mu in range(3) for nu in range(3) if mu != nu
        }


_TABLES: dict[tuple[int, int], _SpdmTables] = {}


def _tables(basis: FockBasis) -> _SpdmTables:
    if basis.states.shape[1] != 3:
        raise ValueError("single-particle density matrix is defined for the three-mode basis")
    key = (basis.particle_count_N, basis.dim)
    tab = _TABLES.get(key)
    if tab is None:
        tab = _TABLES[key] = _SpdmTables(basis)
    return tab


def spdm_batch(basis: FockBasis, coeffs: np.ndarray) -> np.ndarray:
    """``<a_mu^dag a_nu>`` for each row of ``coeffs``; shape ``(T, 3, 3)``."""
    C = np.atleast_2d(np.asarray(coeffs, dtype=complex))
    tab = _tables(basis)
    rho = np.zeros((C.shape[0], 3, 3), dtype=complex)
    prob = np.abs(C) ** 2
    for mu in range(3):
        rho[:, mu, mu] = prob @ tab.occ[:, mu]
    for (mu, nu), (src, dst, amp) in tab.hops.items():
        rho[:, mu, nu] = np.sum(np.conj(C[:, dst]) * C[:, src] * amp, axis=1)
    return rho


def spdm(psi: ManyBodyState) -> np.ndarray:
    """Single-particle density matrix ``rho[mu, nu] = <a_mu^dag a_nu>``."""
    return spdm_batch(psi.basis, psi.coeffs)[0]


def depletion(rho: np.ndarray, N: int) -> float | np.ndarray:
    """``1 - lambda_max / N``; accepts one 3x3 matrix or a stack of them."""
    lam = np.linalg.eigvalsh(np.asarray(rho))[..., -1]
    # lambda_max <= N holds exactly; clip the roundoff that would give -1e-16
    out = np.maximum(1.0 - lam / N, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def fidelity(psi0: ManyBodyState, psi_t: ManyBodyState) -> float:
    if psi0.basis.particle_count_N != psi_t.basis.particle_count_N or psi0.coeffs.shape != psi_t.coeffs.shape:
        raise ValueError("states live in different bases")
    return float(min(abs(np.vdot(psi0.coeffs, psi_t.coeffs)), 1.0))


def current_3ls(psi: ManyBodyState) -> float:
    """``(<n+> - <n->) / N``."""
    occ = psi.basis.states
    prob = np.abs(psi.coeffs) ** 2
    return float(prob @ (occ[:, PLUS] - occ[:, MINUS])) / psi.basis.particle_count_N


def energy_expectation(H: np.ndarray, psi: ManyBodyState) -> float:
    return float(np.vdot(psi.coeffs, H @ psi.coeffs).real)


@dataclass
class ManyBodyRun:
    """Observable records of a 3LS evolution on a uniform grid."""

    N: int
    times: np.ndarray
    current: np.ndarray
    depletion: np.ndarray
    fidelity: np.ndarray
    norm: np.ndarray

    def series(self, name: str) -> TimeSeries:
        dt = float(self.times[1] - self.times[0])
        return TimeSeries(dt, getattr(self, name), name, float(self.times[0]))


def run_3ls(
    params: RatchetParams,
    N: int,
    duration: float,
    dt_out: float,
    *,
    eig: Eigensystem | None = None,
    chunk: int = 2048,
) -> ManyBodyRun:
    """Evolve ``(0, N, 0)`` and record current, depletion, fidelity and norm.

    Work is chunked over time so memory stays bounded at ``chunk * dim``.
    """
    basis = build_fock_basis(N)
    eig = eigensystem_3ls(params, N) if eig is None else eig
    psi0 = initial_state_3ls(basis)
    times = dt_out * np.arange(int(round(duration / dt_out)) + 1)
    n = times.size
    cur, dep, fid, nrm = (np.empty(n) for _ in range(4))
    occ = basis.states
    dn = (occ[:, PLUS] - occ[:, MINUS]) / N
    i0 = basis.index((0, N, 0))
    overlaps = eig.vectors.conj().T @ psi0.coeffs
    for start in range(0, n, chunk):
        sl = slice(start, min(n, start + chunk))
        phases = np.exp(-1j * np.outer(times[sl], eig.energies) / params.hbar)
        C = (phases * overlaps) @ eig.vectors.T
        prob = np.abs(C) ** 2
        cur[sl] = prob @ dn
        nrm[sl] = prob.sum(axis=1)
        fid[sl] = np.abs(C[:, i0])
        dep[sl] = depletion(spdm_batch(basis, C), N)
    return ManyBodyRun(N, times, cur, dep, fid, nrm)


# --------------------------------------------------------------------------
# convergence to mean field


class CrossingTime(NamedTuple):
    time: float
    crossed: bool


def integrated_error_curve(
    mb: TimeSeries,
    mf: TimeSeries,
    *,
    mode: str = "cumulative",
    time_unit: float = 1.0,
    normalize: bool = False,
) -> np.ndarray:
    """Accumulated discrepancy between a many-body and a mean-field current.

    ``mode="cumulative"`` gives ``int_0^t |I_mb - I_mf| dt' / time_unit``;
    ``mode="mean"`` gives the running mean ``(1/t) int_0^t |I_mb - I_mf| dt'``
    (NaN at t=0). Integrals use the trapezoid rule. With ``normalize=True``
    both currents are first divided by their maximum modulus.
    """
    if len(mb) == 0 or len(mf) == 0:
        raise ValueError("empty series")
    if not math.isclose(mb.dt, mf.dt, rel_tol=1e-9):
        raise ValueError(f"sampling mismatch: {mb.dt} vs {mf.dt}")
    if mode not in ("cumulative", "mean"):
        raise ValueError(f"unknown mode {mode!r}")
    a = mb.normalized().values if normalize else mb.values
    b = mf.normalized().values if normalize else mf.values
    n = min(a.size, b.size)
    diff = np.abs(a[:n] - b[:n])
    area = np.concatenate([[0.0], np.cumsum(0.5 * (diff[1:] + diff[:-1]) * mb.dt)])
    if mode == "cumulative":
        return area / time_unit
    t = mb.dt * np.arange(n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(t > 0, area / t, np.nan)


def integrated_error_time(
    mb: TimeSeries,
    mf: TimeSeries,
    threshold: float = 0.1,
    *,
    mode: str = "cumulative",
    time_unit: float = 1.0,
    normalize: bool = False,
) -> CrossingTime:
    """Earliest time at which the integrated error exceeds ``threshold``.

    Times are measured from the first sample, in the units of the series.
    When the threshold is never exceeded the end of the record is returned
    with ``crossed=False``.
    """
    ie = integrated_error_curve(mb, mf, mode=mode, time_unit=time_unit, normalize=normalize)
    above = np.nonzero(ie[1:] > threshold)[0]
    if above.size == 0:
        return CrossingTime(mb.dt * (ie.size - 1), False)
    return CrossingTime(mb.dt * (above[0] + 1), True)


# --------------------------------------------------------------------------
# Bose-Hubbard ring (small instances only)

BH_MAX_N = 4
BH_MAX_L = 6


def bose_hubbard_basis(N: int, L: int) -> FockBasis:
    states = []
    for sites in combinations_with_replacement(range(L), N):
        occ = np.zeros(L, dtype=np.int64)
        for s in sites:
            occ[s] += 1
        states.append(occ)
    states.sort(key=lambda s: tuple(-s))
    return FockBasis(N, np.array(states))


def build_bose_hubbard(params: RatchetParams, N: int, L: int | None = None, t: float = 0.0) -> np.ndarray:
    """Driven Bose-Hubbard ring Hamiltonian at time ``t`` (real symmetric).

    ``U`` follows the same ``N U = g J`` convention as the 3LS.
    """
    L = params.sites_L if L is None else L
    if N > BH_MAX_N or L > BH_MAX_L or N < 1 or L < 3:
        raise ValueError(f"Bose-Hubbard oracle limited to 1 <= N <= {BH_MAX_N}, 3 <= L <= {BH_MAX_L}")
    p = params if L == params.sites_L else params.replace(sites_L=L, drive_freq_omega=params.drive_freq_omega)
    basis = bose_hubbard_basis(N, L)
    occ = basis.states.astype(float)
    U = interaction_U(p, N)
    V = np.array([drive_potential(j, t, p) for j in range(L)])
    H = np.zeros((basis.dim, basis.dim))
    H[np.diag_indices(basis.dim)] = 0.5 * U * np.sum(occ * (occ - 1.0), axis=1) + occ @ V
    for j in range(L):
        k = (j + 1) % L
        for s_idx, s in enumerate(basis.states):
            if s[k] == 0:
                continue
            new = s.copy()
            amp = math.sqrt((s[j] + 1) * s[k])
            new[j] += 1
            new[k] -= 1
            d = basis.index(new)
            H[d, s_idx] += -p.hop_J * amp
            H[s_idx, d] += -p.hop_J * amp
    return H
