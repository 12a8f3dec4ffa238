"""Invariant and property checks. Fast, no long physics runs."""
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from ratchetchaos.dimension import correlation_sum
from ratchetchaos.fitting import MODELS
from ratchetchaos.manybody import (
    ManyBodyState,
    build_fock_basis,
    build_h3ls,
    depletion,
    diagonalize,
    evolve_3ls,
    fidelity,
    spdm,
)
from ratchetchaos.meanfield import RatchetParams, integrate_dnls, integrate_gp3
from ratchetchaos.zeroone import kc_statistic

FAST = settings(max_examples=25, deadline=None)

couplings = st.floats(0.0, 0.4)
particle_numbers = st.integers(1, 12)


def _random_state(N, seed):
    basis = build_fock_basis(N)
    rng = np.random.default_rng(seed)
    c = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return ManyBodyState(basis, c / np.linalg.norm(c))


@FAST
@given(couplings, st.integers(1, 15))
def test_h3ls_exactly_hermitian(g, N):
    H = build_h3ls(RatchetParams(coupling_g=g), N)
    assert np.max(np.abs(H - H.conj().T)) == 0.0


@FAST
@given(couplings, particle_numbers, st.floats(0.0, 5000.0))
def test_unitary_evolution(g, N, t):
    p = RatchetParams(coupling_g=g)
    H = build_h3ls(p, N)
    eig = diagonalize(H, build_fock_basis(N))
    psi0 = _random_state(N, 0)
    (psi,) = evolve_3ls(eig, psi0, [t])
    assert abs(psi.norm - 1.0) <= 1e-12
    e0 = np.vdot(psi0.coeffs, H @ psi0.coeffs).real
    assert abs(np.vdot(psi.coeffs, H @ psi.coeffs).real - e0) <= 1e-10


@FAST
@given(particle_numbers, st.integers(0, 2**31))
def test_spdm_invariants(N, seed):
    rho = spdm(_random_state(N, seed))
    assert np.max(np.abs(rho - rho.conj().T)) <= 1e-10
    assert abs(np.trace(rho).real - N) <= 1e-8
    w = np.linalg.eigvalsh(rho)
    assert w.min() >= -1e-8 and w.max() <= N + 1e-8
    assert 0.0 <= depletion(rho, N) < 1.0


@FAST
@given(particle_numbers, st.integers(0, 2**31))
def test_fidelity_bounds(N, seed):
    a = _random_state(N, seed)
    b = _random_state(N, seed + 1)
    assert 0.0 <= fidelity(a, b) <= 1.0
    assert abs(fidelity(a, a) - 1.0) <= 1e-12


@FAST
@given(st.floats(0.0, 0.4))
def test_meanfield_norm_conserved(g):
    p = RatchetParams(coupling_g=g)
    for tr in (integrate_dnls(p, 5 * p.rabi_period, sample_stride=500),
               integrate_gp3(p, 5 * p.rabi_period, sample_stride=500)):
        assert np.max(np.abs(tr["norm"].values - 1.0)) <= 1e-8


def test_rk4_fourth_order():
    # three-grid Richardson estimate on the DNLS current over one drive period
    p = RatchetParams(coupling_g=0.14)
    T = p.drive_period
    v = [integrate_dnls(p, T, dt=T / (200 * k), sample_stride=5 * k)["current"].values for k in (1, 2, 4)]
    order = math.log2(np.linalg.norm(v[0] - v[1]) / np.linalg.norm(v[1] - v[2]))
    assert abs(order - 4.0) <= 0.2


@FAST
@given(st.floats(0.05, 3.1), st.floats(0.01, 100.0).filter(lambda a: abs(a) > 0), st.sampled_from([-1.0, 1.0]))
def test_kc_scale_invariance(c, a, sign):
    x = np.random.default_rng(0).normal(size=2000).cumsum()
    k1 = kc_statistic(x, c)
    k2 = kc_statistic(sign * a * x, c)
    assert -1.0 <= k1 <= 1.0
    assert abs(k1 - k2) <= 1e-9


@FAST
@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(0, 10))
def test_correlation_sum_monotone(seed, dim, w):
    pts = np.random.default_rng(seed).normal(size=(300, dim))
    cs = correlation_sum(pts, np.logspace(-2, 1, 25), w)
    assert np.all(np.diff(cs.C) >= 0)
    assert 0.0 <= cs.C[0] and cs.C[-1] <= 1.0


DOMAINS = {
    "linear": (st.tuples(st.floats(-3, 3), st.floats(-3, 3)), st.floats(-5, 5)),
    "tanh_onset": (st.tuples(st.floats(0.1, 1), st.floats(0.05, 0.5), st.floats(-60, -10), st.floats(0, 1)),
                   st.floats(0, 80)),
    "power_offset": (st.tuples(st.floats(0.5, 5), st.floats(0.1, 1.5), st.floats(-2, 2)), st.floats(1, 40)),
    "shifted_power": (st.tuples(st.floats(0.5, 5), st.floats(-0.5, 3), st.floats(0.1, 1.5)), st.floats(1, 40)),
}


@st.composite
def model_points(draw):
    name = draw(st.sampled_from(sorted(MODELS)))
    ps, xs = DOMAINS[name]
    return name, np.array(draw(ps)), np.array([draw(xs)])


@settings(max_examples=100, deadline=None)
@given(model_points())
def test_jacobians_match_central_differences(case):
    name, p, x = case
    model = MODELS[name]
    J = model.jacobian(p, x)[0]
    for k in range(model.arity):
        h = 1e-6 * max(1.0, abs(p[k]))
        up, dn = p.copy(), p.copy()
        up[k] += h
        dn[k] -= h
        fd = (model(up, x)[0] - model(dn, x)[0]) / (2 * h)
        assert abs(J[k] - fd) <= 1e-5 * max(abs(fd), 1e-2)
