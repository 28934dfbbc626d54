import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p2pswarm.coding import Subspace
from p2pswarm.lyapunov import (
    CodedTypes,
    LyapConsts,
    LyapunovError,
    LyapunovFunction,
    StateSampler,
    W,
    W_prime,
    aggregates,
    approx_drift_LW,
    certify_drift,
    check_consts,
    composed_drift_bound_check,
    default_p,
    exact_drift,
    find_consts,
    p_margins,
    phi,
    phi_prime,
    positive_drift_witness,
)
from p2pswarm.model import (
    CodedArrival,
    CountState,
    SwarmParams,
    drift,
    pieceset,
    popcount,
)

EX1 = SwarmParams(1, 2, 1, 2, {0: 1})
EX2 = SwarmParams(4, 0, 1, math.inf, {pieceset([1, 2]): 1, pieceset([3, 4]): 1})
SMALL = SwarmParams(2, Fraction(1, 2), 1, 3, {0: 1, 1: Fraction(1, 3)})
PRIME = SwarmParams(2, 0, 2, 1, {1: 1, 2: 1})
CONSTS = LyapConsts(r=0.3, d=6, beta=0.001, alpha=0.9, eps=0.05, n_o=1e3)


def _W_naive(state, params, k):
    """Direct evaluation from the definition, one type at a time."""
    K, F = params.K, params.full
    c = 0 if params.gamma == math.inf else params.mu / params.gamma
    total = 0.0
    for C in range(F):
        E = sum(x for S, x in state.items() if S & ~C == 0)
        H = sum(x * (K - popcount(S) + c) / (1 - c) for S, x in state.items() if S & ~C)
        total += k.r ** popcount(C) * (E * E / 2 + k.alpha * E * phi(float(H), k.d, k.beta))
    if params.has_seeds:
        total += k.r**K * state.n**2 / 2
    return total


@pytest.mark.parametrize("d, beta", [(2, 0.25), (6, 0.001), (3.5, 0.1)])
def test_phi_shape(d, beta):
    x = np.linspace(0, 2 * d + 2 / beta, 4001)
    y, dy = phi(x, d, beta), phi_prime(x, d, beta)
    assert phi(0.0, d, beta) == pytest.approx(2 * d + 1 / (2 * beta))
    assert (y >= 0).all() and (np.diff(y) <= 1e-12).all()
    assert (dy >= -1).all() and (dy <= 0).all()
    # continuous derivative: the slope of phi tracks phi' everywhere
    assert np.allclose(np.gradient(y, x)[1:-1], dy[1:-1], atol=2 * beta * (x[1] - x[0]) + 1e-9)
    # phi' is beta-Lipschitz
    assert (np.abs(np.diff(dy)) <= beta * (x[1] - x[0]) + 1e-12).all()
    assert phi(2 * d + 1 / beta, d, beta) == 0.0
    with pytest.raises(ValueError):
        phi(-1.0, d, beta)


def test_constants_are_checked():
    check_consts(CONSTS, EX2)
    for bad in [dict(r=0.6), dict(d=1), dict(beta=0.6), dict(eps=0.7), dict(alpha=0.4), dict(beta=0.2)]:
        args = {**CONSTS.__dict__, **bad}
        with pytest.raises(LyapunovError):
            check_consts(LyapConsts(**args), EX2)
    assert CONSTS.M_phi == pytest.approx(3 * 6 + 1000)
    with pytest.raises(LyapunovError):
        check_consts(LyapConsts(0.3, 4, 0.01, 0.9, 0.05, 1e3), PRIME)  # W' needs p


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=16, max_size=16))
def test_value_matches_definition(counts):
    counts[15] = 0
    s = CountState(dict(enumerate(counts)))
    assert W(s, EX2, CONSTS) == pytest.approx(_W_naive(s, EX2, CONSTS), rel=1e-10)


def test_aggregates_by_hand():
    s = CountState({0b01: 3, 0b11: 2, 0b10: 1})
    E, H, Hp = aggregates(s, SMALL)
    c = 1 / 3
    assert E[0b01] == 3 and E[0b11] == 6 and E[0] == 0
    assert H[0b01] == pytest.approx(2 * (0 + c) / (1 - c) + 1 * (1 + c) / (1 - c))
    assert Hp[0b01] == 2 * 1 + 1 * 2


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=4, max_size=4))
def test_vectorised_drift_is_exact(counts):
    s = CountState(dict(enumerate(counts)))
    k = LyapConsts(r=0.4, d=1.5, beta=0.005, alpha=0.9, eps=0.05, n_o=10)
    ref = float(drift(s, SMALL, lambda x: _W_naive(x, SMALL, k)))
    assert exact_drift(s, SMALL, k) == pytest.approx(ref, rel=1e-9, abs=1e-9)


def test_drift_is_linear():
    s = CountState({0: 4, 1: 2, 3: 5})
    f = lambda x: x.n
    g = lambda x: x[1] ** 2
    both = drift(s, SMALL, lambda x: 2 * f(x) - 3 * g(x))
    assert both == 2 * drift(s, SMALL, f) - 3 * drift(s, SMALL, g)


def test_approximate_drift_is_close_on_large_states():
    sampler = StateSampler(EX2, 0.05, 1e4, seed=1)
    fn = LyapunovFunction(EX2, CONSTS)
    X = sampler.sample(200)
    exact, approx = fn.drift(X), fn.drift(X, approx=True)
    n = X.sum(axis=1)
    # the gap is second order: bounded by a constant times n
    assert np.max(np.abs(exact - approx) / n) < 50
    s = CountState.from_dense(X[0].astype(int))
    assert approx_drift_LW(s, EX2, CONSTS) == pytest.approx(approx[0])


def test_sampler_respects_n_range():
    X = StateSampler(EX2, 0.05, 1e3, seed=2).sample(500)
    n = X.sum(axis=1)
    assert n.min() >= 1e3 and n.max() <= 32e3 + 1
    assert (X[:, 15] == 0).all()  # no complete peers when gamma = inf


@pytest.mark.parametrize("seed", range(5))
def test_composition_inequality(seed):
    rng = np.random.default_rng(seed)
    s = CountState(dict(enumerate(rng.integers(0, 30, size=4))))
    k = LyapConsts(r=0.4, d=3, beta=0.05, alpha=0.9, eps=0.05, n_o=10)
    for C in range(3):
        f = lambda x, C=C: aggregates(x, SMALL)[1][C]
        V = (lambda h: phi(max(h, 0.0), k.d, k.beta), lambda h: phi_prime(max(h, 0.0), k.d, k.beta))
        assert composed_drift_bound_check(s, SMALL, f, V, k.beta)


def test_find_consts_example1():
    res = find_consts(EX1, certify_count=10_000)
    assert res.found and res.certificate.passed
    assert res.certificate.max_ratio <= -res.consts.xi < 0
    again = certify_drift(EX1, res.consts, count=2000, seed=11)
    assert again.passed


def test_transient_point_has_no_certificate():
    p = SwarmParams(4, 0, 1, math.inf, {pieceset([1, 2]): 4, pieceset([3, 4]): 1})
    res = find_consts(p)
    assert not res.found and "Transient" in res.reason
    w = positive_drift_witness(p, CONSTS, count=2000)
    assert w.max_ratio > 0 and not w.passed


def test_W_prime_for_slow_departures():
    p = default_p(PRIME)
    assert max(p_margins(PRIME, p)) < 0
    k = LyapConsts(r=0.3, d=4, beta=min(0.25, 1 / (4 * p * 9)), alpha=0.9, eps=0.05, n_o=1e3, p=p)
    s = CountState({1: 100, 2: 5, 3: 7})
    assert W_prime(s, PRIME, k) > 0
    with pytest.raises(LyapunovError):
        W(s, PRIME, k)
    res = find_consts(PRIME, certify_count=2000)
    assert res.found


CODED = SwarmParams(3, 1, 1, 2, coded=True, q=2,
                    coded_arrivals=[CodedArrival(Fraction(1, 2)), CodedArrival(1, uniform=True)])


@pytest.mark.parametrize("q, K, count", [(2, 1, 2), (2, 2, 5), (2, 3, 16), (3, 2, 6), (4, 2, 7)])
def test_subspace_lattice_size(q, K, count):
    p = SwarmParams(K, 1, 1, 4, coded=True, q=q, coded_arrivals=[CodedArrival(1)])
    ct = CodedTypes(p)
    assert len(ct) == count
    assert ct.spaces[0].dim == 0 and ct.spaces[ct.full].dim == K


def test_coded_rates_by_enumeration():
    ct = CodedTypes(CODED)
    rng = np.random.default_rng(3)
    vectors = [np.array(v) for v in np.ndindex(2, 2, 2)]
    for _ in range(5):
        x = rng.integers(0, 5, size=len(ct)).astype(float)
        x[ct.full] += 1
        n = x.sum()
        rates = ct.rates(x)[0]
        for t, kind in enumerate(ct.kinds):
            if kind != "upgrade":
                continue
            V = ct.spaces[int(np.flatnonzero(ct.delta[t] < 0)[0])]
            V2 = ct.spaces[int(np.flatnonzero(ct.delta[t] > 0)[0])]

            def lands(u, V=V, V2=V2):
                return V.insert_vector(u)[0] == V2

            seed = sum(lands(u) for u in vectors) / 8
            help_ = 0.0
            for S, xS in zip(ct.spaces, x):
                members = [u for u in vectors if S.contains(u)]
                help_ += xS * sum(lands(u) for u in members) / len(members)
            want = x[ct.index[V]] / n * (1 * seed + 1 * help_)
            assert rates[t] == pytest.approx(want, abs=1e-12)
    # the uniform arrival stream splits over the zero space and the seven lines
    arr = ct.rates(np.ones(len(ct)))[0][:ct.n_arrivals]
    assert arr.sum() == pytest.approx(1.5)


def test_coded_certificate():
    res = find_consts(CODED, certify_count=5000)
    assert res.found and res.certificate.passed
    assert all(isinstance(V, Subspace) for V in res.certificate.worst_state)


def test_coded_limits():
    big = SwarmParams(20, 0, 1, math.inf, coded=True, q=16,
                      coded_arrivals=[CodedArrival(Fraction(4, 5)), CodedArrival(Fraction(1, 5), uniform=True)])
    assert not find_consts(big).found
    with pytest.raises(LyapunovError):
        CodedTypes(big)
    slow = SwarmParams(2, 1, 4, 1, coded=True, q=2, coded_arrivals=[CodedArrival(1)])
    with pytest.raises(LyapunovError):
        LyapunovFunction(slow, CONSTS)
