"""Reference computations written independently of the package internals."""

from __future__ import annotations

import math
from itertools import product

import numpy as np
from scipy.sparse import lil_matrix
from scipy.sparse.linalg import spsolve


def k1_stationary(lam0: float, Us: float, mu: float, gamma: float, nmax: int = 400):
    """Stationary law of the one-piece swarm truncated at ``n <= nmax``.

    State ``(a, s)``: ``a`` peers without the piece, ``s`` peer seeds.
    Arrivals are refused at the truncation boundary.  Returns
    ``(mean_n, residual, boundary_mass)``.
    """
    index = {}
    for n in range(nmax + 1):
        for s in range(n + 1):
            index[(n - s, s)] = len(index)
    N = len(index)
    Q = lil_matrix((N, N))
    for (a, s), i in index.items():
        n = a + s
        out = []
        if n < nmax:
            out.append(((a + 1, s), lam0))
        if a > 0:
            out.append(((a - 1, s + 1), a / n * (Us + mu * s)))
        if s > 0:
            out.append(((a, s - 1), gamma * s))
        for dest, rate in out:
            Q[i, index[dest]] += rate
            Q[i, i] -= rate
    A = Q.T.tocsr().tolil()
    A[0, :] = 1.0  # replace one balance equation by normalisation
    b = np.zeros(N)
    b[0] = 1.0
    pi = spsolve(A.tocsr(), b)
    residual = float(np.abs(Q.T.tocsr() @ pi).max())
    mean_n = sum(pi[i] * (a + s) for (a, s), i in index.items())
    boundary = sum(pi[i] for (a, s), i in index.items() if a + s == nmax)
    return float(mean_n), residual, float(boundary)


def naive_gamma(counts: dict, K: int, Us: float, mu: float, C: int, i: int) -> float:
    """Upgrade rate by brute force over individual peers and pieces."""
    peers = [m for m, c in counts.items() for _ in range(c)]
    n = len(peers)
    bit = 1 << (i - 1)
    total = 0.0
    for target in peers:
        if target != C:
            continue
        missing = [j for j in range(K) if not target >> j & 1]
        total += Us / n * (1 / len(missing) if bit & ~target else 0)
        for up in peers:
            useful = [j for j in range(K) if up >> j & 1 and not target >> j & 1]
            if (1 << (i - 1)) & up and useful:
                total += mu / n / len(useful)
    return total


def branching_tree_mc(K: int, c: float, xi: float, trees: int, rng: np.random.Generator,
                      gifted_size: int = 1, mu: float = 1.0):
    """Monte Carlo totals of the two-type branching process.

    A ``b`` individual lives through ``K - 1`` phases of rate ``mu (1 - xi)``
    and then one of rate ``gamma = mu / c``; an ``f`` individual has only the
    last phase; a gifted root holding ``gifted_size`` pieces has
    ``K - gifted_size`` of the first kind.  While alive each one spawns
    ``b`` children at rate ``xi mu`` and ``f`` children at rate ``mu``.
    Returns total progeny (root included) for ``b`` and ``f`` roots and the
    progeny (root excluded) of a gifted root.
    """

    def life(phases):
        out = np.zeros(len(phases))
        has = phases > 0
        out[has] = rng.gamma(phases[has], 1 / (mu * (1 - xi)))
        if c > 0:
            out += rng.exponential(c / mu, size=len(phases))
        return out

    def totals(root_phases):
        count = np.zeros(trees, dtype=np.int64)
        owner = np.arange(trees)
        phases = np.full(trees, root_phases)
        while len(owner):
            L = life(phases)
            nb = rng.poisson(xi * mu * L)
            nf = rng.poisson(mu * L)
            np.add.at(count, owner, nb + nf)
            owner = np.concatenate([np.repeat(owner, nb), np.repeat(owner, nf)])
            phases = np.concatenate([np.full(nb.sum(), K - 1), np.zeros(nf.sum(), dtype=np.int64)])
        return count

    return totals(K - 1) + 1, totals(0) + 1, totals(K - gifted_size)


def kingman_mc(alpha: float, B: float, eps: float, horizon: float, paths: int, rng: np.random.Generator):
    """Fraction of unit-jump Poisson(alpha) paths with C_t < B + eps t for all t <= horizon."""
    ok = 0
    for _ in range(paths):
        t, c, good = 0.0, 0, True
        while True:
            t += rng.exponential(1 / alpha)
            if t > horizon:
                break
            c += 1
            if c >= B + eps * t:
                good = False
                break
        ok += good
    return ok / paths


def mm_infinity_exceed(lam: float, m: float, B: float, eps: float, horizon: float, paths: int,
                       rng: np.random.Generator):
    """Fraction of M/M/inf paths from empty with M_t >= B + eps t at some t <= horizon."""
    hits = 0
    for _ in range(paths):
        t, busy = 0.0, 0
        while True:
            rate = lam + busy / m
            t += rng.exponential(1 / rate)
            if t > horizon:
                break
            if rng.random() < lam / rate:
                busy += 1
                if busy >= B + eps * t:
                    hits += 1
                    break
            else:
                busy -= 1
    return hits / paths


def gf2_vectors(K: int):
    return [np.array(v) for v in product((0, 1), repeat=K)]


def _gf2_span(gens):
    out = {0}
    for g in gens:
        out |= {v ^ g for v in out}
    return frozenset(out)


def gf2_coded_verdict(K: int, Us, mu, gamma, explicit, uniform_rate):
    """Network-coding stability verdict over F_2^K by listing every subspace.

    ``explicit`` is a list of ``(rate, [vectors as bit ints])``; a stream of
    rate ``uniform_rate`` brings one uniformly random vector.  All rates must
    be ``Fraction``s (or ints) and ``gamma`` may be ``math.inf``.
    """
    from fractions import Fraction

    space = range(1 << K)
    subspaces = {_gf2_span([])}
    for _ in range(K):
        subspaces |= {_gf2_span(list(V) + [v]) for V in subspaces for v in space}
    dim = {V: len(V).bit_length() - 1 for V in subspaces}
    lam = {V: Fraction(0) for V in subspaces}
    for rate, vecs in explicit:
        lam[_gf2_span(vecs)] += rate
    for v in space:
        lam[_gf2_span([v])] += Fraction(uniform_rate) / (1 << K)
    total = sum(lam.values())
    hyperplanes = [V for V in subspaces if dim[V] == K - 1]
    q = 2
    mu_t = (1 - Fraction(1, q)) * mu
    ratio = (lambda m: Fraction(0) if gamma == math.inf else Fraction(m) / Fraction(gamma))
    arrivals = [V for V in subspaces if lam[V] > 0]
    spans = len(_gf2_span([v for V in arrivals for v in V])) == 1 << K

    def help_(Vm, extra):
        return Us + sum(lam[V] * (K - dim[V] + extra) for V in subspaces if not V <= Vm)

    if mu < gamma and any(total > help_(Vm, 1) / (1 - ratio(mu)) for Vm in hyperplanes):
        return "Transient"
    if gamma <= mu and Us == 0 and not spans:
        return "Transient"
    if mu_t < gamma and all(
        total < help_(Vm, Fraction(q, q - 1)) * (1 - Fraction(1, q)) / (1 - ratio(mu_t)) for Vm in hyperplanes
    ):
        return "PositiveRecurrent"
    if gamma <= mu_t and (Us > 0 or spans):
        return "PositiveRecurrent"
    return "Unknown"
