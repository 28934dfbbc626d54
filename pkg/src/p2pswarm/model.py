"""Swarm parameters, count states and the generator of the uncoded swarm chain.

Piece sets are plain ``int`` bit masks: piece ``i`` (1-based) is bit ``i - 1``.
The full collection for ``K`` pieces is ``full_mask(K)``.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real

import numpy as np

MAX_COUNT_K = 24


class InvalidParams(ValueError):
    """Raised when swarm parameters violate a model assumption."""


def pieceset(pieces: Iterable[int]) -> int:
    m = 0
    for i in pieces:
        if i < 1:
            raise ValueError(f"piece indices are 1-based, got {i}")
        m |= 1 << (i - 1)
    return m


def pieces_of(mask: int) -> tuple[int, ...]:
    out = []
    i = 1
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def full_mask(K: int) -> int:
    return (1 << K) - 1


def popcount(mask: int) -> int:
    return int(mask).bit_count()


def format_pieces(mask: int) -> str:
    return "{" + ",".join(str(i) for i in pieces_of(mask)) + "}"


@dataclass(frozen=True)
class CodedArrival:
    """Arrival stream of coded peers.

    Either ``vectors`` gives an explicit spanning set over F_q, or ``uniform``
    marks peers that arrive holding one coding vector drawn uniformly from
    F_q^K (possibly the zero vector).  Neither means the peer arrives empty.
    """

    rate: Real
    vectors: tuple[tuple[int, ...], ...] | None = None
    uniform: bool = False


@dataclass(frozen=True)
class SwarmParams:
    """Model parameters ``(K, U_s, mu, gamma, lambda)``.

    ``arrivals`` maps a piece-set mask to its arrival rate (uncoded mode).  In
    coded mode ``coded_arrivals`` is used instead and ``q`` is the field size.
    ``gamma`` may be ``math.inf`` (peers leave as soon as they complete).
    """

    K: int
    Us: Real
    mu: Real
    gamma: Real
    arrivals: Mapping[int, Real] = field(default_factory=dict)
    coded: bool = False
    q: int | None = None
    coded_arrivals: tuple[CodedArrival, ...] = ()

    def __post_init__(self):
        if self.K < 1:
            raise InvalidParams(f"K must be >= 1, got {self.K}")
        if not self.mu > 0 or math.isinf(self.mu):
            raise InvalidParams(f"mu must be positive and finite, got {self.mu}")
        if self.Us < 0 or math.isinf(self.Us):
            raise InvalidParams(f"Us must be finite and >= 0, got {self.Us}")
        if not self.gamma > 0:
            raise InvalidParams(f"gamma must be in (0, inf], got {self.gamma}")
        object.__setattr__(self, "arrivals", dict(self.arrivals))
        object.__setattr__(self, "coded_arrivals", tuple(self.coded_arrivals))
        F = full_mask(self.K)
        if self.coded:
            if self.q is None:
                raise InvalidParams("coded mode requires a field size q")
            from p2pswarm.coding import is_prime_power

            if not is_prime_power(self.q) or self.q > 256:
                raise InvalidParams(f"q must be a prime power <= 256, got {self.q}")
            if self.arrivals:
                raise InvalidParams("coded mode takes coded_arrivals, not piece-set arrivals")
            for a in self.coded_arrivals:
                if a.rate < 0:
                    raise InvalidParams(f"negative arrival rate {a.rate}")
                if a.vectors is not None:
                    for v in a.vectors:
                        if len(v) != self.K or any(not 0 <= c < self.q for c in v):
                            raise InvalidParams(f"coding vector {v} is not in F_{self.q}^{self.K}")
            if self.gamma == math.inf and any(
                a.rate > 0 and a.vectors is not None and _rank(a.vectors, self.q) == self.K
                for a in self.coded_arrivals
            ):
                raise InvalidParams("gamma = inf requires no arrivals holding the full space")
        else:
            for m, rate in self.arrivals.items():
                if not 0 <= m <= F:
                    raise InvalidParams(f"arrival type {m:#x} is not a subset of {{1..{self.K}}}")
                if rate < 0:
                    raise InvalidParams(f"negative arrival rate {rate} for type {format_pieces(m)}")
            if self.gamma == math.inf and self.arrivals.get(F, 0) > 0:
                raise InvalidParams("gamma = inf requires lambda_F = 0")
        if not self.lambda_total > 0:
            raise InvalidParams("total arrival rate must be strictly positive")

    @property
    def full(self) -> int:
        return full_mask(self.K)

    @property
    def lambda_total(self):
        if self.coded:
            return sum((a.rate for a in self.coded_arrivals), 0)
        return sum(self.arrivals.values(), 0)

    @property
    def mu_over_gamma(self):
        return 0 if self.gamma == math.inf else self.mu / self.gamma

    @property
    def has_seeds(self) -> bool:
        """True when completed peers dwell as peer seeds."""
        return self.gamma != math.inf

    def rate(self, mask: int):
        return self.arrivals.get(mask, 0)


def _rank(vectors, q) -> int:
    from p2pswarm.coding import Subspace

    return Subspace.span(vectors, q, len(vectors[0])).dim if vectors else 0


class CountState(Mapping[int, int]):
    """Immutable map from piece-set mask to peer count; zero counts are dropped."""

    __slots__ = ("_counts", "_hash", "_n")

    def __init__(self, counts: Mapping[int, int] | Iterable[tuple[int, int]] = ()):
        items = counts.items() if isinstance(counts, Mapping) else counts
        d = {}
        for m, c in items:
            if c < 0:
                raise ValueError(f"negative count {c} for type {format_pieces(m)}")
            if c:
                d[int(m)] = d.get(int(m), 0) + int(c)
        self._counts = d
        self._n = sum(d.values())
        self._hash = None

    @classmethod
    def from_dense(cls, vec) -> CountState:
        return cls((m, int(c)) for m, c in enumerate(vec) if c)

    def to_dense(self, K: int) -> np.ndarray:
        out = np.zeros(1 << K, dtype=np.int64)
        for m, c in self._counts.items():
            out[m] = c
        return out

    def __getitem__(self, mask: int) -> int:
        return self._counts.get(mask, 0)

    def __iter__(self) -> Iterator[int]:
        return iter(self._counts)

    def __len__(self) -> int:
        return len(self._counts)

    def __contains__(self, mask) -> bool:
        return mask in self._counts

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._counts.items()))
        return self._hash

    def __eq__(self, other):
        if isinstance(other, CountState):
            return self._counts == other._counts
        return NotImplemented

    def __repr__(self):
        body = ", ".join(f"{format_pieces(m)}: {c}" for m, c in sorted(self._counts.items()))
        return f"CountState({{{body}}})"

    @property
    def n(self) -> int:
        return self._n

    def shift(self, plus: int | None = None, minus: int | None = None) -> CountState:
        """Return the state with one peer added to ``plus`` and removed from ``minus``."""
        d = dict(self._counts)
        if minus is not None:
            c = d.get(minus, 0) - 1
            if c < 0:
                raise ValueError(f"no peer of type {format_pieces(minus)} to remove")
            if c:
                d[minus] = c
            else:
                del d[minus]
        if plus is not None:
            d[plus] = d.get(plus, 0) + 1
        out = CountState.__new__(CountState)
        out._counts = d
        out._n = self._n + (plus is not None) - (minus is not None)
        out._hash = None
        return out

    def replica_counts(self, K: int) -> tuple[int, ...]:
        reps = [0] * K
        for m, c in self._counts.items():
            for i in pieces_of(m):
                reps[i - 1] += c
        return tuple(reps)


def check_state(state: CountState, params: SwarmParams) -> None:
    F = params.full
    for m in state:
        if not 0 <= m <= F:
            raise ValueError(f"type {m:#x} is not a subset of {{1..{params.K}}}")
    if not params.has_seeds and state[F]:
        raise ValueError("gamma = inf states cannot hold complete peers")


def gamma_rate(state: CountState, params: SwarmParams, C: int, i: int):
    """Aggregate rate at which type-``C`` peers obtain piece ``i``.

    Evaluated with the arithmetic of the inputs, so integer counts and
    ``Fraction`` parameters give an exact result.
    """
    bit = 1 << (i - 1)
    if not 1 <= i <= params.K:
        raise ValueError(f"piece {i} out of range 1..{params.K}")
    if C & bit:
        raise ValueError(f"piece {i} already belongs to {format_pieces(C)}")
    n = state.n
    xC = state[C]
    if n == 0 or xC == 0:
        return 0
    help_ = Fraction(0) if _exact(params) else 0.0
    for S, xS in state.items():
        if S & bit:
            help_ += Fraction(xS, popcount(S & ~C)) if _exact(params) else xS / popcount(S & ~C)
    missing = params.K - popcount(C)
    if _exact(params):
        return Fraction(xC, n) * (Fraction(params.Us) / missing + Fraction(params.mu) * help_)
    return xC / n * (params.Us / missing + params.mu * help_)


def _exact(params: SwarmParams) -> bool:
    return all(isinstance(v, (int, Fraction)) for v in (params.Us, params.mu))


@dataclass(frozen=True)
class Transition:
    kind: str  # "arrival" | "upgrade" | "seed_departure" | "completion"
    source: int | None
    dest: int | None
    target: CountState
    rate: Real


@dataclass
class RateTable:
    """Positive off-diagonal generator entries out of one state.

    ``gamma`` holds ``Gamma_{C,C'}`` keyed by ``(C, C')`` and ``D`` the
    aggregate outflow ``D_C`` of every occupied type.
    """

    entries: list[Transition]
    gamma: dict[tuple[int, int], Real]
    D: dict[int, Real]

    def __iter__(self):
        return ((t.target, t.rate) for t in self.entries)

    def __len__(self):
        return len(self.entries)

    @property
    def total_rate(self):
        return sum((t.rate for t in self.entries), 0)


def neighbors(state: CountState, params: SwarmParams) -> RateTable:
    """Enumerate every transition with positive rate out of ``state``."""
    K, F = params.K, params.full
    entries: list[Transition] = []
    for C, lam in sorted(params.arrivals.items()):
        if lam > 0:
            entries.append(Transition("arrival", None, C, state.shift(plus=C), lam))
    gam: dict[tuple[int, int], Real] = {}
    D: dict[int, Real] = {}
    for C in sorted(state):
        if C == F:
            continue
        total = 0
        for i in range(1, K + 1):
            if C >> (i - 1) & 1:
                continue
            r = gamma_rate(state, params, C, i)
            if not r > 0:
                continue
            C2 = C | (1 << (i - 1))
            gam[(C, C2)] = r
            total += r
            if C2 == F and not params.has_seeds:
                entries.append(Transition("completion", C, None, state.shift(minus=C), r))
            else:
                entries.append(Transition("upgrade", C, C2, state.shift(plus=C2, minus=C), r))
        D[C] = total
    if params.has_seeds and state[F]:
        r = params.gamma * state[F]
        D[F] = r
        entries.append(Transition("seed_departure", F, None, state.shift(minus=F), r))
    return RateTable(entries, gam, D)


def drift(state: CountState, params: SwarmParams, F: Callable[[CountState], float]):
    """Generator applied to ``F`` at ``state``: sum of q(x,x')(F(x') - F(x))."""
    f0 = F(state)
    return sum((t.rate * (F(t.target) - f0) for t in neighbors(state, params).entries), 0)


def upgrade_rate_matrix(masks: np.ndarray, counts: np.ndarray, params: SwarmParams) -> np.ndarray:
    """Vectorised ``Gamma_{C, C+i}`` for occupied types.

    ``masks`` and ``counts`` list the occupied types.  Returns an array of shape
    ``(len(masks), K)``; entry ``[c, i-1]`` is the rate at which type
    ``masks[c]`` peers obtain piece ``i`` (zero when ``i`` is already held).
    """
    K = params.K
    n = counts.sum()
    if n == 0:
        return np.zeros((len(masks), K))
    bits = (masks[:, None] >> np.arange(K)) & 1  # (nnz, K)
    diff = _popcount_arr(masks[None, :] & ~masks[:, None])  # [C, S] = |S - C|
    with np.errstate(divide="ignore"):
        w = np.where(diff > 0, counts[None, :] / np.maximum(diff, 1), 0.0)
    inner = w @ bits  # [C, i]
    missing = K - bits.sum(axis=1)
    seed = np.where(missing > 0, float(params.Us) / np.maximum(missing, 1), 0.0)
    rates = (counts / n)[:, None] * (seed[:, None] + float(params.mu) * inner)
    rates[bits.astype(bool)] = 0.0
    return rates


_POP8 = np.array([i.bit_count() for i in range(256)], dtype=np.int64)


def _popcount_arr(a: np.ndarray) -> np.ndarray:
    a = a.astype(np.int64)
    out = np.zeros(a.shape, dtype=np.int64)
    while np.any(a):
        out += _POP8[a & 0xFF]
        a = a >> 8
    return out


class DenseGenerator:
    """Batch evaluation of transition rates on dense count vectors.

    Every type gets a column (``2**K`` of them), so this is meant for small
    ``K``.  Transitions are enumerated once; ``rates(X)`` returns the rate of
    each transition for every row of ``X``.  ``delta`` is the matching
    displacement matrix, so the neighbours of row ``x`` are ``x + delta[j]``.
    """

    def __init__(self, params: SwarmParams):
        K = params.K
        if K > 10:
            raise ValueError("dense generator is limited to K <= 10")
        self.params = params
        self.K = K
        ntypes = 1 << K
        F = ntypes - 1
        kinds, src, dst = [], [], []
        arr_rates = []
        for C in range(ntypes):
            lam = params.rate(C)
            if lam > 0:
                kinds.append("arrival")
                src.append(-1)
                dst.append(C)
                arr_rates.append(float(lam))
        self.n_arrivals = len(kinds)
        up_C, up_i = [], []
        for C in range(ntypes):
            if C == F:
                continue
            for i in range(K):
                if C >> i & 1:
                    continue
                C2 = C | (1 << i)
                up_C.append(C)
                up_i.append(i)
                src.append(C)
                if C2 == F and not params.has_seeds:
                    kinds.append("completion")
                    dst.append(-1)
                else:
                    kinds.append("upgrade")
                    dst.append(C2)
        self.has_seed_departure = params.has_seeds
        if params.has_seeds:
            kinds.append("seed_departure")
            src.append(F)
            dst.append(-1)
        self.kinds = kinds
        self.src = np.array(src)
        self.dst = np.array(dst)
        self.arrival_rates = np.array(arr_rates, dtype=float)
        self.up_C = np.array(up_C, dtype=np.int64)
        self.up_i = np.array(up_i, dtype=np.int64)
        T = len(kinds)
        delta = np.zeros((T, ntypes), dtype=np.int64)
        for j, (s, d) in enumerate(zip(src, dst)):
            if s >= 0:
                delta[j, s] -= 1
            if d >= 0:
                delta[j, d] += 1
        self.delta = delta
        masks = np.arange(ntypes)
        # G[i][S, C] = 1/|S - C| when i in S and i not in C
        diff = _popcount_arr(masks[:, None] & ~masks[None, :])
        G = np.zeros((K, ntypes, ntypes))
        for i in range(K):
            has = (masks >> i) & 1
            ok = (has[:, None] == 1) & (has[None, :] == 0)
            G[i][ok] = 1.0 / diff[ok]
        self._G = G
        size = _popcount_arr(masks)
        self._seed_share = np.where(size < K, float(params.Us) / np.maximum(K - size, 1), 0.0)

    def rates(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m = X.shape[0]
        n = X.sum(axis=1)
        safe_n = np.where(n > 0, n, 1.0)
        out = np.empty((m, len(self.kinds)))
        out[:, : self.n_arrivals] = self.arrival_rates
        inner = np.einsum("ms,isc->mic", X, self._G)  # [m, i, C]
        Cs, Is = self.up_C, self.up_i
        frac = X[:, Cs] / safe_n[:, None]
        up = frac * (self._seed_share[Cs] + float(self.params.mu) * inner[:, Is, Cs])
        up[n == 0] = 0.0
        nu = len(Cs)
        out[:, self.n_arrivals : self.n_arrivals + nu] = up
        if self.has_seed_departure:
            out[:, -1] = float(self.params.gamma) * X[:, -1]
        return out
