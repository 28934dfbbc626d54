"""Lyapunov functions for the uncoded swarm and sampled drift certificates.

For every type ``C`` let ``E_C`` count the peers whose collection lies
inside ``C`` and ``H_C`` weigh the peers that can still help them::

    E_C  = sum_{C' <= C} x_C'
    H_C  = sum_{C' not <= C} (K - |C'| + c) x_C' / (1 - c),     c = mu / gamma
    H'_C = sum_{C' not <= C} (K + 1 - |C'|) x_C'

With the bump function ``phi`` below, the candidate function is

    W = sum_{C != F} r^|C| (E_C^2 / 2 + alpha E_C phi(H_C))  [+ r^K n^2 / 2 if gamma < inf]

and, for ``gamma <= mu``, ``W'`` uses ``p`` and ``H'`` in place of ``alpha``
and ``H``.  Drifts are evaluated exactly through the generator, one
transition at a time, and certified on random large states.

Coded swarms use the same ``W`` with subspaces as types and ``dim V`` in
place of ``|C|``.  Only a share ``1 - 1/q`` of uploads from a helper lets a
peer escape a hyperplane, so ``H`` becomes::

    H_V = sum_{S not <= V} (1 - 1/q) (K - dim S + c) x_S / (1 - c~),   c~ = (1 - 1/q) c

The
subspace lattice is enumerated, so this is limited to tiny fields and
files (``q = 2, K <= 3`` and the like).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from p2pswarm.analyze import Verdict, classify
from p2pswarm.coding import Subspace
from p2pswarm.model import CountState, DenseGenerator, SwarmParams, _popcount_arr, drift


class LyapunovError(ValueError):
    """Constants or parameters outside the regime a function is built for."""


@dataclass(frozen=True)
class LyapConsts:
    r: float
    d: float
    beta: float
    alpha: float
    eps: float
    n_o: float
    xi: float = 0.0
    p: float | None = None

    @property
    def M_phi(self) -> float:
        return 3 * self.d + 1 / self.beta

    def as_dict(self) -> dict:
        out = asdict(self)
        out["M_phi"] = self.M_phi
        return out


def _effective_ratio(params: SwarmParams) -> float:
    """``mu / gamma``, or ``mu~ / gamma`` for a coded swarm."""
    c = float(params.mu_over_gamma)
    return c * (1 - 1 / params.q) if params.coded else c


def _uses_W(params: SwarmParams) -> bool:
    return _effective_ratio(params) < 1


def _help_weight(params: SwarmParams, size):
    """Weight of a helper holding ``size`` pieces (or dimensions) in ``H``."""
    c = float(params.mu_over_gamma)
    if not params.coded:
        return (params.K - size + c) / (1 - c)
    esc = 1 - 1 / params.q
    return esc * (params.K - size + c) / (1 - esc * c)


def _jump_bound(params: SwarmParams) -> float:
    """Largest change of H_C in one transition, ``(K + c) / (1 - c)`` when uncoded."""
    return float(_help_weight(params, 0))


def check_consts(consts: LyapConsts, params: SwarmParams) -> None:
    """Raise ``LyapunovError`` unless ``consts`` fit the function for ``params``."""
    c = consts
    if not 0 < c.r < 0.5:
        raise LyapunovError(f"r must lie in (0, 1/2), got {c.r}")
    if not c.d > 1:
        raise LyapunovError(f"d must exceed 1, got {c.d}")
    if not 0 < c.beta < 0.5:
        raise LyapunovError(f"beta must lie in (0, 1/2), got {c.beta}")
    if not 0 < c.eps < 0.5:
        raise LyapunovError(f"eps must lie in (0, 1/2), got {c.eps}")
    if not c.n_o > 0:
        raise LyapunovError("n_o must be positive")
    if c.M_phi <= 1:
        raise LyapunovError("M_phi must exceed 1")
    if _uses_W(params):
        if not 0.5 < c.alpha < 1:
            raise LyapunovError(f"alpha must lie in (1/2, 1), got {c.alpha}")
        if c.beta * _jump_bound(params) ** 2 > 1 / c.alpha - 1 + 1e-12:
            raise LyapunovError("beta * ((K + c) / (1 - c))^2 must not exceed 1/alpha - 1")
    else:
        if params.coded:
            raise LyapunovError("coded swarms are covered only when (1 - 1/q) mu < gamma")
        if c.p is None or not c.p > 0:
            raise LyapunovError("W' needs a positive scaling p")
        margins = p_margins(params, c.p)
        if max(margins) >= 0:
            raise LyapunovError("p too small: some type is not out-helped")


# phi -------------------------------------------------------------------------


def phi(x, d: float, beta: float):
    """Decreasing C^1 bump: slope -1 up to ``2d``, quadratic blend, then 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("phi is defined for x >= 0")
    knee, end = 2 * d, 2 * d + 1 / beta
    out = np.where(x <= knee, knee + 1 / (2 * beta) - x, 0.5 * beta * (x - end) ** 2)
    out = np.where(x >= end, 0.0, out)
    return out if out.ndim else float(out)


def phi_prime(x, d: float, beta: float):
    x = np.asarray(x, dtype=float)
    knee, end = 2 * d, 2 * d + 1 / beta
    out = np.where(x <= knee, -1.0, np.where(x >= end, 0.0, beta * (x - end)))
    return out if out.ndim else float(out)


# aggregates ------------------------------------------------------------------


class Aggregates:
    """Linear maps from dense count vectors to ``E``, ``H`` and ``H'``.

    ``E = X @ Emat`` etc.; column ``C`` belongs to type ``C``.
    """

    def __init__(self, params: SwarmParams):
        K = params.K
        if K > 10:
            raise LyapunovError("dense Lyapunov evaluation is limited to K <= 10")
        masks = np.arange(1 << K)
        size = _popcount_arr(masks)
        inside = (masks[:, None] & ~masks[None, :]) == 0  # [C', C]: C' <= C
        self.K = K
        self.size = size
        self.Emat = inside.astype(float)
        Hp = np.where(~inside, (K + 1 - size)[:, None], 0)
        self.Hpmat = Hp.astype(float)
        if params.mu < params.gamma:
            self.Hmat = np.where(~inside, _help_weight(params, size)[:, None], 0.0)
        else:
            self.Hmat = None


def aggregates(state: CountState, params: SwarmParams) -> tuple[dict, dict, dict]:
    """``(E, H, H')`` as dicts keyed by type; ``H`` is empty when ``mu >= gamma``."""
    agg = Aggregates(params)
    x = state.to_dense(params.K).astype(float)
    E = x @ agg.Emat
    Hp = x @ agg.Hpmat
    H = x @ agg.Hmat if agg.Hmat is not None else None
    types = range(1 << params.K)
    return (
        {C: E[C] for C in types},
        {C: H[C] for C in types} if H is not None else {},
        {C: Hp[C] for C in types},
    )


# coded type space -------------------------------------------------------------

MAX_CODED_TYPES = 64


class CodedTypes:
    """All subspaces of F_q^K with the generator and aggregates over them.

    Subspaces are sorted by dimension, so index 0 is the zero space and the
    last index the whole space.  ``rates(X)`` and ``delta`` follow the
    ``DenseGenerator`` conventions, with columns indexed by subspace.
    """

    def __init__(self, params: SwarmParams):
        if not params.coded:
            raise LyapunovError("CodedTypes needs a coded swarm")
        q, K = params.q, params.K
        if q**K > MAX_CODED_TYPES:
            raise LyapunovError(f"F_{q}^{K} has too many subspaces to enumerate")
        self.params = params
        self.K = K
        found = {Subspace.zero(q, K)}
        frontier = list(found)
        vectors = [np.array(v) for v in np.ndindex(*(q,) * K)]
        while frontier:
            nxt = []
            for V in frontier:
                for v in vectors:
                    W_, grew = V.insert_vector(v)
                    if grew and W_ not in found:
                        found.add(W_)
                        nxt.append(W_)
                        if len(found) > MAX_CODED_TYPES:
                            raise LyapunovError(f"F_{q}^{K} has too many subspaces to enumerate")
            frontier = nxt
        self.spaces = sorted(found, key=lambda V: (V.dim, V.pivots, V.rows.tobytes()))
        self.index = {V: i for i, V in enumerate(self.spaces)}
        m = len(self.spaces)
        self.full = m - 1
        self.size = np.array([V.dim for V in self.spaces])
        inside = np.array([[A.is_subspace_of(B) for B in self.spaces] for A in self.spaces])
        inter = np.array([[A.intersection_dim(B) for B in self.spaces] for A in self.spaces])
        self.Emat = inside.astype(float)  # [V', V]: V' <= V
        self.Hmat = np.where(~inside, _help_weight(params, self.size)[:, None], 0.0)
        self.Hpmat = np.where(~inside, (K + 1 - self.size)[:, None], 0).astype(float)

        arr = np.zeros(m)
        line_share = (q - 1) / q**K
        for a in params.coded_arrivals:
            if not a.rate > 0:
                continue
            if a.uniform:
                arr[0] += float(a.rate) / q**K
                for i, V in enumerate(self.spaces):
                    if V.dim == 1:
                        arr[i] += float(a.rate) * line_share
            else:
                arr[self.index[Subspace.span(a.vectors or (), q, K)]] += float(a.rate)
        arr_types = np.flatnonzero(arr > 0)
        kinds, src, dst = ["arrival"] * len(arr_types), [-1] * len(arr_types), list(arr_types)
        self.n_arrivals = len(kinds)
        self.arrival_rates = arr[arr_types]
        up_src, up_gain, up_seed = [], [], []
        for i, V in enumerate(self.spaces):
            for j, V2 in enumerate(self.spaces):
                if V2.dim != V.dim + 1 or not inside[i, j]:
                    continue
                # a uniform vector of S lands in V2 - V with chance (|S & V2| - |S & V|) / |S|
                gain = (q ** inter[:, j] - q ** inter[:, i]) / q ** self.size.astype(float)
                up_src.append(i)
                up_gain.append(gain)
                up_seed.append((q**V2.dim - q**V.dim) / q**K)
                src.append(i)
                if j == self.full and not params.has_seeds:
                    kinds.append("completion")
                    dst.append(-1)
                else:
                    kinds.append("upgrade")
                    dst.append(j)
        self.has_seed_departure = params.has_seeds
        if params.has_seeds:
            kinds.append("seed_departure")
            src.append(self.full)
            dst.append(-1)
        self.kinds = kinds
        self.up_src = np.array(up_src, dtype=np.int64)
        self.up_gain = np.array(up_gain)  # [upgrades, S]
        self.up_seed = np.array(up_seed)
        delta = np.zeros((len(kinds), m), dtype=np.int64)
        for t, (a_, b_) in enumerate(zip(src, dst)):
            if a_ >= 0:
                delta[t, a_] -= 1
            if b_ >= 0:
                delta[t, b_] += 1
        self.delta = delta

    def __len__(self):
        return len(self.spaces)

    def rates(self, X: np.ndarray) -> np.ndarray:
        p = self.params
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.sum(axis=1)
        safe_n = np.where(n > 0, n, 1.0)
        help_ = float(p.Us) * self.up_seed[None, :] + float(p.mu) * (X @ self.up_gain.T)
        up = X[:, self.up_src] / safe_n[:, None] * help_
        parts = [np.broadcast_to(self.arrival_rates, (len(X), self.n_arrivals)), up]
        if self.has_seed_departure:
            parts.append(float(p.gamma) * X[:, [self.full]])
        return np.concatenate(parts, axis=1)

    def dense(self, state) -> np.ndarray:
        """Dense count vector of a ``{Subspace: count}`` mapping."""
        out = np.zeros(len(self.spaces))
        for V, c in state.items():
            out[self.index[V]] += c
        return out

    def sparse(self, x) -> dict:
        return {self.spaces[i]: int(c) for i, c in enumerate(x) if c}


# the functions ---------------------------------------------------------------


class LyapunovFunction:
    """Batch evaluator of ``W`` (``mu < gamma``) or ``W'`` (``gamma <= mu``)."""

    def __init__(self, params: SwarmParams, consts: LyapConsts, check: bool = True):
        self.prime = not _uses_W(params)
        if params.coded and self.prime:
            raise LyapunovError("coded swarms are covered only when (1 - 1/q) mu < gamma")
        if check:
            check_consts(consts, params)
        self.params = params
        self.consts = consts
        if params.coded:
            self.agg = self.gen = CodedTypes(params)
            F = self.agg.full
        else:
            self.agg = Aggregates(params)
            self.gen = DenseGenerator(params)
            F = (1 << params.K) - 1
        w = consts.r ** self.agg.size.astype(float)
        w[F] = 0.0  # E_F = n and H_F = 0; the F term is handled separately
        self.weights = w
        self.with_n2 = params.has_seeds
        self.coef = consts.p if self.prime else consts.alpha
        self.Hmat = self.agg.Hpmat if self.prime else self.agg.Hmat
        self.dE = self.gen.delta @ self.agg.Emat  # [T, types]
        self.dH = self.gen.delta @ self.Hmat
        self.dn = self.gen.delta.sum(axis=1)

    def _phi(self, x):
        return phi(np.maximum(x, 0.0), self.consts.d, self.consts.beta)

    def value(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        E = X @ self.agg.Emat
        H = X @ self.Hmat
        T = 0.5 * E**2 + self.coef * E * self._phi(H)
        out = T @ self.weights
        if self.with_n2:
            n = X.sum(axis=1)
            out = out + self.consts.r**self.params.K * 0.5 * n**2
        return out

    def drift(self, X, approx: bool = False) -> np.ndarray:
        """Exact generator drift ``Q(W)`` (or its approximation ``L W``) for each row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(len(X))
        for lo in range(0, len(X), 256):
            out[lo:lo + 256] = self._drift_chunk(X[lo:lo + 256], approx)
        return out

    def _drift_chunk(self, X, approx):
        rates = self.gen.rates(X)  # [m, T]
        E = X @ self.agg.Emat  # [m, types]
        H = X @ self.Hmat
        ph = self._phi(H)
        H2 = H[:, None, :] + self.dH[None, :, :]  # [m, T, types]
        dphi = self._phi(H2) - ph[:, None, :]
        dE = self.dE[None, :, :]
        c = self.coef
        if approx:
            QE = rates @ self.dE  # [m, types]
            Qphi = np.einsum("mt,mtc->mc", rates, dphi)
            LT = E * QE + c * E * Qphi
            total = LT @ self.weights
            if self.with_n2:
                n = X.sum(axis=1)
                total += self.consts.r**self.params.K * n * (rates @ self.dn)
            return total
        dT = E[:, None, :] * dE + 0.5 * dE**2 + c * (E[:, None, :] * dphi + dE * (ph[:, None, :] + dphi))
        total = np.einsum("mt,mtc,c->m", rates, dT, self.weights)
        if self.with_n2:
            n = X.sum(axis=1)
            dn = self.dn[None, :]
            total += self.consts.r**self.params.K * (rates * (n[:, None] * dn + 0.5 * dn**2)).sum(axis=1)
        return total


def W(state: CountState, params: SwarmParams, consts: LyapConsts) -> float:
    if not params.mu < params.gamma:
        raise LyapunovError("W is built for mu < gamma; use W_prime")
    return float(LyapunovFunction(params, consts).value(state.to_dense(params.K))[0])


def W_prime(state: CountState, params: SwarmParams, consts: LyapConsts) -> float:
    if params.mu < params.gamma:
        raise LyapunovError("W' is built for gamma <= mu; use W")
    return float(LyapunovFunction(params, consts).value(state.to_dense(params.K))[0])


def exact_drift(state: CountState, params: SwarmParams, consts: LyapConsts) -> float:
    return float(LyapunovFunction(params, consts).drift(state.to_dense(params.K))[0])


def approx_drift_LW(state: CountState, params: SwarmParams, consts: LyapConsts) -> float:
    return float(LyapunovFunction(params, consts).drift(state.to_dense(params.K), approx=True)[0])


def total_outflow(X, params: SwarmParams) -> np.ndarray:
    """``D_total``: total rate of upgrades, completions and seed departures."""
    gen = DenseGenerator(params)
    return gen.rates(X)[:, gen.n_arrivals:].sum(axis=1)


# the p scaling for W' -------------------------------------------------------------


def p_margins(params: SwarmParams, p: float) -> list[float]:
    """``lambda_{E_C} - p (U_s + lambda*_{H_C})`` for every ``C != F``."""
    K, F = params.K, params.full
    c = float(params.mu_over_gamma)
    out = []
    for C in range(F):
        inner = sum(float(lam) for S, lam in params.arrivals.items() if S & ~C == 0)
        helpers = sum(float(lam) * (K - S.bit_count() + c) for S, lam in params.arrivals.items() if S & ~C)
        out.append(inner - p * (float(params.Us) + helpers))
    return out


def default_p(params: SwarmParams) -> float:
    """Twice the smallest scaling that out-helps every type (1 if none is needed)."""
    K, F = params.K, params.full
    c = float(params.mu_over_gamma)
    worst = 0.0
    for C in range(F):
        inner = sum(float(lam) for S, lam in params.arrivals.items() if S & ~C == 0)
        helpers = float(params.Us) + sum(
            float(lam) * (K - S.bit_count() + c) for S, lam in params.arrivals.items() if S & ~C
        )
        if helpers <= 0:
            if inner > 0:
                raise LyapunovError("some type gets no help at all")
            continue
        worst = max(worst, inner / helpers)
    return 2 * worst if worst > 0 else 1.0


# samplers --------------------------------------------------------------------


class StateSampler:
    """Random large states covering both classes of the drift argument.

    * class I: one type ``S != F`` holds all but a share below ``eps``;
      the remainder is often tiny and concentrated on few types.
    * class II: two types each hold more than ``eps / 2^K`` of the peers.
    * uniform: Dirichlet(1) compositions.

    ``n`` is log-uniform on ``[n_o, 32 n_o]``.
    """

    def __init__(self, params: SwarmParams, eps: float, n_o: float, seed=0, mix=(0.5, 0.3, 0.2)):
        self.K = params.K
        if params.coded:
            self.ntypes = len(CodedTypes(params))
        else:
            self.ntypes = 1 << self.K
        self.F = self.ntypes - 1
        self.types = np.arange(self.ntypes)
        if not params.has_seeds:
            self.types = self.types[self.types != self.F]
        self.eps = eps
        self.n_o = n_o
        self.rng = np.random.default_rng(seed)
        self.mix = np.asarray(mix, float) / np.sum(mix)

    def _n(self):
        return round(self.n_o * 32 ** self.rng.random())

    def _spread(self, total, types, conc):
        out = np.zeros(self.ntypes)
        if total <= 0 or len(types) == 0:
            return out
        w = self.rng.dirichlet(np.full(len(types), conc))
        out[types] = self.rng.multinomial(total, w)
        return out

    def class_one(self):
        n = self._n()
        S = self.rng.choice(self.types[self.types != self.F])
        rest = math.floor(self.eps * n * self.rng.random() ** 4)
        rest = min(rest, math.ceil(self.eps * n) - 1)
        others = self.types[self.types != S]
        k = self.rng.integers(1, len(others) + 1)
        chosen = self.rng.choice(others, size=k, replace=False)
        x = self._spread(max(rest, 0), chosen, 0.3)
        x[S] += n - x.sum()
        return x

    def class_two(self):
        n = self._n()
        eta = self.eps / self.ntypes
        base = math.floor(eta * n) + 1
        if self.F in self.types and self.rng.random() < 1 / len(self.types):
            pair = [self.F]
        else:
            pair = self.rng.choice(self.types, size=2, replace=False)
        x = np.zeros(self.ntypes)
        x[pair] = base
        x += self._spread(n - base * len(pair), self.types, 0.5)
        return x

    def uniform(self):
        return self._spread(self._n(), self.types, 1.0)

    def sample(self, count: int) -> np.ndarray:
        kinds = self.rng.choice(3, size=count, p=self.mix)
        make = (self.class_one, self.class_two, self.uniform)
        return np.array([make[k]() for k in kinds])


# certificates ----------------------------------------------------------------


@dataclass
class Certificate:
    passed: bool
    consts: LyapConsts
    max_ratio: float  # max over samples of Q(W) / n
    worst_state: CountState | dict  # {Subspace: count} for a coded swarm
    count: int
    n_range: tuple[float, float]

    def summary(self) -> str:
        verdict = "passed" if self.passed else "failed"
        return (f"drift certificate {verdict}: max Q(W)/n = {self.max_ratio:.6g} "
                f"(need <= {-self.consts.xi:.6g}) over {self.count} states, "
                f"n in [{self.n_range[0]:.6g}, {self.n_range[1]:.6g}]")


def certify_drift(params: SwarmParams, consts: LyapConsts, sampler: StateSampler | None = None,
                  count: int = 10_000, seed=0) -> Certificate:
    """Check ``Q(W) <= -xi n`` on ``count`` sampled states with ``n >= n_o``."""
    fn = LyapunovFunction(params, consts)
    sampler = sampler or StateSampler(params, consts.eps, consts.n_o, seed)
    X = sampler.sample(count)
    n = X.sum(axis=1)
    if np.any(n < consts.n_o):
        raise LyapunovError("sampler produced states below n_o")
    ratio = fn.drift(X) / n
    worst = int(np.argmax(ratio))
    return Certificate(
        passed=bool(ratio[worst] <= -consts.xi) and consts.xi > 0,
        consts=consts,
        max_ratio=float(ratio[worst]),
        worst_state=(fn.agg.sparse(X[worst]) if params.coded
                     else CountState.from_dense(X[worst].astype(np.int64))),
        count=count,
        n_range=(float(n.min()), float(n.max())),
    )


@dataclass
class SearchResult:
    found: bool
    consts: LyapConsts | None
    certificate: Certificate | None
    best_margin: float
    tried: int
    reason: str = ""


def _ladder(params: SwarmParams):
    """Candidate constant tuples, most natural first."""
    J = _jump_bound(params)
    prime = not _uses_W(params)
    p = default_p(params) if prime else None
    d0 = max(2.0, J + 1.0) if not prime else float(params.K + 2)
    for d in (d0, 2 * d0, 4 * d0):
        for alpha in ((0.9, 0.97, 0.99) if not prime else (0.9,)):
            if prime:
                beta = min(0.25, 1 / (4 * p * (params.K + 1) ** 2))
            else:
                beta = min((1 / alpha - 1) / J**2, 1 / (4 * J))
            for r in (0.45, 0.3, 0.15):
                for eps in (0.05, 0.01):
                    for n_o in (1e3, 1e4, 1e5, 1e6):
                        yield LyapConsts(r=r, d=d, beta=beta, alpha=alpha, eps=eps, n_o=n_o, p=p)


def find_consts(params: SwarmParams, search_count: int = 2000, certify_count: int = 10_000,
                seed=0, budget: int | None = None) -> SearchResult:
    """Staged search for constants whose drift certificate passes.

    Each candidate is screened on ``search_count`` states; ``xi`` is set to
    half the smallest observed ``-Q(W)/n`` and then checked on a fresh sample
    of ``certify_count`` states.
    """
    verdict = classify(params)
    if verdict.verdict != Verdict.POSITIVE_RECURRENT:
        return SearchResult(False, None, None, math.inf, 0,
                            f"no certificate is possible: the swarm is {verdict.verdict}")
    if params.coded:
        if not _uses_W(params):
            return SearchResult(False, None, None, math.inf, 0,
                                "coded swarms are covered only when (1 - 1/q) mu < gamma")
        try:
            CodedTypes(params)
        except LyapunovError as e:
            return SearchResult(False, None, None, math.inf, 0, str(e))
    best = -math.inf
    tried = 0
    for consts in _ladder(params):
        if budget is not None and tried >= budget:
            break
        tried += 1
        try:
            check_consts(consts, params)
        except LyapunovError:
            continue
        fn = LyapunovFunction(params, consts)
        X = StateSampler(params, consts.eps, consts.n_o, seed=(seed, tried)).sample(search_count)
        worst = float(np.max(fn.drift(X) / X.sum(axis=1)))
        best = max(best, -worst)
        if worst >= 0:
            continue
        cand = replace(consts, xi=-worst / 2)
        cert = certify_drift(params, cand, StateSampler(params, cand.eps, cand.n_o, seed=(seed, tried, 1)),
                             certify_count)
        if cert.passed:
            return SearchResult(True, cand, cert, -cert.max_ratio, tried)
    return SearchResult(False, None, None, best, tried, "no candidate on the ladder passed")


def positive_drift_witness(params: SwarmParams, consts: LyapConsts, count: int = 10_000, seed=0) -> Certificate:
    """Certificate run without a target slope; ``max_ratio > 0`` exposes a bad state."""
    return certify_drift(params, replace(consts, xi=0.0), count=count, seed=seed)


# the composition inequality ------------------------------------------------------


def composed_drift_bound_check(state: CountState, params: SwarmParams, f, V, M: float,
                               tol: float = 1e-9) -> bool:
    """Check ``Q V(f) <= V'(f) Q f + (M/2) sum q (f' - f)^2`` at ``state``.

    ``V`` is a pair ``(value, derivative)`` with ``derivative`` Lipschitz-``M``.
    """
    value, deriv = V
    f0 = f(state)
    lhs = drift(state, params, lambda s: value(f(s)))
    from p2pswarm.model import neighbors

    entries = neighbors(state, params).entries
    Qf = sum(float(t.rate) * (f(t.target) - f0) for t in entries)
    quad = sum(float(t.rate) * (f(t.target) - f0) ** 2 for t in entries)
    rhs = deriv(f0) * Qf + 0.5 * M * quad
    return bool(lhs <= rhs + tol * max(1.0, abs(rhs)))
