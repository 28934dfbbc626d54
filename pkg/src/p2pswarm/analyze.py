"""Closed-form stability classification, branching moments and tail bounds."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real

from p2pswarm.model import SwarmParams, format_pieces, full_mask, popcount


class Verdict(str, enum.Enum):
    POSITIVE_RECURRENT = "PositiveRecurrent"
    TRANSIENT = "Transient"
    BORDERLINE = "Borderline"
    UNKNOWN = "Unknown"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class StabilityVerdict:
    """Outcome of a stability classification.

    ``margins`` maps a piece ``k`` to the margin of the one-club set
    ``F - {k}`` (positive means that piece can go missing for good).  In
    coded mode the keys are ``"transient"`` and ``"recurrent"`` and hold the
    worst-case margin of the matching sufficient condition.
    """

    verdict: Verdict
    margins: dict = field(default_factory=dict)
    binding: tuple = ()
    reason: str = ""

    def __str__(self):
        return f"{self.verdict} ({self.reason})"


def _exact(x):
    """Exact rational copy of ``x``; infinities pass through."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return x if math.isinf(x) else Fraction(x)
    return Fraction(x)


def _ratio(mu, gamma):
    return Fraction(0) if gamma == math.inf else mu / gamma


def delta_S(params: SwarmParams, S: int) -> Fraction:
    """Arrival rate into the types below ``S`` minus the long-run help they get.

    Exact rational arithmetic; requires ``mu < gamma``.
    """
    K, F = params.K, params.full
    if S == F or not 0 <= S <= F:
        raise ValueError(f"S must be a proper subset of {{1..{K}}}, got {format_pieces(S)}")
    mu, gamma = _exact(params.mu), _exact(params.gamma)
    if not mu < gamma:
        raise ValueError("delta_S needs mu < gamma")
    c = _ratio(mu, gamma)
    inside = Fraction(0)
    helpers = _exact(params.Us)
    for C, lam in params.arrivals.items():
        lam = _exact(lam)
        if C & ~S == 0:
            inside += lam
        else:
            helpers += lam * (K - popcount(C) + c)
    return inside - helpers / (1 - c)


def one_club_margins(params: SwarmParams) -> dict[int, Fraction]:
    """Margin of every one-club set F - {k}, keyed by the missing piece k."""
    F = params.full
    return {k: delta_S(params, F & ~(1 << (k - 1))) for k in range(1, params.K + 1)}


def piece_can_enter(params: SwarmParams, k: int) -> bool:
    bit = 1 << (k - 1)
    return params.Us > 0 or any(lam > 0 and C & bit for C, lam in params.arrivals.items())


def classify(params: SwarmParams) -> StabilityVerdict:
    """Classify the uncoded swarm as positive recurrent, transient or borderline."""
    if params.coded:
        return classify_coded(params)
    mu, gamma = _exact(params.mu), _exact(params.gamma)
    K = params.K
    if mu < gamma:
        margins = one_club_margins(params)
        worst = max(margins.values())
        if worst > 0:
            binding = tuple(k for k, d in margins.items() if d > 0)
            return StabilityVerdict(
                Verdict.TRANSIENT, margins, binding,
                "mu < gamma and the one-club margin is positive for some piece",
            )
        if worst < 0:
            top = tuple(k for k, d in margins.items() if d == worst)
            return StabilityVerdict(
                Verdict.POSITIVE_RECURRENT, margins, top,
                "mu < gamma and every one-club margin is negative",
            )
        binding = tuple(k for k, d in margins.items() if d == 0)
        return StabilityVerdict(
            Verdict.BORDERLINE, margins, binding,
            "mu < gamma and the largest one-club margin is exactly zero",
        )
    blocked = tuple(k for k in range(1, K + 1) if not piece_can_enter(params, k))
    if blocked:
        return StabilityVerdict(
            Verdict.TRANSIENT, {}, blocked,
            "gamma <= mu and some piece can never enter the system",
        )
    return StabilityVerdict(
        Verdict.POSITIVE_RECURRENT, {}, (),
        "gamma <= mu and every piece can enter the system",
    )


# coded mode -----------------------------------------------------------------


def _coded_pieces(params: SwarmParams):
    """Split coded arrivals into explicit subspaces and uniform-vector mass."""
    from p2pswarm.coding import Subspace

    explicit = []
    uniform = Fraction(0)
    for a in params.coded_arrivals:
        rate = _exact(a.rate)
        if rate == 0:
            continue
        if a.uniform:
            uniform += rate
        else:
            V = Subspace.span(a.vectors or (), params.q, params.K)
            explicit.append((V, rate))
    return explicit, uniform


def _best_hyperplane_mass(explicit, weight, q, K):
    """Largest total weight of explicit arrival subspaces that fit in one hyperplane."""
    from p2pswarm.coding import Subspace

    items = [(V, weight(V) * rate) for V, rate in explicit if V.dim < K]
    items.sort(key=lambda t: -t[1])
    best = Fraction(0)

    def dfs(idx, span, acc):
        nonlocal best
        best = max(best, acc)
        if idx == len(items):
            return
        rest = sum((w for _, w in items[idx:]), Fraction(0))
        if acc + rest <= best:
            return
        V, w = items[idx]
        s = span
        for row in V.rows:
            s, _ = s.insert_vector(row)
        if s.dim < K:
            dfs(idx + 1, s, acc + w)
        dfs(idx + 1, span, acc)

    if len(items) > 24:
        raise ValueError("too many explicit coded arrival streams to search hyperplanes")
    dfs(0, Subspace.zero(q, K), Fraction(0))
    return best


def _arrivals_span(explicit, uniform, q, K) -> bool:
    from p2pswarm.coding import Subspace

    if uniform > 0:
        return True
    s = Subspace.zero(q, K)
    for V, _ in explicit:
        for row in V.rows:
            s, _ = s.insert_vector(row)
    return s.dim == K


def classify_coded(params: SwarmParams) -> StabilityVerdict:
    """Stability verdict for random linear network coding over F_q.

    Uniform-vector arrivals are aggregated by dimension: such a peer escapes
    a fixed hyperplane with probability ``1 - 1/q`` regardless of which
    hyperplane, and then holds a line.  Returns ``Unknown`` in the gap
    between the necessary and the sufficient condition.
    """
    if not params.coded:
        raise ValueError("classify_coded needs coded params")
    q, K = params.q, params.K
    mu, gamma, Us = _exact(params.mu), _exact(params.gamma), _exact(params.Us)
    lam_total = _exact(params.lambda_total)
    explicit, uniform = _coded_pieces(params)
    escape = 1 - Fraction(1, q)
    mu_t = escape * mu
    margins = {}

    def worst_rhs_sum(extra):
        # smallest sum over V not in V^- of rate * (K - dim V + extra)
        weight = lambda V: K - V.dim + extra
        total = sum((rate * weight(V) for V, rate in explicit), Fraction(0))
        total -= _best_hyperplane_mass(explicit, weight, q, K)
        return total + uniform * escape * (K - 1 + extra)

    spans = _arrivals_span(explicit, uniform, q, K)
    transient_reason = recurrent_reason = None
    if mu < gamma:
        c = _ratio(mu, gamma)
        rhs = (Us + worst_rhs_sum(1)) / (1 - c)
        margins["transient"] = lam_total - rhs
        if lam_total > rhs:
            transient_reason = "mu < gamma and some hyperplane is starved"
    elif Us == 0 and not spans:
        transient_reason = "gamma <= mu, no fixed seed and arrivals do not span F_q^K"
    if mu_t < gamma:
        c_t = _ratio(mu_t, gamma)
        rhs = (Us + worst_rhs_sum(Fraction(q, q - 1))) * escape / (1 - c_t)
        margins["recurrent"] = lam_total - rhs
        if lam_total < rhs:
            recurrent_reason = "every hyperplane receives enough coded help"
    elif Us > 0 or spans:
        recurrent_reason = "gamma <= (1-1/q) mu and new coded pieces span F_q^K"
    if transient_reason:
        return StabilityVerdict(Verdict.TRANSIENT, margins, (), transient_reason)
    if recurrent_reason:
        return StabilityVerdict(Verdict.POSITIVE_RECURRENT, margins, (), recurrent_reason)
    return StabilityVerdict(Verdict.UNKNOWN, margins, (), "between the necessary and sufficient conditions")


def uniform_gift_thresholds(q: int, K: int) -> tuple[Fraction, Fraction]:
    """Gifted fractions bounding the gap for the one-uniform-vector arrival model.

    With empty arrivals plus a fraction ``f`` of peers bringing one uniform
    coding vector (no fixed seed, gamma = inf): transient for ``f`` below the
    first value, positive recurrent above the second.
    """
    escape = 1 - Fraction(1, q)
    lo = 1 / (escape * K)
    hi = 1 / (escape * escape * (K - 1 + Fraction(q, q - 1)))
    return lo, hi


# branching moments ----------------------------------------------------------


@dataclass(frozen=True)
class BranchingMoments:
    """Mean total progeny of the two-type branching bound on piece-one uploads.

    ``m_b``/``m_f`` count the root itself plus all descendants of an infected
    / former one-club root.  ``m_g(size)`` gives the descendants (root
    excluded) of a gifted root that arrived holding ``size`` pieces.
    """

    K: int
    mu_over_gamma: Real
    xi: Real
    m_b: Real
    m_f: Real
    finite: bool

    def m_g(self, size: int) -> Real:
        if not self.finite:
            return math.inf
        return ((self.K - size) / (1 - self.xi) + self.mu_over_gamma) * (self.xi * self.m_b + self.m_f)


def branching_moments(K: int, mu: Real, gamma: Real, xi: Real) -> BranchingMoments:
    if not 0 < mu < gamma:
        raise ValueError("branching moments need 0 < mu < gamma")
    if not 0 <= xi < 1:
        raise ValueError("xi must lie in [0, 1)")
    c = 0 if gamma == math.inf else mu / gamma
    a = (K - 1) / (1 - xi) + c
    rho = xi * a + c
    if not rho < 1:
        return BranchingMoments(K, c, xi, math.inf, math.inf, False)
    scale = (1 + xi) / (1 - rho)
    return BranchingMoments(K, c, xi, 1 + scale * a, 1 + scale * c, True)


def piece_download_rate(params: SwarmParams, k: int, xi: Real) -> Real:
    """Mean rate of the compound Poisson bound on downloads of piece ``k``."""
    bm = branching_moments(params.K, params.mu, params.gamma, xi)
    bit = 1 << (k - 1)
    rate = params.Us * (xi * bm.m_b + bm.m_f)
    for C, lam in params.arrivals.items():
        if C & bit and lam > 0:
            rate += lam * bm.m_g(popcount(C))
    return rate


# tail bounds ----------------------------------------------------------------


def kingman_bound(alpha: Real, m1: Real, m2: Real, B: Real, eps: Real) -> float:
    """Lower bound on P{C_t < B + eps t for all t} for a compound Poisson C."""
    if not B > 0:
        raise ValueError("B must be positive")
    if not eps > alpha * m1:
        raise ValueError("eps must exceed alpha * m1")
    return max(0.0, 1.0 - alpha * m2 / (2.0 * B * (eps - alpha * m1)))


def mginfty_bound(lam: Real, m: Real, B: Real, eps: Real) -> float:
    """Upper bound on P{M_t >= B + eps t for some t} for an M/GI/inf queue from empty."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if B < 0:
        raise ValueError("B must be nonnegative")
    log_b = lam * (m + 1) - B * math.log(2) - math.log1p(-(2.0 ** -eps))
    return 1.0 if log_b >= 0 else math.exp(log_b)


def margin_table(params: SwarmParams) -> list[tuple[int, str, Fraction]]:
    """Rows ``(k, S, margin)`` for every one-club set; empty when gamma <= mu."""
    if not params.mu < params.gamma:
        return []
    F = full_mask(params.K)
    return [
        (k, format_pieces(F & ~(1 << (k - 1))), d) for k, d in one_club_margins(params).items()
    ]


def all_subset_margins(params: SwarmParams) -> dict[int, Fraction]:
    """Margin of every proper subset S (exponential in K)."""
    F = params.full
    return {S: delta_S(params, S) for S in range(F)}


__all__ = [
    "BranchingMoments",
    "StabilityVerdict",
    "Verdict",
    "all_subset_margins",
    "branching_moments",
    "classify",
    "classify_coded",
    "delta_S",
    "kingman_bound",
    "margin_table",
    "mginfty_bound",
    "one_club_margins",
    "piece_can_enter",
    "piece_download_rate",
    "uniform_gift_thresholds",
]
