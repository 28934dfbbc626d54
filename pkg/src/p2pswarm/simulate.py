"""Event-driven simulation of the swarm.

Two engines share one driver:

* ``RosterEngine`` keeps one record per peer and simulates every Poisson
  clock tick, including contacts that transfer nothing.  It handles every
  policy and the coded variant.
* ``CountEngine`` keeps only per-type counts (split by history tag) and
  jumps straight from one state change to the next using the aggregate
  rates.  It is exact for random-useful selection and much faster when most
  contacts are useless, as in a swarm that has lost a piece.

Peer groups for a designated piece ``k``:

    e  one-club: holds everything except ``k``
    f  former one-club peer that has since obtained ``k``
    g  gifted: held ``k`` on arrival
    b  infected: obtained ``k`` after arrival while not in the one-club
    a  everyone else (lacks ``k``, not one-club)

In coded mode ``k`` is replaced by a hyperplane ``V-`` and "holds k" means
the peer's subspace is not contained in ``V-``.
"""

from __future__ import annotations

import csv
import random
from bisect import bisect_right
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import accumulate

import numpy as np

from p2pswarm.coding import Subspace
from p2pswarm.model import (
    MAX_COUNT_K,
    CountState,
    SwarmParams,
    full_mask,
    pieces_of,
    popcount,
    upgrade_rate_matrix,
)
from p2pswarm.policy import Policy, get_policy

GROUPS = ("a", "b", "g", "e", "f")
# history tags; at most one applies to a peer
PLAIN, GIFTED, INFECTED, FORMER = 0, 1, 2, 3
_GROUP_OF_TAG = {GIFTED: 2, INFECTED: 1, FORMER: 4}


class InvariantViolation(RuntimeError):
    """A simulation produced a state the model forbids."""


def rng_streams(seed, replication: int = 0) -> tuple[random.Random, np.random.Generator]:
    """Independent Python and numpy generators for one replication of ``seed``."""
    ss = np.random.SeedSequence(seed, spawn_key=(replication,))
    py_seed, np_seed = ss.spawn(2)
    return random.Random(int(py_seed.generate_state(2, np.uint64)[0])), np.random.default_rng(np_seed)


def _group(tag: int, one_club: bool) -> int:
    if tag:
        return _GROUP_OF_TAG[tag]
    return 3 if one_club else 0


def _bitstring(mask: int, K: int) -> str:
    return "".join("1" if mask >> i & 1 else "0" for i in range(K))


def _state_columns(params: SwarmParams) -> list[str]:
    K = params.K
    if params.coded:
        return [f"dim_{d}" for d in range(K + 1)]
    if K <= 6:
        return [f"x_{_bitstring(m, K)}" for m in range(1 << K)]
    return [f"size_{s}" for s in range(K + 1)]


class PeerRoster:
    """Per-peer records with O(1) uniform sampling, insertion and removal.

    ``items[slot]`` is a piece-set mask (uncoded) or a ``Subspace`` (coded).
    Slots are dense; removing a peer moves the last peer into its slot.
    Aggregates (type counts, replica counts, census) are kept up to date.
    """

    def __init__(self, params: SwarmParams, designated=None):
        self.params = params
        self.K = params.K
        self.coded = params.coded
        self.full = params.full
        self.items: list = []
        self.tags: list[int] = []
        self.seed_pos: list[int] = []
        self.seeds: list[int] = []
        self.counts: dict[int, int] = {}
        self.replicas = [0] * self.K
        self.census_counts = [0] * 5
        if self.coded:
            self.vminus = _hyperplane(params, designated)
            self.designated = self.vminus
        else:
            k = 1 if designated is None else int(designated)
            if not 1 <= k <= self.K:
                raise ValueError(f"designated piece {k} out of range")
            self.designated = k
            self.kbit = 1 << (k - 1)
            self.club = self.full & ~self.kbit

    # classification helpers
    def holds_designated(self, item) -> bool:
        if not self.coded:
            return bool(item & self.kbit)
        return not item.is_subspace_of(self.vminus)

    def in_one_club(self, item) -> bool:
        if not self.coded:
            return item == self.club
        return item.dim == self.K - 1 and not self.holds_designated(item)

    def is_complete(self, item) -> bool:
        return item == self.full if not self.coded else item.dim == self.K

    def _key(self, item) -> int:
        return item.dim if self.coded else item

    def replica_counts(self, K: int | None = None) -> tuple[int, ...]:
        return tuple(self.replicas)

    def _account(self, item, tag, sign):
        key = self._key(item)
        c = self.counts.get(key, 0) + sign
        if c:
            self.counts[key] = c
        else:
            del self.counts[key]
        if not self.coded:
            for i in pieces_of(item):
                self.replicas[i - 1] += sign
        self.census_counts[_group(tag, self.in_one_club(item))] += sign

    @property
    def n(self) -> int:
        return len(self.items)

    def add(self, item, tag: int) -> int:
        slot = len(self.items)
        self.items.append(item)
        self.tags.append(tag)
        self.seed_pos.append(-1)
        self._account(item, tag, +1)
        if self.params.has_seeds and self.is_complete(item):
            self._make_seed(slot)
        return slot

    def _make_seed(self, slot):
        self.seed_pos[slot] = len(self.seeds)
        self.seeds.append(slot)

    def remove(self, slot: int):
        self._account(self.items[slot], self.tags[slot], -1)
        sp = self.seed_pos[slot]
        if sp >= 0:
            moved = self.seeds.pop()
            if moved != slot:
                self.seeds[sp] = moved
                self.seed_pos[moved] = sp
        last = len(self.items) - 1
        if slot != last:
            self.items[slot] = self.items[last]
            self.tags[slot] = self.tags[last]
            self.seed_pos[slot] = self.seed_pos[last]
            if self.seed_pos[slot] >= 0:
                self.seeds[self.seed_pos[slot]] = slot
        self.items.pop()
        self.tags.pop()
        self.seed_pos.pop()

    def update(self, slot: int, item, tag: int):
        self._account(self.items[slot], self.tags[slot], -1)
        self.items[slot] = item
        self.tags[slot] = tag
        self._account(item, tag, +1)

    def count_state(self) -> CountState:
        if self.coded:
            raise ValueError("coded rosters have no piece-set count state")
        return CountState(self.counts)

    def state_row(self, params: SwarmParams) -> list[float]:
        K = self.K
        if self.coded:
            return [self.counts.get(d, 0) for d in range(K + 1)]
        if K <= 6:
            return [self.counts.get(m, 0) for m in range(1 << K)]
        sizes = [0] * (K + 1)
        for m, c in self.counts.items():
            sizes[popcount(m)] += c
        return sizes

    def one_club_fraction(self) -> float:
        n = self.n
        if n == 0:
            return 0.0
        if self.coded:
            return self.census_counts[3] / n
        return max(self.counts.get(self.full & ~(1 << i), 0) for i in range(self.K)) / n


def census(roster: PeerRoster, designated=None) -> dict[str, int]:
    """Group counts ``(a, b, g, e, f)`` of a roster, recomputed from its records."""
    if designated is not None and designated != roster.designated:
        raise ValueError("history tags were recorded for a different designated piece")
    out = [0] * 5
    for item, tag in zip(roster.items, roster.tags):
        out[_group(tag, roster.in_one_club(item))] += 1
    return dict(zip(GROUPS, out))


def _hyperplane(params: SwarmParams, designated) -> Subspace:
    q, K = params.q, params.K
    if designated is None:
        designated = 1
    if isinstance(designated, Subspace):
        V = designated
    elif isinstance(designated, (int, np.integer)):
        k = int(designated)
        if not 1 <= k <= K:
            raise ValueError(f"designated coordinate {k} out of range")
        V = Subspace.span([np.eye(K, dtype=np.int64)[j] for j in range(K) if j != k - 1], q, K)
    else:
        V = Subspace.span(designated, q, K)
    if V.dim != K - 1:
        raise ValueError("designated subspace must be a hyperplane")
    return V


def _arrival_sampler(params: SwarmParams):
    """Return (total rate, cumulative weights, list of arrival kinds)."""
    if params.coded:
        kinds = [a for a in params.coded_arrivals if a.rate > 0]
        rates = [float(a.rate) for a in kinds]
    else:
        kinds = [m for m, r in sorted(params.arrivals.items()) if r > 0]
        rates = [float(params.arrivals[m]) for m in kinds]
    return sum(rates), list(accumulate(rates)), kinds


def _initial_items(params: SwarmParams, initial) -> list:
    if initial is None:
        return []
    if isinstance(initial, CountState):
        if params.coded:
            raise ValueError("coded runs take a list of subspaces as the initial roster")
        return [m for m, c in sorted(initial.items()) for _ in range(c)]
    items = list(initial)
    if params.coded:
        return [v if isinstance(v, Subspace) else Subspace.span(v, params.q, params.K) for v in items]
    return [int(m) for m in items]


class RosterEngine:
    """Per-peer simulation with explicit no-op clock ticks."""

    def __init__(self, params: SwarmParams, policy: Policy | str = "random-useful", seed=0,
                 initial=None, designated=None, replication: int = 0):
        self.params = params
        self.policy = get_policy(policy)
        self.rng, self.nprng = rng_streams(seed, replication)
        self.roster = PeerRoster(params, designated)
        self.t = 0.0
        self.arrivals = 0
        self.departures = 0
        self.A = 0
        self.D = 0
        self.events = 0
        self.changes = 0
        self.lam, self._cum, self._kinds = _arrival_sampler(params)
        self._mu = float(params.mu)
        self._Us = float(params.Us)
        self._gamma = float(params.gamma)
        for item in _initial_items(params, initial):
            if not params.has_seeds and self.roster.is_complete(item):
                raise ValueError("gamma = inf rosters cannot contain complete peers")
            self.roster.add(item, GIFTED if self.roster.holds_designated(item) else PLAIN)
        self.n0 = self.roster.n
        self._total = 0.0

    @property
    def n(self) -> int:
        return self.roster.n

    def holding_time(self) -> float:
        r = self.roster
        n = r.n
        total = self.lam + (self._Us if n else 0.0) + n * self._mu
        if self.params.has_seeds:
            total += self._gamma * len(r.seeds)
        self._total = total
        return self.rng.expovariate(total)

    def fire(self) -> bool:
        """Apply one clock tick; True when the state changed."""
        self.events += 1
        rng, r = self.rng, self.roster
        n = r.n
        u = rng.random() * self._total
        if u < self.lam:
            self._arrive()
            return True
        u -= self.lam
        if n and u < self._Us:
            return self._transfer(None, rng.randrange(n))
        if n:
            u -= self._Us
        if u < n * self._mu:
            src = min(int(u / self._mu), n - 1)
            dst = rng.randrange(n)
            if src == dst:
                return False
            return self._transfer(src, dst)
        # peer-seed departure
        if not r.seeds:
            return False
        slot = r.seeds[rng.randrange(len(r.seeds))]
        r.remove(slot)
        self.departures += 1
        self.changes += 1
        return True

    def _arrive(self):
        r = self.roster
        i = bisect_right(self._cum, self.rng.random() * self._cum[-1])
        kind = self._kinds[min(i, len(self._kinds) - 1)]
        if self.params.coded:
            q, K = self.params.q, self.params.K
            if kind.uniform:
                item = Subspace.span([self.nprng.integers(q, size=K)], q, K)
            else:
                item = Subspace.span(kind.vectors or (), q, K)
        else:
            item = kind
        if r.holds_designated(item):
            tag = GIFTED
        else:
            tag = PLAIN
            self.A += 1
        r.add(item, tag)
        self.arrivals += 1
        self.changes += 1

    def _transfer(self, src: int | None, dst: int) -> bool:
        r = self.roster
        A = r.items[dst]
        if self.params.coded:
            if src is None:
                v = self.nprng.integers(self.params.q, size=self.params.K)
            else:
                v = r.items[src].random_combination(self.nprng)
            new, useful = A.insert_vector(v)
            if not useful:
                return False
        else:
            B = r.full if src is None else r.items[src]
            piece = self.policy(A, B, r, self.rng, r.K)
            if piece is None:
                return False
            bit = 1 << (piece - 1)
            if not B & bit or A & bit:
                raise InvariantViolation(f"policy {self.policy.name} picked a useless piece {piece}")
            new = A | bit
        tag = r.tags[dst]
        if not r.holds_designated(A) and r.holds_designated(new):
            self.D += 1
            if r.in_one_club(A):
                tag = FORMER
            elif tag == PLAIN:
                tag = INFECTED
        self.changes += 1
        if r.is_complete(new) and not self.params.has_seeds:
            r.remove(dst)
            self.departures += 1
            return True
        r.update(dst, new, tag)
        if r.is_complete(new) and self.params.has_seeds:
            r._make_seed(dst)
        return True

    # observation hooks used by the driver
    def state_row(self):
        return self.roster.state_row(self.params)

    def census(self):
        return list(self.roster.census_counts)

    def one_club_fraction(self):
        return self.roster.one_club_fraction()

    def count_state(self) -> CountState:
        return self.roster.count_state()


class CountEngine:
    """Exact jump-chain simulation on (type, tag) counts; random-useful only."""

    def __init__(self, params: SwarmParams, seed=0, initial=None, designated=None, replication: int = 0):
        if params.coded:
            raise ValueError("the count engine does not support coded mode")
        if params.K > MAX_COUNT_K:
            raise ValueError(f"the count engine is limited to K <= {MAX_COUNT_K}")
        self.params = params
        self.K = params.K
        self.full = params.full
        k = 1 if designated is None else int(designated)
        if not 1 <= k <= self.K:
            raise ValueError(f"designated piece {k} out of range")
        self.designated = k
        self.kbit = 1 << (k - 1)
        self.club = self.full & ~self.kbit
        self.rng, _ = rng_streams(seed, replication)
        self.tagged: dict[int, list[int]] = {}
        self.t = 0.0
        self.arrivals = self.departures = self.A = self.D = 0
        self.events = self.changes = 0
        self.lam, self._cum, self._kinds = _arrival_sampler(params)
        self._gamma = float(params.gamma)
        for m in _initial_items(params, initial):
            if not params.has_seeds and m == self.full:
                raise ValueError("gamma = inf states cannot hold complete peers")
            self._add(m, GIFTED if m & self.kbit else PLAIN)
        self.n0 = self.n
        self._gam = None

    @property
    def n(self) -> int:
        return sum(sum(v) for v in self.tagged.values())

    def _add(self, m, tag):
        row = self.tagged.setdefault(m, [0, 0, 0, 0])
        row[tag] += 1

    def _take(self, m) -> int:
        row = self.tagged[m]
        u = self.rng.random() * sum(row)
        tag = 0
        while u >= row[tag] or row[tag] == 0:
            u -= row[tag]
            tag += 1
        row[tag] -= 1
        if not any(row):
            del self.tagged[m]
        return tag

    def holding_time(self) -> float:
        masks = np.fromiter(self.tagged, dtype=np.int64, count=len(self.tagged))
        counts = np.array([sum(self.tagged[m]) for m in masks.tolist()], dtype=float)
        gam = upgrade_rate_matrix(masks, counts, self.params) if len(masks) else np.zeros((0, self.K))
        flat = np.cumsum(gam.ravel())
        up = float(flat[-1]) if len(flat) else 0.0
        seeds = sum(self.tagged.get(self.full, ())) if self.params.has_seeds else 0
        self._gam = (masks, flat, up, seeds)
        total = self.lam + up + self._gamma * seeds if seeds else self.lam + up
        self._total = total
        return self.rng.expovariate(total)

    def fire(self) -> bool:
        self.events += 1
        self.changes += 1
        masks, flat, up, seeds = self._gam
        u = self.rng.random() * self._total
        if u < self.lam:
            i = bisect_right(self._cum, self.rng.random() * self._cum[-1])
            m = self._kinds[min(i, len(self._kinds) - 1)]
            if m & self.kbit:
                tag = GIFTED
            else:
                tag = PLAIN
                self.A += 1
            self._add(m, tag)
            self.arrivals += 1
            return True
        u -= self.lam
        if u < up or not seeds:
            j = min(int(np.searchsorted(flat, u, side="right")), len(flat) - 1)
            C = int(masks[j // self.K])
            i = j % self.K
            tag = self._take(C)
            C2 = C | (1 << i)
            if (1 << i) == self.kbit:
                self.D += 1
                if C == self.club:
                    tag = FORMER
                elif tag == PLAIN:
                    tag = INFECTED
            if C2 == self.full and not self.params.has_seeds:
                self.departures += 1
            else:
                self._add(C2, tag)
            return True
        self._take(self.full)
        self.departures += 1
        return True

    def count_state(self) -> CountState:
        return CountState({m: sum(v) for m, v in self.tagged.items()})

    def state_row(self):
        K = self.K
        if K <= 6:
            row = [0] * (1 << K)
            for m, v in self.tagged.items():
                row[m] = sum(v)
            return row
        sizes = [0] * (K + 1)
        for m, v in self.tagged.items():
            sizes[popcount(m)] += sum(v)
        return sizes

    def census(self):
        out = [0] * 5
        for m, v in self.tagged.items():
            for tag, c in enumerate(v):
                if c:
                    out[_group(tag, m == self.club)] += c
        return out

    def one_club_fraction(self):
        n = self.n
        if n == 0:
            return 0.0
        return max(sum(self.tagged.get(self.full & ~(1 << i), ())) for i in range(self.K)) / n


def make_engine(params: SwarmParams, policy="random-useful", seed=0, initial=None, designated=None,
                engine: str = "auto", replication: int = 0):
    policy = get_policy(policy)
    if engine == "auto":
        # Jumping over useless contacts only pays off once most contacts are
        # useless, which is what happens in a transient swarm.
        from p2pswarm.analyze import Verdict, classify

        engine = "roster"
        if (not params.coded and policy.name == "random-useful" and params.K <= MAX_COUNT_K
                and classify(params).verdict == Verdict.TRANSIENT):
            engine = "count"
    if engine == "count":
        if policy.name != "random-useful":
            raise ValueError("the count engine only supports random-useful selection")
        return CountEngine(params, seed, initial, designated, replication)
    if engine == "roster":
        return RosterEngine(params, policy, seed, initial, designated, replication)
    raise ValueError(f"unknown engine {engine!r}")


@dataclass
class Trajectory:
    """Sampled path of one simulation run plus exact running statistics."""

    columns: list[str]
    data: np.ndarray
    horizon: float
    n0: int
    arrivals: int
    departures: int
    events: int
    mean_n_late: float
    min_n_late: int
    final_state: CountState | None = None
    stats: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def __len__(self):
        return len(self.data)

    @property
    def n_final(self) -> int:
        return int(self.data[-1, 1])

    def growth_slope(self) -> float:
        """Least-squares slope of n(t) over the second half of the horizon."""
        t, n = self["t"], self["n"]
        keep = t >= self.horizon / 2
        if keep.sum() < 2:
            return 0.0
        return float(np.polyfit(t[keep], n[keep], 1)[0])

    def observables(self) -> dict[str, float]:
        last = self.data[-1]
        col = self.columns.index
        return {
            "n_T": float(last[1]),
            "mean_n_late": self.mean_n_late,
            "min_n_late": float(self.min_n_late),
            "one_club_frac": float(last[col("one_club_frac")]),
            "growth_slope": self.growth_slope(),
            "A": float(last[col("A")]),
            "D": float(last[col("D")]),
            "arrivals": float(self.arrivals),
            "departures": float(self.departures),
        }

    def to_csv(self, path_or_file):
        write_csv(path_or_file, self.columns, self.data)

    def bit_identical(self, other: Trajectory) -> bool:
        return self.columns == other.columns and self.data.tobytes() == other.data.tobytes()


def fmt(x) -> str:
    """Integers verbatim, other numbers with 9 significant digits, text unchanged."""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.9g}"


def write_csv(path_or_file, header: Sequence[str], rows: Iterable[Sequence]):
    if hasattr(path_or_file, "write"):
        _write_rows(path_or_file, header, rows)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write_rows(fh, header, rows)


def _write_rows(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])


def run(params: SwarmParams, policy="random-useful", horizon: float = 100.0, seed=0, initial=None,
        designated=None, engine: str = "auto", stride: int = 0, grid: float | None = None,
        replication: int = 0) -> Trajectory:
    """Simulate up to ``horizon`` and return the sampled trajectory.

    Samples are taken on the time grid ``0, grid, 2*grid, ...`` (default
    ``horizon / 1000``), after every ``stride``-th state change when
    ``stride > 0``, and at the horizon itself.  ``one_club_frac`` is the
    share of the largest one-club (coded: peers whose subspace equals the
    designated hyperplane); the census columns refer to ``designated``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    eng = make_engine(params, policy, seed, initial, designated, engine, replication)
    grid = horizon / 1000 if grid is None else grid
    if not grid > 0:
        raise ValueError("grid spacing must be positive")
    columns = ["t", "n", *_state_columns(params), "one_club_frac", "ya", "yb", "yg", "ye", "yf", "A", "D"]
    rows: list[list[float]] = []

    def record(t):
        rows.append([t, eng.n, *eng.state_row(), eng.one_club_fraction(), *eng.census(), eng.A, eng.D])

    half = horizon / 2
    area = 0.0
    min_late = eng.n if half <= 0 else None
    next_grid = 0.0
    grid_index = 0
    changes = 0
    while True:
        t_next = eng.t + eng.holding_time()
        stop = t_next > horizon
        t_end = horizon if stop else t_next
        while next_grid <= t_end:
            record(next_grid)
            grid_index += 1
            next_grid = grid_index * grid
        if t_end > half:
            area += eng.n * (t_end - max(eng.t, half))
            if min_late is None:
                min_late = eng.n
        if stop:
            break
        eng.t = t_next
        if eng.fire():
            changes += 1
            if t_next >= half:
                min_late = eng.n if min_late is None else min(min_late, eng.n)
            if stride and changes % stride == 0:
                record(t_next)
    eng.t = horizon
    if not rows or rows[-1][0] != horizon:
        record(horizon)
    if eng.arrivals - eng.departures != eng.n - eng.n0:
        raise InvariantViolation("peer conservation failed")
    try:
        final = eng.count_state()
    except ValueError:
        final = None
    return Trajectory(
        columns=columns,
        data=np.array(rows, dtype=float),
        horizon=horizon,
        n0=eng.n0,
        arrivals=eng.arrivals,
        departures=eng.departures,
        events=eng.events,
        mean_n_late=area / (horizon - half),
        min_n_late=int(min_late if min_late is not None else eng.n),
        final_state=final,
    )


# replications ----------------------------------------------------------------


OBSERVABLES = ("n_T", "mean_n_late", "min_n_late", "one_club_frac", "growth_slope", "A", "D",
               "arrivals", "departures")


@dataclass
class ReplicationSummary:
    seed: int
    rows: list[dict[str, float]]

    def values(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def stats(self) -> dict[str, dict[str, float]]:
        out = {}
        for name in OBSERVABLES:
            v = self.values(name)
            out[name] = {
                "mean": float(v.mean()),
                "var": float(v.var(ddof=1)) if len(v) > 1 else 0.0,
                "p05": float(np.percentile(v, 5)),
                "p50": float(np.percentile(v, 50)),
                "p95": float(np.percentile(v, 95)),
            }
        return out

    def to_csv(self, path_or_file):
        header = ["replication", *OBSERVABLES]
        write_csv(path_or_file, header, [[i, *(r[k] for k in OBSERVABLES)] for i, r in enumerate(self.rows)])


def _one_replication(args):
    params, policy, horizon, seed, r, kwargs = args
    return run(params, policy, horizon, seed, replication=r, **kwargs).observables()


def replicate(params: SwarmParams, horizon: float, R: int, seed=0, policy="random-useful",
              threads: int = 1, **run_kwargs) -> ReplicationSummary:
    """Run ``R`` independent replications; replication ``r`` uses stream ``(seed, r)``."""
    if R < 1:
        raise ValueError("need at least one replication")
    policy_name = get_policy(policy).name
    jobs = [(params, policy_name, horizon, seed, r, run_kwargs) for r in range(R)]
    if threads > 1 and R > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_one_replication, jobs))
    else:
        rows = [_one_replication(j) for j in jobs]
    return ReplicationSummary(seed, rows)


# the mu = infinity watched chain ----------------------------------------------


def resolve_fast_phase(counts: dict[int, int], K: int, rng: random.Random) -> tuple[dict[int, int], int]:
    """Run useful contacts until all remaining peers share one collection.

    A type-``S`` peer uploads to a type-``C`` peer with weight ``x_S x_C``
    (only pairs with ``S`` not inside ``C`` count) and sends a uniformly
    chosen useful piece.  Complete peers leave at once.  Returns the final
    counts and the number of transfers made.
    """
    full = full_mask(K)
    counts = {m: c for m, c in counts.items() if c}
    steps = 0
    while len(counts) > 1:
        types = list(counts)
        pairs, weights = [], []
        for S in types:
            for C in types:
                if S != C and S & ~C:
                    pairs.append((S, C))
                    weights.append(counts[S] * counts[C])
        if not pairs:
            break
        S, C = rng.choices(pairs, weights=weights)[0]
        piece = rng.choice(pieces_of(S & ~C))
        C2 = C | (1 << (piece - 1))
        counts[C] -= 1
        if not counts[C]:
            del counts[C]
        if C2 != full:
            counts[C2] = counts.get(C2, 0) + 1
        steps += 1
    return counts, steps


def sample_Z(K: int, n: int, rng: random.Random) -> int:
    """Peers lost when a newcomer with the missing piece meets ``n`` one-club peers.

    Returns ``n - n'`` where ``n'`` is the final count of the new one-club;
    returns ``n`` if the phase ends with a lone single-piece peer.
    """
    if K < 2:
        raise ValueError("K must be at least 2")
    full = full_mask(K)
    club = full & ~1
    final, _ = resolve_fast_phase({club: n, 1: 1}, K, rng)
    if not final:
        return n + 1
    (m, c), = final.items()
    if popcount(m) == K - 1:
        return n - c
    return n


@dataclass
class WatchedPath:
    """Slow-state path of the watched chain."""

    K: int
    times: np.ndarray
    n: np.ndarray
    k: np.ndarray
    top_increments: list[int]
    z_samples: list[int]
    return_times: list[float]


def run_watched(K: int, lam: float, horizon: float, seed=0, replication: int = 0,
                initial: tuple[int, int] = (0, 0)) -> WatchedPath:
    """Simulate the ``mu = inf`` chain seen only in states where all peers agree.

    ``initial`` is ``(n, k)``: ``n`` peers all holding pieces ``1..k``.
    """
    if K < 2:
        raise ValueError("the watched chain needs K >= 2")
    if not lam > 0 or not horizon > 0:
        raise ValueError("lam and horizon must be positive")
    rng, _ = rng_streams(seed, replication)
    n, k0 = initial
    if not (n == 0 and k0 == 0) and not (n >= 1 and 1 <= k0 <= K - 1):
        raise ValueError("initial watched state must be (0, 0) or (n >= 1, 1 <= k <= K-1)")
    C = full_mask(k0) if n else 0
    t = 0.0
    times, ns, ks = [0.0], [n], [popcount(C)]
    top_inc, zs, returns = [], [], []
    last_empty = 0.0 if n == 0 else None
    rate = K * lam
    while True:
        t += rng.expovariate(rate)
        if t > horizon:
            break
        piece = rng.randrange(K)
        bit = 1 << piece
        before_n, before_k = n, popcount(C)
        fast = False
        if n and C & bit:
            n += 1
        elif n == 0:
            n, C = 1, bit
        else:
            fast = True
            final, _ = resolve_fast_phase({C: n, bit: 1}, K, rng)
            if final:
                (C, n), = final.items()
            else:
                n, C = 0, 0
        if before_k == K - 1 and n and popcount(C) == K - 1:
            top_inc.append(n - before_n)
            if fast:
                zs.append(before_n - n)
        if n == 0 and before_n > 0:
            if last_empty is not None:
                returns.append(t - last_empty)
            last_empty = t
        times.append(t)
        ns.append(n)
        ks.append(popcount(C))
    return WatchedPath(K, np.array(times), np.array(ns), np.array(ks), top_inc, zs, returns)
