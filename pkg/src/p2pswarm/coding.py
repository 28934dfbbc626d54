"""Finite fields F_q (q <= 256) and subspaces of F_q^K in reduced echelon form.

Field elements are small integers.  For q = p^m an element is the base-p
digit vector of a polynomial of degree < m, reduced modulo a fixed
irreducible polynomial; arithmetic goes through precomputed tables.
"""

from __future__ import annotations

from functools import cache

import numpy as np


def _factor_prime_power(q: int) -> tuple[int, int] | None:
    if q < 2:
        return None
    p = next(d for d in range(2, q + 1) if q % d == 0)
    m, r = 0, q
    while r % p == 0:
        r //= p
        m += 1
    return (p, m) if r == 1 else None


def is_prime_power(q: int) -> bool:
    return isinstance(q, (int, np.integer)) and _factor_prime_power(int(q)) is not None


def _digits(a: int, p: int, m: int) -> list[int]:
    out = []
    for _ in range(m):
        out.append(a % p)
        a //= p
    return out


def _undigits(d, p: int) -> int:
    a = 0
    for c in reversed(d):
        a = a * p + c
    return a


def _polymod(num: list[int], den: list[int], p: int) -> list[int]:
    num = num[:]
    inv_lead = pow(den[-1], p - 2, p)
    while len(num) >= len(den):
        c = num[-1] * inv_lead % p
        shift = len(num) - len(den)
        for k, d in enumerate(den):
            num[shift + k] = (num[shift + k] - c * d) % p
        num.pop()
        while num and num[-1] == 0:
            num.pop()
    return num


def _irreducible(p: int, m: int) -> list[int]:
    """Lowest monic irreducible polynomial of degree m over F_p (coeffs low->high)."""
    for tail in range(p**m):
        f = _digits(tail, p, m) + [1]
        if f[0] == 0 and m > 1:
            continue
        ok = True
        for deg in range(1, m // 2 + 1):
            for t in range(p**deg):
                g = _digits(t, p, deg) + [1]
                if not _polymod(f, g, p):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return f
    raise AssertionError("no irreducible polynomial found")


class GF:
    """Arithmetic tables for F_q."""

    def __init__(self, q: int):
        pm = _factor_prime_power(q)
        if pm is None or q > 256:
            raise ValueError(f"q must be a prime power <= 256, got {q}")
        self.q = q
        self.p, self.m = pm
        p, m = pm
        elems = np.arange(q)
        if m == 1:
            self.add = (elems[:, None] + elems[None, :]) % p
            self.mul = (elems[:, None] * elems[None, :]) % p
        else:
            dig = np.array([_digits(a, p, m) for a in range(q)])
            s = (dig[:, None, :] + dig[None, :, :]) % p
            self.add = (s * p ** np.arange(m)).sum(axis=2)
            f = _irreducible(p, m)
            mul = np.zeros((q, q), dtype=np.int64)
            for a in range(q):
                da = _digits(a, p, m)
                for b in range(a, q):
                    db = _digits(b, p, m)
                    prod = [0] * (2 * m - 1)
                    for i, x in enumerate(da):
                        if x:
                            for j, y in enumerate(db):
                                prod[i + j] = (prod[i + j] + x * y) % p
                    while prod and prod[-1] == 0:
                        prod.pop()
                    r = _undigits(_polymod(prod, f, p), p) if prod else 0
                    mul[a, b] = mul[b, a] = r
            self.mul = mul
        self.add = self.add.astype(np.int64)
        self.mul = self.mul.astype(np.int64)
        self.neg = np.argmin(self.add, axis=1)  # add[a, neg[a]] == 0
        self.sub = self.add[:, self.neg]  # sub[a, b] = a - b
        inv = np.zeros(q, dtype=np.int64)
        for a in range(1, q):
            inv[a] = int(np.nonzero(self.mul[a] == 1)[0][0])
        self.inv = inv

    def __repr__(self):
        return f"GF({self.q})"

    def combine(self, coeffs: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Linear combination sum_j coeffs[j] * rows[j] over F_q."""
        if len(rows) == 0:
            return np.zeros(rows.shape[1], dtype=np.int64)
        if self.m == 1:
            return (coeffs @ rows) % self.p
        prod = self.mul[coeffs[:, None], rows]
        if self.p == 2:
            return np.bitwise_xor.reduce(prod, axis=0)
        acc = prod[0]
        for r in prod[1:]:
            acc = self.add[acc, r]
        return acc


@cache
def field(q: int) -> GF:
    return GF(q)


class Subspace:
    """A subspace of F_q^K held as its unique reduced row echelon basis."""

    __slots__ = ("K", "_gf", "pivots", "q", "rows")

    def __init__(self, q: int, K: int, rows=None, pivots=None):
        self.q = q
        self.K = K
        self._gf = field(q)
        self.rows = np.zeros((0, K), dtype=np.int64) if rows is None else rows
        self.pivots = () if pivots is None else pivots

    @classmethod
    def zero(cls, q: int, K: int) -> Subspace:
        return cls(q, K)

    @classmethod
    def whole(cls, q: int, K: int) -> Subspace:
        return cls(q, K, np.eye(K, dtype=np.int64), tuple(range(K)))

    @classmethod
    def span(cls, vectors, q: int, K: int) -> Subspace:
        s = cls(q, K)
        for v in vectors:
            s, _ = s.insert_vector(v)
        return s

    @property
    def dim(self) -> int:
        return len(self.pivots)

    def __eq__(self, other):
        return (
            isinstance(other, Subspace)
            and (self.q, self.K) == (other.q, other.K)
            and self.pivots == other.pivots
            and np.array_equal(self.rows, other.rows)
        )

    def __hash__(self):
        return hash((self.q, self.K, self.pivots, self.rows.tobytes()))

    def __repr__(self):
        return f"Subspace(q={self.q}, K={self.K}, basis={self.rows.tolist()})"

    def _reduce(self, v: np.ndarray) -> np.ndarray:
        gf = self._gf
        v = np.array(v, dtype=np.int64)
        for row, pc in zip(self.rows, self.pivots):
            c = v[pc]
            if c:
                v = gf.sub[v, gf.mul[c, row]]
        return v

    def contains(self, v) -> bool:
        return not self._reduce(v).any()

    def insert_vector(self, v) -> tuple[Subspace, bool]:
        """Span of this subspace and ``v``; the flag tells whether the dimension grew."""
        v = np.asarray(v)
        if v.shape != (self.K,):
            raise ValueError(f"vector of width {v.shape} does not match K={self.K}")
        r = self._reduce(v)
        nz = np.flatnonzero(r)
        if len(nz) == 0:
            return self, False
        gf = self._gf
        pc = int(nz[0])
        r = gf.mul[gf.inv[r[pc]], r]
        rows = self.rows.copy()
        for k in range(len(rows)):
            c = rows[k, pc]
            if c:
                rows[k] = gf.sub[rows[k], gf.mul[c, r]]
        pos = sum(1 for p in self.pivots if p < pc)
        rows = np.insert(rows, pos, r, axis=0)
        pivots = self.pivots[:pos] + (pc,) + self.pivots[pos:]
        return Subspace(self.q, self.K, rows, pivots), True

    def is_subspace_of(self, other: Subspace) -> bool:
        return all(other.contains(row) for row in self.rows)

    def sum_dim(self, other: Subspace) -> int:
        s = self
        for row in other.rows:
            s, _ = s.insert_vector(row)
        return s.dim

    def intersection_dim(self, other: Subspace) -> int:
        return self.dim + other.dim - self.sum_dim(other)

    def random_combination(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform random element: i.i.d. uniform coefficients on the basis rows."""
        if self.dim == 0:
            return np.zeros(self.K, dtype=np.int64)
        theta = rng.integers(self.q, size=self.dim)
        return self._gf.combine(theta, self.rows)


def insert_vector(sub: Subspace, v) -> tuple[Subspace, bool]:
    return sub.insert_vector(v)


def random_combination(sub: Subspace, rng: np.random.Generator) -> np.ndarray:
    return sub.random_combination(rng)


def useful_probability(A: Subspace, B: Subspace) -> float:
    """Chance that a uniform vector of ``B`` enlarges ``A``: 1 - q^(dim(A & B) - dim B)."""
    if (A.q, A.K) != (B.q, B.K):
        raise ValueError("subspaces live in different spaces")
    return 1.0 - float(A.q) ** (A.intersection_dim(B) - B.dim)


def random_vector(q: int, K: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(q, size=K)
