"""Piece-selection policies.

A policy decides which piece an uploader holding ``B`` sends to a
downloader holding ``A``.  The fixed seed is passed as the full piece set.
Every policy here only ever picks a piece from ``B - A`` and returns
``None`` when ``B`` is a subset of ``A``.

``view`` is any object with a ``replica_counts(K)`` method (a
``CountState`` works); only rarest-first looks at it.
"""

from __future__ import annotations

import random
from collections.abc import Callable
from typing import Protocol

from p2pswarm.model import pieces_of


class StateView(Protocol):
    def replica_counts(self, K: int) -> tuple[int, ...]: ...


class Policy:
    """A named piece-selection rule.

    ``distribution(A, B, view, K)`` gives the law of the chosen piece as a
    dict ``piece -> probability``; calling the policy draws from it.
    """

    def __init__(self, name: str, weights: Callable[[tuple[int, ...], StateView | None, int], dict[int, float]]):
        self.name = name
        self._weights = weights

    def __repr__(self):
        return f"Policy({self.name!r})"

    def distribution(self, A: int, B: int, view: StateView | None = None, K: int | None = None) -> dict[int, float]:
        useful = pieces_of(B & ~A)
        if not useful:
            return {}
        K = K if K is not None else max(B.bit_length(), A.bit_length())
        return self._weights(useful, view, K)

    def __call__(self, A: int, B: int, view: StateView | None = None, rng: random.Random | None = None,
                 K: int | None = None) -> int | None:
        dist = self.distribution(A, B, view, K)
        if not dist:
            return None
        if len(dist) == 1:
            return next(iter(dist))
        rng = rng or random
        pieces = list(dist)
        return rng.choices(pieces, weights=[dist[p] for p in pieces])[0]


def _uniform(pieces):
    p = 1.0 / len(pieces)
    return {i: p for i in pieces}


def _random_useful(useful, view, K):
    return _uniform(useful)


def _rarest_first(useful, view, K):
    if view is None:
        raise ValueError("rarest-first needs a state view")
    reps = view.replica_counts(K)
    low = min(reps[i - 1] for i in useful)
    return _uniform([i for i in useful if reps[i - 1] == low])


def _sequential(useful, view, K):
    return {useful[0]: 1.0}


random_useful = Policy("random-useful", _random_useful)
rarest_first = Policy("rarest-first", _rarest_first)
sequential = Policy("sequential", _sequential)

POLICIES: dict[str, Policy] = {p.name: p for p in (random_useful, rarest_first, sequential)}


def get_policy(name: str | Policy) -> Policy:
    if isinstance(name, Policy):
        return name
    try:
        return POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose one of {', '.join(POLICIES)}") from None
