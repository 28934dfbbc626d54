"""Scenario files (TOML) and their validation.

Example::

    K = 4
    Us = 0
    mu = 1
    gamma = inf
    policy = "random-useful"
    horizon = 2000
    replications = 10
    seed = 7

    [[arrivals]]
    pieces = [1, 2]
    rate = 1

    [[arrivals]]
    pieces = [3, 4]
    rate = 1

Rates may be integers, decimals or quoted fractions such as ``"1/3"``;
decimals are read exactly (``0.1`` means one tenth).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from p2pswarm.model import CodedArrival, InvalidParams, SwarmParams, pieceset
from p2pswarm.policy import POLICIES

TOP_KEYS = {
    "K", "Us", "mu", "gamma", "arrivals", "policy", "coded", "q", "horizon", "replications", "seed",
    "sweep", "engine", "stride", "grid", "designated", "lyapunov", "watched",
}
ARRIVAL_KEYS = {"pieces", "rate", "uniform", "vectors"}
SWEEP_KEYS = {"param", "values", "replications", "horizon"}
LYAPUNOV_KEYS = {"search_count", "certify_count", "budget"}
WATCHED_KEYS = {"z_samples", "z_n", "horizon"}
SWEEP_PARAMS = ("Us", "mu", "gamma", "inv_gamma")


class ScenarioError(ValueError):
    """A scenario file that cannot be used; the message names the line."""


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    replications: int | None = None
    horizon: float | None = None


@dataclass(frozen=True)
class Scenario:
    params: SwarmParams
    policy: str = "random-useful"
    horizon: float = 100.0
    replications: int = 1
    seed: int = 0
    engine: str = "auto"
    stride: int = 0
    grid: float | None = None
    designated: int | None = None
    sweep: SweepSpec | None = None
    lyapunov: dict = field(default_factory=dict)
    watched: dict = field(default_factory=dict)
    source: str | None = None

    def with_value(self, param: str, value) -> Scenario:
        """Copy of the scenario with one scalar parameter replaced."""
        p = self.params
        value = _number(value, param)
        if param == "Us":
            new = replace(p, Us=value)
        elif param == "mu":
            new = replace(p, mu=value)
        elif param == "gamma":
            new = replace(p, gamma=value)
        elif param == "inv_gamma":
            new = replace(p, gamma=math.inf if value == 0 else 1 / value)
        else:
            m = re.fullmatch(r"arrivals\[(\d+)\]", param)
            if not m:
                raise ScenarioError(f"cannot sweep {param!r}")
            idx = int(m.group(1))
            if p.coded:
                arr = list(p.coded_arrivals)
                if idx >= len(arr):
                    raise ScenarioError(f"no arrival entry {idx}")
                arr[idx] = replace(arr[idx], rate=value)
                new = replace(p, coded_arrivals=tuple(arr))
            else:
                keys = _arrival_order(self)
                if idx >= len(keys):
                    raise ScenarioError(f"no arrival entry {idx}")
                rates = dict(p.arrivals)
                rates[keys[idx]] = value
                new = replace(p, arrivals=rates)
        return replace(self, params=new)


def _arrival_order(sc: Scenario) -> list[int]:
    return list(sc.params.arrivals)


def _line_of(text: str, key: str, occurrence: int = 0) -> int | None:
    pat = re.compile(rf"^\s*(\[\[?\s*)?{re.escape(key)}\b")
    seen = 0
    for i, line in enumerate(text.splitlines(), 1):
        if pat.match(line):
            if seen == occurrence:
                return i
            seen += 1
    return None


def _number(v, where: str):
    if isinstance(v, bool):
        raise ScenarioError(f"{where}: expected a number, got {v!r}")
    if isinstance(v, int):
        return v
    if isinstance(v, float):
        return v if math.isinf(v) else Fraction(repr(v))
    if isinstance(v, Fraction):
        return v
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return math.inf
        try:
            f = Fraction(s)
        except ValueError:
            raise ScenarioError(f"{where}: cannot read {v!r} as a number") from None
        return f.numerator if f.denominator == 1 else f
    raise ScenarioError(f"{where}: expected a number, got {v!r}")


def parse_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    return parse_scenario_text(text, str(path))


def parse_scenario_text(text: str, source: str = "<string>") -> Scenario:
    def fail(msg, key=None, occurrence=0):
        line = _line_of(text, key, occurrence) if key else None
        where = f"{source}:{line}" if line else source
        raise ScenarioError(f"{where}: {msg}")

    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"{source}: {e}") from None
    for key in raw:
        if key not in TOP_KEYS:
            fail(f"unknown key {key!r}", key)
    for key in ("K", "mu", "gamma", "arrivals"):
        if key not in raw:
            fail(f"missing required key {key!r}")

    def num(key, default=None):
        if key not in raw:
            return default
        try:
            return _number(raw[key], key)
        except ScenarioError as e:
            fail(str(e), key)

    K = raw["K"]
    if not isinstance(K, int) or isinstance(K, bool) or K < 1:
        fail("K must be a positive integer", "K")
    coded = bool(raw.get("coded", False))
    q = raw.get("q")
    if coded and q is None:
        fail("coded = true requires a field size q", "coded")
    if not isinstance(raw["arrivals"], list):
        fail("arrivals must be a list of {pieces, rate} tables", "arrivals")

    arrivals: dict[int, object] = {}
    coded_arrivals = []
    for idx, entry in enumerate(raw["arrivals"]):
        if not isinstance(entry, dict):
            fail("each arrival must be a table", "arrivals", idx)
        for k in entry:
            if k not in ARRIVAL_KEYS:
                fail(f"unknown arrival key {k!r}", "arrivals", idx)
        if "rate" not in entry:
            fail("arrival entry without a rate", "arrivals", idx)
        try:
            rate = _number(entry["rate"], f"arrivals[{idx}].rate")
        except ScenarioError as e:
            fail(str(e), "arrivals", idx)
        if coded:
            if "pieces" in entry:
                fail("coded arrivals take 'uniform' or 'vectors', not 'pieces'", "arrivals", idx)
            vectors = entry.get("vectors")
            coded_arrivals.append(CodedArrival(
                rate=rate,
                vectors=tuple(tuple(v) for v in vectors) if vectors is not None else None,
                uniform=bool(entry.get("uniform", False)),
            ))
        else:
            if "uniform" in entry or "vectors" in entry:
                fail("'uniform' and 'vectors' need coded = true", "arrivals", idx)
            pieces = entry.get("pieces", [])
            if any(not isinstance(i, int) or not 1 <= i <= K for i in pieces):
                fail(f"pieces must be integers in 1..{K}", "arrivals", idx)
            m = pieceset(pieces)
            if m in arrivals:
                fail(f"piece set {sorted(set(pieces))} listed twice", "arrivals", idx)
            arrivals[m] = rate
    try:
        params = SwarmParams(
            K=K,
            Us=num("Us", 0),
            mu=num("mu"),
            gamma=num("gamma"),
            arrivals=arrivals,
            coded=coded,
            q=q,
            coded_arrivals=tuple(coded_arrivals),
        )
    except InvalidParams as e:
        msg = str(e)
        anchor = next((k for k in ("gamma", "mu", "Us", "q", "K") if k in msg), "arrivals")
        if "lambda_F" in msg or "full space" in msg:
            anchor = "gamma"
        elif "arrival" in msg:
            anchor = "arrivals"
        fail(msg, anchor)

    policy = raw.get("policy", "random-useful")
    if policy not in POLICIES:
        fail(f"unknown policy {policy!r}; choose one of {', '.join(POLICIES)}", "policy")
    horizon = num("horizon", 100)
    if not horizon > 0 or math.isinf(horizon):
        fail("horizon must be positive and finite", "horizon")
    reps = raw.get("replications", 1)
    if not isinstance(reps, int) or reps < 1:
        fail("replications must be a positive integer", "replications")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        fail("seed must be a nonnegative integer", "seed")
    engine = raw.get("engine", "auto")
    if engine not in ("auto", "count", "roster"):
        fail("engine must be auto, count or roster", "engine")
    stride = raw.get("stride", 0)
    if not isinstance(stride, int) or stride < 0:
        fail("stride must be a nonnegative integer", "stride")
    grid = num("grid")
    if grid is not None and not grid > 0:
        fail("grid must be positive", "grid")
    designated = raw.get("designated")
    if designated is not None and (not isinstance(designated, int) or not 1 <= designated <= K):
        fail(f"designated must be a piece in 1..{K}", "designated")

    sweep = None
    if "sweep" in raw:
        sw = raw["sweep"]
        if not isinstance(sw, dict):
            fail("sweep must be a table", "sweep")
        for k in sw:
            if k not in SWEEP_KEYS:
                fail(f"unknown sweep key {k!r}", "sweep")
        param = sw.get("param")
        if isinstance(param, list):
            fail("sweeps vary exactly one parameter", "sweep")
        if not isinstance(param, str) or not (param in SWEEP_PARAMS or re.fullmatch(r"arrivals\[\d+\]", param)):
            fail(f"sweep param must be one of {', '.join(SWEEP_PARAMS)} or arrivals[i]", "sweep")
        values = sw.get("values")
        if not isinstance(values, list) or not values:
            fail("sweep values must be a nonempty list", "sweep")
        try:
            values = tuple(_number(v, "sweep.values") for v in values)
        except ScenarioError as e:
            fail(str(e), "sweep")
        sweep = SweepSpec(param, values, sw.get("replications"), sw.get("horizon"))

    def table(name, allowed):
        t = raw.get(name, {})
        if not isinstance(t, dict):
            fail(f"{name} must be a table", name)
        for k in t:
            if k not in allowed:
                fail(f"unknown {name} key {k!r}", name)
        return dict(t)

    sc = Scenario(
        params=params,
        policy=policy,
        horizon=float(horizon),
        replications=reps,
        seed=seed,
        engine=engine,
        stride=stride,
        grid=float(grid) if grid is not None else None,
        designated=designated,
        sweep=sweep,
        lyapunov=table("lyapunov", LYAPUNOV_KEYS),
        watched=table("watched", WATCHED_KEYS),
        source=source,
    )
    if sweep is not None:
        for v in sweep.values:
            try:
                sc.with_value(sweep.param, v)
            except (InvalidParams, ScenarioError) as e:
                fail(f"sweep value {v}: {e}", "sweep")
    return sc


def dump_scenario(sc: Scenario) -> str:
    """TOML text that parses back to an equivalent scenario."""

    def lit(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float) and math.isinf(v):
            return "inf"
        if isinstance(v, Fraction):
            return f'"{v}"'
        if isinstance(v, str):
            return f'"{v}"'
        return repr(v)

    p = sc.params
    lines = [f"K = {p.K}", f"Us = {lit(p.Us)}", f"mu = {lit(p.mu)}", f"gamma = {lit(p.gamma)}"]
    if p.coded:
        lines += ["coded = true", f"q = {p.q}"]
    lines += [
        f'policy = "{sc.policy}"', f"horizon = {lit(sc.horizon)}", f"replications = {sc.replications}",
        f"seed = {sc.seed}", f'engine = "{sc.engine}"', f"stride = {sc.stride}",
    ]
    if sc.grid is not None:
        lines.append(f"grid = {lit(sc.grid)}")
    if sc.designated is not None:
        lines.append(f"designated = {sc.designated}")
    for name in ("lyapunov", "watched"):
        t = getattr(sc, name)
        if t:
            lines.append(f"{name} = {{ " + ", ".join(f"{k} = {lit(v)}" for k, v in t.items()) + " }")
    if sc.sweep is not None:
        s = sc.sweep
        extra = "".join(
            f", {k} = {lit(v)}" for k, v in (("replications", s.replications), ("horizon", s.horizon)) if v is not None
        )
        lines.append(f'sweep = {{ param = "{s.param}", values = [{", ".join(lit(v) for v in s.values)}]{extra} }}')
    for m, rate in p.arrivals.items():
        from p2pswarm.model import pieces_of

        lines += ["", "[[arrivals]]", f"pieces = {list(pieces_of(m))}", f"rate = {lit(rate)}"]
    for a in p.coded_arrivals:
        lines += ["", "[[arrivals]]", f"rate = {lit(a.rate)}"]
        if a.uniform:
            lines.append("uniform = true")
        if a.vectors is not None:
            lines.append(f"vectors = {[list(v) for v in a.vectors]}")
    return "\n".join(lines) + "\n"
