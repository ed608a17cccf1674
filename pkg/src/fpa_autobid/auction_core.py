"""Market instances and single-shot simultaneous first-price auctions with reserves."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

TIE_TOL = 1e-9
RESERVE_TOL = 1e-12
OVERRIDE_TOL = 1e-12
ENUM_LIMIT = 10 ** 7

INF = math.inf


class EnumerationLimitError(RuntimeError):
    pass


class InfeasibleReserveError(ValueError):
    pass


# --------------------------------------------------------------------------
# valuations


def _items(S, m: int) -> tuple[int, ...]:
    if isinstance(S, np.ndarray) and S.dtype == bool:
        S = np.flatnonzero(S)
    out = tuple(sorted(set(int(j) for j in S)))
    for j in out:
        if j < 0 or j >= m:
            raise IndexError(f"unknown item {j} (m={m})")
    return out


class ValuationFunction:
    m: int

    def value(self, S) -> float:
        raise NotImplementedError

    def scaled(self, c: float) -> "ValuationFunction":
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Additive(ValuationFunction):
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(x) for x in self.values))
        if any(x < 0 or math.isnan(x) for x in self.values):
            raise ValueError("additive values must be non-negative")

    @property
    def m(self) -> int:
        return len(self.values)

    def value(self, S) -> float:
        return float(sum(self.values[j] for j in _items(S, self.m)))

    def scaled(self, c):
        return Additive(tuple(c * x for x in self.values))

    def to_json(self):
        return {"kind": "additive", "values": list(self.values)}


@dataclass(frozen=True)
class XOS(ValuationFunction):
    clauses: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        cl = tuple(tuple(float(x) for x in c) for c in self.clauses)
        if not cl:
            raise ValueError("XOS needs at least one clause")
        if len({len(c) for c in cl}) != 1:
            raise ValueError("XOS clauses must share a length")
        if any(x < 0 or math.isnan(x) for c in cl for x in c):
            raise ValueError("XOS clause entries must be non-negative")
        object.__setattr__(self, "clauses", cl)

    @property
    def m(self) -> int:
        return len(self.clauses[0])

    def value(self, S) -> float:
        idx = _items(S, self.m)
        return float(max(sum(c[j] for j in idx) for c in self.clauses))

    def best_clause(self, S) -> tuple[float, ...]:
        idx = _items(S, self.m)
        best, arg = -1.0, None
        for c in self.clauses:
            s = sum(c[j] for j in idx)
            if s > best + 1e-15:
                best, arg = s, c
        return arg

    def scaled(self, c):
        return XOS(tuple(tuple(c * x for x in cl) for cl in self.clauses))

    def to_json(self):
        return {"kind": "xos", "clauses": [list(c) for c in self.clauses]}


@dataclass(frozen=True)
class BudgetCapped(ValuationFunction):
    inner: ValuationFunction
    cap: float

    def __post_init__(self):
        if not self.cap > 0:
            raise ValueError("cap must be positive")

    @property
    def m(self) -> int:
        return self.inner.m

    def value(self, S) -> float:
        return min(self.inner.value(S), self.cap)

    def scaled(self, c):
        return BudgetCapped(self.inner.scaled(c), c * self.cap)

    def to_json(self):
        return {"kind": "budget_capped", "inner": self.inner.to_json(),
                "cap": "inf" if math.isinf(self.cap) else self.cap}


def evaluate(v: ValuationFunction, S) -> float:
    return v.value(S)


def budget_cap(v: ValuationFunction, cap: float) -> ValuationFunction:
    cap = float(cap)
    if not cap > 0:
        raise ValueError("cap must be positive")
    return BudgetCapped(v, cap)


def valuation_from_json(d: dict) -> ValuationFunction:
    kind = d.get("kind")
    if kind == "additive":
        return Additive(tuple(d["values"]))
    if kind == "xos":
        return XOS(tuple(tuple(c) for c in d["clauses"]))
    if kind == "budget_capped":
        return BudgetCapped(valuation_from_json(d["inner"]), _num(d["cap"]))
    raise ValueError(f"unknown valuation kind {kind!r}")


def _num(x) -> float:
    if isinstance(x, str):
        if x.lower() in ("inf", "infinity"):
            return INF
        raise ValueError(f"bad number {x!r}")
    return float(x)


def all_subsets(m: int):
    for k in range(m + 1):
        yield from itertools.combinations(range(m), k)


def xos_witness(v: ValuationFunction, S, must_dominate: Iterable | None = None):
    """Additive a >= 0 with a(S) = v(S) and a(T) <= v(T) for every T.

    Found by linear programming over all 2^m subsets; None if none exists.
    Support is restricted to S unless `must_dominate` lists extra items
    allowed to carry weight.
    """
    m = v.m
    S = _items(S, m)
    allowed = set(S) | set(must_dominate or ())
    A_ub, b_ub = [], []
    for T in all_subsets(m):
        if not T:
            continue
        row = [1.0 if j in T else 0.0 for j in range(m)]
        A_ub.append(row)
        b_ub.append(v.value(T))
    A_eq = [[1.0 if j in S else 0.0 for j in range(m)]]
    b_eq = [v.value(S)]
    bounds = [(0, None) if j in allowed else (0, 0) for j in range(m)]
    res = linprog(np.zeros(m), A_ub=np.array(A_ub), b_ub=np.array(b_ub),
                  A_eq=np.array(A_eq), b_eq=np.array(b_eq), bounds=bounds, method="highs")
    if res.status != 0:
        return None
    return tuple(float(max(x, 0.0)) for x in res.x)


def is_fractionally_subadditive(v: ValuationFunction, tol: float = 1e-9) -> bool:
    """Exhaustive check that every bundle admits a supporting additive clause."""
    for S in all_subsets(v.m):
        a = xos_witness(v, S)
        if a is None:
            return False
        for T in all_subsets(v.m):
            if sum(a[j] for j in T) > v.value(T) + tol:
                return False
    return True


# --------------------------------------------------------------------------
# tie breaking


@dataclass(frozen=True)
class AuctionTieRule:
    priority: tuple[int, ...]
    overrides: tuple[tuple[float, tuple[int, ...]], ...] = ()
    threshold: tuple[float, tuple[int, ...], tuple[int, ...]] | None = None

    def order_at(self, tie_value: float) -> tuple[int, ...]:
        for val, prio in self.overrides:
            if abs(val - tie_value) <= OVERRIDE_TOL:
                return prio
        if self.threshold is not None:
            thr, below, above = self.threshold
            return below if tie_value < thr else above
        return self.priority

    def critical_values(self) -> list[float]:
        out = [v for v, _ in self.overrides]
        if self.threshold is not None:
            out.append(self.threshold[0])
        return out


@dataclass(frozen=True)
class TieBreakRule:
    """Per-auction priority lists with value overrides and thresholds.

    With `uniform=True` ties are split evenly among the tied bidders instead.
    Threshold semantics: a tie value strictly below the threshold uses
    `below`, anything else uses `above`.
    """

    auctions: tuple[AuctionTieRule, ...]
    uniform: bool = False

    @staticmethod
    def lexicographic(n: int, m: int) -> "TieBreakRule":
        return TieBreakRule(tuple(AuctionTieRule(tuple(range(n))) for _ in range(m)))

    @staticmethod
    def uniform_random(n: int, m: int) -> "TieBreakRule":
        return TieBreakRule(tuple(AuctionTieRule(tuple(range(n))) for _ in range(m)), uniform=True)

    def validate(self, n: int, m: int):
        if len(self.auctions) != m:
            raise ValueError("tie rule needs one entry per auction")
        perm = list(range(n))
        for a in self.auctions:
            lists = [a.priority] + [p for _, p in a.overrides]
            if a.threshold is not None:
                lists += [a.threshold[1], a.threshold[2]]
            for p in lists:
                if sorted(p) != perm:
                    raise ValueError(f"priority {p} is not a permutation of agents")
            vals = [v for v, _ in a.overrides]
            if len(set(vals)) != len(vals):
                raise ValueError("override tie values must be distinct")

    def to_json(self) -> dict:
        d = {"default": [list(a.priority) for a in self.auctions],
             "overrides": [{"auction": j, "value": v, "priority": list(p)}
                           for j, a in enumerate(self.auctions) for v, p in a.overrides],
             "thresholds": [{"auction": j, "threshold": a.threshold[0], "below": list(a.threshold[1]),
                             "above": list(a.threshold[2])}
                            for j, a in enumerate(self.auctions) if a.threshold is not None]}
        if self.uniform:
            d["uniform"] = True
        return d

    @staticmethod
    def from_json(d: dict, n: int, m: int) -> "TieBreakRule":
        default = d.get("default")
        if default is None:
            base = [tuple(range(n))] * m
        elif len(default) == 1 and m > 1:
            base = [tuple(default[0])] * m
        else:
            base = [tuple(p) for p in default]
        ov: list[list] = [[] for _ in range(m)]
        for o in d.get("overrides", []):
            ov[int(o["auction"])].append((float(o["value"]), tuple(o["priority"])))
        th: list = [None] * m
        for t in d.get("thresholds", []):
            th[int(t["auction"])] = (float(t["threshold"]), tuple(t["below"]), tuple(t["above"]))
        rule = TieBreakRule(tuple(AuctionTieRule(base[j], tuple(ov[j]), th[j]) for j in range(m)),
                            uniform=bool(d.get("uniform", False)))
        rule.validate(n, m)
        return rule


# --------------------------------------------------------------------------
# instance


@dataclass(frozen=True)
class Instance:
    n: int
    m: int
    reserves: tuple[float, ...]
    valuations: tuple[ValuationFunction, ...]
    sigmas: tuple[float, ...]
    taus: tuple[float, ...]
    budgets: tuple[float, ...]
    tiebreak: TieBreakRule

    def __post_init__(self):
        object.__setattr__(self, "reserves", tuple(float(r) for r in self.reserves))
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        object.__setattr__(self, "taus", tuple(float(t) for t in self.taus))
        object.__setattr__(self, "budgets", tuple(float(b) for b in self.budgets))
        object.__setattr__(self, "valuations", tuple(self.valuations))
        if self.n < 1 or self.m < 1:
            raise ValueError("need at least one agent and one item")
        for name, seq, k in (("reserves", self.reserves, self.m), ("valuations", self.valuations, self.n),
                             ("sigmas", self.sigmas, self.n), ("taus", self.taus, self.n),
                             ("budgets", self.budgets, self.n)):
            if len(seq) != k:
                raise ValueError(f"{name} has length {len(seq)}, expected {k}")
        if any(r < 0 for r in self.reserves):
            raise ValueError("reserves must be non-negative")
        if any(v.m != self.m for v in self.valuations):
            raise ValueError("valuation item count mismatch")
        if any(not 0.0 <= s <= 1.0 for s in self.sigmas):
            raise ValueError("types must lie in [0, 1]")
        if any(not t > 0 for t in self.taus):
            raise ValueError("targets must be positive")
        if any(not b > 0 for b in self.budgets):
            raise ValueError("budgets must be positive or infinite")
        self.tiebreak.validate(self.n, self.m)

    @property
    def budget_free(self) -> bool:
        return all(math.isinf(b) for b in self.budgets)

    def type_set(self) -> "TypeSet":
        return TypeSet(self.sigmas)

    def to_json(self) -> dict:
        return {"n": self.n, "m": self.m, "reserves": list(self.reserves),
                "valuations": [v.to_json() for v in self.valuations],
                "sigmas": list(self.sigmas), "taus": list(self.taus),
                "budgets": ["inf" if math.isinf(b) else b for b in self.budgets],
                "tiebreak": self.tiebreak.to_json()}

    @staticmethod
    def from_json(d: dict) -> "Instance":
        for key in ("n", "m", "valuations"):
            if key not in d:
                raise ValueError(f"instance JSON missing field {key!r}")
        n, m = int(d["n"]), int(d["m"])
        return Instance(
            n=n, m=m,
            reserves=tuple(_num(x) for x in d.get("reserves", [0.0] * m)),
            valuations=tuple(valuation_from_json(v) for v in d["valuations"]),
            sigmas=tuple(_num(x) for x in d.get("sigmas", [1.0] * n)),
            taus=tuple(_num(x) for x in d.get("taus", [1.0] * n)),
            budgets=tuple(_num(x) for x in d.get("budgets", ["inf"] * n)),
            tiebreak=TieBreakRule.from_json(d.get("tiebreak", {}), n, m),
        )


def make_instance(valuations: Sequence, *, reserves=None, sigmas=None, taus=None, budgets=None,
                  tiebreak: TieBreakRule | None = None) -> Instance:
    """Convenience builder; plain sequences are read as additive valuations."""
    vals = tuple(v if isinstance(v, ValuationFunction) else Additive(tuple(v)) for v in valuations)
    n, m = len(vals), vals[0].m
    return Instance(n, m,
                    tuple(reserves) if reserves is not None else (0.0,) * m,
                    vals,
                    tuple(sigmas) if sigmas is not None else (1.0,) * n,
                    tuple(taus) if taus is not None else (1.0,) * n,
                    tuple(budgets) if budgets is not None else (INF,) * n,
                    tiebreak or TieBreakRule.lexicographic(n, m))


@dataclass(frozen=True)
class TypeSet:
    values: tuple[float, ...]

    def __init__(self, values: Iterable[float]):
        vals = tuple(sorted(set(float(t) for t in values)))
        if not vals:
            raise ValueError("type set must be non-empty")
        if any(not 0.0 <= t <= 1.0 for t in vals):
            raise ValueError("types must lie in [0, 1]")
        object.__setattr__(self, "values", vals)

    def augmented(self, budgeted: bool = True) -> "TypeSet":
        return TypeSet(self.values + ((0.0,) if budgeted else ()))

    @property
    def t_min(self) -> float:
        return self.values[0]

    @property
    def t_max(self) -> float:
        return self.values[-1]

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


def normalize_targets(inst: Instance) -> Instance:
    """Fold targets into valuations and types so that every target equals 1."""
    for s, t in zip(inst.sigmas, inst.taus):
        if s * t > 1.0 + 1e-12:
            raise ValueError("tau * sigma must not exceed 1")
    return replace(inst,
                   valuations=tuple(v.scaled(t) for v, t in zip(inst.valuations, inst.taus)),
                   sigmas=tuple(s * t for s, t in zip(inst.sigmas, inst.taus)),
                   taus=(1.0,) * inst.n)


# --------------------------------------------------------------------------
# auctions


@dataclass(frozen=True)
class Outcome:
    allocation: tuple[int, ...]          # winner per item, -1 if unsold
    payments: np.ndarray                 # n x m

    def bundle(self, i: int) -> tuple[int, ...]:
        return tuple(j for j, w in enumerate(self.allocation) if w == i)

    def payment(self, i: int) -> float:
        return float(self.payments[i].sum())

    @property
    def actual_winners(self) -> tuple[int, ...]:
        return self.allocation


def column_winners(inst: Instance, j: int, bids: Sequence[float]) -> list[tuple[int, float]]:
    """Winner distribution of auction j: [(agent, probability)], empty if unsold."""
    r = inst.reserves[j]
    best = max(bids)
    if best < r - RESERVE_TOL:
        return []
    tied = [k for k, b in enumerate(bids) if b >= best - TIE_TOL and b >= r - RESERVE_TOL]
    if len(tied) == 1:
        return [(tied[0], 1.0)]
    if inst.tiebreak.uniform:
        return [(k, 1.0 / len(tied)) for k in tied]
    order = inst.tiebreak.auctions[j].order_at(best)
    tied_set = set(tied)
    for k in order:
        if k in tied_set:
            return [(k, 1.0)]
    raise AssertionError("unreachable")


def run_auctions(inst: Instance, b, rng: np.random.Generator | None = None) -> Outcome:
    """Highest reserve-meeting bid wins and pays its bid.

    Uniform tie rules need `rng` for a realized winner; without it the first
    tied agent is used.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (inst.n, inst.m):
        raise ValueError(f"bid matrix shape {b.shape} != {(inst.n, inst.m)}")
    if (b < 0).any():
        raise ValueError("bids must be non-negative")
    alloc = []
    pay = np.zeros((inst.n, inst.m))
    for j in range(inst.m):
        ws = column_winners(inst, j, b[:, j])
        if not ws:
            alloc.append(-1)
            continue
        if len(ws) == 1 or rng is None:
            w = ws[0][0]
        else:
            w = ws[int(rng.integers(len(ws)))][0]
        alloc.append(w)
        pay[w, j] = b[w, j]
    return Outcome(tuple(alloc), pay)


def agent_welfare(inst: Instance, i: int, value: float) -> float:
    return min(inst.taus[i] * value, inst.budgets[i])


def _assignment_count(n: int, m: int) -> int:
    return (n + 1) ** m


def optimal_allocation(inst: Instance, limit: int = ENUM_LIMIT) -> tuple[tuple[int, ...], float]:
    """Exhaustive OPT over assignments of each item to an agent or to nobody.

    Ties keep the lexicographically first assignment in the enumeration order
    (agents 0..n-1, then -1 for unsold).
    """
    if _assignment_count(inst.n, inst.m) > limit:
        raise EnumerationLimitError(f"(n+1)^m = {_assignment_count(inst.n, inst.m)} exceeds {limit}")
    choices = list(range(inst.n)) + [-1]
    cache: list[dict] = [dict() for _ in range(inst.n)]
    best, arg = -1.0, None
    for assign in itertools.product(choices, repeat=inst.m):
        tot = 0.0
        for i in range(inst.n):
            S = tuple(j for j, w in enumerate(assign) if w == i)
            c = cache[i]
            if S not in c:
                c[S] = agent_welfare(inst, i, inst.valuations[i].value(S))
            tot += c[S]
        if tot > best + 1e-15:
            best, arg = tot, assign
    return tuple(arg), float(best)


def opt_value(inst: Instance) -> float:
    return optimal_allocation(inst)[1]


def _representative(v: ValuationFunction, S: tuple[int, ...]) -> tuple[float, ...]:
    m = v.m
    if isinstance(v, Additive):
        return v.values
    if isinstance(v, XOS):
        return v.best_clause(S)
    if isinstance(v, BudgetCapped):
        if math.isinf(v.cap):
            return _representative(v.inner, S)
        if m > 4 and not isinstance(v.inner, Additive):
            raise ValueError("capped XOS representatives are only computed for m <= 4")
        a = _representative(v.inner, S)
        tot = sum(a[j] for j in S)
        scale = 1.0 if tot <= v.cap or tot == 0 else v.cap / tot
        cand = tuple(scale * x for x in a)
        if _satisfies_xos2(v, cand):
            return cand
        w = xos_witness(v, S, must_dominate=range(m))
        if w is None:
            raise ValueError("no additive representative found")
        return w
    raise TypeError(f"unsupported valuation {type(v).__name__}")


def _satisfies_xos2(v: ValuationFunction, a, tol: float = 1e-12) -> bool:
    if v.m > 12:
        raise ValueError("exhaustive XOS2 check limited to m <= 12")
    return all(sum(a[j] for j in T) <= v.value(T) + tol for T in all_subsets(v.m))


def opt_representatives(inst: Instance, x_star: Sequence[int] | None = None) -> np.ndarray:
    """n x m matrix of opt-induced additive representatives v*_ij."""
    if x_star is None:
        x_star = optimal_allocation(inst)[0]
    rep = np.zeros((inst.n, inst.m))
    for i, v in enumerate(inst.valuations):
        S = tuple(j for j, w in enumerate(x_star) if w == i)
        a = _representative(v, S)
        rep[i] = a
        if inst.m <= 4:
            if abs(sum(a[j] for j in S) - v.value(S)) > 1e-9:
                raise AssertionError("XOS1 violated")
            if not _satisfies_xos2(v, a, 1e-9):
                raise AssertionError("XOS2 violated")
    return rep


def rightful_winners(inst: Instance, x_star: Sequence[int] | None = None,
                     rep: np.ndarray | None = None) -> tuple[int, ...]:
    if x_star is None:
        x_star = optimal_allocation(inst)[0]
    if rep is None:
        rep = opt_representatives(inst, x_star)
    rw = []
    for j in range(inst.m):
        col = rep[:, j]
        top = col.max()
        tied = [i for i in range(inst.n) if col[i] >= top - 1e-12]
        rw.append(x_star[j] if x_star[j] in tied else tied[0])
    return tuple(rw)


def eta_gaps(inst: Instance, x_star=None) -> tuple[tuple[float, ...], float]:
    """Relative reserve gaps eta_j = r_j / v*_{rw(j) j} and their minimum."""
    if x_star is None:
        x_star = optimal_allocation(inst)[0]
    rep = opt_representatives(inst, x_star)
    rw = rightful_winners(inst, x_star, rep)
    etas = []
    for j in range(inst.m):
        r = inst.reserves[j]
        if r == 0:
            etas.append(0.0)
            continue
        v = rep[rw[j], j]
        e = r / v if v > 0 else INF
        if e >= 1.0:
            raise InfeasibleReserveError(f"reserve of item {j} is not below the rightful winner's value")
        etas.append(e)
    return tuple(etas), min(etas)


def proxy_from_values(inst: Instance, expected_values: Sequence[float]) -> Instance:
    """Budget-free proxy given each agent's expected (unscaled) value.

    Valuations are capped at B_i / tau_i, so tau_i * capped value equals
    min(tau_i v_i, B_i); with unit targets this is the plain budget cap.
    """
    vals, sig = [], []
    for i in range(inst.n):
        bud, tau = inst.budgets[i], inst.taus[i]
        v = inst.valuations[i]
        if math.isinf(bud):
            vals.append(v)
            sig.append(inst.sigmas[i])
            continue
        vals.append(budget_cap(v, bud / tau))
        sig.append(0.0 if bud < tau * expected_values[i] else inst.sigmas[i])
    return replace(inst, valuations=tuple(vals), sigmas=tuple(sig), budgets=(INF,) * inst.n)


def proxy_instance(inst: Instance, profile) -> Instance:
    from .bid_profiles import expected_outcome_stats
    if inst.budget_free:
        return inst
    stats = expected_outcome_stats(inst, profile)
    return proxy_from_values(inst, stats.value)


def liquid_welfare(inst: Instance, profile) -> float:
    from .bid_profiles import expected_outcome_stats
    stats = expected_outcome_stats(inst, profile)
    return float(sum(agent_welfare(inst, i, stats.value[i]) for i in range(inst.n)))
