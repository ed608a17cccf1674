"""Random bid profiles and exact expected outcomes.

Every profile is lowered to a list of cells. A cell is either a point mass
on one bid matrix or a one-dimensional family x -> base + slope * x with x
drawn from a ParametricBid restricted to an interval. Within a cell the
auction outcome only changes where two bid lines cross or a line meets a
reserve or a tie-rule value, so expectations are sums over pieces with
constant winners: probability masses come from the CDF and payments from
the first partial moment.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .auction_core import Instance, column_winners

QUAD_TOL = 1e-9
QUAD_LIMIT = 500


class NotComputableError(ValueError):
    pass


# --------------------------------------------------------------------------
# one-dimensional families


@dataclass(frozen=True, eq=False)
class ParametricBid:
    """Distribution on [lo, hi] with closed-form CDF/PDF and an optional atom at lo.

    `cdf(x)` for x in [lo, hi] must include the atom, so cdf(lo) == atom.
    `antideriv_moment`, when given, is an antiderivative of x * pdf(x).
    """

    lo: float
    hi: float
    cdf_fn: Callable[[float], float]
    pdf_fn: Callable[[float], float]
    atom: float = 0.0
    antideriv_moment: Callable[[float], float] | None = None
    ppf_fn: Callable[[float], float] | None = None
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.hi >= self.lo:
            raise ValueError("need hi >= lo")
        if not -1e-12 <= self.atom <= 1 + 1e-12:
            raise ValueError("atom mass must lie in [0, 1]")

    def cdf(self, x: float) -> float:
        if x < self.lo:
            return 0.0
        if x >= self.hi:
            return 1.0
        return min(max(self.cdf_fn(x), 0.0), 1.0)

    def pdf(self, x: float) -> float:
        if x < self.lo or x > self.hi:
            return 0.0
        return self.pdf_fn(x)

    def mass(self, a: float, b: float) -> float:
        """Continuous mass on (a, b) (the atom is excluded)."""
        a, b = max(a, self.lo), min(b, self.hi)
        if b <= a:
            return 0.0
        fa = self.atom if a <= self.lo else self.cdf(a)
        return max(self.cdf_fn(b) if b < self.hi else 1.0, fa) - fa

    def moment(self, a: float, b: float) -> float:
        """Integral of x * pdf(x) over (a, b)."""
        a, b = max(a, self.lo), min(b, self.hi)
        if b <= a:
            return 0.0
        if self.antideriv_moment is not None:
            return self.antideriv_moment(b) - self.antideriv_moment(a)
        val, _ = integrate.quad(lambda x: x * self.pdf_fn(x), a, b, epsabs=QUAD_TOL * 1e-3, epsrel=QUAD_TOL, limit=QUAD_LIMIT)
        return val

    def ppf(self, u: float) -> float:
        if u <= self.atom:
            return self.lo
        if u >= 1.0:
            return self.hi
        if self.ppf_fn is not None:
            return min(max(self.ppf_fn(u), self.lo), self.hi)
        return optimize.brentq(lambda x: self.cdf(x) - u, self.lo, self.hi, xtol=1e-12, rtol=1e-14)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if size is None:
            return self.ppf(float(rng.random()))
        return np.array([self.ppf(u) for u in rng.random(size)])

    def mean(self) -> float:
        return self.atom * self.lo + self.moment(self.lo, self.hi)

    def to_json(self) -> dict:
        if not self.name:
            raise ValueError("only registered families serialize")
        return {"family": self.name, "params": dict(self.params)}


def reciprocal_family(k: float, s: float, lo: float, hi: float | None = None) -> ParametricBid:
    """F(x) = k / (1 - s x) on [lo, hi] with hi = (1 - k)/s by default; atom k/(1 - s lo)."""
    if not (k > 0 and s > 0):
        raise ValueError("need k > 0 and s > 0")
    if hi is None:
        hi = (1.0 - k) / s
    if lo > hi or s * hi >= 1.0:
        raise ValueError("invalid support for reciprocal family")
    atom = k / (1.0 - s * lo)
    return ParametricBid(
        lo=lo, hi=hi,
        cdf_fn=lambda x: k / (1.0 - s * x),
        pdf_fn=lambda x: k * s / (1.0 - s * x) ** 2,
        atom=atom,
        antideriv_moment=lambda x: (k / s) * (1.0 / (1.0 - s * x) + math.log(1.0 - s * x)),
        ppf_fn=lambda u: (1.0 - k / u) / s,
        name="reciprocal", params={"k": k, "s": s, "lo": lo, "hi": hi})


def uniform_family(lo: float, hi: float) -> ParametricBid:
    w = hi - lo
    if not w > 0:
        raise ValueError("need hi > lo")
    return ParametricBid(lo, hi, lambda x: (x - lo) / w, lambda x: 1.0 / w, 0.0,
                         antideriv_moment=lambda x: x * x / (2 * w),
                         ppf_fn=lambda u: lo + u * w, name="uniform", params={"lo": lo, "hi": hi})


FAMILIES: dict[str, Callable[..., ParametricBid]] = {
    "reciprocal": reciprocal_family,
    "uniform": uniform_family,
}


def register_family(name: str, builder: Callable[..., ParametricBid]):
    FAMILIES[name] = builder


def family(name: str, **params) -> ParametricBid:
    if name not in FAMILIES:
        raise ValueError(f"unknown family {name!r}")
    return FAMILIES[name](**params)


# --------------------------------------------------------------------------
# profiles


@dataclass(frozen=True, eq=False)
class Cell:
    weight: float
    base: np.ndarray
    slope: np.ndarray | None = None
    dist: ParametricBid | None = None
    lo: float = 0.0
    hi: float = 0.0

    @property
    def continuous(self) -> bool:
        return self.dist is not None


class RandomBidProfile:
    n: int
    m: int

    def cells(self) -> list[Cell]:
        raise NotImplementedError


def _continuous_cells(weight, base, slope, X: ParametricBid) -> list[Cell]:
    out = []
    if X.atom > 0:
        out.append(Cell(weight * X.atom, base + slope * X.lo))
    if X.hi > X.lo and X.atom < 1.0:
        out.append(Cell(weight, base, slope, X, X.lo, X.hi))
    return out


@dataclass(frozen=True, eq=False)
class FiniteProfile(RandomBidProfile):
    atoms: tuple[tuple[np.ndarray, float], ...]

    def __init__(self, atoms):
        at = tuple((np.array(b, dtype=float), float(p)) for b, p in atoms)
        if not at:
            raise ValueError("finite profile needs atoms")
        if any(p <= 0 for _, p in at):
            raise ValueError("atom probabilities must be positive")
        if abs(sum(p for _, p in at) - 1.0) > 1e-12:
            raise ValueError("atom probabilities must sum to 1")
        shapes = {b.shape for b, _ in at}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ValueError("atoms must be bid matrices of one shape")
        object.__setattr__(self, "atoms", at)

    @staticmethod
    def pure(b) -> "FiniteProfile":
        return FiniteProfile([(b, 1.0)])

    @property
    def n(self):
        return self.atoms[0][0].shape[0]

    @property
    def m(self):
        return self.atoms[0][0].shape[1]

    def cells(self):
        return [Cell(p, b) for b, p in self.atoms]

    def to_json(self):
        return {"kind": "finite", "atoms": [{"bids": b.tolist(), "prob": p} for b, p in self.atoms]}


@dataclass(frozen=True, eq=False)
class CoupledProfile(RandomBidProfile):
    """One draw x of X mapped to the bid matrix base + slope * x."""

    X: ParametricBid
    base: np.ndarray
    slope: np.ndarray

    def __init__(self, X, base, slope):
        base = np.array(base, dtype=float)
        slope = np.array(slope, dtype=float)
        if base.shape != slope.shape or base.ndim != 2:
            raise ValueError("base and slope must be matrices of one shape")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "slope", slope)

    @property
    def n(self):
        return self.base.shape[0]

    @property
    def m(self):
        return self.base.shape[1]

    def cells(self):
        return _continuous_cells(1.0, self.base, self.slope, self.X)

    def to_json(self):
        return {"kind": "coupled", **self.X.to_json(), "base": self.base.tolist(), "slope": self.slope.tolist()}


@dataclass(frozen=True, eq=False)
class FiniteComponent:
    atoms: tuple[tuple[np.ndarray, float], ...]

    def __init__(self, atoms):
        at = tuple((np.array(b, dtype=float), float(p)) for b, p in atoms)
        if abs(sum(p for _, p in at) - 1.0) > 1e-12 or any(p <= 0 for _, p in at):
            raise ValueError("component probabilities must be positive and sum to 1")
        object.__setattr__(self, "atoms", at)

    @staticmethod
    def pure(b) -> "FiniteComponent":
        return FiniteComponent([(b, 1.0)])

    @property
    def m(self):
        return self.atoms[0][0].shape[0]

    def to_json(self):
        return {"kind": "finite", "atoms": [{"bid": b.tolist(), "prob": p} for b, p in self.atoms]}


@dataclass(frozen=True, eq=False)
class ParametricComponent:
    """An agent's bid vector base + slope * x with x ~ X."""

    X: ParametricBid
    base: np.ndarray
    slope: np.ndarray

    def __init__(self, X, base, slope):
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "base", np.array(base, dtype=float))
        object.__setattr__(self, "slope", np.array(slope, dtype=float))

    @property
    def m(self):
        return self.base.shape[0]

    def to_json(self):
        return {"kind": "parametric", **self.X.to_json(), "base": self.base.tolist(), "slope": self.slope.tolist()}


Component = FiniteComponent | ParametricComponent


def _component_cells(c: Component) -> list[Cell]:
    if isinstance(c, FiniteComponent):
        return [Cell(p, b[None, :]) for b, p in c.atoms]
    return _continuous_cells(1.0, c.base[None, :], c.slope[None, :], c.X)


def _stack_cells(parts: Sequence[Cell]) -> Cell:
    """Independent product of one-row cells; at most one may be continuous."""
    cont = [c for c in parts if c.continuous]
    if len(cont) > 1:
        raise NotComputableError("product of several continuous components is not supported")
    w = float(np.prod([c.weight for c in parts]))
    base = np.vstack([c.base for c in parts])
    if not cont:
        return Cell(w, base)
    slope = np.vstack([c.slope if c.continuous else np.zeros_like(c.base) for c in parts])
    k = cont[0]
    return Cell(w, base, slope, k.dist, k.lo, k.hi)


@dataclass(frozen=True, eq=False)
class ProductProfile(RandomBidProfile):
    components: tuple[Component, ...]

    def __init__(self, components):
        comps = tuple(components)
        if len({c.m for c in comps}) != 1:
            raise ValueError("components must bid on the same items")
        object.__setattr__(self, "components", comps)

    @property
    def n(self):
        return len(self.components)

    @property
    def m(self):
        return self.components[0].m

    def cells(self):
        per = [_component_cells(c) for c in self.components]
        return [_stack_cells(combo) for combo in itertools.product(*per)]

    def to_json(self):
        return {"kind": "product", "components": [c.to_json() for c in self.components]}


def as_profile(b) -> RandomBidProfile:
    if isinstance(b, RandomBidProfile):
        return b
    return FiniteProfile.pure(b)


def marginal_excluding(B: RandomBidProfile, i: int) -> RandomBidProfile:
    if isinstance(B, FiniteProfile):
        merged: dict[bytes, list] = {}
        for b, p in B.atoms:
            r = np.delete(b, i, axis=0)
            key = r.tobytes()
            if key in merged:
                merged[key][1] += p
            else:
                merged[key] = [r, p]
        tot = sum(p for _, p in merged.values())
        return FiniteProfile([(b, p / tot) for b, p in merged.values()])
    if isinstance(B, CoupledProfile):
        return CoupledProfile(B.X, np.delete(B.base, i, axis=0), np.delete(B.slope, i, axis=0))
    if isinstance(B, ProductProfile):
        return ProductProfile(B.components[:i] + B.components[i + 1:])
    raise TypeError(f"unsupported profile {type(B).__name__}")


# --------------------------------------------------------------------------
# JSON


def _dist_from_json(d: dict) -> ParametricBid:
    return family(d["family"], **d.get("params", {}))


def profile_from_json(d: dict) -> RandomBidProfile:
    kind = d.get("kind")
    if kind == "finite":
        return FiniteProfile([(a["bids"], a["prob"]) for a in d["atoms"]])
    if kind == "pure":
        return FiniteProfile.pure(d["bids"])
    if kind == "coupled":
        return CoupledProfile(_dist_from_json(d), d["base"], d["slope"])
    if kind == "product":
        comps = []
        for c in d["components"]:
            if c["kind"] == "finite":
                comps.append(FiniteComponent([(a["bid"], a["prob"]) for a in c["atoms"]]))
            elif c["kind"] == "parametric":
                comps.append(ParametricComponent(_dist_from_json(c), c["base"], c["slope"]))
            else:
                raise ValueError(f"unknown component kind {c['kind']!r}")
        return ProductProfile(comps)
    raise ValueError(f"unknown profile kind {kind!r}")


# --------------------------------------------------------------------------
# expectations


@dataclass
class OutcomeStats:
    value: np.ndarray          # E[v_i(x_i)]
    payment: np.ndarray        # E[p_i]
    win: np.ndarray            # n x m winning probabilities
    item_payment: np.ndarray   # E[p_{aw(j) j}]
    sold: np.ndarray           # P[item j sold]

    def gain(self, inst: Instance) -> np.ndarray:
        return self.value - np.asarray(inst.sigmas) * self.payment


def _breakpoints(inst: Instance, cell: Cell, cols: Sequence[int]) -> list[float]:
    lo, hi = cell.lo, cell.hi
    pts = {lo, hi}
    k = cell.base.shape[0]
    for j in cols:
        consts = [inst.reserves[j]] + inst.tiebreak.auctions[j].critical_values()
        a, s = cell.base[:, j], cell.slope[:, j]
        for p in range(k):
            if s[p] != 0:
                for c in consts:
                    pts.add((c - a[p]) / s[p])
            for q in range(p + 1, k):
                if s[p] != s[q]:
                    pts.add((a[q] - a[p]) / (s[p] - s[q]))
    return sorted(x for x in pts if lo <= x <= hi)


class _Acc:
    def __init__(self, inst: Instance):
        self.inst = inst
        n, m = inst.n, inst.m
        self.value = np.zeros(n)
        self.payment = np.zeros(n)
        self.win = np.zeros((n, m))
        self.item_payment = np.zeros(m)
        self.sold = np.zeros(m)
        self._vcache = [dict() for _ in range(n)]

    def _v(self, i, S):
        c = self._vcache[i]
        if S not in c:
            c[S] = self.inst.valuations[i].value(S)
        return c[S]

    def add(self, bids: np.ndarray, mass: float, pay_of: Callable[[int, int], float]):
        """Record a piece of probability `mass`; pay_of(k, j) is E[bid_kj ; piece]."""
        inst = self.inst
        per_item = [column_winners(inst, j, bids[:, j]) for j in range(inst.m)]
        for j, ws in enumerate(per_item):
            for k, q in ws:
                pj = q * pay_of(k, j)
                self.win[k, j] += q * mass
                self.payment[k] += pj
                self.item_payment[j] += pj
                self.sold[j] += q * mass
        options = [ws if ws else [(-1, 1.0)] for ws in per_item]
        for combo in itertools.product(*options):
            q = mass
            for _, qq in combo:
                q *= qq
            if q == 0:
                continue
            for i in range(inst.n):
                S = tuple(j for j, (k, _) in enumerate(combo) if k == i)
                if S:
                    self.value[i] += q * self._v(i, S)

    def stats(self) -> OutcomeStats:
        return OutcomeStats(self.value, self.payment, self.win, self.item_payment, self.sold)


def stats_from_cells(inst: Instance, cells: Sequence[Cell]) -> OutcomeStats:
    acc = _Acc(inst)
    for cell in cells:
        if cell.base.shape != (inst.n, inst.m):
            raise ValueError("profile shape does not match the instance")
        if not cell.continuous:
            b = cell.base
            w = cell.weight
            acc.add(b, w, lambda k, j, b=b, w=w: w * b[k, j])
            continue
        pts = _breakpoints(inst, cell, range(inst.m))
        for a, c in zip(pts[:-1], pts[1:]):
            if c <= a:
                continue
            mass = cell.weight * cell.dist.mass(a, c)
            if mass <= 0:
                continue
            mom = cell.weight * cell.dist.moment(a, c)
            mid = cell.base + cell.slope * (0.5 * (a + c))
            acc.add(mid, mass,
                    lambda k, j, mass=mass, mom=mom: cell.base[k, j] * mass + cell.slope[k, j] * mom)
    return acc.stats()


def expected_outcome_stats(inst: Instance, B) -> OutcomeStats:
    return stats_from_cells(inst, as_profile(B).cells())


def deviation_row_cells(dev, m: int) -> list[Cell]:
    """Cells of a single agent's deviation: pure vector, component, or 1-item ParametricBid."""
    if isinstance(dev, ParametricBid):
        if m != 1:
            raise ValueError("a bare ParametricBid deviation needs a single-item instance")
        dev = ParametricComponent(dev, [0.0], [1.0])
    if isinstance(dev, (FiniteComponent, ParametricComponent)):
        return _component_cells(dev)
    v = np.asarray(dev, dtype=float).reshape(1, m)
    return [Cell(1.0, v)]


def insert_row_cells(cells_minus_i: Sequence[Cell], i: int, dev_cells: Sequence[Cell]) -> list[Cell]:
    out = []
    for oc in cells_minus_i:
        for dc in dev_cells:
            if oc.continuous and dc.continuous:
                raise NotComputableError("continuous deviation against a continuous opponent profile")
            w = oc.weight * dc.weight
            base = np.insert(oc.base, i, dc.base[0], axis=0)
            if oc.continuous:
                slope = np.insert(oc.slope, i, np.zeros(oc.base.shape[1]), axis=0)
                out.append(Cell(w, base, slope, oc.dist, oc.lo, oc.hi))
            elif dc.continuous:
                slope = np.insert(np.zeros_like(oc.base), i, dc.slope[0], axis=0)
                out.append(Cell(w, base, slope, dc.dist, dc.lo, dc.hi))
            else:
                out.append(Cell(w, base))
    return out


def deviation_stats(inst: Instance, i: int, dev, B_minus_i) -> OutcomeStats:
    cells = insert_row_cells(as_profile(B_minus_i).cells(), i, deviation_row_cells(dev, inst.m))
    return stats_from_cells(inst, cells)


def column_win_probability(inst: Instance, i: int, j: int, c: float, cells_minus_i: Sequence[Cell]) -> float:
    """P[agent i wins auction j when bidding c there], using only column j."""
    total = 0.0
    for cell in cells_minus_i:
        col = np.insert(cell.base[:, j], i, c)
        if not cell.continuous or not np.any(cell.slope[:, j]):
            w = cell.weight * (cell.dist.mass(cell.lo, cell.hi) if cell.continuous else 1.0)
            for k, q in column_winners(inst, j, col):
                if k == i:
                    total += q * w
            continue
        slope = np.insert(cell.slope[:, j], i, 0.0)
        sub = Cell(cell.weight, col[:, None], slope[:, None], cell.dist, cell.lo, cell.hi)
        pts = _breakpoints_single(inst, j, sub)
        for a, b in zip(pts[:-1], pts[1:]):
            if b <= a:
                continue
            mass = cell.dist.mass(a, b)
            if mass <= 0:
                continue
            mid = col + slope * (0.5 * (a + b))
            for k, q in column_winners(inst, j, mid):
                if k == i:
                    total += q * cell.weight * mass
    return total


def _breakpoints_single(inst: Instance, j: int, cell: Cell) -> list[float]:
    lo, hi = cell.lo, cell.hi
    pts = {lo, hi}
    consts = [inst.reserves[j]] + inst.tiebreak.auctions[j].critical_values()
    a, s = cell.base[:, 0], cell.slope[:, 0]
    k = len(a)
    for p in range(k):
        if s[p] != 0:
            for c in consts:
                pts.add((c - a[p]) / s[p])
        for q in range(p + 1, k):
            if s[p] != s[q]:
                pts.add((a[q] - a[p]) / (s[p] - s[q]))
    return sorted(x for x in pts if lo <= x <= hi)


def sample(B: RandomBidProfile, seed: int | np.random.Generator) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    B = as_profile(B)
    if isinstance(B, FiniteProfile):
        probs = np.array([p for _, p in B.atoms])
        k = int(rng.choice(len(probs), p=probs / probs.sum()))
        return B.atoms[k][0].copy()
    if isinstance(B, CoupledProfile):
        x = B.X.sample(rng)
        return B.base + B.slope * x
    if isinstance(B, ProductProfile):
        rows = []
        for c in B.components:
            if isinstance(c, FiniteComponent):
                probs = np.array([p for _, p in c.atoms])
                rows.append(c.atoms[int(rng.choice(len(probs), p=probs / probs.sum()))][0])
            else:
                rows.append(c.base + c.slope * c.X.sample(rng))
        return np.vstack(rows)
    raise TypeError(f"unsupported profile {type(B).__name__}")


def support_points(B: RandomBidProfile) -> list[tuple[int, int, float]]:
    """(agent, item, bid) critical locations: atoms and support endpoints of every entry."""
    out = []
    for cell in as_profile(B).cells():
        k, m = cell.base.shape
        for r in range(k):
            for j in range(m):
                if cell.continuous:
                    out.append((r, j, cell.base[r, j] + cell.slope[r, j] * cell.lo))
                    out.append((r, j, cell.base[r, j] + cell.slope[r, j] * cell.hi))
                else:
                    out.append((r, j, cell.base[r, j]))
    return out
