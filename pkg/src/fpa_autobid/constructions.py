"""Registry of lower-bound instances with their claimed equilibria.

Each entry builds an (Instance, profile) pair from parameters, states the
ratio it should achieve in closed form, and knows which upper bound it is
supposed to meet. `verify` runs the whole pipeline in one call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .auction_core import (XOS, AuctionTieRule, InfeasibleReserveError, Instance, TieBreakRule, eta_gaps,
                           make_instance)
from .bid_profiles import (CoupledProfile, FiniteComponent, FiniteProfile, ParametricComponent, ProductProfile,
                           RandomBidProfile, reciprocal_family)
from .equilibrium import DEFAULT_TOL, VERIFY_STEP, DeviationSet, verify_cce, verify_mne
from .smoothness_rmp import bound_P, bound_Pt_eta, bound_Q_common, claim_f
from .special_math import DomainError, lambert_w0, theta_threshold

E = math.e


def default_a(t: float) -> float:
    return -lambert_w0(-math.exp(-t - 1.0))


def _budget_one(t: float, a: float) -> float:
    return (1.0 - a + a * math.log(a)) / t


def _commontype_ratio(t: float, a: float) -> float:
    c = 1.0 - a + a * math.log(a)
    return (c + t) / (c + a * t)


def _split_tie_rule() -> TieBreakRule:
    """Item 1 favors agent 1; item 2 favors agent 2 only for a tie at 0."""
    return TieBreakRule((AuctionTieRule((0, 1)), AuctionTieRule((0, 1), ((0.0, (1, 0)),))))


@dataclass
class Construction:
    name: str
    defaults: dict
    validate: Callable[[dict], None]
    builder: Callable[[dict], tuple[Instance, RandomBidProfile]]
    claimed_ratio: Callable[[dict], float]
    equilibrium_class: str
    well_supported_claim: bool
    upper_bound: Callable[[dict], float | None] = lambda p: None
    critical_points: Callable[[dict], dict] = lambda p: {}
    notes: str = ""

    def params(self, overrides: dict | None = None) -> dict:
        p = dict(self.defaults)
        p.update(overrides or {})
        if self.name in ("budget_commontype", "budgetfree_hybrid") and p.get("a") is None:
            if p["t"] > theta_threshold():
                p["a"] = default_a(p["t"])
        self.validate(p)
        return p


REGISTRY: dict[str, Construction] = {}


def register(c: Construction) -> Construction:
    REGISTRY[c.name] = c
    return c


def _need(cond: bool, msg: str):
    if not cond:
        raise DomainError(msg)


# --------------------------------------------------------------------------
# universal budget bound


def _ub_validate(p):
    for k in ("t1", "t2"):
        _need(0.0 <= p[k] <= 1.0, f"{k} must lie in [0, 1]")


def _ub_build(p):
    inst = make_instance([[1.0, 1.0], [0.0, 1.0]], budgets=[1.0, math.inf], sigmas=[p["t1"], p["t2"]])
    return inst, FiniteProfile.pure([[0.0, 1.0], [0.0, 1.0]])


register(Construction(
    "universal_budget", {"t1": 0.0, "t2": 0.0}, _ub_validate, _ub_build, lambda p: 2.0, "MNE", True,
    upper_bound=lambda p: bound_P(max(p["t1"], p["t2"])) if max(p["t1"], p["t2"]) <= theta_threshold() else None))


# --------------------------------------------------------------------------
# budgeted common type


def _ct_validate(p):
    t, a = p["t"], p.get("a")
    _need(theta_threshold() < t <= 1.0, "t must lie in (theta, 1]")
    _need(a is not None and 1.0 - t < a <= 1.0 / E + 1e-15, "a must lie in (1 - t, 1/e]")


def _ct_dist(t, a):
    return reciprocal_family(a, t, 0.0)


def _ct_build(p):
    t, a = p["t"], p["a"]
    inst = make_instance([[1.0, 1.0], [0.0, 1.0]], budgets=[_budget_one(t, a), math.inf], sigmas=[t, t],
                         tiebreak=_split_tie_rule())
    B = CoupledProfile(_ct_dist(t, a), [[0.0, 0.0], [0.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]])
    return inst, B


def _ct_upper(p):
    return bound_P(p["t"]) if abs(p["a"] - default_a(p["t"])) < 1e-12 else None


def _ct_crit(p):
    hi = (1.0 - p["a"]) / p["t"]
    return {(i, 1): [0.0, hi] for i in range(2)}


register(Construction(
    "budget_commontype", {"t": 1.0, "a": None}, _ct_validate, _ct_build,
    lambda p: _commontype_ratio(p["t"], p["a"]), "CCE", True, upper_bound=_ct_upper,
    critical_points=_ct_crit))


# --------------------------------------------------------------------------
# budget-free hybrid types


def _bh_validate(p):
    t = p["t"]
    _need(0.0 < t <= 1.0, "t must lie in (0, 1]")
    if t > theta_threshold():
        _need(1.0 - t < p["a"] <= 1.0 / E + 1e-15, "a must lie in (1 - t, 1/e]")


def _bh_build(p):
    t = p["t"]
    if t <= theta_threshold():
        inst = make_instance([[1.0, 0.0], [0.0, 1.0]], sigmas=[0.0, t])
        return inst, FiniteProfile.pure([[0.0, 1.0], [0.0, 1.0]])
    a = p["a"]
    inst = make_instance([[_budget_one(t, a), 0.0], [0.0, 1.0]], sigmas=[0.0, t], tiebreak=_split_tie_rule())
    B = ProductProfile([ParametricComponent(_ct_dist(t, a), [0.0, 0.0], [0.0, 1.0]),
                        FiniteComponent.pure([0.0, 0.0])])
    return inst, B


def _bh_ratio(p):
    return 2.0 if p["t"] <= theta_threshold() else _commontype_ratio(p["t"], p["a"])


def _bh_upper(p):
    if p["t"] <= theta_threshold() or abs(p["a"] - default_a(p["t"])) < 1e-12:
        return bound_P(p["t"])
    return None


register(Construction(
    "budgetfree_hybrid", {"t": 1.0, "a": None}, _bh_validate, _bh_build, _bh_ratio, "MNE", True,
    upper_bound=_bh_upper,
    critical_points=lambda p: _ct_crit(p) if p["t"] > theta_threshold() else {}))


# --------------------------------------------------------------------------
# reserves, value maximizers


def _rv_validate(p):
    eta, eps = p["eta"], p["eps"]
    _need(0.0 <= eta < 1.0, "eta must lie in [0, 1)")
    _need(0.0 < eps < 1.0 - eta, "eps must lie in (0, 1 - eta)")


def _rv_build(p):
    eta, eps = p["eta"], p["eps"]
    inst = make_instance([[1.0, 0.0], [0.0, 1.0 - eta]], sigmas=[0.0, 0.0],
                         reserves=[eta, (1.0 - eps) * (1.0 - eta)])
    return inst, FiniteProfile.pure([[eta, 1.0 - eta], [0.0, 1.0 - eta]])


register(Construction(
    "reserve_valuemax", {"eta": 0.3, "eps": 1e-3}, _rv_validate, _rv_build, lambda p: 2.0 - p["eta"], "MNE", True,
    upper_bound=lambda p: bound_Pt_eta(0.0, p["eta"])))


# --------------------------------------------------------------------------
# reserves, high common type


def _rh_validate(p):
    t, eta = p["t"], p["eta"]
    _need(1.0 - 1.0 / E <= t <= 1.0, "t must lie in [1 - 1/e, 1]")
    _need(0.0 <= eta < 1.0, "eta must lie in [0, 1)")
    _need(eta <= (1.0 - E * (1.0 - t)) / t + 1e-15, "eta must not exceed (1 - e(1 - t))/t")


def _rh_dist(t, eta):
    return reciprocal_family((1.0 - t * eta) / E, t, eta)


def _rh_build(p):
    t, eta = p["t"], p["eta"]
    tb = TieBreakRule((AuctionTieRule((0, 1), ((eta, (1, 0)),)),))
    inst = make_instance([[1.0], [eta]], sigmas=[t, t], reserves=[eta], tiebreak=tb)
    return inst, CoupledProfile(_rh_dist(t, eta), [[0.0], [0.0]], [[1.0], [1.0]])


register(Construction(
    "reserve_hightype", {"t": 1.0, "eta": 0.2}, _rh_validate, _rh_build, lambda p: E / (E - 1.0 + p["eta"]),
    "CCE", True, upper_bound=lambda p: bound_Pt_eta(1.0, p["eta"]) if p["t"] == 1.0 else None))


# --------------------------------------------------------------------------
# a CCE that leaves the item unsold


def _cn_validate(p):
    _need(0.0 < p["r"] < 1.0, "r must lie in (0, 1)")


def _cn_build(p):
    r = p["r"]
    inst = make_instance([[1.0], [0.0]], sigmas=[1.0, 1.0], reserves=[r])
    X = reciprocal_family((1.0 - r) / E, 1.0, 0.0)
    return inst, CoupledProfile(X, [[0.0], [0.0]], [[1.0], [1.0]])


register(Construction(
    "cce_not_well_supported", {"r": 0.2}, _cn_validate, _cn_build, lambda p: E / (E - 1.0), "CCE", False,
    upper_bound=lambda p: bound_Q_common(1.0)))


# --------------------------------------------------------------------------
# XOS valuations, MNE leaving an item unsold


def _sm_validate(p):
    _need(0.0 < p["eps"] < 1.0, "eps must lie in (0, 1)")
    _need(0.0 <= p["sigma2"] <= 1.0, "sigma2 must lie in [0, 1]")


def _sm_build(p):
    e = p["eps"]
    v1 = XOS(((e, 0.0), (0.0, 1.0), (e / 2, 1.0)))
    v2 = XOS(((e / 4, 0.0), (0.0, e / 4)))
    inst = make_instance([v1, v2], sigmas=[1.0, p["sigma2"]], reserves=[e / 2, 1.0 - e / 2])
    return inst, FiniteProfile.pure([[e / 2, 0.0], [0.0, 0.0]])


register(Construction(
    "submod_mne", {"eps": 0.01, "sigma2": 0.5}, _sm_validate, _sm_build, lambda p: (1.0 + p["eps"] / 2) / p["eps"],
    "MNE", False))


# --------------------------------------------------------------------------
# API


def names() -> list[str]:
    return list(REGISTRY)


def get(name: str) -> Construction:
    if name not in REGISTRY:
        raise KeyError(f"unknown construction {name!r}; known: {', '.join(REGISTRY)}")
    return REGISTRY[name]


def build(name: str, params: dict | None = None) -> tuple[Instance, RandomBidProfile, float]:
    c = get(name)
    p = c.params(params)
    inst, B = c.builder(p)
    return inst, B, c.claimed_ratio(p)


@dataclass
class ConstructionReport:
    name: str
    params: dict
    verdict: str
    equilibrium_class: str
    feasible: bool
    epsilon: float
    ratio: float
    claimed_ratio: float
    ratio_error: float
    well_supported: bool
    well_supported_claim: bool
    upper_bound: float | None
    eta: float | None
    lw: float
    opt: float
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.verdict == "verified" and self.feasible and self.ratio_error <= 1e-6
                and self.well_supported == self.well_supported_claim)

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["params"] = {k: v for k, v in self.params.items()}
        d["ok"] = self.ok
        return d


def verify(name: str, params: dict | None = None, tol: float = DEFAULT_TOL, step: float = VERIFY_STEP) -> ConstructionReport:
    c = get(name)
    p = c.params(params)
    inst, B = c.builder(p)
    dev = DeviationSet(step=step, extra=c.critical_points(p))
    rep = verify_mne(inst, B, dev, tol) if c.equilibrium_class == "MNE" else verify_cce(inst, B, dev, tol)
    notes = list(rep.notes)
    try:
        eta = eta_gaps(inst)[1]
    except InfeasibleReserveError as exc:
        eta = None
        notes.append(f"relative gap undefined: {exc}")
    claimed = c.claimed_ratio(p)
    return ConstructionReport(name, p, rep.verdict, c.equilibrium_class, rep.feasible, rep.epsilon, rep.ratio,
                              claimed, abs(rep.ratio - claimed), rep.well_supported, c.well_supported_claim,
                              c.upper_bound(p), eta, rep.lw, rep.opt, notes)


@dataclass
class ClaimDomainReport:
    t: float
    a_star: float
    lower: float
    upper: float
    in_domain: bool
    margin: float
    ratio_identity_residual: float


def claim_domain_check(t: float) -> ClaimDomainReport:
    """a* = -W0(-e^{-t-1}) lies in (1 - t, 1/e] and the ratio at a* equals 1 + t / (1 + W0(-e^{-t-1}))."""
    if not theta_threshold() < t <= 1.0:
        raise DomainError("t must lie in (theta, 1]")
    a = default_a(t)
    lhs = _commontype_ratio(t, a)
    rhs = 1.0 + t / claim_f(t)
    return ClaimDomainReport(t, a, 1.0 - t, 1.0 / E, (1.0 - t) < a <= 1.0 / E + 1e-15, a - (1.0 - t), abs(lhs - rhs))
