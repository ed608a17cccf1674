"""Gains, constraint checks and equilibrium verification.

Deviation checks work on a finite candidate set per agent and item: a bid
grid plus the analytic critical points of the opponents' marginal (atoms,
support endpoints, reserves, tie values) and a nudge just above each of
them. Against finitely supported opponents the win probability is constant
between critical points, so the grid is dropped there.

Verdicts are tri-state. A profile is verified when no candidate beats the
equilibrium gain with constraints ignored, or when the best ROI/budget
feasible mixture of candidates (a small LP) does not either. A profile is
refuted only by a feasible deviation whose gain is recomputed independently.
Truncated searches are inconclusive.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .auction_core import (INF, Additive, Instance, Outcome, column_winners, liquid_welfare,
                           normalize_targets, optimal_allocation, proxy_instance, run_auctions)
from .bid_profiles import (Cell, FiniteComponent, FiniteProfile, ParametricBid, ParametricComponent,
                           ProductProfile, RandomBidProfile, as_profile, column_win_probability,
                           deviation_stats, expected_outcome_stats, marginal_excluding)

DEFAULT_TOL = 1e-7
VERIFY_STEP = 1e-3
EXPLORE_STEP = 5e-2
NUDGE = 1e-8
MAX_JOINT = 5000

VERIFIED, REFUTED, INCONCLUSIVE = "verified", "refuted", "inconclusive"


def gain(inst: Instance, i: int, o: Outcome) -> float:
    return inst.valuations[i].value(o.bundle(i)) - inst.sigmas[i] * o.payment(i)


@dataclass
class ConstraintReport:
    roi_slack: np.ndarray
    budget_slack: np.ndarray

    def feasible(self, tol: float = 1e-9) -> bool:
        return bool(np.all(self.roi_slack >= -tol) and np.all(self.budget_slack >= -tol))

    def to_json(self):
        return {"roi_slack": [float(x) for x in self.roi_slack],
                "budget_slack": [_jnum(x) for x in self.budget_slack]}


def _jnum(x):
    x = float(x)
    return "inf" if math.isinf(x) else x


def constraint_report(inst: Instance, value, payment) -> ConstraintReport:
    taus = np.asarray(inst.taus)
    bud = np.asarray(inst.budgets)
    return ConstraintReport(taus * np.asarray(value) - np.asarray(payment), bud - np.asarray(payment))


def check_feasible(inst: Instance, B) -> ConstraintReport:
    s = expected_outcome_stats(inst, B)
    return constraint_report(inst, s.value, s.payment)


def expected_gain_deviation(inst: Instance, i: int, dev, B_minus_i) -> float:
    s = deviation_stats(inst, i, dev, B_minus_i)
    return float(s.value[i] - inst.sigmas[i] * s.payment[i])


# --------------------------------------------------------------------------
# deviation candidates


@dataclass
class DeviationSet:
    """Per-item candidate bids: grid of `step` plus critical points.

    `extra` maps (agent, item) to additional points, e.g. gamma * v endpoints.
    """

    step: float = VERIFY_STEP
    critical: bool = True
    extra: dict = field(default_factory=dict)
    nudge: float = NUDGE
    max_candidates: int | None = None
    grid_only: bool = False

    @staticmethod
    def bid_grid(step: float) -> "DeviationSet":
        """Multiples of `step` up to the agent's own value, nothing else."""
        return DeviationSet(step=step, critical=False, nudge=0.0, grid_only=True)

    def candidates(self, inst: Instance, i: int, cells: Sequence[Cell]) -> tuple[list[np.ndarray], bool]:
        finite = all(not c.continuous for c in cells)
        v = inst.valuations[i]
        out, truncated = [], False
        if self.grid_only:
            for j in range(inst.m):
                k = int(math.floor(v.value((j,)) / self.step + 1e-9))
                out.append(np.arange(k + 1) * self.step)
            return out, False
        for j in range(inst.m):
            crit = {0.0, inst.reserves[j]}
            crit.update(inst.tiebreak.auctions[j].critical_values())
            own = [v.value((j,)), v.value(tuple(range(inst.m)))]
            top = 0.0
            for cell in cells:
                col = cell.base[:, j]
                if cell.continuous:
                    hi_col = col + cell.slope[:, j] * cell.hi
                    lo_col = col + cell.slope[:, j] * cell.lo
                    crit.update(lo_col.tolist())
                    crit.update(hi_col.tolist())
                    top = max(top, float(max(hi_col.max(), lo_col.max())))
                else:
                    crit.update(col.tolist())
                    top = max(top, float(col.max()) if col.size else 0.0)
            crit.update(self.extra.get((i, j), []))
            if not self.critical:
                crit = {0.0}
            pts = set()
            for c in crit:
                if c >= 0 and math.isfinite(c):
                    pts.add(float(c))
                    pts.add(float(c) + self.nudge)
            upper = max(top, inst.reserves[j], *own) + self.step
            if not finite or not self.critical:
                k = int(math.floor(upper / self.step + 1e-9))
                pts.update((np.arange(k + 1) * self.step).tolist())
            pts.update(x for x in own if math.isfinite(x))
            arr = np.array(sorted(x for x in pts if x <= upper + self.nudge + 1e-12))
            if self.max_candidates is not None and arr.size > self.max_candidates:
                idx = np.unique(np.linspace(0, arr.size - 1, self.max_candidates).round().astype(int))
                arr = arr[idx]
                truncated = True
            out.append(arr)
        return out, truncated


# --------------------------------------------------------------------------
# reports


@dataclass
class EquilibriumReport:
    verdict: str
    kind: str
    feasible: bool
    constraints: ConstraintReport
    eq_gain: np.ndarray
    max_dev_gain: np.ndarray
    constrained_dev_gain: np.ndarray
    epsilon: float
    sufficient_cce: bool
    well_supported: bool
    unsold: np.ndarray
    lw: float
    opt: float
    ratio: float
    method: str = ""
    witness: dict | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def verified(self) -> bool:
        return self.verdict == VERIFIED

    def to_json(self) -> dict:
        return {"verdict": self.verdict, "kind": self.kind, "method": self.method,
                "feasible": self.feasible, "constraints": self.constraints.to_json(),
                "eq_gain": self.eq_gain.tolist(), "max_dev_gain": self.max_dev_gain.tolist(),
                "constrained_dev_gain": self.constrained_dev_gain.tolist(),
                "epsilon": self.epsilon, "sufficient_cce": self.sufficient_cce,
                "well_supported": self.well_supported, "unsold": self.unsold.tolist(),
                "lw": self.lw, "opt": self.opt, "ratio": _jnum(self.ratio),
                "witness": self.witness, "notes": list(self.notes)}


@dataclass
class _AgentCheck:
    pure_max: float
    pure_arg: np.ndarray
    lp_max: float
    lp_witness: list | None       # [(bid vector, prob)]
    truncated: bool


def _lp_best_mixture(gains, pays, vals, tau, budget):
    """max sum w g  s.t.  sum w (p - tau v) <= 0, sum w p <= budget, w in simplex."""
    K = len(gains)
    A = [pays - tau * vals]
    b = [0.0]
    if math.isfinite(budget):
        A.append(pays)
        b.append(budget)
    res = linprog(-gains, A_ub=np.array(A), b_ub=np.array(b), A_eq=np.ones((1, K)), b_eq=[1.0],
                  bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    return -res.fun, res.x


def _lp_best_separable(tables, tau, budget):
    """Per-item mixtures for additive valuations; tables[j] = (gain, pay, val) arrays."""
    sizes = [len(t[0]) for t in tables]
    g = np.concatenate([t[0] for t in tables])
    p = np.concatenate([t[1] for t in tables])
    v = np.concatenate([t[2] for t in tables])
    K = len(g)
    A_ub = [p - tau * v]
    b_ub = [0.0]
    if math.isfinite(budget):
        A_ub.append(p)
        b_ub.append(budget)
    A_eq = np.zeros((len(tables), K))
    off = 0
    for j, s in enumerate(sizes):
        A_eq[j, off:off + s] = 1.0
        off += s
    res = linprog(-g, A_ub=np.array(A_ub), b_ub=np.array(b_ub), A_eq=A_eq, b_eq=np.ones(len(tables)),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    out, off = [], 0
    for s in sizes:
        out.append(res.x[off:off + s])
        off += s
    return -res.fun, out


def _is_additive(inst: Instance, i: int) -> bool:
    return isinstance(inst.valuations[i], Additive)


def _win_tables(inst: Instance, i: int, cands: list[np.ndarray], cells) -> list[np.ndarray]:
    return [np.array([column_win_probability(inst, i, j, float(c), cells) for c in cands[j]])
            for j in range(inst.m)]


def _check_agent(inst: Instance, i: int, B_minus_i: RandomBidProfile, dev: DeviationSet,
                 eq_gain: float, tol: float) -> _AgentCheck:
    cells = as_profile(B_minus_i).cells()
    cands, truncated = dev.candidates(inst, i, cells)
    sigma, tau, bud = inst.sigmas[i], inst.taus[i], inst.budgets[i]
    if _is_additive(inst, i):
        vals = inst.valuations[i].values
        P = _win_tables(inst, i, cands, cells)
        tables = [((vals[j] - sigma * cands[j]) * P[j], cands[j] * P[j], vals[j] * P[j]) for j in range(inst.m)]
        arg = np.array([cands[j][int(np.argmax(tables[j][0]))] for j in range(inst.m)])
        pure_max = float(sum(t[0].max() for t in tables))
        if pure_max <= eq_gain + tol:
            return _AgentCheck(pure_max, arg, pure_max, None, truncated)
        sol = _lp_best_separable(tables, tau, bud)
        if sol is None:
            return _AgentCheck(pure_max, arg, math.nan, None, truncated)
        lp_val, ws = sol
        # per-item mixtures combined independently
        supp = [[(float(cands[j][k]), w[k]) for k in np.nonzero(w > 1e-12)[0]] for j, w in enumerate(ws)]
        witness = []
        for combo in itertools.product(*supp):
            pr = float(np.prod([q for _, q in combo]))
            witness.append((np.array([c for c, _ in combo]), pr))
        tot = sum(p for _, p in witness)
        witness = [(b, p / tot) for b, p in witness]
        return _AgentCheck(pure_max, arg, float(lp_val), witness, truncated)

    sizes = [len(c) for c in cands]
    if math.prod(sizes) > MAX_JOINT:
        budget = max(2, int(MAX_JOINT ** (1.0 / inst.m)))
        cands = [c if len(c) <= budget else c[np.unique(np.linspace(0, len(c) - 1, budget).round().astype(int))]
                 for c in cands]
        truncated = True
    vecs = [np.array(x) for x in itertools.product(*cands)]
    g, p, v = np.zeros(len(vecs)), np.zeros(len(vecs)), np.zeros(len(vecs))
    for k, b in enumerate(vecs):
        s = deviation_stats(inst, i, b, B_minus_i)
        v[k], p[k] = s.value[i], s.payment[i]
        g[k] = v[k] - sigma * p[k]
    k = int(np.argmax(g))
    pure_max = float(g[k])
    if pure_max <= eq_gain + tol:
        return _AgentCheck(pure_max, vecs[k], pure_max, None, truncated)
    sol = _lp_best_mixture(g, p, v, tau, bud)
    if sol is None:
        return _AgentCheck(pure_max, vecs[k], math.nan, None, truncated)
    lp_val, w = sol
    witness = [(vecs[q], float(w[q])) for q in np.nonzero(w > 1e-12)[0]]
    tot = sum(pp for _, pp in witness)
    return _AgentCheck(pure_max, vecs[k], float(lp_val), [(b, pp / tot) for b, pp in witness], truncated)


def _confirm_witness(inst: Instance, i: int, witness, B_minus_i, eq_gain: float, tol: float):
    """Recompute a mixed deviation's gain and constraints from scratch."""
    comp = FiniteComponent([(b, p) for b, p in witness])
    s = deviation_stats(inst, i, comp, B_minus_i)
    g = float(s.value[i] - inst.sigmas[i] * s.payment[i])
    feas = (s.payment[i] <= inst.taus[i] * s.value[i] + 1e-9) and (s.payment[i] <= inst.budgets[i] + 1e-9)
    return g, bool(feas and g > eq_gain + tol)


def well_supported(inst: Instance, B, stats=None) -> tuple[bool, np.ndarray]:
    s = stats if stats is not None else expected_outcome_stats(inst, B)
    unsold = np.clip(1.0 - s.sold, 0.0, 1.0)
    return bool(np.all(unsold <= 1e-12)), unsold


def _verify(inst: Instance, B, dev: DeviationSet | None, tol: float, kind: str) -> EquilibriumReport:
    dev = dev or DeviationSet()
    B = as_profile(B)
    stats = expected_outcome_stats(inst, B)
    cons = constraint_report(inst, stats.value, stats.payment)
    feasible = cons.feasible(1e-9)
    eq = stats.gain(inst)
    ws, unsold = well_supported(inst, B, stats)
    lw = float(sum(min(inst.taus[i] * stats.value[i], inst.budgets[i]) for i in range(inst.n)))
    opt = optimal_allocation(inst)[1]
    ratio = opt / lw if lw > 0 else INF
    n = inst.n
    pure = np.zeros(n)
    cons_gain = np.zeros(n)
    notes: list[str] = []
    witness = None
    verdict = VERIFIED
    method = "pure_supremum"
    if not feasible:
        bad = [i for i in range(n) if cons.roi_slack[i] < -1e-9 or cons.budget_slack[i] < -1e-9]
        notes.append(f"profile violates ROI/budget constraints for agents {bad}")
        verdict = REFUTED
        method = "feasibility"
    for i in range(n):
        chk = _check_agent(inst, i, marginal_excluding(B, i), dev, float(eq[i]), tol)
        pure[i] = chk.pure_max
        cons_gain[i] = chk.lp_max
        if chk.truncated:
            notes.append(f"agent {i}: candidate search truncated")
        if chk.pure_max <= eq[i] + tol:
            if chk.truncated and verdict == VERIFIED:
                verdict = INCONCLUSIVE
            continue
        if math.isnan(chk.lp_max):
            notes.append(f"agent {i}: constrained mixture LP failed")
            if verdict == VERIFIED:
                verdict = INCONCLUSIVE
            continue
        if chk.lp_max <= eq[i] + tol:
            method = "constrained_mixture_lp"
            notes.append(f"agent {i}: unconstrained deviation gains {chk.pure_max - eq[i]:.3g}, "
                         f"but no ROI/budget-feasible mixture improves")
            if chk.truncated and verdict == VERIFIED:
                verdict = INCONCLUSIVE
            continue
        g, ok = _confirm_witness(inst, i, chk.lp_witness, marginal_excluding(B, i), float(eq[i]), tol)
        if ok:
            verdict = REFUTED
            if method == "pure_supremum":
                method = "constrained_mixture_lp"
            if witness is None:
                witness = {"agent": i, "gain": g, "eq_gain": float(eq[i]),
                           "mixture": [{"bid": b.tolist(), "prob": p} for b, p in chk.lp_witness]}
        elif verdict == VERIFIED:
            verdict = INCONCLUSIVE
            notes.append(f"agent {i}: candidate improvement not confirmed on recomputation")
    eps = float(np.max(pure - eq))
    return EquilibriumReport(verdict, kind, feasible, cons, eq, pure, cons_gain, eps, eps <= tol, ws, unsold,
                             lw, opt, ratio, method, witness, notes)


def verify_cce(inst: Instance, B, dev: DeviationSet | None = None, tol: float = DEFAULT_TOL) -> EquilibriumReport:
    return _verify(inst, B, dev, tol, "CCE")


def _is_product(B) -> bool:
    if isinstance(B, ProductProfile):
        return True
    return isinstance(B, FiniteProfile) and len(B.atoms) == 1


def verify_mne(inst: Instance, B, dev: DeviationSet | None = None, tol: float = DEFAULT_TOL) -> EquilibriumReport:
    B = as_profile(B)
    if not _is_product(B):
        raise TypeError("MNE verification needs a product profile")
    rep = _verify(inst, B, dev, tol, "MNE")
    rep.notes.append("product structure: independent per-agent components")
    return rep


# --------------------------------------------------------------------------
# correlated equilibria with finite support


def h_deviation(inst: Instance, b_i) -> np.ndarray:
    return np.maximum(np.asarray(b_i, dtype=float), np.asarray(inst.reserves))


def verify_ce_finite(inst: Instance, B: FiniteProfile, dev: DeviationSet | None = None,
                     tol: float = DEFAULT_TOL, extra_targets: bool = True) -> EquilibriumReport:
    """Single-atom swap check with constraints aggregated over the full support.

    Necessary condition only: coordinated multi-atom swaps are not searched.
    """
    if not isinstance(B, FiniteProfile):
        raise TypeError("CE check needs a finitely supported profile")
    dev = dev or DeviationSet()
    base = _verify(inst, B, dev, tol, "CE")
    # the CCE sub-check is not part of the CE verdict; restart from feasibility
    verdict = VERIFIED if base.feasible else REFUTED
    notes = ["single-atom swaps only; a necessary condition for CE"]
    if not base.feasible:
        notes.append("profile violates ROI/budget constraints")
    witness = None
    best_gain = base.eq_gain.copy()
    for i in range(inst.n):
        recs: dict[bytes, np.ndarray] = {}
        for b, _ in B.atoms:
            recs.setdefault(b[i].tobytes(), b[i])
        marg_cells = marginal_excluding(B, i).cells()
        cands, truncated = dev.candidates(inst, i, marg_cells)
        for key, rec in recs.items():
            targets = [np.array(x) for x in itertools.product(*cands)] if math.prod(len(c) for c in cands) <= MAX_JOINT else []
            if not targets:
                truncated = True
            if extra_targets:
                targets.append(h_deviation(inst, rec))
            for c in targets:
                atoms = [(np.vstack([b[:i], c[None, :], b[i + 1:]]) if b[i].tobytes() == key else b, p)
                         for b, p in B.atoms]
                s = expected_outcome_stats(inst, FiniteProfile(atoms))
                g = s.value[i] - inst.sigmas[i] * s.payment[i]
                feas = (s.payment[i] <= inst.taus[i] * s.value[i] + 1e-9) and (s.payment[i] <= inst.budgets[i] + 1e-9)
                if feas and g > best_gain[i] + 0.0:
                    best_gain[i] = g
                    if g > base.eq_gain[i] + tol:
                        verdict = REFUTED
                        if witness is None or g - base.eq_gain[i] > witness["improvement"]:
                            witness = {"agent": i, "recommendation": rec.tolist(), "swap_to": c.tolist(),
                                       "gain": float(g), "eq_gain": float(base.eq_gain[i]),
                                       "improvement": float(g - base.eq_gain[i])}
        if truncated:
            notes.append(f"agent {i}: swap targets truncated")
            if verdict == VERIFIED:
                verdict = INCONCLUSIVE
    eps = float(np.max(best_gain - base.eq_gain))
    return EquilibriumReport(verdict, "CE", base.feasible, base.constraints, base.eq_gain, base.max_dev_gain,
                             best_gain, eps, base.sufficient_cce, base.well_supported, base.unsold, base.lw,
                             base.opt, base.ratio, "single_atom_swap", witness, notes)


# --------------------------------------------------------------------------
# dynamics


@dataclass
class DynamicsResult:
    trajectory: list[np.ndarray]
    converged: bool
    cycle: bool
    rounds: int

    @property
    def final(self) -> np.ndarray:
        return self.trajectory[-1]


def _grid_best_response(inst: Instance, i: int, b: np.ndarray, step: float) -> np.ndarray:
    """Feasible pure best response on the grid; keeps the current bid when it is optimal.

    Winning an item at its cheapest winning grid bid dominates any higher
    winning bid, so each item has two options: lose (bid 0) or win cheaply.
    """
    m = inst.m
    win_at = []
    for j in range(m):
        col = b[:, j].copy()
        opts = None
        top = max([b[k, j] for k in range(inst.n) if k != i] + [inst.reserves[j]])
        c = math.ceil(max(top - step, 0.0) / step - 1e-9) * step
        for _ in range(4):
            col[i] = c
            ws = column_winners(inst, j, col)
            if ws and ws[0][0] == i and len(ws) == 1:
                opts = c
                break
            c = round(c + step, 12)
        win_at.append(opts)
    best, best_b = None, None
    cur = b[i]
    sigma, tau, bud = inst.sigmas[i], inst.taus[i], inst.budgets[i]

    def evaluate(vec):
        bb = b.copy()
        bb[i] = vec
        o = run_auctions(inst, bb)
        S = o.bundle(i)
        val = inst.valuations[i].value(S)
        pay = o.payment(i)
        ok = pay <= tau * val + 1e-12 and pay <= bud + 1e-12
        return ok, val - sigma * pay

    ok, cur_g = evaluate(cur)
    for mask in itertools.product([False, True], repeat=m):
        vec = np.zeros(m)
        good = True
        for j, w in enumerate(mask):
            if w:
                if win_at[j] is None:
                    good = False
                    break
                vec[j] = win_at[j]
        if not good:
            continue
        feas, g = evaluate(vec)
        if feas and (best is None or g > best + 1e-12):
            best, best_b = g, vec
    if ok and best is not None and cur_g >= best - 1e-12:
        return cur.copy()
    return best_b if best_b is not None else np.zeros(m)


def best_response_dynamics(inst: Instance, step: float = EXPLORE_STEP, max_rounds: int = 50,
                           seed: int | None = None, init=None) -> DynamicsResult:
    """Round-robin best responses on a bid grid.

    Agents move in index order. With `seed` the start is a random grid
    profile below values; otherwise all bids start at 0.
    """
    if init is not None:
        b = np.array(init, dtype=float)
    elif seed is not None:
        rng = np.random.default_rng(seed)
        caps = np.array([[inst.valuations[i].value((j,)) for j in range(inst.m)] for i in range(inst.n)])
        b = np.floor(rng.random((inst.n, inst.m)) * caps / step) * step
    else:
        b = np.zeros((inst.n, inst.m))
    traj = [b.copy()]
    seen = {b.tobytes(): 0}
    for rnd in range(1, max_rounds + 1):
        for i in range(inst.n):
            b[i] = _grid_best_response(inst, i, b, step)
        traj.append(b.copy())
        if np.array_equal(traj[-1], traj[-2]):
            return DynamicsResult(traj, True, False, rnd)
        key = b.tobytes()
        if key in seen:
            return DynamicsResult(traj, False, True, rnd)
        seen[key] = rnd
    return DynamicsResult(traj, False, False, max_rounds)


# --------------------------------------------------------------------------
# individual liquid welfare bound


@dataclass
class LwBoundResult:
    residual: float
    lhs: float
    proxy_gain: float
    payment: float
    sigma_hat: float
    deviation_feasible: bool


def lw_lower_bound_check(inst: Instance, B, i: int, dev, delta: float) -> LwBoundResult:
    """min(E[v_i], B_i) - [delta E[g^_i(B'_i, B_-i)] + (1 - delta + delta sigma^_i) E[p_i(B)]].

    Targets are normalized first, so the bound is stated with tau = 1.
    """
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    I = normalize_targets(inst)
    B = as_profile(B)
    stats = expected_outcome_stats(I, B)
    prox = proxy_instance(I, B)
    marg = marginal_excluding(B, i)
    ds = deviation_stats(prox, i, dev, marg)
    g_hat = float(ds.value[i] - prox.sigmas[i] * ds.payment[i])
    orig = deviation_stats(I, i, dev, marg)
    feas = bool(orig.payment[i] <= orig.value[i] + 1e-9 and orig.payment[i] <= I.budgets[i] + 1e-9)
    lhs = min(float(stats.value[i]), I.budgets[i])
    pay = float(stats.payment[i])
    res = lhs - (delta * g_hat + (1.0 - delta + delta * prox.sigmas[i]) * pay)
    return LwBoundResult(res, lhs, g_hat, pay, prox.sigmas[i], feas)
