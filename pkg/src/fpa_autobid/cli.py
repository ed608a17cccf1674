"""Command-line entry point: fpa-autobid <subcommand> ...

Exit codes: 0 verified, 2 refuted, 3 inconclusive, 1 bad input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import constructions
from .auction_core import Instance, TypeSet, make_instance, proxy_instance
from .bid_profiles import FiniteProfile, profile_from_json
from .equilibrium import (INCONCLUSIVE, REFUTED, VERIFIED, DeviationSet, best_response_dynamics, verify_ce_finite,
                          verify_cce, verify_mne)
from .learning import LearnerConfig, RepeatedGame, run_repeated, summarize
from .smoothness_rmp import (bound_min_type, bound_P, bound_Pt_eta, bound_Q_common, bound_Q_eta, curves_csv,
                             poa_upper_bound)
from .special_math import beta_threshold, theta_threshold

EXIT = {VERIFIED: 0, REFUTED: 2, INCONCLUSIVE: 3}
EXIT_BAD_INPUT = 1
E = math.e


class InputError(ValueError):
    pass


def _floats(s: str) -> list[float]:
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from exc


def _types(s: str) -> list[float]:
    vals = _floats(s)
    if not vals or any(not 0.0 <= t <= 1.0 for t in vals):
        raise argparse.ArgumentTypeError("types must be non-empty and lie in [0, 1]")
    return vals


def _dump(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o).__name__)

    def fix(o):
        if isinstance(o, float) and math.isinf(o):
            return "inf"
        if isinstance(o, dict):
            return {str(k): fix(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [fix(v) for v in o]
        return o

    return json.dumps(fix(obj), indent=2, default=default)


# --------------------------------------------------------------------------
# bounds


def bounds_table(types: list[float], eta: float, budgeted: bool) -> dict:
    T = TypeSet(types)
    tplus = T.augmented(budgeted)
    tmax = T.t_max
    rows: dict = {"types": list(T.values), "augmented_types": list(tplus.values), "eta": eta, "budgeted": budgeted}
    closed = {}
    if eta == 0.0 and (budgeted or 0.0 in T.values):
        closed["P(max T)"] = bound_P(tmax)
    if not budgeted and len(T) == 1:
        t = T.values[0]
        closed["Q(t)" if eta == 0.0 else "P_t(eta)"] = bound_Q_common(t) if eta == 0.0 else bound_Pt_eta(t, eta)
    if set(tplus.values) == {0.0, 1.0}:
        closed["Q(eta)"] = bound_Q_eta(eta)
    if not budgeted and eta == 0.0 and T.t_min >= beta_threshold():
        closed["min-type"] = bound_min_type(T.t_min)
    sol = poa_upper_bound(T, eta, budgeted)
    rows["closed_form_upper"] = closed
    rows["rmp_certificate"] = sol.to_json()
    rows["upper"] = sol.implied_poa_upper
    lower, source = _lower_bound(T, eta, budgeted)
    rows["lower"] = lower
    rows["lower_source"] = source
    return rows


def _lower_bound(T: TypeSet, eta: float, budgeted: bool) -> tuple[float | None, str]:
    tmax = T.t_max
    if eta == 0.0 and budgeted:
        if tmax > theta_threshold():
            return constructions.build("budget_commontype", {"t": tmax})[2], "budget_commontype"
        return 2.0, "universal_budget"
    if eta == 0.0 and 0.0 in T.values:
        return constructions.build("budgetfree_hybrid", {"t": tmax})[2] if tmax > 0 else 2.0, \
            "budgetfree_hybrid" if tmax > 0 else "reserve_valuemax"
    if T.values == (1.0,) and not budgeted:
        return E / (E - 1.0 + eta), "reserve_hightype"
    if T.values == (0.0,) and not budgeted:
        return 2.0 - eta, "reserve_valuemax"
    return None, "no matching lower bound known"


def cmd_bounds(args) -> int:
    rows = bounds_table(args.types, args.eta, args.budgeted)
    print(f"types={rows['types']} T+={rows['augmented_types']} eta={args.eta} "
          f"{'budgeted' if args.budgeted else 'budget-free'}")
    for k, v in rows["closed_form_upper"].items():
        print(f"  {k:<12s} {v:.6f}")
    cert = rows["rmp_certificate"]
    print(f"  {'RMP upper':<12s} {rows['upper']:.6f}  (O={cert['objective']:.6f}, {cert['source']})")
    if rows["lower"] is None:
        print(f"  {'lower':<12s} {rows['lower_source']}")
    else:
        print(f"  {'lower':<12s} {rows['lower']:.6f}  ({rows['lower_source']})")
    print(_dump(rows))
    return 0


# --------------------------------------------------------------------------
# curves


def cmd_curves(args) -> int:
    text = curves_csv(args.which, args.points)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# verification


def _load_json(path: str, what: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {what} file {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} file {path}, line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def load_instance(path: str) -> Instance:
    d = _load_json(path, "instance")
    try:
        return Instance.from_json(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"instance file {path}: schema error: {exc!r}") from exc


def load_profile(path: str):
    d = _load_json(path, "profile")
    try:
        return profile_from_json(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"profile file {path}: schema error: {exc!r}") from exc


def cmd_verify_construction(args) -> int:
    params = json.loads(args.params) if args.params else {}
    rep = constructions.verify(args.name, params, tol=args.tol, step=args.grid)
    print(_dump(rep.to_json()))
    if rep.verdict == VERIFIED and not rep.ok:
        return EXIT[INCONCLUSIVE]
    return EXIT[rep.verdict]


def cmd_verify_profile(args) -> int:
    inst = load_instance(args.instance)
    B = load_profile(args.profile)
    if B.n != inst.n or B.m != inst.m:
        raise InputError(f"profile shape {B.n}x{B.m} does not match instance {inst.n}x{inst.m}")
    dev = DeviationSet(step=args.grid, max_candidates=args.max_candidates)
    if args.kind == "mne":
        rep = verify_mne(inst, B, dev, args.tol)
    elif args.kind == "ce":
        rep = verify_ce_finite(inst, B, dev, args.tol)
    else:
        rep = verify_cce(inst, B, dev, args.tol)
    print(_dump(rep.to_json()))
    return EXIT[rep.verdict]


def cmd_proxy(args) -> int:
    inst = load_instance(args.instance)
    B = load_profile(args.profile)
    print(_dump(proxy_instance(inst, B).to_json()))
    return 0


# --------------------------------------------------------------------------
# learning


def cmd_learn(args) -> int:
    n = len(args.values)
    sigmas = args.sigmas if args.sigmas else [1.0] * n
    game = RepeatedGame(tuple(args.values), tuple(sigmas), args.reserve, args.eps, args.rounds)
    cfgs = [LearnerConfig(algorithm=args.algorithm, seed=args.seed * 1000 + i) for i in range(n)]
    h = run_repeated(game, cfgs, seed=args.seed)
    if args.log:
        Path(args.log).write_text(h.to_csv())
    s = summarize(h, args.window)
    text = _dump(s.to_json())
    if args.summary:
        Path(args.summary).write_text(text)
    print(text)
    return 0


# --------------------------------------------------------------------------
# brute-force probe


@dataclass
class ProbeResult:
    worst_ratio: float
    bound: float
    sampled: int
    converged: int
    verified: int
    certificate: dict | None

    @property
    def within_bound(self) -> bool:
        return self.worst_ratio <= self.bound

    def to_json(self) -> dict:
        return dict(self.__dict__)


def probe_bound(types: list[float], budgeted: bool) -> float:
    T = TypeSet(types)
    if not budgeted and len(T) == 1:
        return bound_Q_common(T.values[0])
    return bound_P(T.t_max)


def random_instance(rng: np.random.Generator, types: list[float], budgeted: bool, grid: float,
                    n_max: int = 3, m_max: int = 3, n_min: int = 2) -> Instance:
    n = int(rng.integers(n_min, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    steps = int(round(1.0 / grid))
    vals = rng.integers(0, steps + 1, size=(n, m)) * grid
    sig = [float(rng.choice(types)) for _ in range(n)]
    if budgeted:
        bud = [float(rng.integers(1, 2 * steps + 1) * grid) if rng.random() < 0.7 else math.inf for _ in range(n)]
    else:
        bud = [math.inf] * n
    return make_instance(vals.tolist(), sigmas=sig, budgets=bud)


def brute_poa(types: list[float], budgeted: bool, samples: int = 200, grid: float = 0.05, seed: int = 0,
              n_max: int = 3, m_max: int = 3, n_min: int = 2, tol: float = 1e-7) -> ProbeResult:
    """Worst OPT/LW over verified best-response fixed points of random additive instances."""
    rng = np.random.default_rng(seed)
    worst, cert = 1.0, None
    conv = ver = 0
    for s in range(samples):
        inst = random_instance(rng, types, budgeted, grid, n_max, m_max, n_min)
        dyn = best_response_dynamics(inst, step=grid, max_rounds=60)
        if not dyn.converged:
            continue
        conv += 1
        rep = verify_mne(inst, FiniteProfile.pure(dyn.final), DeviationSet(step=grid), tol)
        if rep.verdict != VERIFIED:
            continue
        ver += 1
        if rep.lw > 0 and rep.ratio > worst:
            worst = rep.ratio
            cert = {"sample": s, "instance": inst.to_json(), "bids": dyn.final.tolist(), "lw": rep.lw,
                    "opt": rep.opt}
        elif rep.lw <= 0 < rep.opt:
            worst, cert = math.inf, {"sample": s, "instance": inst.to_json(), "bids": dyn.final.tolist()}
    return ProbeResult(worst, probe_bound(types, budgeted), samples, conv, ver, cert)


def cmd_brute_poa(args) -> int:
    res = brute_poa(args.types, args.budgeted, args.samples, args.grid, args.seed, args.max_agents, args.max_items,
                    min(args.min_agents, args.max_agents))
    print(_dump(res.to_json()))
    return 0 if res.worst_ratio <= res.bound + args.slack else 2


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpa-autobid", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bounds", help="upper and lower POA bounds for a type set")
    b.add_argument("--types", type=_types, required=True)
    b.add_argument("--eta", type=float, default=0.0)
    g = b.add_mutually_exclusive_group()
    g.add_argument("--budgeted", dest="budgeted", action="store_true", default=True)
    g.add_argument("--budget-free", dest="budgeted", action="store_false")
    b.set_defaults(func=cmd_bounds)

    c = sub.add_parser("curves", help="emit bound curves as CSV")
    c.add_argument("--which", choices=["fig1a", "fig1b", "q_eta"], required=True)
    c.add_argument("--points", type=int, default=200)
    c.add_argument("--out")
    c.set_defaults(func=cmd_curves)

    v = sub.add_parser("verify-construction", help="verify a registered lower-bound construction")
    v.add_argument("--name", choices=constructions.names(), required=True)
    v.add_argument("--params", help="JSON object of parameter overrides")
    v.add_argument("--tol", type=float, default=1e-7)
    v.add_argument("--grid", type=float, default=1e-3)
    v.set_defaults(func=cmd_verify_construction)

    vp = sub.add_parser("verify-profile", help="verify an instance/profile pair from JSON files")
    vp.add_argument("--instance", required=True)
    vp.add_argument("--profile", required=True)
    vp.add_argument("--kind", choices=["cce", "mne", "ce"], default="cce")
    vp.add_argument("--tol", type=float, default=1e-7)
    vp.add_argument("--grid", type=float, default=1e-3)
    vp.add_argument("--max-candidates", type=int, default=None)
    vp.set_defaults(func=cmd_verify_profile)

    px = sub.add_parser("proxy", help="budget-free proxy instance for a profile")
    px.add_argument("--instance", required=True)
    px.add_argument("--profile", required=True)
    px.set_defaults(func=cmd_proxy)

    le = sub.add_parser("learn", help="repeated auction with learning agents")
    le.add_argument("--values", type=_floats, required=True)
    le.add_argument("--sigmas", type=_floats)
    le.add_argument("--reserve", type=float, default=0.0)
    le.add_argument("--eps", type=float, default=0.05)
    le.add_argument("--rounds", type=int, default=50_000)
    le.add_argument("--algorithm", choices=["hedge", "epsilon_greedy"], default="hedge")
    le.add_argument("--window", type=float, default=0.25)
    le.add_argument("--seed", type=int, default=0)
    le.add_argument("--log")
    le.add_argument("--summary")
    le.set_defaults(func=cmd_learn)

    bp = sub.add_parser("brute-poa", help="worst ratio over verified equilibria of random instances")
    bp.add_argument("--types", type=_types, required=True)
    g = bp.add_mutually_exclusive_group()
    g.add_argument("--budgeted", dest="budgeted", action="store_true", default=True)
    g.add_argument("--budget-free", dest="budgeted", action="store_false")
    bp.add_argument("--samples", type=int, default=200)
    bp.add_argument("--grid", type=float, default=0.05)
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--max-agents", type=int, default=3)
    bp.add_argument("--min-agents", type=int, default=2)
    bp.add_argument("--max-items", type=int, default=3)
    bp.add_argument("--slack", type=float, default=0.02)
    bp.set_defaults(func=cmd_brute_poa)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
