"""Type-dependent smoothness, calibration and the POA-revealing program.

Constraint regions per type t with reserve gap eta:
    t = 0       : 0 < mu <= 1/(1-eta),                  lambda = mu
    0 < t < 1   : mu >= t / ln((1-t eta)/(1-t)),        lambda = (mu/t)(1 - (1-t eta) e^{-t/mu})
    t = 1       : mu > 0,                               lambda = mu (1 - (1-eta) e^{-1/mu})
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .auction_core import TypeSet
from .bid_profiles import ParametricBid, register_family
from .special_math import DomainError, lambert_w0, theta_threshold, beta_threshold

E = math.e
EPS = 1e-12


# --------------------------------------------------------------------------
# per-type parameters


def mu_lower(t: float, eta: float) -> float:
    """Smallest admissible mu for 0 < t < 1 (0 for t = 1; not defined for t = 0)."""
    _check_t_eta(t, eta)
    if t >= 1.0:
        return 0.0
    if t <= 0.0:
        raise DomainError("type 0 has an upper bound on mu, not a lower one")
    return t / math.log((1.0 - t * eta) / (1.0 - t))


def mu_upper(t: float, eta: float) -> float:
    _check_t_eta(t, eta)
    return 1.0 / (1.0 - eta) if t == 0.0 else math.inf


def _check_t_eta(t, eta):
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"type {t} outside [0, 1]")
    if not 0.0 <= eta < 1.0:
        raise DomainError(f"eta {eta} outside [0, 1)")


def mu_feasible(t: float, eta: float, mu: float, tol: float = 1e-12) -> bool:
    if not mu > 0:
        return False
    if t == 0.0:
        return mu <= mu_upper(t, eta) * (1 + tol)
    if t == 1.0:
        return True
    return mu >= mu_lower(t, eta) * (1 - tol)


def lambda_of(t: float, eta: float, mu: float) -> float:
    _check_t_eta(t, eta)
    if t == 0.0:
        return mu
    return (mu / t) * (-math.expm1(-t / mu) + t * eta * math.exp(-t / mu)) if mu > 0 else 0.0


@dataclass(frozen=True)
class SmoothnessParams:
    t: float
    eta: float
    mu: float
    lam: float

    @staticmethod
    def make(t: float, eta: float, mu: float) -> "SmoothnessParams":
        if not mu_feasible(t, eta, mu):
            raise DomainError(f"mu={mu} infeasible for t={t}, eta={eta}")
        return SmoothnessParams(t, eta, mu, lambda_of(t, eta, mu))


def gamma(mu: float, t: float, eta: float) -> float:
    """(1/t)(1 - (1 - t eta) e^{-t/mu}); lies in [eta, 1] for admissible mu."""
    _check_t_eta(t, eta)
    if t == 0.0:
        raise DomainError("gamma is defined for t > 0")
    if not mu > 0:
        raise DomainError("mu must be positive")
    if t < 1.0 and mu < mu_lower(t, eta) * (1 - 1e-12):
        raise DomainError("mu below the admissible range")
    g = (1.0 - (1.0 - t * eta) * math.exp(-t / mu)) / t
    return min(max(g, eta), 1.0)


# --------------------------------------------------------------------------
# deviation distributions


def deviation_type_zero(v: float, eta: float, mu: float) -> ParametricBid:
    """F(z) = mu z / v + 1 - mu on [eta v, v], atom mu eta + 1 - mu at eta v."""
    if not v > 0:
        raise DomainError("v must be positive")
    _check_t_eta(0.0, eta)
    if not 0 < mu <= 1.0 / (1.0 - eta) * (1 + 1e-12):
        raise DomainError(f"mu={mu} outside (0, 1/(1-eta)]")
    atom = max(mu * eta + 1.0 - mu, 0.0)
    return ParametricBid(
        lo=eta * v, hi=v,
        cdf_fn=lambda z: mu * z / v + 1.0 - mu,
        pdf_fn=lambda z: mu / v,
        atom=atom,
        antideriv_moment=lambda z: mu * z * z / (2.0 * v),
        ppf_fn=lambda u: (u - 1.0 + mu) * v / mu,
        name="type_zero", params={"v": v, "eta": eta, "mu": mu})


def deviation_type_t(v: float, t: float, eta: float, mu: float) -> ParametricBid:
    """Density mu / (v - t z) on [eta v, gamma v], no atom."""
    if not v > 0:
        raise DomainError("v must be positive")
    if not 0 < t <= 1:
        raise DomainError("type must lie in (0, 1]")
    g = gamma(mu, t, eta)
    lo, hi = eta * v, g * v
    base = (1.0 - t * eta) * v
    log_top = math.log(base) - t / mu     # log(v - t hi), exact even when hi rounds to v/t

    def log_gap(z):
        return log_top if z >= hi else math.log(v - t * z)

    return ParametricBid(
        lo=lo, hi=hi,
        cdf_fn=lambda z: (mu / t) * (math.log(base) - log_gap(z)),
        pdf_fn=lambda z: mu / (v - t * z),
        atom=0.0,
        antideriv_moment=lambda z: mu * (-z / t - (v / (t * t)) * log_gap(z)),
        ppf_fn=lambda u: (v - base * math.exp(-t * u / mu)) / t,
        name="type_t", params={"v": v, "t": t, "eta": eta, "mu": mu})


register_family("type_zero", deviation_type_zero)
register_family("type_t", deviation_type_t)


def smoothness_deviation(v: float, t: float, eta: float, mu: float) -> ParametricBid:
    return deviation_type_zero(v, eta, mu) if t == 0.0 else deviation_type_t(v, t, eta, mu)


def deviation_gain_vs(dist: ParametricBid, v: float, t: float, theta: float, reserve: float) -> float:
    """E[(v - t Z) 1{win}] against a highest competing bid theta; ties are lost."""
    if theta < reserve:
        # every draw meets the reserve and beats the field
        return v - t * dist.mean()
    if theta < dist.lo:
        return v - t * dist.mean()
    p = 1.0 - dist.cdf(theta)
    return v * p - t * dist.moment(theta, dist.hi)


def smoothness_check(t: float, eta: float, mu: float, v_rw: float, bids: Sequence[float], rw: int = 0) -> float:
    """E[g(B', b_-rw)] - (lambda v - mu p_aw) for one auction with reserve eta v."""
    bids = [float(b) for b in bids]
    r = eta * v_rw
    top = max(bids)
    if top < r - 1e-12:
        raise DomainError("the profile does not sell the item")
    p_aw = top
    others = [b for k, b in enumerate(bids) if k != rw]
    theta = max(others) if others else -math.inf
    prm = SmoothnessParams.make(t, eta, mu)
    dist = smoothness_deviation(v_rw, t, eta, mu)
    lhs = deviation_gain_vs(dist, v_rw, t, theta, r)
    return lhs - (prm.lam * v_rw - prm.mu * p_aw)


# --------------------------------------------------------------------------
# calibration and the program objective


def _arr(x) -> np.ndarray:
    return np.asarray(list(x), dtype=float)


def calibration_feasible(delta, mu, T, tol: float = 0.0) -> bool:
    d, m, t = _arr(delta), _arr(mu), _arr(T)
    if np.any(d <= 0) or np.any(d > 1):
        return False
    return bool(np.max(d * m) + np.max(d * (1.0 - t)) <= 1.0 + tol)


def rmp_objective(lam, mu, T) -> float:
    """min{ min lambda, (max mu/lambda + max (1-t)/lambda)^-1 }."""
    l, m, t = _arr(lam), _arr(mu), _arr(T)
    if np.any(l <= 0) or np.any(m <= 0):
        raise DomainError("lambda and mu must be positive")
    return float(min(l.min(), 1.0 / (np.max(m / l) + np.max((1.0 - t) / l))))


def optimal_delta(lam, mu, T) -> np.ndarray:
    O = rmp_objective(lam, mu, T)
    return O / _arr(lam)


def brute_force_objective(lam, mu, T, step: float = 1e-3) -> float:
    """max over grid delta of min_t lambda_t delta_t subject to calibration.

    All but the last coordinate run over the grid. For the last one,
    max(A, d m) + max(B, d c) <= 1 holds iff all four pairwise sums do, which
    gives the largest feasible grid value directly.
    """
    l, m, t = _arr(lam), _arr(mu), _arr(T)
    c = 1.0 - t
    k = len(l)
    n_grid = int(round(1 / step))
    grid = np.arange(1, n_grid + 1) * step
    if k == 1:
        head = np.zeros((1, 0))
    else:
        mesh = np.meshgrid(*([grid] * (k - 1)), indexing="ij")
        head = np.stack([x.ravel() for x in mesh], axis=1)
    A = np.max(head * m[:-1], axis=1, initial=0.0)
    B = np.max(head * c[:-1], axis=1, initial=0.0)
    with np.errstate(divide="ignore"):
        cap = np.minimum.reduce([
            np.where(m[-1] > 0, (1.0 - B) / m[-1], np.inf),
            np.where(c[-1] > 0, (1.0 - A) / c[-1], np.inf) * np.ones_like(A),
            np.full_like(A, 1.0 / (m[-1] + c[-1])),
        ])
    idx = np.minimum(np.floor(cap / step + 1e-9), n_grid)
    ok = (A + B <= 1.0 + 1e-12) & (idx >= 1)
    if not np.any(ok):
        return 0.0
    D = np.column_stack([head[ok], idx[ok] * step])
    return float(np.max(np.min(D * l, axis=1)))


# --------------------------------------------------------------------------
# closed-form families


def mu_star(omega: float, T) -> tuple[np.ndarray, np.ndarray]:
    """mu*(omega, T) and the induced lambda, for eta = 0."""
    if not 0.0 < omega < 1.0:
        raise DomainError("omega must lie in (0, 1)")
    ts = _arr(T)
    L = -math.log1p(-omega)
    mu, lam = np.zeros(len(ts)), np.zeros(len(ts))
    for k, t in enumerate(ts):
        if t >= omega:
            mu[k] = t / L
            lam[k] = omega / L
        elif t > 0:
            mu[k] = t / -math.log1p(-t)
            lam[k] = mu[k]
        else:
            mu[k] = lam[k] = 1.0
        if not mu_feasible(t, 0.0, mu[k], 1e-9):
            raise AssertionError("mu* left the feasible region")
    return mu, lam


def poa_rmp_lower_bound(T, omega: float) -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    ts = _arr(T)
    tmax = float(ts.max())
    if not tmax > 0:
        raise DomainError("need a positive type")
    if not (0 < omega <= tmax and omega < 1):
        raise DomainError("omega must lie in (0, max T] and below 1")
    val = min(omega / -math.log1p(-omega), omega / (omega + tmax))
    return val, mu_star(omega, ts)


def claim_f(z: float) -> float:
    return 1.0 + lambert_w0(-math.exp(-z - 1.0))


def bound_P(t: float) -> float:
    if not 0.0 <= t <= 1.0:
        raise DomainError("t outside [0, 1]")
    if t <= theta_threshold():
        return 2.0
    return 1.0 + t / claim_f(t)


def bound_Q_common(t: float) -> float:
    if not 0.0 <= t <= 1.0:
        raise DomainError("t outside [0, 1]")
    if t >= 1.0 - 1.0 / E:
        return E / (E - 1.0)
    if t == 0.0:
        return 2.0
    return 1.0 - (1.0 - t) * math.log1p(-t) / t


def pt_eta_boundary(t: float) -> float:
    """eta below which the first case applies (for t > 1 - 1/e)."""
    return (1.0 - E * (1.0 - t)) / t


def bound_Pt_eta(t: float, eta: float) -> float:
    _check_t_eta(t, eta)
    if t == 0.0:
        return 2.0 - eta
    if t > 1.0 - 1.0 / E and eta < pt_eta_boundary(t):
        return E / (E - 1.0 + t * eta)
    if t == 1.0:
        return E / (E - 1.0 + eta)
    # eta = 0 for small t falls through to the same expression, which equals Q(t)
    return 1.0 + ((1.0 - t) / t) * math.log((1.0 - t * eta) / (1.0 - t))


def pt_eta_certificate(t: float, eta: float) -> tuple[float, float]:
    """(lambda, mu) attaining 1 / bound_Pt_eta for the single type t."""
    _check_t_eta(t, eta)
    if t == 0.0:
        mu = 1.0 / (1.0 - eta)
        return mu, mu
    if t == 1.0 or (t > 1.0 - 1.0 / E and eta < pt_eta_boundary(t)):
        return 1.0 - (1.0 - t * eta) / E, t
    mu = mu_lower(t, eta)
    return mu, mu


def zeta(eta: float) -> float:
    if not 0.0 <= eta < 1.0:
        raise DomainError("eta outside [0, 1)")
    return 2.0 - eta + lambert_w0(-(1.0 - eta) ** 2 * math.exp(eta - 2.0))


def bound_Q_eta(eta: float) -> float:
    z = zeta(eta)
    return z / (1.0 - (1.0 - eta) * math.exp(-z))


def q_eta_certificate(eta: float) -> dict[float, tuple[float, float]]:
    """{type: (lambda, mu)} for T = {0, 1}."""
    z = zeta(eta)
    m0 = 1.0 / (1.0 - eta)
    return {0.0: (m0, m0), 1.0: ((1.0 - (1.0 - eta) * math.exp(-z)) / z, 1.0 / z)}


def bound_min_type(t_min: float) -> float:
    beta = beta_threshold()
    if not beta - 1e-12 <= t_min <= 1.0:
        raise DomainError(f"t_min={t_min} below beta={beta:.6f} or above 1")
    return 1.0 / (t_min * -math.expm1(-1.0 / t_min))


def omega_main(tmax: float) -> float | None:
    """The omega choice behind bound_P(tmax); None when tmax = 0."""
    if tmax <= 0:
        return None
    if tmax <= theta_threshold():
        return min(tmax, 1 - 1e-12)
    return claim_f(tmax)


# --------------------------------------------------------------------------
# program search


@dataclass
class RmpSolution:
    types: tuple[float, ...]
    lam: tuple[float, ...]
    mu: tuple[float, ...]
    delta: tuple[float, ...]
    objective: float
    implied_poa_upper: float
    source: str

    def to_json(self) -> dict:
        return {"types": list(self.types), "lambda": list(self.lam), "mu": list(self.mu),
                "delta": list(self.delta), "objective": self.objective,
                "implied_poa_upper": self.implied_poa_upper, "source": self.source}


def _clamp_mu(t: float, eta: float, mu: float) -> float:
    if t == 0.0:
        return min(mu, 1.0 / (1.0 - eta))
    if t < 1.0:
        return max(mu, mu_lower(t, eta))
    return max(mu, 1e-9)


def _objective_for(ts: np.ndarray, eta: float, mu: np.ndarray) -> tuple[float, np.ndarray]:
    lam = np.array([lambda_of(t, eta, m) for t, m in zip(ts, mu)])
    if np.any(lam <= 0):
        return 0.0, lam
    return rmp_objective(lam, mu, ts), lam


def poa_upper_bound(T, eta: float = 0.0, budgeted: bool = True, line_points: int = 10_000,
                    refine: bool = True) -> RmpSolution:
    """Best certificate found for the program over T+ (T with 0 added if budgeted)."""
    base = T if isinstance(T, TypeSet) else TypeSet(T)
    if not 0.0 <= eta < 1.0:
        raise DomainError("eta outside [0, 1)")
    ts = np.array(base.augmented(budgeted).values)
    tmax = float(ts.max())
    cands: list[tuple[np.ndarray, str]] = []

    def from_mu_star(omega):
        mu, _ = mu_star(omega, ts)
        return np.array([_clamp_mu(t, eta, m) if t > 0 else 1.0 / (1.0 - eta) for t, m in zip(ts, mu)])

    if tmax > 0:
        hi = min(tmax, 1.0 - 1e-6)
        for w in np.linspace(hi / line_points, hi, line_points):
            cands.append((from_mu_star(float(w)), "omega_line_search"))
        specials = [omega_main(tmax), 1.0 - 1.0 / E]
        tmin = float(ts.min())
        if tmin >= beta_threshold():
            specials.append(-math.expm1(-1.0 / tmin))
        for w in specials:
            if w is not None and 0 < w < 1:
                cands.append((from_mu_star(min(w, 1 - 1e-12)), "omega_closed_form"))
    # eta-specific certificates
    cands.append((np.array([pt_eta_certificate(float(t), eta)[1] for t in ts]), "pt_eta_certificate"))
    if set(ts.tolist()) <= {0.0, 1.0} and len(ts) == 2:
        c = q_eta_certificate(eta)
        cands.append((np.array([c[float(t)][1] for t in ts]), "q_eta_certificate"))
    if len(ts) == 1 and tmax == 0:
        cands.append((np.array([1.0 / (1.0 - eta)]), "type_zero"))

    best_O, best_mu, best_src = -1.0, None, ""
    for mu, src in cands:
        mu = np.array([_clamp_mu(float(t), eta, float(m)) for t, m in zip(ts, mu)])
        O, _ = _objective_for(ts, eta, mu)
        if O > best_O + 1e-15:
            best_O, best_mu, best_src = O, mu, src

    if refine:
        mu = best_mu.copy()
        step = 0.5
        improved_any = False
        while step > 1e-7:
            improved = False
            for k in range(len(ts)):
                for sgn in (1.0, -1.0):
                    trial = mu.copy()
                    trial[k] = _clamp_mu(float(ts[k]), eta, mu[k] * math.exp(sgn * step))
                    O, _ = _objective_for(ts, eta, trial)
                    if O > best_O + 1e-13:
                        best_O, mu, improved = O, trial, True
            if improved:
                improved_any = True
            else:
                step /= 2
        if improved_any:
            best_mu, best_src = mu, best_src + "+coordinate_refinement"

    O, lam = _objective_for(ts, eta, best_mu)
    delta = O / lam
    return RmpSolution(tuple(ts.tolist()), tuple(lam.tolist()), tuple(best_mu.tolist()), tuple(delta.tolist()),
                       O, 1.0 / O, best_src)


# --------------------------------------------------------------------------
# curves


FIG1B_TYPES = (0.0, 0.3, 0.7, 1.0)


def curve_rows(which: str, points: int = 200) -> list[tuple[float, float, str]]:
    if points < 2:
        raise ValueError("need at least two points")
    rows = []
    if which == "fig1a":
        for t in np.linspace(0.0, 1.0, points):
            rows.append((float(t), bound_P(float(t)), "P"))
        for t in np.linspace(0.0, 1.0, points):
            rows.append((float(t), bound_Q_common(float(t)), "Q"))
    elif which == "fig1b":
        etas = np.linspace(0.0, 0.99, points)
        for t in FIG1B_TYPES:
            for e in etas:
                rows.append((float(e), bound_Pt_eta(t, float(e)), f"P_t={t:g}"))
    elif which == "q_eta":
        for e in np.linspace(0.0, 0.99, points):
            rows.append((float(e), bound_Q_eta(float(e)), "Q_eta"))
    else:
        raise ValueError(f"unknown curve set {which!r}")
    return rows


def curves_csv(which: str, points: int = 200) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "value", "curve"])
    for x, v, c in curve_rows(which, points):
        w.writerow([f"{x:.12g}", f"{v:.12g}", c])
    return buf.getvalue()


# --------------------------------------------------------------------------
# lifting


def lifting_check(inst, B, params: dict[float, tuple[float, float]] | None = None,
                  x_star=None) -> tuple[float, float]:
    """(sum of per-auction smoothness right-hand sides, sum of deviation gains).

    The composed deviation bids the per-type smoothness distribution on each
    auction the agent rightfully wins; its gain is bounded below by the
    per-auction additive terms (v*_ij - t Z_j) 1{win j}, using the
    representatives' domination of the valuation. Requires a finite profile
    that always sells every item. `params` maps a type to mu.
    """
    from .auction_core import eta_gaps, opt_representatives, optimal_allocation, rightful_winners
    from .bid_profiles import as_profile

    if x_star is None:
        x_star = optimal_allocation(inst)[0]
    rep = opt_representatives(inst, x_star)
    rw = rightful_winners(inst, x_star, rep)
    etas, _ = eta_gaps(inst, x_star)
    B = as_profile(B)
    cells = B.cells()
    if any(c.continuous for c in cells):
        raise ValueError("lifting check expects a finite profile")
    lhs = rhs = 0.0
    for j in range(inst.m):
        i = rw[j]
        t = inst.sigmas[i]
        v = rep[i, j]
        if v <= 0:
            continue
        eta = etas[j]
        mu = params[t] if params and t in params else (1.0 / (1.0 - eta) if t == 0 else max(1.0, mu_lower(t, eta) if t < 1 else 1.0))
        mu = _clamp_mu(t, eta, mu)
        lam = lambda_of(t, eta, mu)
        dist = smoothness_deviation(v, t, eta, mu)
        for cell in cells:
            col = cell.base[:, j]
            top = float(col.max())
            if top < inst.reserves[j] - 1e-12:
                raise ValueError("profile leaves an item unsold")
            others = [col[k] for k in range(inst.n) if k != i]
            theta = max(others) if others else -math.inf
            lhs += cell.weight * (lam * v - mu * top)
            rhs += cell.weight * deviation_gain_vs(dist, v, t, theta, inst.reserves[j])
    return lhs, rhs
