"""Lambert W (principal branch) and the threshold constants of the bound layer."""

from __future__ import annotations

import math
from dataclasses import dataclass

INV_E = math.exp(-1.0)


class DomainError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RealTolerance:
    abs_tol: float = 1e-12
    rel_tol: float = 0.0
    max_iters: int = 200

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if self.rel_tol < 0:
            raise ValueError("rel_tol must be non-negative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


DEFAULT_TOL = RealTolerance()


def _residual(w: float, z: float) -> float:
    return w * math.exp(w) - z


def lambert_w0(z: float, tol: RealTolerance = DEFAULT_TOL) -> float:
    """Principal branch W0: the w >= -1 solving w*exp(w) = z.

    A bracket on [-1, hi] is kept throughout; Halley steps are taken when they
    stay inside it, otherwise the bracket is bisected.
    """
    z = float(z)
    if math.isnan(z):
        raise DomainError("z is NaN")
    if z < -INV_E - tol.abs_tol:
        raise DomainError(f"W0 undefined for z={z!r} < -1/e")
    if z <= -INV_E:
        return -1.0
    if z == 0.0:
        return 0.0
    if math.isinf(z):
        return math.inf

    lo = -1.0
    hi = 1.0 if z <= math.e else math.log(z)
    # seed: branch-point series near -1/e, log asymptotics for large z
    if z < 0.0:
        p = math.sqrt(max(2.0 * (math.e * z + 1.0), 0.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif z < 3.0:
        w = z / (1.0 + z) if z < 1.0 else 0.5 * math.log1p(z) + 0.2
    else:
        lz = math.log(z)
        w = lz - math.log(lz) if lz > 1.0 else lz
    w = min(max(w, lo), hi)

    for _ in range(tol.max_iters):
        ew = math.exp(w)
        f = w * ew - z
        if f == 0.0:
            return w
        if f > 0.0:
            hi = w
        else:
            lo = w
        wp1 = w + 1.0
        if wp1 > 1e-10:
            denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
            step = f / denom if denom != 0.0 else math.inf
            cand = w - step
        else:
            cand = math.nan
        if not (lo < cand < hi):
            cand = 0.5 * (lo + hi)
        if abs(cand - w) <= 4e-16 * max(1.0, abs(cand)) or hi - lo <= 4e-16 * max(1.0, abs(hi)):
            w = cand
            break
        w = cand
    else:
        if abs(_residual(w, z)) > tol.abs_tol:
            raise ConvergenceError(f"lambert_w0 did not converge for z={z!r}")
    if abs(_residual(w, z)) > max(tol.abs_tol, 1e-14 * (1.0 + abs(w)) * abs(z)):
        raise ConvergenceError(f"lambert_w0 residual too large for z={z!r}")
    return w


def lambert_w0_derivative(z: float, tol: RealTolerance = DEFAULT_TOL) -> float:
    """W0'(z) = W0(z) / (z (1 + W0(z))), with the limit 1 at z = 0."""
    z = float(z)
    if not z > -INV_E:
        raise DomainError(f"W0' undefined for z={z!r} <= -1/e")
    if z == 0.0:
        return 1.0
    w = lambert_w0(z, tol)
    return w / (z * (1.0 + w))


def _bisect(f, lo: float, hi: float, tol: RealTolerance = DEFAULT_TOL) -> float:
    flo = f(lo)
    if flo == 0.0:
        return lo
    if (flo > 0) == (f(hi) > 0):
        raise DomainError("bracket has no sign change")
    for _ in range(tol.max_iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0 or hi - lo <= tol.abs_tol:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def theta_threshold() -> float:
    """1 + W0(-2 e^-2)/2, about 0.7968."""
    return 1.0 + 0.5 * lambert_w0(-2.0 * math.exp(-2.0))


def beta_threshold(tol: RealTolerance = DEFAULT_TOL) -> float:
    """Fixed point of z -> 1 - exp(-1/z) in (0, 1), about 0.7406."""
    return _bisect(lambda z: z - 1.0 + math.exp(-1.0 / z), 0.5, 1.0, tol)
