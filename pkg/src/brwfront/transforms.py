"""Cramer conjugation and critical-parameter extraction.

For a mechanism with log-Laplace transform kappa, computes

* the Cramer transform  kappa*(a) = sup_{theta>0} [theta a - kappa(theta)],
* the critical tilt theta* solving theta kappa'(theta) - kappa(theta) = 0,
* the speed v = kappa(theta*)/theta* = kappa'(theta*), and
* sigma^2 = kappa''(theta*), the variance of the theta*-tilted step.

g(theta) = theta kappa'(theta) - kappa(theta) has g' = theta kappa'' > 0,
so the root finder works on a strictly increasing function: expand a
bracket by doubling (or halving) from theta = 1, bisect, then polish with
Newton. All derivatives are the closed forms from ``mechanisms``; finite
differences appear only in tests as cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import mechanisms as mx
from .errors import NoRoot

THETA_TOL = 1e-12
RESIDUAL_TOL = 1e-10
_MAX_DOUBLINGS = 600  # float64 ranges overflow long before deeper brackets help
_MAX_NEWTON = 50


@dataclass(frozen=True)
class CramerValue:
    """kappa*(a) with the maximizing theta when it is interior.

    ``boundary`` is None for interior solutions, "lower" when a is at or
    below the theta->0+ drift (kappa* saturates at -kappa(0+)), "upper"
    when a is at or beyond the essential-sup slope (kappa* = +inf, or the
    finite limit at an atomic top point).
    """

    a: float
    kstar: float
    argtheta: float | None
    boundary: str | None = None


@dataclass(frozen=True)
class TransformProfile:
    """Critical parameters of one mechanism."""

    mech: object
    theta_star: float
    v: float
    sigma2: float
    iterations: int
    residual: float


def _solve_increasing(f, df, start: float = 1.0):
    """Root of a strictly increasing f via bracket + bisection + Newton.

    Returns (root, iterations). Raises NoRoot when no sign change is found
    within the doubling budget or f is not finite there.
    """
    lo = hi = start
    it = 0
    flo = f(lo)
    if flo > 0.0:
        while flo > 0.0:
            it += 1
            hi, lo = lo, lo / 2.0
            flo = f(lo)
            if it > _MAX_DOUBLINGS or not math.isfinite(flo):
                raise NoRoot("no sign change while shrinking bracket")
    else:
        fhi = f(hi)
        while fhi <= 0.0:
            it += 1
            lo, hi = hi, hi * 2.0
            fhi = f(hi)
            if it > _MAX_DOUBLINGS or not math.isfinite(fhi):
                raise NoRoot("no sign change while expanding bracket")
    while hi - lo > THETA_TOL:
        it += 1
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if f(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    for _ in range(_MAX_NEWTON):
        it += 1
        fr, dfr = f(root), df(root)
        if dfr <= 0.0 or not math.isfinite(dfr):
            break
        step = fr / dfr
        nxt = root - step
        if nxt <= 0.0:
            break
        root = nxt
        if abs(step) <= THETA_TOL * max(1.0, root):
            break
    return root, it


def _weighted_g(mechs, weights):
    """g(theta) = sum_i w_i [theta k_i'(theta) - k_i(theta)] and g'."""

    def g(theta: float) -> float:
        total = 0.0
        for w, m in zip(weights, mechs):
            d1, _ = mx.laplace_derivatives(m, theta)
            total += w * (theta * d1 - mx.laplace(m, theta))
        return total

    def dg(theta: float) -> float:
        return theta * sum(w * mx.laplace_derivatives(m, theta)[1]
                           for w, m in zip(weights, mechs))

    return g, dg


def weighted_critical_theta(mechs, weights):
    """Root of sum_i w_i (theta k_i' - k_i) = 0, with (theta, iterations, residual).

    For a single mechanism this is the critical tilt theta*; for several it
    is the common tilt of a merged era (equivalently the minimizer of
    sum_i w_i k_i(theta)/theta).
    """
    g, dg = _weighted_g(mechs, weights)
    theta, it = _solve_increasing(g, dg)
    return theta, it, abs(g(theta))


def critical_theta(mech) -> TransformProfile:
    """Critical tilt, speed and tilted variance of one mechanism.

    Raises NoRoot when theta kappa' - kappa < 0 on the whole domain, i.e.
    the existence assumption on theta* fails for this law.
    """
    theta, it, residual = weighted_critical_theta((mech,), (1.0,))
    if residual > RESIDUAL_TOL:
        raise NoRoot(f"critical equation residual {residual:.3e} > {RESIDUAL_TOL}")
    d1, d2 = mx.laplace_derivatives(mech, theta)
    if not (d2 > 0.0 and math.isfinite(d2)):
        raise NoRoot("tilted variance is not positive and finite at theta*")
    return TransformProfile(mech=mech, theta_star=theta, v=d1, sigma2=d2,
                            iterations=it, residual=residual)


def cramer(mech, a: float) -> CramerValue:
    """kappa*(a) = sup_{theta>0} [theta a - kappa(theta)].

    Interior a: solved from kappa'(theta) = a (kappa' strictly increasing).
    a at or below kappa'(0+): the sup is the theta->0+ limit -kappa(0+).
    a beyond the essential-sup slope: +inf, reported explicitly (never a
    silent large float); exactly at an atomic top point the finite limit.
    """
    mu0 = mx.drift_at_zero(mech)
    if a <= mu0:
        return CramerValue(a=a, kstar=-mx.laplace_at_zero(mech),
                           argtheta=None, boundary="lower")
    smax = mx.sup_slope(mech)
    if a >= smax:
        if a == smax:
            log_mass = mx.log_intensity_at_sup(mech)
            if log_mass is not None:
                return CramerValue(a=a, kstar=-log_mass, argtheta=None, boundary="upper")
        return CramerValue(a=a, kstar=math.inf, argtheta=None, boundary="upper")

    def h(theta: float) -> float:
        return mx.laplace_derivatives(mech, theta)[0] - a

    def dh(theta: float) -> float:
        return mx.laplace_derivatives(mech, theta)[1]

    theta, _ = _solve_increasing(h, dh)
    return CramerValue(a=a, kstar=theta * a - mx.laplace(mech, theta), argtheta=theta)
