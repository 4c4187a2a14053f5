"""Regime classification and the multi-era front optimization.

Predicts the front of a branching random walk whose reproduction law
switches at macroscopic times 0 = alpha_0 < ... < alpha_K = 1:

    m_n = v_hat * n - L * log n,

where v_hat solves

    maximize   sum_i w_i a_i              (w_i = alpha_i - alpha_{i-1})
    subject to sum_{i<=j} w_i kstar_i(a_i) <= 0   for every prefix j,

and L is assembled from the era decomposition: maximal blocks of
consecutive environments sharing one optimal tilt phi_p contribute
(1 + [kstar=0 at era start] + [kstar=0 at era end]) / (2 phi_p).

The optimal tilts are nondecreasing, so the solver is a pool-adjacent-
violators sweep: each environment starts as its own block at its critical
tilt theta*_i, and blocks that violate monotonicity are merged and
re-solved from the weighted critical equation
sum_{i in block} w_i (phi k_i'(phi) - k_i(phi)) = 0. For two eras this
reproduces the slow / mean / fast trichotomy exactly (the merged-block
equation is the fast-regime tilt equation).
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass

from . import mechanisms as mx
from .errors import AssumptionViolated
from .transforms import critical_theta, weighted_critical_theta

EQ_REL_TOL = 1e-9        # relative tie tolerance on tilts (theta* equality)
KSTAR_ZERO_TOL = 1e-7    # |kstar| below this counts as zero in the L formula
KSTAR_WARN_TOL = 1e-5    # |kstar| in (zero tol, this) is near-degenerate


@dataclass(frozen=True)
class EnvironmentSchedule:
    """Interface positions and the mechanism active in each era.

    ``mechanisms[i]`` acts on the macroscopic interval
    [breakpoints[i], breakpoints[i+1]).
    """

    breakpoints: tuple
    mechanisms: tuple

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "mechanisms", tuple(self.mechanisms))
        if len(bp) != len(self.mechanisms) + 1:
            raise ValueError("need one more breakpoint than mechanisms")
        if bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must start at 0 and end at 1")
        if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    @property
    def weights(self) -> tuple:
        return tuple(b2 - b1 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:]))

    def generation_counts(self, n: int) -> tuple:
        """Generations per era: era i covers floor(n a_{i-1}) < k <= floor(n a_i)."""
        cuts = [math.floor(n * b) for b in self.breakpoints]
        return tuple(c2 - c1 for c1, c2 in zip(cuts, cuts[1:]))

    def era_of_generation(self, k: int, n: int) -> int:
        cuts = [math.floor(n * b) for b in self.breakpoints]
        for i in range(len(self.mechanisms)):
            if cuts[i] < k <= cuts[i + 1]:
                return i
        raise ValueError(f"generation {k} outside 1..{n}")


@dataclass(frozen=True)
class PerIndex:
    """Optimal slope, tilt, and rate value for one environment index (1-based)."""

    index: int
    a: float
    theta: float
    kstar: float


@dataclass(frozen=True)
class Era:
    """Maximal run [r, s] (1-based, inclusive) of environments sharing tilt phi."""

    r: int
    s: int
    phi: float


@dataclass(frozen=True)
class RegimePrediction:
    regime: str              # homogeneous | slow | mean | fast | multi_era
    v_hat: float
    L: float
    per_era: tuple           # PerIndex per environment
    eras: tuple              # Era decomposition
    schedule: EnvironmentSchedule
    prefix_max: float        # max over prefixes of sum w_i kstar_i (<= 0 up to fp)
    warnings: tuple = ()


@dataclass(frozen=True)
class PredictedFront:
    n: int
    m_n: float
    regime: str


@dataclass(frozen=True)
class FastConsistencyReport:
    """Numeric check of the fast-regime consequences."""

    passed: bool
    theta: float
    theta_star: float
    theta_tilde_star: float
    kstar_a: float
    kstar_b: float
    mix_residual: float      # |t kstar(a) + (1-t) kstar(b)|


def _tie_tol(x: float, y: float) -> float:
    return EQ_REL_TOL * max(abs(x), abs(y))


def solve_multi_era(schedule: EnvironmentSchedule) -> RegimePrediction:
    """Solve the constrained front optimization by era merging.

    Every environment starts as a singleton block at its own theta*;
    adjacent blocks with decreasing tilts are pooled and re-solved until
    the tilt sequence is nondecreasing. Blocks with equal tilts (relative
    tie tolerance) are then grouped into eras.
    """
    mechs = schedule.mechanisms
    weights = schedule.weights
    K = len(mechs)
    notes = []
    for i, mech in enumerate(mechs):
        if mx.is_lattice(mech):
            msg = f"mechanism {i + 1} has lattice support; predictions assume non-lattice laws"
            notes.append(msg)
            _warnings.warn(msg, RuntimeWarning, stacklevel=2)

    profiles = [critical_theta(m) for m in mechs]

    # pool-adjacent-violators over blocks [start, end] with common tilt phi
    blocks: list = []
    for i in range(K):
        blocks.append([i, i, profiles[i].theta_star])
        while len(blocks) >= 2 and blocks[-2][2] > blocks[-1][2]:
            hi = blocks.pop()
            lo = blocks.pop()
            start, end = lo[0], hi[1]
            phi, _, _ = weighted_critical_theta(
                mechs[start:end + 1], weights[start:end + 1])
            blocks.append([start, end, phi])

    thetas = [0.0] * K
    for start, end, phi in blocks:
        for i in range(start, end + 1):
            thetas[i] = phi

    # group equal-tilt blocks into eras (distinct values of the tilt sequence)
    eras = []
    b = 0
    while b < len(blocks):
        start, end, phi = blocks[b]
        wsum = sum(weights[start:end + 1])
        phi_acc = phi * wsum
        b += 1
        while b < len(blocks) and abs(blocks[b][2] - phi) <= _tie_tol(blocks[b][2], phi):
            end = blocks[b][1]
            w2 = sum(weights[blocks[b][0]:end + 1])
            phi_acc += blocks[b][2] * w2
            wsum += w2
            b += 1
        eras.append(Era(r=start + 1, s=end + 1, phi=phi_acc / wsum))

    per = []
    for i in range(K):
        d1, _ = mx.laplace_derivatives(mechs[i], thetas[i])
        kstar = thetas[i] * d1 - mx.laplace(mechs[i], thetas[i])
        per.append(PerIndex(index=i + 1, a=d1, theta=thetas[i], kstar=kstar))

    v_hat = sum(w * p.a for w, p in zip(weights, per))
    prefix, prefix_max = 0.0, -math.inf
    for w, p in zip(weights, per):
        prefix += w * p.kstar
        prefix_max = max(prefix_max, prefix)

    L, l_notes = _log_coefficient(tuple(eras), tuple(per))
    notes.extend(l_notes)

    if K == 1:
        regime = "homogeneous"
    elif K == 2:
        t1, t2 = profiles[0].theta_star, profiles[1].theta_star
        if abs(t1 - t2) <= _tie_tol(t1, t2):
            regime = "mean"
            if t1 != t2:
                msg = "theta* values are within the tie tolerance; classified mean"
                notes.append(msg)
                _warnings.warn(msg, RuntimeWarning, stacklevel=2)
        elif t1 > t2:
            regime = "fast"
        else:
            regime = "slow"
    else:
        regime = "multi_era"

    return RegimePrediction(regime=regime, v_hat=v_hat, L=L, per_era=tuple(per),
                            eras=tuple(eras), schedule=schedule,
                            prefix_max=prefix_max, warnings=tuple(notes))


def classify_two_era(mech1, mech2, t: float) -> RegimePrediction:
    """Slow / mean / fast classification of the single-interface model.

    Equivalent to ``solve_multi_era`` on the schedule (0, t, 1): slow and
    mean keep each era at its own critical tilt (v_hat = t v + (1-t)
    vtilde); fast merges both eras at the tilt minimizing
    (t kappa + (1-t) kappatilde)(theta)/theta.
    """
    if not 0.0 < t < 1.0:
        raise ValueError("interface position t must lie in (0, 1)")
    return solve_multi_era(EnvironmentSchedule((0.0, t, 1.0), (mech1, mech2)))


def fast_consistency_check(prediction: RegimePrediction) -> FastConsistencyReport:
    """Verify the fast-regime consequences on a fast prediction.

    Checks thetatilde* < theta < theta*, kstar(a) < 0 < kstartilde(b), and
    t kstar(a) + (1-t) kstartilde(b) = 0 within 1e-8. Raises
    AssumptionViolated on a non-fast prediction or when any check fails.
    """
    if prediction.regime != "fast":
        raise AssumptionViolated(
            f"fast_consistency_check requires a fast prediction, got {prediction.regime!r}")
    mech1, mech2 = prediction.schedule.mechanisms
    t = prediction.schedule.weights[0]
    p1, p2 = critical_theta(mech1), critical_theta(mech2)
    theta = prediction.per_era[0].theta
    ka = prediction.per_era[0].kstar
    kb = prediction.per_era[1].kstar
    mix = abs(t * ka + (1.0 - t) * kb)
    ok = (p2.theta_star < theta < p1.theta_star) and ka < 0.0 < kb and mix <= 1e-8
    report = FastConsistencyReport(passed=ok, theta=theta,
                                   theta_star=p1.theta_star,
                                   theta_tilde_star=p2.theta_star,
                                   kstar_a=ka, kstar_b=kb, mix_residual=mix)
    if not ok:
        raise AssumptionViolated("fast-regime consequence check failed", report=report)
    return report


def _log_coefficient(eras, per_era):
    notes = []
    L = 0.0
    for era in eras:
        # both endpoint indicators count, even when the era is a singleton
        indicators = 1
        for idx in (era.r, era.s):
            k = abs(per_era[idx - 1].kstar)
            if k <= KSTAR_ZERO_TOL:
                indicators += 1
            elif k < KSTAR_WARN_TOL:
                notes.append(
                    f"kstar at environment {idx} is {k:.2e}: near the zero-test "
                    f"tolerance, log coefficient may be unreliable")
        L += indicators / (2.0 * era.phi)
    return L, notes


def log_coefficient(prediction: RegimePrediction) -> float:
    """L = sum over eras of (1 + [kstar_r = 0] + [kstar_s = 0]) / (2 phi)."""
    L, notes = _log_coefficient(prediction.eras, prediction.per_era)
    for msg in notes:
        _warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return L


def predict_front(prediction: RegimePrediction, n: int) -> PredictedFront:
    """m_n = v_hat n - L log n, with the linear part split per era.

    The linear term is sum_i a_i (floor(n alpha_i) - floor(n alpha_{i-1})),
    which reproduces the two-era statements with p = floor(n t) exactly.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    counts = prediction.schedule.generation_counts(n)
    linear = sum(p.a * c for p, c in zip(prediction.per_era, counts))
    return PredictedFront(n=n, m_n=linear - prediction.L * math.log(n),
                          regime=prediction.regime)
