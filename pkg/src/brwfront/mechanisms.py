"""Branching mechanisms: reproduction point processes and their transforms.

A mechanism is the law of the point process of children displacements
around a parent. Three families are supported, all with closed-form
log-Laplace transforms

    kappa(theta) = log E[ sum_{l in brood} exp(theta * l) ],  theta > 0,

which keeps downstream root-finding deterministic:

* ``FixedCountIID``    -- k children, displacements i.i.d. from one law;
* ``RandomCountIID``   -- random child count (finite law on {1,2,...}),
  displacements i.i.d. and independent of the count;
* ``ExplicitFinite``   -- an explicit finite list of (probability,
  displacement multiset) outcomes.

Every mechanism must make at least one child almost surely and must not
make exactly one child almost surely; degenerate inputs are rejected at
construction. A lattice-support flag is computed for discrete families
(used only to warn: predictions assume non-lattice displacements).

All objects are immutable after validation and safe to share across
threads; sampling takes an explicit numpy Generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

_PROB_TOL = 1e-12
_LATTICE_TOL = 1e-9


def _logsumexp(values: np.ndarray) -> float:
    m = float(np.max(values))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(values - m))))


def _check_probs(probs) -> None:
    p = np.asarray(probs, dtype=float)
    if np.any(p < 0):
        raise ValueError("probabilities must be nonnegative")
    if abs(float(p.sum()) - 1.0) > _PROB_TOL:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1 within {_PROB_TOL}")


def _real_gcd(values) -> float:
    """Approximate positive gcd of a set of reals (Euclid with cutoff)."""
    g = 0.0
    for value in values:
        a, b = max(g, abs(value)), min(g, abs(value))
        while b > _LATTICE_TOL:
            a, b = b, a % b
        g = a
    return g


def _points_lattice(points) -> bool:
    """True if all pairwise differences of support points are commensurable."""
    pts = sorted(set(float(p) for p in points))
    if len(pts) <= 1:
        return True
    diffs = [p - pts[0] for p in pts[1:]]
    g = _real_gcd(diffs)
    # Euclid always terminates on floats; a candidate unit far below the
    # spread means the points are incommensurable, not finely latticed.
    if g <= 1e-6 * max(1.0, max(diffs)):
        return False
    return all(abs(d - round(d / g) * g) <= _LATTICE_TOL for d in diffs)


# ---------------------------------------------------------------------------
# Displacement laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    """Normal displacement with the given mean and variance."""

    mean: float = 0.0
    var: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.var) and self.var >= 0):
            raise ValueError("variance must be finite and >= 0")

    def log_mgf(self, theta: float) -> float:
        return self.mean * theta + 0.5 * self.var * theta * theta

    def log_mgf_d1(self, theta: float) -> float:
        return self.mean + self.var * theta

    def log_mgf_d2(self, theta: float) -> float:
        return self.var

    def mean_value(self) -> float:
        return self.mean

    def variance(self) -> float:
        return self.var

    def support_sup(self) -> float:
        return self.mean if self.var == 0.0 else math.inf

    def log_mass_at_sup(self):
        return 0.0 if self.var == 0.0 else None

    def is_lattice(self) -> bool:
        return self.var == 0.0

    def ppf(self, u: np.ndarray) -> np.ndarray:
        if self.var == 0.0:
            return np.full_like(np.asarray(u, dtype=float), self.mean)
        return self.mean + math.sqrt(self.var) * ndtri(u)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.normal(self.mean, math.sqrt(self.var), size)

    def tilted(self, theta: float) -> "Gaussian":
        return Gaussian(self.mean + theta * self.var, self.var)


@dataclass(frozen=True)
class FiniteDiscrete:
    """Displacement on finitely many points."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.values) != len(self.probs) or not self.values:
            raise ValueError("values and probs must be non-empty and same length")
        _check_probs(self.probs)

    def _arrays(self):
        return np.asarray(self.values), np.asarray(self.probs)

    def log_mgf(self, theta: float) -> float:
        v, p = self._arrays()
        with np.errstate(divide="ignore"):
            return _logsumexp(np.log(p) + theta * v)

    def _tilt_probs(self, theta: float) -> np.ndarray:
        v, p = self._arrays()
        with np.errstate(divide="ignore"):
            logq = np.log(p) + theta * v
        logq -= logq.max()
        q = np.exp(logq)
        return q / q.sum()

    def log_mgf_d1(self, theta: float) -> float:
        v, _ = self._arrays()
        return float(np.dot(self._tilt_probs(theta), v))

    def log_mgf_d2(self, theta: float) -> float:
        v, _ = self._arrays()
        q = self._tilt_probs(theta)
        m = float(np.dot(q, v))
        return float(np.dot(q, (v - m) ** 2))

    def mean_value(self) -> float:
        v, p = self._arrays()
        return float(np.dot(p, v))

    def variance(self) -> float:
        v, p = self._arrays()
        m = self.mean_value()
        return float(np.dot(p, (v - m) ** 2))

    def support_sup(self) -> float:
        return max(v for v, p in zip(self.values, self.probs) if p > 0)

    def log_mass_at_sup(self) -> float:
        sup = self.support_sup()
        return math.log(sum(p for v, p in zip(self.values, self.probs) if v == sup))

    def is_lattice(self) -> bool:
        return _points_lattice([v for v, p in zip(self.values, self.probs) if p > 0])

    def ppf(self, u: np.ndarray) -> np.ndarray:
        v, p = self._arrays()
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        return v[np.searchsorted(cdf, u, side="right").clip(max=len(v) - 1)]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.ppf(rng.random(size))

    def tilted(self, theta: float) -> "FiniteDiscrete":
        return FiniteDiscrete(self.values, tuple(self._tilt_probs(theta)))


def TwoPoint(values, probs) -> FiniteDiscrete:
    """Two-point displacement law (a FiniteDiscrete with two atoms)."""
    if len(tuple(values)) != 2 or len(tuple(probs)) != 2:
        raise ValueError("TwoPoint takes exactly two values and two probabilities")
    return FiniteDiscrete(tuple(values), tuple(probs))


@dataclass(frozen=True)
class Uniform:
    """Uniform displacement on [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.hi >= self.lo):
            raise ValueError("need finite lo <= hi")

    def log_mgf(self, theta: float) -> float:
        d = self.hi - self.lo
        if d == 0.0:
            return theta * self.lo
        z = theta * d
        # log[(e^{theta hi} - e^{theta lo}) / (theta d)], written overflow-safe
        return theta * self.hi + math.log1p(-math.exp(-z)) - math.log(z)

    def log_mgf_d1(self, theta: float) -> float:
        d = self.hi - self.lo
        if d == 0.0:
            return self.lo
        z = theta * d
        ez = math.exp(-z)
        return self.hi - 1.0 / theta + d * ez / (1.0 - ez)

    def log_mgf_d2(self, theta: float) -> float:
        d = self.hi - self.lo
        if d == 0.0:
            return 0.0
        z = theta * d
        if z < 1e-4:  # series guard: 1/theta^2 - d^2 e^-z/(1-e^-z)^2 cancels
            return d * d / 12.0 * (1.0 - z * z / 20.0)
        ez = math.exp(-z)
        return 1.0 / (theta * theta) - d * d * ez / (1.0 - ez) ** 2

    def mean_value(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def variance(self) -> float:
        return (self.hi - self.lo) ** 2 / 12.0

    def support_sup(self) -> float:
        return self.hi

    def log_mass_at_sup(self):
        return 0.0 if self.hi == self.lo else None

    def is_lattice(self) -> bool:
        return self.hi == self.lo

    def ppf(self, u: np.ndarray) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * np.asarray(u, dtype=float)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size)

    def tilted(self, theta: float) -> "TiltedUniform":
        return TiltedUniform(self.lo, self.hi, theta)


@dataclass(frozen=True)
class TiltedUniform:
    """Uniform on [lo, hi] exponentially tilted by theta (density ~ e^{theta x})."""

    lo: float
    hi: float
    theta: float

    def mean_value(self) -> float:
        return Uniform(self.lo, self.hi).log_mgf_d1(self.theta)

    def variance(self) -> float:
        return Uniform(self.lo, self.hi).log_mgf_d2(self.theta)

    def is_lattice(self) -> bool:
        return self.hi == self.lo

    def ppf(self, u: np.ndarray) -> np.ndarray:
        d = self.hi - self.lo
        if d == 0.0:
            return np.full_like(np.asarray(u, dtype=float), self.lo)
        u = np.asarray(u, dtype=float)
        z = self.theta * d
        return self.hi + np.log(u + (1.0 - u) * math.exp(-z)) / self.theta

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.ppf(rng.random(size))


# ---------------------------------------------------------------------------
# Mechanisms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedCountIID:
    """Exactly ``count`` children, displacements i.i.d. from ``displacement``."""

    count: int
    displacement: object

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ValueError("count must be an integer >= 1")
        object.__setattr__(self, "count", int(self.count))
        if self.count == 1:
            raise ValueError("almost-surely one child is a degenerate mechanism")

    @property
    def theta_max(self) -> float:
        return math.inf


@dataclass(frozen=True)
class RandomCountIID:
    """Random child count on {1, 2, ...}; displacements i.i.d., independent of it."""

    counts: tuple
    count_probs: tuple
    displacement: object

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if counts != tuple(self.counts):
            raise ValueError("counts must be integers")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "count_probs", tuple(float(p) for p in self.count_probs))
        if len(self.counts) != len(self.count_probs) or not self.counts:
            raise ValueError("counts and count_probs must be non-empty and same length")
        if min(self.counts) < 1:
            raise ValueError("child counts must be >= 1 (no extinction)")
        _check_probs(self.count_probs)
        only_one = all(c == 1 or p == 0.0 for c, p in zip(self.counts, self.count_probs))
        if only_one:
            raise ValueError("almost-surely one child is a degenerate mechanism")

    @property
    def theta_max(self) -> float:
        return math.inf


@dataclass(frozen=True)
class ExplicitFinite:
    """Finite list of (probability, displacement multiset) outcomes."""

    outcomes: tuple

    def __post_init__(self):
        outs = tuple((float(p), tuple(float(x) for x in xs)) for p, xs in self.outcomes)
        object.__setattr__(self, "outcomes", outs)
        if not outs:
            raise ValueError("need at least one outcome")
        _check_probs([p for p, _ in outs])
        if any(len(xs) == 0 for p, xs in outs if p > 0):
            raise ValueError("empty broods are not allowed (no extinction)")
        if all(len(xs) == 1 or p == 0.0 for p, xs in outs):
            raise ValueError("almost-surely one child is a degenerate mechanism")
        # Intensity measure: weight of each support point is
        # sum_j p_j * (multiplicity of the point in outcome j).
        weights: dict = {}
        for p, xs in outs:
            for x in xs:
                weights[x] = weights.get(x, 0.0) + p
        points = tuple(sorted(weights))
        object.__setattr__(self, "_points", points)
        object.__setattr__(self, "_weights", tuple(weights[x] for x in points))

    @property
    def theta_max(self) -> float:
        return math.inf

    def intensity(self):
        """Support points and intensity weights (sums to mean child count)."""
        return np.asarray(self._points), np.asarray(self._weights)


Mechanism = (FixedCountIID, RandomCountIID, ExplicitFinite)


# ---------------------------------------------------------------------------
# Transforms and samplers over mechanisms
# ---------------------------------------------------------------------------


def mean_count(mech) -> float:
    """Expected number of children E[#brood]."""
    if isinstance(mech, FixedCountIID):
        return float(mech.count)
    if isinstance(mech, RandomCountIID):
        return float(np.dot(mech.counts, mech.count_probs))
    points, weights = mech.intensity()
    return float(weights.sum())


def _check_theta(mech, theta: float) -> None:
    if not (theta > 0.0 and theta <= mech.theta_max):
        raise ValueError(f"theta={theta!r} outside domain (0, {mech.theta_max}]")


def laplace(mech, theta: float) -> float:
    """kappa(theta) = log E[sum_brood e^{theta l}], exact closed form."""
    _check_theta(mech, theta)
    if isinstance(mech, (FixedCountIID, RandomCountIID)):
        return math.log(mean_count(mech)) + mech.displacement.log_mgf(theta)
    points, weights = mech.intensity()
    return _logsumexp(np.log(weights) + theta * points)


def laplace_derivatives(mech, theta: float):
    """(kappa'(theta), kappa''(theta)) in closed form."""
    _check_theta(mech, theta)
    if isinstance(mech, (FixedCountIID, RandomCountIID)):
        law = mech.displacement
        return law.log_mgf_d1(theta), law.log_mgf_d2(theta)
    points, weights = mech.intensity()
    logq = np.log(weights) + theta * points
    logq -= logq.max()
    q = np.exp(logq)
    q /= q.sum()
    m = float(np.dot(q, points))
    return m, float(np.dot(q, (points - m) ** 2))


def laplace_at_zero(mech) -> float:
    """kappa(0+) = log E[#brood]."""
    return math.log(mean_count(mech))


def drift_at_zero(mech) -> float:
    """kappa'(0+): mean of the un-tilted one-step intensity."""
    if isinstance(mech, (FixedCountIID, RandomCountIID)):
        return mech.displacement.mean_value()
    points, weights = mech.intensity()
    return float(np.dot(weights, points) / weights.sum())


def sup_slope(mech) -> float:
    """sup of kappa' over theta > 0 (essential sup of displacement support)."""
    if isinstance(mech, (FixedCountIID, RandomCountIID)):
        return mech.displacement.support_sup()
    points, _ = mech.intensity()
    return float(points[-1])


def log_intensity_at_sup(mech):
    """log intensity mass at the top support point; None for continuous laws."""
    if isinstance(mech, (FixedCountIID, RandomCountIID)):
        m = mech.displacement.log_mass_at_sup()
        return None if m is None else math.log(mean_count(mech)) + m
    points, weights = mech.intensity()
    return math.log(float(weights[-1]))


def tilted_step(mech, theta: float):
    """One-step law of the spinal walk: mass/density ~ e^{theta l} d(intensity).

    Its mean is kappa'(theta) and its variance kappa''(theta).
    """
    _check_theta(mech, theta)
    if isinstance(mech, (FixedCountIID, RandomCountIID)):
        return mech.displacement.tilted(theta)
    points, weights = mech.intensity()
    logq = np.log(weights) + theta * points
    logq -= logq.max()
    q = np.exp(logq)
    return FiniteDiscrete(tuple(points), tuple(q / q.sum()))


def is_lattice(mech) -> bool:
    """True if the mechanism's support lies on a lattice a*Z + b."""
    if isinstance(mech, (FixedCountIID, RandomCountIID)):
        return mech.displacement.is_lattice()
    points, _ = mech.intensity()
    return _points_lattice(points)


def sample_offspring(mech, rng: np.random.Generator) -> np.ndarray:
    """Draw one brood: the displacements of all children of one particle."""
    if isinstance(mech, FixedCountIID):
        return mech.displacement.sample(rng, mech.count)
    if isinstance(mech, RandomCountIID):
        cdf = np.cumsum(mech.count_probs)
        cdf[-1] = 1.0
        k = mech.counts[min(int(np.searchsorted(cdf, rng.random(), side="right")),
                            len(mech.counts) - 1)]
        return mech.displacement.sample(rng, k)
    probs = np.asarray([p for p, _ in mech.outcomes])
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    j = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
    return np.asarray(mech.outcomes[j][1], dtype=float)
