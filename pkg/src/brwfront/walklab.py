"""Tilted-walk laboratory: many-to-one identities and ballot-type scalings.

The many-to-one identity converts expectations of sums over tree particles
into expectations under one tilted random walk:

    E[ sum_{|x|=n} f(V(x_1),...,V(x_n)) ]
        = E[ exp(-theta S_n + sum_j kappa_j(theta)) f(S_1,...,S_n) ],

where the walk step at era j has law e^{theta l - kappa_j(theta)} against
the brood intensity. ``many_to_one_check`` verifies it as an exact finite
sum for mechanisms with finite outcome space (both sides enumerated, no
sampling).

The rest of the module estimates first-passage / local-limit quantities
for centered walks: survival above a constant barrier (c/sqrt(n) <= P <=
C(1+y)/sqrt(n)), survival above a -j^alpha - y frontier (same scaling for
alpha < 1/2), bridges below a logarithmic envelope (~ 1/sqrt(pqr)), and
window probabilities P(T_n in [r, r+h]) (~ (1+h)/sqrt(n)). Lattice walks
get an exact dynamic program; everything else is chunked Monte Carlo with
keyed Philox streams and normal-approximation confidence intervals.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import mechanisms as mx
from . import rng as brng
from .errors import TooLarge

ENUMERATION_BUDGET = 10_000_000
_Z95 = 1.959963984540054


# ---------------------------------------------------------------------------
# Tilted walks and barrier specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TiltedWalk:
    """Per-era one-step laws of the spinal walk at tilt theta."""

    schedule: object
    theta: float

    def __post_init__(self):
        laws = tuple(mx.tilted_step(m, self.theta) for m in self.schedule.mechanisms)
        object.__setattr__(self, "step_laws", laws)

    def step_law(self, era: int):
        return self.step_laws[era]

    def centered_step_law(self, era: int):
        return centered(self.step_laws[era])


@dataclass(frozen=True)
class Shifted:
    """A step law translated by a constant (used to center tilted laws)."""

    base: object
    shift: float

    def mean_value(self) -> float:
        return self.base.mean_value() + self.shift

    def variance(self) -> float:
        return self.base.variance()

    def sample(self, rng, size):
        return self.base.sample(rng, size) + self.shift

    def is_lattice(self) -> bool:
        return self.base.is_lattice()


def centered(law):
    """The law shifted to mean zero."""
    m = law.mean_value()
    if isinstance(law, mx.Gaussian):
        return mx.Gaussian(0.0, law.var)
    if isinstance(law, mx.FiniteDiscrete):
        return mx.FiniteDiscrete(tuple(v - m for v in law.values), law.probs)
    return Shifted(law, -m)


@dataclass(frozen=True)
class Constant:
    """Barrier at level -y for the whole horizon."""

    y: float

    def __post_init__(self):
        if self.y < 0:
            raise ValueError("barrier offset y must be >= 0")


@dataclass(frozen=True)
class PowerLaw:
    """Barrier -j^alpha - y; alpha must lie in (0, 1/2)."""

    alpha: float
    y: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 1/2)")
        if self.y < 0:
            raise ValueError("barrier offset y must be >= 0")


@dataclass(frozen=True)
class LogBridge:
    """Logarithmic envelope A(log(n+1) - log(n-k+1)) over p+q+r steps."""

    A: float
    p: int
    q: int
    r: int
    y: float
    h: float

    def __post_init__(self):
        if min(self.p, self.q, self.r) < 1:
            raise ValueError("segment lengths must be >= 1")
        if self.y < 0 or self.h < 0:
            raise ValueError("y and h must be >= 0")

    @property
    def n(self) -> int:
        return self.p + self.q + self.r


@dataclass(frozen=True)
class MonteCarlo:
    replicates: int
    seed: int = 0


@dataclass(frozen=True)
class ExactDP:
    pass


@dataclass(frozen=True)
class Estimate:
    n: int
    estimate: float
    ci_lo: float
    ci_hi: float
    scaled: float          # sqrt(n) * P (sqrt(pqr) * P for bridges)
    method: str
    replicates: int | None = None
    hits: int | None = None
    unresolved: bool = False


# ---------------------------------------------------------------------------
# Many-to-one: exact two-sided enumeration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxIndicator:
    """1 if path_j lies in [lows_j, highs_j] for every j."""

    lows: tuple
    highs: tuple

    def __call__(self, path) -> float:
        return float(all(lo <= x <= hi
                         for x, lo, hi in zip(path, self.lows, self.highs)))


@dataclass(frozen=True)
class ExpOfLast:
    """exp(lam * final position)."""

    lam: float

    def __call__(self, path) -> float:
        return math.exp(self.lam * path[-1])


@dataclass(frozen=True)
class PathMaxIndicator:
    """1 if the running maximum never exceeds c."""

    c: float

    def __call__(self, path) -> float:
        return float(max(path) <= self.c)


def random_functionals(n: int, count: int, seed: int = 0, span: float = 4.0):
    """A reproducible mixed batch from the fixed test-functional family."""
    r = brng.stream(seed, 0xF)
    out = []
    for i in range(count):
        kind = i % 3
        if kind == 0:
            centers = r.uniform(-span / 2, span / 2, n)
            widths = r.uniform(0.5, span, n)
            out.append(BoxIndicator(tuple(centers - widths / 2),
                                    tuple(centers + widths / 2)))
        elif kind == 1:
            out.append(ExpOfLast(float(r.uniform(-0.5, 0.5))))
        else:
            out.append(PathMaxIndicator(float(r.uniform(-1.0, span))))
    return out


@dataclass(frozen=True)
class ManyToOneResult:
    tree_value: float
    walk_value: float
    abs_diff: float


def many_to_one_check(mech, theta: float, n: int, f,
                      walk_tilt: float | None = None) -> ManyToOneResult:
    """Exact check of the many-to-one identity for one (mech, theta, n, f).

    Both sides are exact finite sums (accumulated with math.fsum): the tree
    side enumerates all (outcome, child) sequences, the walk side all paths
    of the tilted step's finite support. Raises TooLarge past the 1e7-term
    budget.

    ``walk_tilt`` samples the walk paths under a different tilt while the
    exponential reweighting keeps ``theta``: a deliberate inconsistency for
    sensitivity probes (the identity itself holds at every consistent tilt).
    """
    if not isinstance(mech, mx.ExplicitFinite):
        raise ValueError("exact enumeration needs an ExplicitFinite mechanism")
    branches = [(p, x) for p, xs in mech.outcomes for x in xs]
    if len(branches) ** n > ENUMERATION_BUDGET:
        raise TooLarge(f"{len(branches)}^{n} paths exceed the enumeration budget")

    terms = []

    def walk_tree(depth, weight, path):
        if depth == n:
            terms.append(weight * f(path))
            return
        last = path[-1] if path else 0.0
        for p, x in branches:
            walk_tree(depth + 1, weight * p, path + (last + x,))

    walk_tree(0, 1.0, ())
    tree_value = math.fsum(terms)

    kappa = mx.laplace(mech, theta)
    tilt = mx.tilted_step(mech, theta if walk_tilt is None else walk_tilt)
    support = list(zip(tilt.values, tilt.probs))
    walk_terms = []
    for combo in itertools.product(support, repeat=n):
        weight = 1.0
        pos = 0.0
        path = []
        for x, q in combo:
            weight *= q
            pos += x
            path.append(pos)
        walk_terms.append(weight * math.exp(-theta * pos + n * kappa) * f(tuple(path)))
    walk_value = math.fsum(walk_terms)
    return ManyToOneResult(tree_value=tree_value, walk_value=walk_value,
                           abs_diff=abs(tree_value - walk_value))


# ---------------------------------------------------------------------------
# Exact dynamic programming on lattice walks
# ---------------------------------------------------------------------------


def _lattice_steps(law):
    """(unit d, integer steps, probs) for a finite lattice step law."""
    if not isinstance(law, mx.FiniteDiscrete):
        raise ValueError("exact DP needs a FiniteDiscrete step law")
    values = np.asarray(law.values)
    nonzero = np.abs(values) > 1e-12
    if not nonzero.any():
        return 1.0, np.zeros(len(values), dtype=int), np.asarray(law.probs)
    d = mx._real_gcd(np.abs(values[nonzero]))
    if d <= 1e-9:
        raise ValueError("step values are not on a common lattice")
    steps = np.round(values / d).astype(int)
    if np.max(np.abs(values - steps * d)) > 1e-9:
        raise ValueError("step values are not on a common lattice")
    return float(d), steps, np.asarray(law.probs)


def _dp_distribution(law, n: int, keep=None):
    """Distribution of T_n on the lattice, optionally killing each step.

    ``keep``: callable mapping position values (array) to a boolean mask of
    states that survive; applied after every step.
    """
    d, steps, probs = _lattice_steps(law)
    lo, hi = int(steps.min()) * n, int(steps.max()) * n
    size = hi - lo + 1
    pmf = np.zeros(size)
    pmf[-lo] = 1.0
    positions = (np.arange(size) + lo) * d
    for _ in range(n):
        nxt = np.zeros(size)
        for z, q in zip(steps, probs):
            if z >= 0:
                nxt[z:] += q * pmf[:size - z] if z else q * pmf
            else:
                nxt[:z] += q * pmf[-z:]
        pmf = nxt
        if keep is not None:
            pmf[~keep(positions)] = 0.0
    return positions, pmf


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def _require_centered(law):
    if abs(law.mean_value()) > 1e-8:
        raise ValueError("barrier estimators expect a centered (mean-zero) walk; "
                         "wrap the law with centered()")


def _mc_estimate(n, scale, hits, R, method="monte_carlo"):
    p = hits / R
    se = math.sqrt(max(p * (1.0 - p), 0.0) / R)
    return Estimate(n=n, estimate=p, ci_lo=max(p - _Z95 * se, 0.0),
                    ci_hi=min(p + _Z95 * se, 1.0), scaled=scale * p,
                    method=method, replicates=R, hits=hits,
                    unresolved=hits < 10)


def _mc_survival(law, n, R, seed, event_rows):
    """Monte Carlo over walk paths; event_rows maps cumsum matrix to bools."""
    chunk = max(1, min(R, 4_000_000 // max(n, 1)))
    hits = 0
    done = 0
    index = 0
    while done < R:
        size = min(chunk, R - done)
        r = brng.stream(seed, 0xBA110, index)
        t = np.cumsum(law.sample(r, (size, n)), axis=1)
        hits += int(np.count_nonzero(event_rows(t)))
        done += size
        index += 1
    return hits


def ballot_probability(law, barrier: Constant, n: int, method) -> Estimate:
    """P(T_j >= -y for all j <= n) for a centered walk."""
    _require_centered(law)
    y = barrier.y
    if isinstance(method, ExactDP):
        _, pmf = _dp_distribution(law, n, keep=lambda x: x >= -y - 1e-12)
        p = float(pmf.sum())
        return Estimate(n=n, estimate=p, ci_lo=p, ci_hi=p,
                        scaled=math.sqrt(n) * p, method="exact_dp")
    hits = _mc_survival(law, n, method.replicates, method.seed,
                        lambda t: (t >= -y).all(axis=1))
    return _mc_estimate(n, math.sqrt(n), hits, method.replicates)


def ballot_powerlaw(law, barrier: PowerLaw, n: int, method: MonteCarlo) -> Estimate:
    """P(T_j >= -j^alpha - y for all j <= n), Monte Carlo."""
    _require_centered(law)
    frontier = -np.arange(1, n + 1) ** barrier.alpha - barrier.y
    hits = _mc_survival(law, n, method.replicates, method.seed,
                        lambda t: (t >= frontier).all(axis=1))
    return _mc_estimate(n, math.sqrt(n), hits, method.replicates)


def bridge_probability(laws, spec: LogBridge, method: MonteCarlo) -> Estimate:
    """Bridge below the log envelope: stays above -phi(j)-y, ends within h.

    ``laws`` are the three centered step laws of the consecutive segments of
    lengths (p, q, r); reports sqrt(pqr) * P as the scaled estimate.
    """
    for law in laws:
        _require_centered(law)
    p_, q_, r_ = spec.p, spec.q, spec.r
    n = spec.n
    k = np.arange(1, n + 1)
    phi = spec.A * (math.log(n + 1) - np.log(n - k + 1))
    barrier = -phi - spec.y
    top = barrier[-1] + spec.h
    R = method.replicates
    chunk = max(1, min(R, 4_000_000 // max(n, 1)))
    hits = 0
    done = 0
    index = 0
    while done < R:
        size = min(chunk, R - done)
        r = brng.stream(method.seed, 0xB71D6E, index)
        steps = np.concatenate([laws[0].sample(r, (size, p_)),
                                laws[1].sample(r, (size, q_)),
                                laws[2].sample(r, (size, r_))], axis=1)
        t = np.cumsum(steps, axis=1)
        ok = (t >= barrier).all(axis=1) & (t[:, -1] <= top)
        hits += int(np.count_nonzero(ok))
        done += size
        index += 1
    scale = math.sqrt(p_ * q_ * r_)
    return _mc_estimate(n, scale, hits, R)


def stone_window(law, n: int, r: float, h: float, method) -> Estimate:
    """P(T_n in [r, r+h]) for a centered walk."""
    _require_centered(law)
    if h < 0:
        raise ValueError("window width h must be >= 0")
    if isinstance(method, ExactDP):
        positions, pmf = _dp_distribution(law, n)
        mask = (positions >= r - 1e-12) & (positions <= r + h + 1e-12)
        p = float(pmf[mask].sum())
        return Estimate(n=n, estimate=p, ci_lo=p, ci_hi=p,
                        scaled=math.sqrt(n) * p, method="exact_dp")
    hits = _mc_survival(law, n, method.replicates, method.seed,
                        lambda t: (t[:, -1] >= r) & (t[:, -1] <= r + h))
    return _mc_estimate(n, math.sqrt(n), hits, method.replicates)


def loglog_slope(ns, estimates) -> float:
    """Least-squares slope of log(estimate) against log(n)."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(estimates, dtype=float))
    x = x - x.mean()
    return float(np.dot(x, y - y.mean()) / np.dot(x, x))
