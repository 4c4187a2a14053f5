"""Monte Carlo engine for the particle system.

Exact full-tree simulation at small n, window-truncated simulation at
large n. A window-truncated generation drops particles more than ``width``
below the new maximum and, if more than ``cap`` remain, the lowest of
those; the running maximum itself is never dropped and every drop is
counted so truncation bias stays observable.

Randomness is keyed by particle lineage: each particle carries a 64-bit
key, children derive theirs from the parent's key and brood slot, and all
draws are counter-based hashes of (key, salt). Consequences:

* a run is a pure function of (seed, replicate, config) -- identical
  results at any parallelism;
* on paired seeds a truncated run is a literal subtree of the exact run,
  so M_n(truncated) <= M_n(exact) pathwise, with equality whenever
  truncation never removed an ancestor of the exact argmax.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import mechanisms as mx
from . import rng as brng
from .errors import ExactBlowup, InsufficientData

EXACT_POPULATION_LIMIT = 10_000_000


@dataclass(frozen=True)
class Exact:
    """No population control; population sizes follow the branching law."""


@dataclass(frozen=True)
class WindowTruncated:
    """Keep particles within ``width`` of the running maximum, at most ``cap``."""

    width: float = 15.0
    cap: int = 1_000_000

    def __post_init__(self):
        if self.width <= 0 or self.cap < 1:
            raise ValueError("need width > 0 and cap >= 1")


@dataclass(frozen=True)
class SimConfig:
    schedule: object
    n: int
    mode: object
    seed: int
    record_trajectory: bool = False

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be >= 0")
        if isinstance(self.mode, Exact) and self.n > 0:
            counts = self.schedule.generation_counts(self.n)
            log_expected = sum(c * math.log(mx.mean_count(m))
                               for c, m in zip(counts, self.schedule.mechanisms))
            if log_expected > math.log(EXACT_POPULATION_LIMIT):
                raise ValueError(
                    f"exact mode rejected: expected final population exp({log_expected:.1f}) "
                    f"exceeds {EXACT_POPULATION_LIMIT}")


@dataclass
class Population:
    generation: int
    positions: np.ndarray
    keys: np.ndarray
    truncation_losses: int = 0
    max_so_far: float = 0.0


@dataclass(frozen=True)
class TrajectoryPoint:
    k: int
    max: float
    count: int
    losses: int


@dataclass(frozen=True)
class RunRecord:
    replicate: int
    seed: int            # derived per-replicate root key
    n: int
    M_n: float
    losses: int
    trajectory: tuple | None
    wall_ms: float       # telemetry; excluded from deterministic outputs


def initial_population(seed: int, replicate: int) -> Population:
    key = brng.derive_key(seed, replicate)
    return Population(generation=0, positions=np.zeros(1),
                      keys=np.array([key], dtype=np.uint64), max_so_far=0.0)


# per-mechanism expansion tables for ExplicitFinite broods
_EXPLICIT_TABLES: dict = {}


def _explicit_tables(mech):
    tables = _EXPLICIT_TABLES.get(mech)
    if tables is None:
        probs = np.asarray([p for p, _ in mech.outcomes])
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        sizes = np.asarray([len(xs) for _, xs in mech.outcomes], dtype=np.int64)
        flat = np.concatenate([np.asarray(xs, dtype=float) for _, xs in mech.outcomes])
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        tables = (cdf, sizes, flat, offsets)
        _EXPLICIT_TABLES[mech] = tables
    return tables


def _expand_broods(mech, positions, keys):
    """All children of the given parents: (positions, keys)."""
    n_parents = positions.size
    if isinstance(mech, mx.FixedCountIID):
        slots = np.arange(mech.count, dtype=np.uint64)
        ck = brng.child_keys(keys[:, None], slots[None, :]).ravel()
        disp = mech.displacement.ppf(brng.uniforms(ck, brng.SALT_DISPLACEMENT))
        pos = np.repeat(positions, mech.count) + disp
        return pos, ck
    if isinstance(mech, mx.RandomCountIID):
        u = brng.uniforms(keys, brng.SALT_COUNT)
        cdf = np.cumsum(mech.count_probs)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, u, side="right").clip(max=len(cdf) - 1)
        counts = np.asarray(mech.counts, dtype=np.int64)[idx]
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        parent = np.repeat(np.arange(n_parents), counts)
        slots = (np.arange(counts.sum()) - starts[parent]).astype(np.uint64)
        ck = brng.child_keys(keys[parent], slots)
        disp = mech.displacement.ppf(brng.uniforms(ck, brng.SALT_DISPLACEMENT))
        return positions[parent] + disp, ck
    cdf, sizes, flat, offsets = _explicit_tables(mech)
    u = brng.uniforms(keys, brng.SALT_COUNT)
    j = np.searchsorted(cdf, u, side="right").clip(max=len(cdf) - 1)
    counts = sizes[j]
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    parent = np.repeat(np.arange(n_parents), counts)
    slots = np.arange(counts.sum()) - starts[parent]
    disp = flat[offsets[j][parent] + slots]
    ck = brng.child_keys(keys[parent], slots.astype(np.uint64))
    return positions[parent] + disp, ck


def step(pop: Population, mech, mode=Exact()) -> Population:
    """One generation: every particle is replaced by its displaced brood.

    In WindowTruncated mode, children below (new max - width) are dropped,
    then the lowest are dropped to the cap; the maximum always survives.
    """
    if pop.positions.size == 0:
        raise ValueError("population is empty")
    pos, keys = _expand_broods(mech, pop.positions, pop.keys)
    losses = pop.truncation_losses
    mx_new = float(pos.max())
    if isinstance(mode, WindowTruncated):
        keep = pos >= mx_new - mode.width
        dropped = pos.size - int(np.count_nonzero(keep))
        if dropped:
            pos, keys = pos[keep], keys[keep]
            losses += dropped
        if pos.size > mode.cap:
            order = np.argpartition(pos, pos.size - mode.cap)[pos.size - mode.cap:]
            losses += pos.size - mode.cap
            pos, keys = pos[order], keys[order]
    elif pos.size > EXACT_POPULATION_LIMIT:
        raise ExactBlowup(
            f"exact-mode population {pos.size} exceeds {EXACT_POPULATION_LIMIT} "
            f"at generation {pop.generation + 1}")
    return Population(generation=pop.generation + 1, positions=pos, keys=keys,
                      truncation_losses=losses,
                      max_so_far=max(pop.max_so_far, mx_new))


def run(config: SimConfig, replicate: int = 0) -> RunRecord:
    """Simulate one replicate; deterministic given (config.seed, replicate)."""
    t0 = time.perf_counter()
    pop = initial_population(config.seed, replicate)
    trajectory = [TrajectoryPoint(0, 0.0, 1, 0)] if config.record_trajectory else None
    counts = config.schedule.generation_counts(config.n) if config.n else ()
    era_of_gen = np.repeat(np.arange(len(counts)), counts) if config.n else []
    for k in range(1, config.n + 1):
        mech = config.schedule.mechanisms[era_of_gen[k - 1]]
        pop = step(pop, mech, config.mode)
        if trajectory is not None:
            trajectory.append(TrajectoryPoint(k, float(pop.positions.max()),
                                              int(pop.positions.size),
                                              pop.truncation_losses))
    m_n = float(pop.positions.max()) if config.n else 0.0
    return RunRecord(replicate=replicate,
                     seed=brng.derive_key(config.seed, replicate),
                     n=config.n, M_n=m_n, losses=pop.truncation_losses,
                     trajectory=tuple(trajectory) if trajectory is not None else None,
                     wall_ms=(time.perf_counter() - t0) * 1e3)


def _run_indexed(args):
    config, replicate = args
    try:
        return run(config, replicate)
    except Exception as exc:  # attach the replicate index, keep the type
        exc.args = (f"replicate {replicate}: {exc}",)
        raise


def run_ensemble(config: SimConfig, replicates: int, jobs: int = 1):
    """Independent replicates 0..R-1, each on its own derived key stream.

    Results are sorted by replicate index and do not depend on ``jobs``.
    """
    if replicates < 1:
        raise ValueError("need replicates >= 1")
    tasks = [(config, r) for r in range(replicates)]
    if jobs <= 1:
        return [_run_indexed(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        chunk = max(1, replicates // (jobs * 8))
        return list(ex.map(_run_indexed, tasks, chunksize=chunk))


@dataclass(frozen=True)
class BarrierReport:
    y_values: tuple
    estimates: tuple
    slope: float
    passed: bool
    replicates: int


def diagnostics_barrier(records, profile, y_values=(2.0, 4.0, 6.0)) -> BarrierReport:
    """Crossing frequencies of the homogeneous upper frontier.

    Estimates P(some particle ever exceeds phi_n(k) + y) for
    phi_n(k) = v k - (3/(2 theta*)) (log(n+1) - log(n-k+1)) and checks the
    estimates decay in y at least like exp(-theta* y / 2) (log-linear
    regression slope <= -theta*/2).
    """
    records = [r for r in records if r.trajectory is not None]
    if len(records) < 100:
        raise InsufficientData("need >= 100 replicates with trajectories")
    n = records[0].n
    k = np.arange(1, n + 1)
    phi = profile.v * k - 1.5 / profile.theta_star * (math.log(n + 1) - np.log(n - k + 1))
    maxes = np.array([[p.max for p in rec.trajectory[1:]] for rec in records])
    estimates = []
    for y in y_values:
        crossed = (maxes >= phi[None, :] + y).any(axis=1)
        estimates.append(float(crossed.mean()))
    ys = [y for y, p in zip(y_values, estimates) if p > 0]
    ps = [p for p in estimates if p > 0]
    if len(ys) >= 2:
        x = np.asarray(ys) - np.mean(ys)
        slope = float(np.dot(x, np.log(ps) - np.mean(np.log(ps))) / np.dot(x, x))
        passed = slope <= -profile.theta_star / 2
    else:
        # barriers essentially never crossed: decay is trivially at least
        # exponential, as long as the estimates are non-increasing
        slope = -math.inf
        passed = all(p1 >= p2 for p1, p2 in zip(estimates, estimates[1:]))
    return BarrierReport(y_values=tuple(y_values), estimates=tuple(estimates),
                         slope=slope, passed=passed, replicates=len(records))


# ---------------------------------------------------------------------------
# Deterministic CSV output
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(x, ".17g")


def ensemble_csv(records) -> str:
    """Deterministic ensemble CSV (timings live in a separate sidecar)."""
    lines = ["replicate,seed,n,M_n,losses"]
    for r in sorted(records, key=lambda r: (r.n, r.replicate)):
        lines.append(f"{r.replicate},{r.seed},{r.n},{_fmt(r.M_n)},{r.losses}")
    return "\n".join(lines) + "\n"


def trajectory_csv(records) -> str:
    lines = ["replicate,k,max,count,losses"]
    for r in sorted(records, key=lambda r: (r.n, r.replicate)):
        for p in r.trajectory or ():
            lines.append(f"{r.replicate},{p.k},{_fmt(p.max)},{p.count},{p.losses}")
    return "\n".join(lines) + "\n"


def timings_csv(records) -> str:
    lines = ["replicate,n,wall_ms"]
    for r in sorted(records, key=lambda r: (r.n, r.replicate)):
        lines.append(f"{r.replicate},{r.n},{r.wall_ms:.3f}")
    return "\n".join(lines) + "\n"
