"""Counter-based, splittable random streams.

Two mechanisms, both deterministic functions of explicit keys so that
parallel execution can never change results:

* **Lineage keys** (particle simulation): every particle carries a 64-bit
  key; a child's key is a SplitMix64-style hash of its parent's key and
  its slot in the brood, and every random draw hashes (key, salt). A
  particle's entire subtree is therefore a pure function of its key, which
  is what makes truncated runs literal subtrees of exact runs on paired
  seeds.

* **Philox streams** (batch Monte Carlo, bootstrap): numpy's counter-based
  Philox bit generator keyed by a folded path of integers.

SplitMix64 is the mixer from Steele, Lea & Flood's SplittableRandom; it
passes the usual statistical batteries when used as a keyed hash.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# Draw salts: distinct constants so different draw kinds at the same key
# are independent streams.
SALT_DISPLACEMENT = 0xD1B54A32D192ED03
SALT_COUNT = 0x8CB92BA72F3D8DD7

_U_GOLDEN = np.uint64(GOLDEN)
_U_M1 = np.uint64(0xBF58476D1CE4E5B9)
_U_M2 = np.uint64(0x94D049BB133111EB)
_U30, _U27, _U31, _U11 = (np.uint64(s) for s in (30, 27, 31, 11))
_INV53 = 2.0**-53


def mix64(x: int) -> int:
    """SplitMix64 finalizer on a python int (mod 2^64)."""
    x = (x + GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def mix64_array(x: np.ndarray) -> np.ndarray:
    """Vectorized mix64 over a uint64 array."""
    x = (x + _U_GOLDEN).astype(np.uint64, copy=False)
    x = (x ^ (x >> _U30)) * _U_M1
    x = (x ^ (x >> _U27)) * _U_M2
    return x ^ (x >> _U31)


def derive_key(seed: int, *path: int) -> int:
    """Fold (seed, path...) into a 64-bit key. Used for replicate roots."""
    h = mix64(seed & _MASK)
    for p in path:
        h = mix64(h ^ ((p * GOLDEN) & _MASK))
    return h


def child_keys(parent_keys: np.ndarray, slots: np.ndarray) -> np.ndarray:
    """Keys of children given parent keys and 0-based brood slots."""
    step = (slots.astype(np.uint64) + np.uint64(1)) * _U_GOLDEN
    return mix64_array(parent_keys + step)


def uniforms(keys: np.ndarray, salt: int) -> np.ndarray:
    """One uniform in (0, 1) per key; strictly interior so ndtri is finite."""
    h = mix64_array(keys ^ np.uint64(salt))
    return ((h >> _U11).astype(np.float64) + 0.5) * _INV53


def normals(keys: np.ndarray, salt: int) -> np.ndarray:
    """One standard normal per key via the inverse CDF."""
    return ndtri(uniforms(keys, salt))


def stream(seed: int, *path: int) -> np.random.Generator:
    """A counter-based Philox generator keyed by (seed, path...).

    Distinct paths give statistically independent streams; the same path
    always reproduces the same stream regardless of scheduling.
    """
    return np.random.Generator(np.random.Philox(key=derive_key(seed, *path)))
