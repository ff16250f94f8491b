"""Random number streams and D^2 (k-means++) seeding shared by the fitters."""
from __future__ import annotations

import numpy as np

DEFAULT_SEED = 42


def make_rng(seed: int | None) -> np.random.Generator:
    """PCG64 stream; ``None`` maps to the documented default seed, never the clock."""
    return np.random.Generator(np.random.PCG64(DEFAULT_SEED if seed is None else seed))


def standard_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Box-Muller transform of PCG64 uniforms (platform-independent normals)."""
    n = int(np.prod(shape))
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1]
    u2 = rng.random(m)
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([rad * np.cos(2 * np.pi * u2), rad * np.sin(2 * np.pi * u2)])
    return z[:n].reshape(shape)


def dsquared_indices(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Pick ``k`` distinct row indices of ``x`` by D^2 sampling."""
    n = x.shape[0]
    if n < k:
        raise ValueError(f"need at least {k} points, got {n}")
    chosen = [int(rng.integers(n))]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    d2[chosen[0]] = 0.0
    for _ in range(1, k):
        cum = np.cumsum(d2)
        if cum[-1] > 0:
            idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        else:
            # remaining points duplicate chosen ones; fall back to uniform
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[rng.integers(free.size)])
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
        d2[chosen] = 0.0
    return np.array(chosen, dtype=np.int64)
