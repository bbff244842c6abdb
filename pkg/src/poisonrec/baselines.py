"""Classic heuristic fake-user generators used as baselines.

All of them rate the target at r_max and pick ``n`` fillers uniformly at
random; they differ only in the filler ratings. ``pga_lite`` is a simplified
stand-in for projected-gradient-ascent attacks: it keeps their habit of
rating fillers near the top of the scale but does no optimization.
"""

from __future__ import annotations

import numpy as np

from .ratings import RatingDataset


def _fillers(rng, n_items: int, target: int, n: int) -> np.ndarray:
    pool = np.delete(np.arange(n_items), target)
    return np.sort(rng.choice(pool, size=min(n, pool.size), replace=False))


def _profiles(ds, target, m, n, seed, ids, rate):
    from .attack import FakeUserProfile

    rng = np.random.default_rng([seed, 3])
    out = []
    for v in range(m):
        fillers = _fillers(rng, ds.n_items, target, n)
        ratings = {int(target): int(ds.r_max)}
        for i in fillers:
            ratings[int(i)] = int(rate(rng, int(i)))
        out.append(FakeUserProfile(ids[v], int(target), tuple(int(i) for i in fillers), ratings,
                                   ("simplified-baseline",)))
    return out


def random_attack(ds: RatingDataset, target: int, m: int, n: int, seed: int, ids):
    """Fillers rated uniformly at random in 0..r_max."""
    return _profiles(ds, target, m, n, seed, ids, lambda rng, i: rng.integers(0, ds.r_max + 1))


def average_attack(ds: RatingDataset, target: int, m: int, n: int, seed: int, ids):
    """Fillers rated at the item's mean rating (global mean for unrated items)."""
    cnt = np.bincount(ds.items, minlength=ds.n_items)
    tot = np.bincount(ds.items, weights=ds.ratings, minlength=ds.n_items)
    glob = float(ds.ratings.mean()) if ds.n_edges else ds.r_max / 2
    mean = np.where(cnt > 0, tot / np.maximum(cnt, 1), glob)
    return _profiles(ds, target, m, n, seed, ids,
                     lambda rng, i: np.clip(np.rint(mean[i]), 0, ds.r_max))


def pga_lite(ds: RatingDataset, target: int, m: int, n: int, seed: int, ids):
    """Fillers rated r_max - 1 or r_max."""
    return _profiles(ds, target, m, n, seed, ids,
                     lambda rng, i: rng.integers(max(ds.r_max - 1, 0), ds.r_max + 1))
