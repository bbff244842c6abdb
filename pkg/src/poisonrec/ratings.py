"""Sparse rating data: ingestion, serialization, synthesis and partial views."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_R_MAX = 5


class DatasetError(ValueError):
    """Invalid rating data."""


class ParseError(DatasetError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """Immutable user-item rating set with dense zero-based ids.

    Edges are kept sorted by (user, item). ``user_ids``/``item_ids`` map
    internal ids back to the external labels used in files.
    """

    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    r_max: int = DEFAULT_R_MAX
    user_ids: tuple = ()
    item_ids: tuple = ()
    _user_ptr: np.ndarray = field(init=False, repr=False)
    _item_order: np.ndarray = field(init=False, repr=False)
    _item_ptr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        ratings = np.asarray(self.ratings, dtype=np.int64)
        if not (users.shape == items.shape == ratings.shape) or users.ndim != 1:
            raise DatasetError("users, items and ratings must be equal-length vectors")
        if self.r_max < 1:
            raise DatasetError("r_max must be positive")
        if users.size:
            if users.min() < 0 or users.max() >= self.n_users:
                raise DatasetError("user id out of range")
            if items.min() < 0 or items.max() >= self.n_items:
                raise DatasetError("item id out of range")
            if ratings.min() < 0 or ratings.max() > self.r_max:
                raise DatasetError(f"rating outside 0..{self.r_max}")
        order = np.lexsort((items, users))
        users, items, ratings = users[order], items[order], ratings[order]
        key = users * self.n_items + items
        if key.size > 1 and np.any(key[1:] == key[:-1]):
            k = int(np.flatnonzero(key[1:] == key[:-1])[0])
            raise DatasetError(f"duplicate rating for pair ({users[k]}, {items[k]})")
        user_ids = tuple(self.user_ids) or tuple(f"u{k}" for k in range(self.n_users))
        item_ids = tuple(self.item_ids) or tuple(f"i{k}" for k in range(self.n_items))
        if len(user_ids) != self.n_users or len(item_ids) != self.n_items:
            raise DatasetError("id map length does not match entity count")

        item_order = np.lexsort((users, items))
        set_ = object.__setattr__
        set_(self, "users", _readonly(users))
        set_(self, "items", _readonly(items))
        set_(self, "ratings", _readonly(ratings))
        set_(self, "user_ids", user_ids)
        set_(self, "item_ids", item_ids)
        set_(self, "_user_ptr", _readonly(_ptr(users, self.n_users)))
        set_(self, "_item_order", _readonly(item_order))
        set_(self, "_item_ptr", _readonly(_ptr(items[item_order], self.n_items)))

    @property
    def n_edges(self) -> int:
        return int(self.users.size)

    def user_items(self, u: int) -> np.ndarray:
        """Items rated by ``u`` (ascending)."""
        return self.items[self._user_ptr[u]:self._user_ptr[u + 1]]

    def user_ratings(self, u: int) -> np.ndarray:
        return self.ratings[self._user_ptr[u]:self._user_ptr[u + 1]]

    def user_edges(self, u: int) -> np.ndarray:
        """Edge indices belonging to ``u``."""
        return np.arange(self._user_ptr[u], self._user_ptr[u + 1])

    def item_users(self, i: int) -> np.ndarray:
        """Users who rated ``i`` (ascending)."""
        return self.users[self.item_edges(i)]

    def item_edges(self, i: int) -> np.ndarray:
        return self._item_order[self._item_ptr[i]:self._item_ptr[i + 1]]

    def user_degree(self) -> np.ndarray:
        return np.diff(self._user_ptr)

    def item_degree(self) -> np.ndarray:
        return np.diff(self._item_ptr)

    def rating_of(self, u: int, i: int) -> int | None:
        its = self.user_items(u)
        k = np.searchsorted(its, i)
        if k < its.size and its[k] == i:
            return int(self.user_ratings(u)[k])
        return None

    def matrix(self) -> sp.csr_matrix:
        """Ratings as a |U| x |I| CSR matrix (unrated entries absent)."""
        return sp.csr_matrix(
            (self.ratings.astype(float), (self.users, self.items)),
            shape=(self.n_users, self.n_items),
        )

    def mask(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (np.ones(self.n_edges), (self.users, self.items)),
            shape=(self.n_users, self.n_items),
        )

    def subset(self, edges: np.ndarray) -> "RatingDataset":
        """Same id space, only the given edge indices."""
        edges = np.asarray(edges, dtype=np.int64)
        return RatingDataset(
            self.n_users, self.n_items, self.users[edges], self.items[edges],
            self.ratings[edges], self.r_max, self.user_ids, self.item_ids,
        )

    def without_users(self, users: Iterable[int]) -> "RatingDataset":
        """Drop every rating of the given users; ids are kept."""
        drop = np.zeros(self.n_users, dtype=bool)
        drop[list(users)] = True
        return self.subset(np.flatnonzero(~drop[self.users]))

    def with_users(self, rows: Sequence[dict], ids: Sequence[str] | None = None) -> "RatingDataset":
        """Append new users, each given as an ``{item: rating}`` dict."""
        k = len(rows)
        ids = list(ids) if ids is not None else [f"new{j}" for j in range(k)]
        users = [self.users]
        items = [self.items]
        ratings = [self.ratings]
        for j, row in enumerate(rows):
            its = np.array(sorted(row), dtype=np.int64)
            users.append(np.full(its.size, self.n_users + j, dtype=np.int64))
            items.append(its)
            ratings.append(np.array([row[i] for i in its], dtype=np.int64))
        return RatingDataset(
            self.n_users + k, self.n_items, np.concatenate(users),
            np.concatenate(items), np.concatenate(ratings), self.r_max,
            self.user_ids + tuple(ids), self.item_ids,
        )

    def user_index(self, label: str) -> int:
        try:
            return self.user_ids.index(label)
        except ValueError:
            raise KeyError(f"unknown user {label!r}") from None

    def item_index(self, label: str) -> int:
        try:
            return self.item_ids.index(label)
        except ValueError:
            raise KeyError(f"unknown item {label!r}") from None

    def same_as(self, other: "RatingDataset") -> bool:
        return (
            self.n_users == other.n_users and self.n_items == other.n_items
            and self.r_max == other.r_max
            and self.user_ids == other.user_ids and self.item_ids == other.item_ids
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.ratings, other.ratings)
        )


def _ptr(sorted_keys: np.ndarray, n: int) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(np.bincount(sorted_keys, minlength=n))]).astype(np.int64)


def _natural_key(label: str):
    digits = "".join(ch for ch in label if ch.isdigit())
    prefix = label.rstrip("0123456789")
    if digits and label == prefix + digits:
        return (prefix, 0, int(digits), label)
    return (label, 1, 0, label)


def from_triples(triples: Iterable[tuple[str, str, int]], r_max: int = DEFAULT_R_MAX) -> RatingDataset:
    """Build a dataset from external-id triples; ids are sorted naturally."""
    triples = list(triples)
    user_labels = sorted({t[0] for t in triples}, key=_natural_key)
    item_labels = sorted({t[1] for t in triples}, key=_natural_key)
    uidx = {lab: k for k, lab in enumerate(user_labels)}
    iidx = {lab: k for k, lab in enumerate(item_labels)}
    return RatingDataset(
        len(user_labels), len(item_labels),
        np.array([uidx[t[0]] for t in triples], dtype=np.int64),
        np.array([iidx[t[1]] for t in triples], dtype=np.int64),
        np.array([t[2] for t in triples], dtype=np.int64),
        r_max, tuple(user_labels), tuple(item_labels),
    )


def ingest(path: str | Path, r_max: int = DEFAULT_R_MAX) -> RatingDataset:
    """Read a ``user item rating`` text file.

    Blank lines and ``#`` comments are skipped. Raises ParseError for a
    malformed line and DatasetError for out-of-range ratings or duplicate
    pairs.
    """
    triples = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 3:
                raise ParseError(lineno, f"expected 3 fields, got {len(parts)}")
            try:
                r = int(parts[2])
            except ValueError:
                raise ParseError(lineno, f"rating {parts[2]!r} is not an integer") from None
            if not 0 <= r <= r_max:
                raise DatasetError(f"line {lineno}: rating {r} outside 0..{r_max}")
            pair = (parts[0], parts[1])
            if pair in seen:
                raise DatasetError(f"line {lineno}: duplicate pair {pair} (first at line {seen[pair]})")
            seen[pair] = lineno
            triples.append((parts[0], parts[1], r))
    return from_triples(triples, r_max)


def dumps(ds: RatingDataset) -> str:
    return "".join(
        f"{ds.user_ids[u]} {ds.item_ids[i]} {r}\n"
        for u, i, r in zip(ds.users.tolist(), ds.items.tolist(), ds.ratings.tolist())
    )


def serialize(ds: RatingDataset, path: str | Path) -> None:
    Path(path).write_text(dumps(ds), encoding="utf-8")


def synth(seed: int, n_users: int, n_items: int, density: float, latent_rank: int,
          r_max: int = DEFAULT_R_MAX, noise: float = 0.5, long_tail: bool = True,
          quality: float = 1.0) -> RatingDataset:
    """Low-rank synthetic ratings with a Bernoulli observation mask.

    Preferences are ``U V^T / sqrt(rank)`` with Gaussian factors, mapped to
    ``mid + 1.2 * pref + q_i + noise`` and rounded into 0..r_max.

    With ``long_tail`` (the default) items get a random popularity rank p and
    are observed with probability ``density * 6 (p+1)^2 / ((n+1)(2n+1))``,
    which averages to ``density`` over items, so the overall edge count is
    unchanged but a few items collect most ratings. The item offset ``q_i``
    grows linearly from ``-quality`` (least popular) to ``+quality``, so
    unpopular items are also less liked, as in real catalogues. With
    ``long_tail=False`` every cell uses ``density`` and ``q_i = 0``.

    The mask compares raw 32-bit integers against integer thresholds, so it
    never depends on float rounding.
    """
    if not 0 < density <= 1:
        raise DatasetError("density must lie in (0, 1]")
    if density * n_users * n_items < 1:
        raise DatasetError("density * n_users * n_items must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    mask_bits = rng.integers(0, 2**32, size=(n_users, n_items), dtype=np.uint64)
    base = min(2**32, int(math.floor(density * 2**32)))
    if long_tail and density < 1:
        order = np.argsort(rng.integers(0, 2**63, size=n_items, dtype=np.int64), kind="stable")
        pop = np.empty(n_items, dtype=np.int64)
        pop[order] = np.arange(n_items)
        denom = (n_items + 1) * (2 * n_items + 1)
        thresholds = [min(2**32, base * 6 * (int(p) + 1) ** 2 // denom) for p in pop]
        offset = quality * (2.0 * (pop + 1) / (n_items + 1) - 1.0)
    else:
        thresholds = [base] * n_items
        offset = np.zeros(n_items)
    observed = mask_bits < np.array(thresholds, dtype=np.uint64)[None, :] if base < 2**32 \
        else np.ones(mask_bits.shape, dtype=bool)
    U = rng.standard_normal((n_users, latent_rank))
    V = rng.standard_normal((n_items, latent_rank))
    pref = U @ V.T / math.sqrt(latent_rank)
    raw = r_max / 2 + 0.5 + 1.2 * pref + offset[None, :] + noise * rng.standard_normal((n_users, n_items))
    R = np.clip(np.rint(raw), 0, r_max).astype(np.int64)
    uu, ii = np.nonzero(observed)
    wu, wi = len(str(max(n_users - 1, 0))), len(str(max(n_items - 1, 0)))
    return RatingDataset(
        n_users, n_items, uu, ii, R[uu, ii], r_max,
        tuple(f"u{k:0{wu}d}" for k in range(n_users)),
        tuple(f"i{k:0{wi}d}" for k in range(n_items)),
    )


@dataclass(frozen=True, eq=False)
class KnowledgeView:
    """Edges an attacker can see, grown breadth-first from the target item."""

    base: RatingDataset
    visible_edges: np.ndarray
    fraction: float
    shortfall: bool = False

    def dataset(self) -> RatingDataset:
        return self.base.subset(self.visible_edges)


def partial_view(ds: RatingDataset, target: int, fraction: float) -> KnowledgeView:
    """Reveal whole users hop by hop outward from ``target``.

    Users are revealed with all their ratings, in BFS order over the
    bipartite graph (ascending id within a hop), until at least
    ``fraction * |E|`` edges are visible. Items only carry the frontier.
    """
    if not 0 <= target < ds.n_items:
        raise DatasetError(f"target {target} out of range")
    if not 0 < fraction <= 1:
        raise DatasetError("fraction must lie in (0, 1]")
    quota = fraction * ds.n_edges
    seen_users = np.zeros(ds.n_users, dtype=bool)
    seen_items = np.zeros(ds.n_items, dtype=bool)
    seen_items[target] = True
    frontier_items = np.array([target])
    chosen: list[np.ndarray] = []
    count = 0
    done = quota <= 0
    while not done and frontier_items.size:
        hop_users = np.unique(np.concatenate([ds.item_users(i) for i in frontier_items]))
        hop_users = hop_users[~seen_users[hop_users]]
        seen_users[hop_users] = True
        next_items = []
        for u in hop_users:
            e = ds.user_edges(int(u))
            chosen.append(e)
            count += e.size
            next_items.append(ds.user_items(int(u)))
            if count >= quota:
                done = True
                break
        if done or not next_items:
            break
        nxt = np.unique(np.concatenate(next_items))
        frontier_items = nxt[~seen_items[nxt]]
        seen_items[frontier_items] = True
    edges = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    return KnowledgeView(ds, _readonly(edges), fraction, shortfall=count < quota)
