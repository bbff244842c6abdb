"""Random walk with restart over the user-item bipartite graph.

Nodes are users ``0..|U|-1`` followed by items ``|U|..|U|+|I|-1``. ``Q`` is
row-stochastic: a user row spreads over the user's rated items in proportion
to the ratings, an item row over its raters in proportion to the same
ratings. The walk from user ``u`` keeps

    p = (1 - alpha) Q^T p + alpha e_u

so total probability stays exactly 1 (the transpose moves mass along rows of
``Q``). Nodes without edges get a self-loop for the same reason.

For an edge ``(k, j)`` the sensitivity of the target score is

    d p_u[t] / d q_kj = (1 - alpha) p_u[k] M[t, j],  M = (I - (1 - alpha) Q^T)^-1

and summing over all source users replaces ``p_u[k]`` by ``c[k]`` where
``c = sum_u p_u`` solves one more linear system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .influence import InfluenceReport, greedy_select, normalized_weights
from .mf import TopNList, rank_items, top_n_matrix
from .ratings import RatingDataset


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class TransitionMatrix:
    Q: sp.csr_matrix
    n_users: int
    n_items: int
    alpha: float = 0.3
    flags: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items

    def item_node(self, i):
        return self.n_users + np.asarray(i)

    def q(self, k: int, j: int) -> float:
        """Entry for the user-to-item step ``k -> j`` (item index ``j``)."""
        return float(self.Q[k, self.n_users + j])

    def system(self) -> sp.csc_matrix:
        """``I - (1 - alpha) Q^T``."""
        n = self.n_nodes
        return (sp.identity(n, format="csc") - (1 - self.alpha) * self.Q.T).tocsc()

    def _lu(self):
        if not hasattr(self, "_lu_cache"):
            self._lu_cache = spla.splu(self.system())
        return self._lu_cache


def build_transition(ds: RatingDataset, alpha: float = 0.3) -> TransitionMatrix:
    """Rating-proportional transition matrix over users and items.

    A node whose ratings are all zero falls back to a uniform row over its
    neighbours (flagged); an isolated node gets a self-loop.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    nu, ni = ds.n_users, ds.n_items
    n = nu + ni
    u, i = ds.users, ds.items + nu
    r = ds.ratings.astype(float)
    rows = np.concatenate([u, i])
    cols = np.concatenate([i, u])
    vals = np.concatenate([r, r])
    flags = []
    sums = np.bincount(rows, weights=vals, minlength=n)
    deg = np.bincount(rows, minlength=n)
    zero = (sums == 0) & (deg > 0)
    if zero.any():
        flags.append(f"uniform-fallback:{int(zero.sum())}")
        vals = np.where(zero[rows], 1.0, vals)
        sums = np.bincount(rows, weights=vals, minlength=n)
    vals = vals / sums[rows]
    isolated = np.flatnonzero(deg == 0)
    if isolated.size:
        flags.append(f"self-loops:{isolated.size}")
        rows = np.concatenate([rows, isolated])
        cols = np.concatenate([cols, isolated])
        vals = np.concatenate([vals, np.ones(isolated.size)])
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    Q.sum_duplicates()
    return TransitionMatrix(Q, nu, ni, alpha, flags)


@dataclass
class StationaryDistribution:
    p: np.ndarray
    source: int
    iterations: int = 0
    residual: float = 0.0

    def items(self, n_users: int) -> np.ndarray:
        return self.p[n_users:]


def fixed_point_residual(T: TransitionMatrix, p: np.ndarray, u: int) -> float:
    e = np.zeros(T.n_nodes)
    e[u] = 1.0
    return float(np.abs((1 - T.alpha) * (T.Q.T @ p) + T.alpha * e - p).max())


def stationary(T: TransitionMatrix, u: int, method: str = "power", tol: float = 1e-10,
               max_iter: int = 10_000) -> StationaryDistribution:
    """Walk distribution from user ``u`` by power iteration or a direct solve."""
    if not 0 <= u < T.n_users:
        raise IndexError(f"user {u} out of range")
    e = np.zeros(T.n_nodes)
    e[u] = 1.0
    if method == "direct":
        p = T._lu().solve(T.alpha * e)
        return StationaryDistribution(p, u, 0, fixed_point_residual(T, p, u))
    if method != "power":
        raise ValueError(f"unknown method {method!r}")
    QT = T.Q.T.tocsr()
    p = e.copy()
    change = np.inf
    for it in range(1, max_iter + 1):
        nxt = (1 - T.alpha) * (QT @ p)
        nxt[u] += T.alpha
        change = float(np.abs(nxt - p).max())
        p = nxt
        if change <= tol:
            return StationaryDistribution(p, u, it, fixed_point_residual(T, p, u))
    raise ConvergenceError("power iteration did not converge", change)


def stationary_all(T: TransitionMatrix, users=None) -> np.ndarray:
    """Distributions for many source users at once, one row per user."""
    users = np.arange(T.n_users) if users is None else np.asarray(users)
    E = np.zeros((T.n_nodes, users.size))
    E[users, np.arange(users.size)] = T.alpha
    return T._lu().solve(E).T


def item_scores(T: TransitionMatrix, users=None) -> np.ndarray:
    """Users x items matrix of walk probabilities (the graph recommender's scores)."""
    return stationary_all(T, users)[:, T.n_users:]


def top_n_graph(ds: RatingDataset, dist: StationaryDistribution, u: int, N: int) -> TopNList:
    if N < 1:
        raise ValueError("N must be at least 1")
    scores = dist.items(ds.n_users)
    items = rank_items(scores, ds.user_items(u), N)
    return TopNList(u, items, scores[items], short=items.size < N)


def top_n_graph_matrix(T: TransitionMatrix, ds: RatingDataset, N: int, users=None) -> np.ndarray:
    users = np.arange(ds.n_users) if users is None else np.asarray(users)
    S = np.zeros((ds.n_users, ds.n_items))
    S[users] = item_scores(T, users)
    return top_n_matrix(S, ds, N, users)


# ---------------------------------------------------------------------------
# resolvent and influence


@dataclass
class ResolventApprox:
    """``M = (I - (1 - alpha) Q^T)^-1`` exactly or as the series up to order ``T``."""

    trans: TransitionMatrix
    mode: str = "exact"
    T: int = 3

    def __post_init__(self):
        if self.mode not in ("exact", "taylor"):
            raise ValueError("mode must be 'exact' or 'taylor'")
        if self.mode == "taylor" and self.T < 0:
            raise ValueError("Taylor order must be non-negative")

    def row(self, t: int) -> np.ndarray:
        """Row ``t`` of M (node index), from one solve with the transposed system."""
        tr = self.trans
        e = np.zeros(tr.n_nodes)
        e[t] = 1.0
        a = 1 - tr.alpha
        if self.mode == "exact":
            A = (sp.identity(tr.n_nodes, format="csc") - a * tr.Q).tocsc()
            return spla.spsolve(A, e)
        out, term = e.copy(), e
        for _ in range(self.T):
            term = a * (tr.Q @ term)
            out = out + term
        return out

    def matrix(self) -> np.ndarray:
        """Dense M; meant for small graphs and checks."""
        tr = self.trans
        a = 1 - tr.alpha
        QT = tr.Q.T.toarray()
        if self.mode == "exact":
            return np.linalg.inv(np.eye(tr.n_nodes) - a * QT)
        out = term = np.eye(tr.n_nodes)
        for _ in range(self.T):
            term = a * QT @ term
            out = out + term
        return out


def source_mass(T: TransitionMatrix) -> np.ndarray:
    """``c = sum_u p_u`` over all users."""
    b = np.zeros(T.n_nodes)
    b[:T.n_users] = T.alpha
    return T._lu().solve(b)


def graph_edge_influence_all(T: TransitionMatrix, ds: RatingDataset, target: int,
                             resolvent: ResolventApprox | None = None) -> np.ndarray:
    """Signed influence of every rating edge on the target's walk score, summed over users."""
    resolvent = resolvent or ResolventApprox(T)
    m_row = resolvent.row(T.n_users + target)
    c = source_mass(T)
    return (1 - T.alpha) * c[ds.users] * m_row[T.n_users + ds.items]


def graph_edge_influence(T: TransitionMatrix, edge, target: int,
                         resolvent: ResolventApprox | None = None, users=None) -> float:
    """``sum_u d p_u[t] / d q_kj`` for one user-item edge ``(k, j)``.

    ``users`` restricts the sum to some source users (default all).
    """
    k, j = edge
    resolvent = resolvent or ResolventApprox(T)
    m_row = resolvent.row(T.n_users + target)
    if users is None:
        c_k = source_mass(T)[k]
    else:
        c_k = float(stationary_all(T, users)[:, k].sum())
    return float((1 - T.alpha) * c_k * m_row[T.n_users + j])


def graph_user_influence_all(T: TransitionMatrix, ds: RatingDataset, target: int,
                             resolvent: ResolventApprox | None = None) -> np.ndarray:
    phi = graph_edge_influence_all(T, ds, target, resolvent)
    return np.bincount(ds.users, weights=phi, minlength=ds.n_users)


def graph_select_influential(T: TransitionMatrix, ds: RatingDataset, target: int, delta: int,
                             resolvent: ResolventApprox | None = None) -> np.ndarray:
    return greedy_select(graph_user_influence_all(T, ds, target, resolvent), delta)


def graph_influence_report(ds: RatingDataset, target: int, delta: int, alpha: float = 0.3,
                           mode: str = "exact", T: int = 3, weights: bool = False) -> InfluenceReport:
    trans = build_transition(ds, alpha)
    res = ResolventApprox(trans, mode, T)
    phi = graph_edge_influence_all(trans, ds, target, res)
    pi = np.bincount(ds.users, weights=phi, minlength=ds.n_users)
    S = greedy_select(pi, delta)
    w = normalized_weights(pi) if weights else None
    return InfluenceReport(target, phi, pi, S, delta, w, list(trans.flags))
