"""Regularized matrix factorization trained by alternating least squares."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .ratings import RatingDataset


class TrainingError(RuntimeError):
    pass


@dataclass
class FactorModel:
    X: np.ndarray
    Y: np.ndarray
    lam: float
    d: int
    objective_trace: list = field(default_factory=list)
    sweeps: int = 0
    seed: int = 0

    def predict(self, u: int, i: int) -> float:
        return float(self.X[u] @ self.Y[i])

    def scores(self) -> np.ndarray:
        return self.X @ self.Y.T


@dataclass
class TopNList:
    user: int
    items: np.ndarray
    scores: np.ndarray
    short: bool = False


def _outer_rows(A: np.ndarray) -> np.ndarray:
    return (A[:, :, None] * A[:, None, :]).reshape(A.shape[0], -1)


def ridge_rows(W: sp.spmatrix, R: sp.spmatrix, F: np.ndarray, lam: float) -> np.ndarray:
    """Solve every row's ridge system ``(lam I + sum_j F_j F_j^T) x = sum_j r_j F_j``.

    ``W`` is the 0/1 observation pattern and ``R`` the ratings, both rows x
    len(F).
    """
    d = F.shape[1]
    grams = (W @ _outer_rows(F)).reshape(-1, d, d)
    grams += lam * np.eye(d)
    rhs = R @ F
    try:
        return np.linalg.solve(grams, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        raise TrainingError(
            "singular normal equations; use lambda > 0 for rank-deficient data"
        ) from None


def objective(ds: RatingDataset, X: np.ndarray, Y: np.ndarray, lam: float) -> float:
    resid = ds.ratings - np.einsum("ed,ed->e", X[ds.users], Y[ds.items])
    return float(resid @ resid + lam * (np.sum(X * X) + np.sum(Y * Y)))


def init_factors(n_users: int, n_items: int, d: int, seed: int):
    rng = np.random.Generator(np.random.PCG64(seed))
    X = rng.uniform(-0.01, 0.01, size=(n_users, d))
    Y = rng.uniform(-0.01, 0.01, size=(n_items, d))
    return X, Y


POLISH_MAX_PARAMS = 600


def train(ds: RatingDataset, d: int = 8, lam: float = 0.1, sweeps: int = 30, seed: int = 0,
          init: tuple[np.ndarray, np.ndarray] | None = None,
          polish_tol: float | None = 1e-10) -> FactorModel:
    """Fit ``min sum (r_ui - x_u.y_i)^2 + lam (|X|^2 + |Y|^2)`` by exact block solves.

    Each sweep solves all user rows with Y fixed, then all item rows with X
    fixed; the objective is recorded after every sweep. ``init`` warm-starts
    from given factors instead of the seeded uniform(-0.01, 0.01) draw.

    ALS converges linearly and slowly along the near-flat directions of the
    factorization, so small models (at most ``POLISH_MAX_PARAMS`` parameters)
    are finished with damped Newton steps until the stationarity residual is
    below ``polish_tol``. Pass ``polish_tol=None`` to skip.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if sweeps < 1:
        raise ValueError("sweeps must be at least 1")
    if init is None:
        X, Y = init_factors(ds.n_users, ds.n_items, d, seed)
    else:
        X, Y = (np.array(a, dtype=float) for a in init)
    R = ds.matrix()
    W = ds.mask()
    Rt, Wt = R.T.tocsr(), W.T.tocsr()
    trace = []
    for _ in range(sweeps):
        X = ridge_rows(W, R, Y, lam)
        Y = ridge_rows(Wt, Rt, X, lam)
        trace.append(objective(ds, X, Y, lam))
    if polish_tol is not None and lam > 0 and (ds.n_users + ds.n_items) * d <= POLISH_MAX_PARAMS:
        X, Y = newton_polish(ds, X, Y, lam, polish_tol, trace)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise TrainingError("non-finite factors")
    return FactorModel(X, Y, lam, d, trace, sweeps, seed)


def gradient(ds: RatingDataset, X: np.ndarray, Y: np.ndarray, lam: float):
    """Gradient of the training objective w.r.t. X and Y, plus edge residuals."""
    resid = ds.ratings - np.einsum("ed,ed->e", X[ds.users], Y[ds.items])
    gx = 2 * lam * X
    gy = 2 * lam * Y
    np.add.at(gx, ds.users, -2 * resid[:, None] * Y[ds.items])
    np.add.at(gy, ds.items, -2 * resid[:, None] * X[ds.users])
    return gx, gy, resid


def edge_jacobian(ds: RatingDataset, X: np.ndarray, Y: np.ndarray) -> sp.csr_matrix:
    """Rows are d(x_u.y_i)/d(theta) for each edge, theta = (vec X, vec Y)."""
    n_users, d = X.shape
    n_params = (n_users + Y.shape[0]) * d
    u, i = ds.users, ds.items
    cols = np.concatenate([u[:, None] * d + np.arange(d), (n_users + i)[:, None] * d + np.arange(d)], axis=1)
    vals = np.concatenate([Y[i], X[u]], axis=1)
    rows = np.repeat(np.arange(u.size), 2 * d)
    return sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(u.size, n_params))


def hessian(ds: RatingDataset, X: np.ndarray, Y: np.ndarray, lam: float) -> sp.csc_matrix:
    """Exact Hessian of the training objective (sparse)."""
    n_users, d = X.shape
    n_params = (n_users + Y.shape[0]) * d
    A = edge_jacobian(ds, X, Y)
    resid = ds.ratings - np.einsum("ed,ed->e", X[ds.users], Y[ds.items])
    rows = (ds.users[:, None] * d + np.arange(d)).ravel()
    cols = ((n_users + ds.items)[:, None] * d + np.arange(d)).ravel()
    C = sp.csr_matrix((np.repeat(-2 * resid, d), (rows, cols)), shape=(n_params, n_params))
    return (2 * (A.T @ A) + C + C.T + 2 * lam * sp.identity(n_params)).tocsc()


def newton_polish(ds, X, Y, lam, tol, trace=None, max_iter=50):
    """Levenberg-damped Newton steps, each accepted only if the objective drops."""
    n_users, d = X.shape
    f = objective(ds, X, Y, lam)
    damping = 1e-6
    for _ in range(max_iter):
        gx, gy, _ = gradient(ds, X, Y, lam)
        g = np.concatenate([gx.ravel(), gy.ravel()])
        if np.abs(g).max(initial=0.0) / 2 <= tol:
            break
        H = hessian(ds, X, Y, lam).toarray()
        eye = np.eye(H.shape[0])
        while damping < 1e8:
            step = np.linalg.solve(H + damping * eye, -g)
            Xn = X + step[:n_users * d].reshape(X.shape)
            Yn = Y + step[n_users * d:].reshape(Y.shape)
            fn = objective(ds, Xn, Yn, lam)
            if fn <= f:
                X, Y, f = Xn, Yn, fn
                damping = max(damping / 10, 1e-12)
                break
            damping *= 10
        else:
            break
        if trace is not None:
            trace.append(f)
    return X, Y


def stationarity_residuals(model: FactorModel, ds: RatingDataset) -> tuple[float, float]:
    """Max-norm of ``lam x_u - sum_i (r_ui - x_u.y_i) y_i`` over users, and the item analogue."""
    X, Y = model.X, model.Y
    resid = ds.ratings - np.einsum("ed,ed->e", X[ds.users], Y[ds.items])
    gx = model.lam * X.copy()
    gy = model.lam * Y.copy()
    np.add.at(gx, ds.users, -resid[:, None] * Y[ds.items])
    np.add.at(gy, ds.items, -resid[:, None] * X[ds.users])
    return float(np.abs(gx).max(initial=0.0)), float(np.abs(gy).max(initial=0.0))


def predict(model: FactorModel, u: int, i: int) -> float:
    return model.predict(u, i)


def rank_items(scores: np.ndarray, excluded: np.ndarray, N: int) -> np.ndarray:
    """Top-``N`` indices of ``scores`` skipping ``excluded``; ties go to the lower index."""
    keep = np.ones(scores.size, dtype=bool)
    keep[excluded] = False
    cand = np.flatnonzero(keep)
    order = np.lexsort((cand, -scores[cand]))
    return cand[order[:N]]


def top_n(model: FactorModel, ds: RatingDataset, u: int, N: int) -> TopNList:
    """Highest-scoring items ``u`` has not rated."""
    if N < 1:
        raise ValueError("N must be at least 1")
    scores = model.Y @ model.X[u]
    items = rank_items(scores, ds.user_items(u), N)
    return TopNList(u, items, scores[items], short=items.size < N)


def top_n_matrix(scores: np.ndarray, ds: RatingDataset, N: int, users=None) -> np.ndarray:
    """Top-N lists for many users at once, padded with -1 when short.

    ``scores`` is users x items; rated items are excluded.
    """
    users = np.arange(scores.shape[0]) if users is None else np.asarray(users)
    S = np.array(scores[users], dtype=float)
    rated = ds.mask()[users].tocoo()
    S[rated.row, rated.col] = -np.inf
    n_items = S.shape[1]
    # stable sort on -score keeps ascending item id among ties
    order = np.argsort(-S, axis=1, kind="stable")[:, :N]
    picked = np.take_along_axis(S, order, axis=1)
    order[np.isneginf(picked)] = -1
    if N > n_items:
        order = np.pad(order, ((0, 0), (0, N - n_items)), constant_values=-1)
    return order


def save_model(model: FactorModel, path: str | Path, binary: bool = False) -> None:
    path = Path(path)
    if binary:
        np.savez(path, X=model.X, Y=model.Y,
                 header=np.array([model.lam, model.d, model.sweeps, model.seed], dtype=float))
        return
    n_users, n_items = model.X.shape[0], model.Y.shape[0]
    lines = [f"# factor-model {n_users} {n_items} {model.d} {model.lam!r} {model.sweeps} {model.seed}"]
    for row in np.vstack([model.X, model.Y]) if n_users + n_items else []:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> FactorModel:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            lam, d, sweeps, seed = z["header"]
            return FactorModel(z["X"], z["Y"], float(lam), int(d), [], int(sweeps), int(seed))
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().split()
        if len(head) != 8 or head[1] != "factor-model":
            raise ValueError(f"{path}: not a factor-model checkpoint")
        n_users, n_items, d = int(head[2]), int(head[3]), int(head[4])
        lam, sweeps, seed = float(head[5]), int(head[6]), int(head[7])
        rows = [[float(v) for v in line.split()] for line in fh if line.strip()]
    M = np.array(rows, dtype=float).reshape(n_users + n_items, d)
    return FactorModel(M[:n_users].copy(), M[n_users:].copy(), lam, d, [], sweeps, seed)
