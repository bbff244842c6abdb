"""Influence of training edges and users on a target item's predictions (MF).

Removing edge (k, j) shifts the prediction r_ot by approximately

    Phi((k,j),(o,t)) = 1/|E| * grad r_ot^T  H^-1  grad l((k,j))

where H is the Hessian of the averaged training objective and l the squared
error of one edge. Edge influence on item t sums |Phi| over all users o;
user influence sums edge influence over the user's ratings.

H is the exact Hessian of the averaged objective plus a damping ``mu I``.
The damping is required: rotations of the latent space leave both the fit
and the regularizer unchanged, so the undamped Hessian is singular at every
optimum. If CG meets negative curvature (an unconverged model) the solver
switches to the Gauss-Newton matrix ``2/|E| (A^T A + lam I)``, which is PSD
by construction, and flags the result. Since H is symmetric the solves are
shared per user o (``v_o = H^-1 grad r_ot``) instead of per edge; the
absolute value is applied after the dot product, so nothing is lost.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mf import FactorModel, edge_jacobian, hessian
from .ratings import RatingDataset

DENSE_MAX_NODES = 200


class InfluenceError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    negative_curvature: bool = False


def block_cg(matvec, B: np.ndarray, precond=None, tol: float = 1e-8,
             maxiter: int = 200) -> CGResult:
    """Preconditioned conjugate gradients on every column of ``B`` at once.

    Stops a column once ``|r| <= tol * |b|``. Raises InfluenceError when a
    column is still unconverged after ``maxiter`` iterations.
    """
    B = np.asarray(B, dtype=float)
    squeeze = B.ndim == 1
    if squeeze:
        B = B[:, None]
    precond = precond or (lambda R: R)
    X = np.zeros_like(B)
    bnorm = np.linalg.norm(B, axis=0)
    active = bnorm > 0
    R = B.copy()
    Z = precond(R)
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    negative = False
    it = 0
    rel = np.zeros(B.shape[1])
    while np.any(active):
        if it >= maxiter:
            worst = float(rel[active].max())
            raise InfluenceError(f"CG did not converge in {maxiter} iterations", worst)
        it += 1
        HP = matvec(P)
        curv = np.einsum("ij,ij->j", P, HP)
        if np.any(curv[active] <= 0):
            negative = True
            break
        alpha = np.where(active, rz / np.where(active, curv, 1.0), 0.0)
        X += alpha * P
        R -= alpha * HP
        rel = np.linalg.norm(R, axis=0) / np.where(bnorm > 0, bnorm, 1.0)
        active &= rel > tol
        Z = precond(R)
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(active, rz_new / np.where(rz != 0, rz, 1.0), 0.0)
        P = Z + beta * P
        rz = rz_new
    res = float(rel.max(initial=0.0))
    return CGResult(X[:, 0] if squeeze else X, it, res, negative)


class MFInfluence:
    """Edge and user influence for one trained factor model.

    ``mode`` is ``"cg"`` (default), ``"dense"`` (exact solve, the oracle for
    small problems) or ``"schur"`` (exact solve that eliminates the
    block-diagonal user block and factors the item-side Schur complement;
    fastest when items * d is a few thousand). Solves are cached per target.
    """

    def __init__(self, model: FactorModel, ds: RatingDataset, damping: float = 1e-3,
                 mode: str = "cg", tol: float = 1e-8, maxiter: int = 200,
                 curvature: str = "exact"):
        if mode not in ("cg", "dense", "schur"):
            raise ValueError(f"unknown mode {mode!r}")
        if curvature not in ("exact", "gauss-newton"):
            raise ValueError(f"unknown curvature {curvature!r}")
        self.model, self.ds = model, ds
        self.damping, self.mode, self.tol, self.maxiter = damping, mode, tol, maxiter
        self.curvature = curvature
        self.n_edges = max(ds.n_edges, 1)
        self.A = edge_jacobian(ds, model.X, model.Y)
        self.AT = self.A.T.tocsr()
        self.resid = ds.ratings - np.einsum("ed,ed->e", model.X[ds.users], model.Y[ds.items])
        self._cross = None
        self.flags: list[str] = []
        self._cache: dict[int, np.ndarray] = {}
        self._dense = None
        self._blocks = None

    @property
    def n_params(self) -> int:
        return self.A.shape[1]

    @property
    def _shift(self) -> float:
        return 2 * self.model.lam / self.n_edges + self.damping

    @property
    def cross(self) -> sp.csr_matrix:
        """Residual coupling between x_u and y_i blocks (the non-Gauss-Newton part)."""
        if self._cross is None:
            full = hessian(self.ds, self.model.X, self.model.Y, 0.0)
            gn = 2 * (self.AT @ self.A)
            self._cross = (full - gn).tocsr()
            self._cross.eliminate_zeros()
        return self._cross

    def hvp(self, V: np.ndarray) -> np.ndarray:
        """Damped Hessian times ``V`` (vector or column block)."""
        out = (2.0 / self.n_edges) * (self.AT @ (self.A @ V)) + self._shift * V
        if self.curvature == "exact":
            out += (self.cross @ V) / self.n_edges
        return out

    def dense_hessian(self) -> np.ndarray:
        H = (2.0 / self.n_edges) * (self.AT @ self.A).toarray()
        if self.curvature == "exact":
            H += self.cross.toarray() / self.n_edges
        H[np.diag_indices_from(H)] += self._shift
        return H

    def _precond(self, R: np.ndarray) -> np.ndarray:
        if self._blocks is None:
            X, Y, d = self.model.X, self.model.Y, self.model.d
            ds = self.ds
            outer_y = (Y[ds.items][:, :, None] * Y[ds.items][:, None, :])
            outer_x = (X[ds.users][:, :, None] * X[ds.users][:, None, :])
            gx = np.zeros((X.shape[0], d, d))
            gy = np.zeros((Y.shape[0], d, d))
            np.add.at(gx, ds.users, outer_y)
            np.add.at(gy, ds.items, outer_x)
            blocks = (2.0 / self.n_edges) * np.concatenate([gx, gy]) + self._shift * np.eye(d)
            self._blocks = np.linalg.inv(blocks)
        d = self.model.d
        shaped = R.reshape(-1, d, R.shape[1])
        return np.einsum("nab,nbk->nak", self._blocks, shaped).reshape(R.shape)

    def sparse_hessian(self) -> sp.csr_matrix:
        H = (2.0 / self.n_edges) * (self.AT @ self.A)
        if self.curvature == "exact":
            H = H + self.cross / self.n_edges
        return (H + self._shift * sp.identity(self.n_params)).tocsr()

    def _schur_factor(self):
        d = self.model.d
        nx = self.ds.n_users * d
        H = self.sparse_hessian()
        Hxx, Hxy, Hyy = H[:nx, :nx], H[:nx, nx:], H[nx:, nx:].toarray()
        blocks = np.zeros((self.ds.n_users, d, d))
        idx = np.arange(nx).reshape(-1, d)
        dense_xx = Hxx.tocsr()
        for a in range(d):
            for b in range(d):
                blocks[:, a, b] = np.asarray(dense_xx[idx[:, a], idx[:, b]]).ravel()
        inv = np.linalg.inv(blocks)
        rows = np.repeat(idx, d, axis=1).ravel()
        cols = np.tile(idx, (1, d)).ravel()
        Dinv = sp.csr_matrix((inv.reshape(-1, d * d).ravel(), (rows, cols)), shape=(nx, nx))
        S = Hyy - (Hxy.T @ (Dinv @ Hxy)).toarray()
        L = np.linalg.cholesky(S)
        return Dinv, Hxy.tocsr(), L

    def solve(self, B: np.ndarray) -> np.ndarray:
        """``H^-1 B`` in the configured mode."""
        if self.mode == "schur":
            if self._dense is None:
                try:
                    self._dense = self._schur_factor()
                except np.linalg.LinAlgError:
                    self._fall_back()
                    self._dense = self._schur_factor()
            Dinv, Hxy, L = self._dense
            nx = Dinv.shape[0]
            bx, by = B[:nx], B[nx:]
            ry = by - Hxy.T @ (Dinv @ bx)
            y = np.linalg.solve(L.T, np.linalg.solve(L, ry))
            x = Dinv @ (bx - Hxy @ y)
            return np.concatenate([x, y])
        if self.mode == "dense":
            if self._dense is None:
                if self.ds.n_users + self.ds.n_items > DENSE_MAX_NODES:
                    raise InfluenceError(
                        f"dense mode is limited to {DENSE_MAX_NODES} users+items")
                H = self.dense_hessian()
                if np.linalg.eigvalsh(H)[0] <= 0:
                    self._fall_back()
                    H = self.dense_hessian()
                self._dense = np.linalg.cholesky(H)
            L = self._dense
            return np.linalg.solve(L.T, np.linalg.solve(L, B))
        res = block_cg(self.hvp, B, self._precond, self.tol, self.maxiter)
        if res.negative_curvature:
            self._fall_back()
            res = block_cg(self.hvp, B, self._precond, self.tol, self.maxiter)
            if res.negative_curvature:
                raise InfluenceError("negative curvature persists after fallback", res.residual)
        return res.x

    def _fall_back(self):
        warnings.warn("Hessian is indefinite (model not at a minimum); using Gauss-Newton")
        self.flags.append("indefinite-hessian")
        self.curvature = "gauss-newton"
        self._cache.clear()
        self._dense = None

    def prediction_gradients(self, target: int) -> np.ndarray:
        """Columns are grad_theta r_ot for every user o (dense, params x users)."""
        X, Y = self.model.X, self.model.Y
        n_users, d = X.shape
        G = np.zeros((self.n_params, n_users))
        o = np.arange(n_users)
        G[(o[:, None] * d + np.arange(d)).ravel(), np.repeat(o, d)] = np.tile(Y[target], n_users)
        G[(n_users + target) * d + np.arange(d), :] = X.T
        return G

    def target_solves(self, target: int) -> np.ndarray:
        """``H^-1 grad r_ot`` for all o, cached per target."""
        if target not in self._cache:
            self._cache[target] = self.solve(self.prediction_gradients(target))
        return self._cache[target]

    def pairwise(self, target: int) -> np.ndarray:
        """Phi((k,j),(o,t)) as an edges x users matrix."""
        V = self.target_solves(target)
        return (-2.0 * self.resid / self.n_edges)[:, None] * (self.A @ V) / self.n_edges

    def edge_influence_all(self, target: int) -> np.ndarray:
        """phi((k,j), t) for every edge, in dataset edge order."""
        return np.abs(self.pairwise(target)).sum(axis=1)

    def edge_influence(self, edge: tuple[int, int], target: int) -> float:
        return float(self.edge_influence_all(target)[edge_index(self.ds, edge)])

    def user_influence_all(self, target: int) -> np.ndarray:
        """pi(k, t) for every user."""
        phi = self.edge_influence_all(target)
        return np.bincount(self.ds.users, weights=phi, minlength=self.ds.n_users)

    def user_influence(self, k: int, target: int) -> float:
        phi = self.edge_influence_all(target)
        return float(phi[self.ds.user_edges(k)].sum())


def edge_index(ds: RatingDataset, edge: tuple[int, int]) -> int:
    k, j = edge
    e = ds.user_edges(k)
    pos = np.searchsorted(ds.items[e], j)
    if pos >= e.size or ds.items[e[pos]] != j:
        raise KeyError(f"edge {edge} is not in the dataset")
    return int(e[pos])


def edge_influence(model: FactorModel, ds: RatingDataset, edge, target: int, **kw) -> float:
    return MFInfluence(model, ds, **kw).edge_influence(edge, target)


def user_influence(model: FactorModel, ds: RatingDataset, k: int, target: int, **kw) -> float:
    return MFInfluence(model, ds, **kw).user_influence(k, target)


def set_influence(pi: np.ndarray, S) -> float:
    """Influence of removing a user set: the sum of its members' influence."""
    S = list(S)
    return float(np.sum(pi[S])) if S else 0.0


def greedy_select(pi: np.ndarray, delta: int) -> list[int]:
    """Greedy influential-user selection.

    Each round adds the remaining user with the largest influence, ties to
    the lower id. Set influence is additive, so the marginal gain of a user
    never changes and the rounds reduce to taking the top ``delta`` users.
    """
    pi = np.asarray(pi, dtype=float)
    if not 1 <= delta <= pi.size:
        raise ValueError(f"delta must be in 1..{pi.size}, got {delta}")
    order = np.lexsort((np.arange(pi.size), -pi))
    return [int(k) for k in order[:delta]]


def normalized_weights(pi: np.ndarray) -> np.ndarray:
    """``H_k = pi_k / sum_u pi_u``."""
    pi = np.asarray(pi, dtype=float)
    total = pi.sum()
    if not total > 0:
        raise ValueError("total influence is zero; target is degenerate")
    return pi / total


def select_influential(model: FactorModel, ds: RatingDataset, target: int, delta: int, **kw) -> list[int]:
    return greedy_select(MFInfluence(model, ds, **kw).user_influence_all(target), delta)


def user_weights(model: FactorModel, ds: RatingDataset, target: int, **kw) -> np.ndarray:
    return normalized_weights(MFInfluence(model, ds, **kw).user_influence_all(target))


@dataclass
class InfluenceReport:
    target: int
    edge_influence: np.ndarray
    user_influence: np.ndarray
    selected_set: list
    delta: int
    weights: np.ndarray | None = None
    flags: list = field(default_factory=list)

    def set_influence(self, S) -> float:
        return set_influence(self.user_influence, S)

    def to_text(self, ds: RatingDataset) -> str:
        lines = [
            "# influence report",
            f"target {ds.item_ids[self.target]}",
            f"delta {self.delta}",
            "selected " + " ".join(ds.user_ids[k] for k in self.selected_set),
        ]
        if self.flags:
            lines.append("flags " + " ".join(self.flags))
        lines.append("# user influence weight" if self.weights is not None else "# user influence")
        for k in greedy_select(self.user_influence, len(self.user_influence)) if len(self.user_influence) else []:
            row = f"{ds.user_ids[k]} {self.user_influence[k]:.17g}"
            if self.weights is not None:
                row += f" {self.weights[k]:.17g}"
            lines.append(row)
        return "\n".join(lines) + "\n"


def influence_report(model: FactorModel, ds: RatingDataset, target: int, delta: int,
                     weights: bool = False, **kw) -> InfluenceReport:
    engine = MFInfluence(model, ds, **kw)
    phi = engine.edge_influence_all(target)
    pi = np.bincount(ds.users, weights=phi, minlength=ds.n_users)
    H = normalized_weights(pi) if weights else None
    return InfluenceReport(target, phi, pi, greedy_select(pi, delta), delta, H, list(engine.flags))
