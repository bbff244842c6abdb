"""Fake-user rating optimization against an MF top-N recommender.

One fake user at a time: its ratings are relaxed to a continuous vector ``w``
in ``[0, r_max]^|I|``, the model is refit with that user included, and ``w``
descends a WMW-smoothed ranking loss over a chosen user set ``S`` by
projected subgradient steps. The largest entries of ``w`` pick the filler
items; the emitted integer ratings imitate normal users instead of copying
``w``. Each finished fake user joins the data before the next is optimized.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from types import SimpleNamespace

import numpy as np

from . import baselines
from .influence import MFInfluence, greedy_select, normalized_weights
from .mf import (
    FactorModel, TrainingError, _outer_rows, edge_jacobian, gradient, hessian, ridge_rows, top_n_matrix, train,
)
from .ratings import RatingDataset

VARIANTS = ("U-TNA", "S-TNA-Rand", "S-TNA-Inf", "Weighted", "Random", "Average", "PGA-lite")
OPTIMIZED = ("U-TNA", "S-TNA-Rand", "S-TNA-Inf", "Weighted")


def wmw_loss(x, b: float):
    """Wilcoxon-Mann-Whitney surrogate ``1 / (1 + exp(-x/b))``."""
    if b <= 0:
        raise ValueError("width b must be positive")
    z = np.clip(np.asarray(x, dtype=float) / b, -700.0, 700.0)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def wmw_grad(x, b: float):
    g = wmw_loss(x, b)
    return g * (1.0 - g) / b


@dataclass
class AttackPlan:
    variant: str = "S-TNA-Inf"
    m: int = 1
    n: int = 20
    eta: float = 0.01
    b: float = 0.01
    delta: int = 400
    N: int = 10
    d: int = 8
    lam: float = 0.1
    step0: float = 0.1
    max_iter: int = 100
    refresh_every: int = 10
    train_sweeps: int = 30
    refresh_sweeps: int = 5
    max_halvings: int = 30
    influence_mode: str = "schur"
    round_w: bool = False
    seed: int = 0

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.m < 1 or self.n < 0 or self.eta < 0 or self.b <= 0:
            raise ValueError("need m >= 1, n >= 0, eta >= 0, b > 0")
        if self.delta < 1 or self.N < 1 or self.max_iter < 1 or self.refresh_every < 1:
            raise ValueError("delta, N, max_iter and refresh_every must be positive")
        return self


@dataclass
class FakeUserProfile:
    id: str
    target: int
    fillers: tuple
    ratings: dict
    flags: tuple = ()

    def check(self, n: int, r_max: int):
        """Budget and rating-range constraints; raises ValueError on violation."""
        if len(self.ratings) > n + 1 or len(self.fillers) > n:
            raise ValueError(f"{self.id}: rates more than n+1 items")
        if self.ratings.get(self.target) != r_max:
            raise ValueError(f"{self.id}: target not rated r_max")
        for r in self.ratings.values():
            if not (isinstance(r, (int, np.integer)) and 0 <= r <= r_max):
                raise ValueError(f"{self.id}: rating {r!r} outside 0..{r_max}")


# ---------------------------------------------------------------------------
# model with one continuous fake user


class FakeUserModel:
    """Factorization of the current data plus one dense fake-user row ``w``.

    The fake user's factor is ``z``; it "rates" every item with ``w_i``.
    """

    def __init__(self, ds: RatingDataset, d: int, lam: float):
        if lam <= 0:
            raise TrainingError("the fake-user Jacobian needs lambda > 0")
        self.ds, self.d, self.lam = ds, d, lam
        self.R, self.W = ds.matrix(), ds.mask()
        self.Rt, self.Wt = self.R.T.tocsr(), self.W.T.tocsr()
        self.X = None
        self.Y = None
        self.z = None
        self._gram = None
        self._rhs0 = None

    def fit(self, w: np.ndarray, Y: np.ndarray, sweeps: int):
        """Warm-started alternating solves over users, fake user and items."""
        eye = self.lam * np.eye(self.d)
        for _ in range(sweeps):
            X = ridge_rows(self.W, self.R, Y, self.lam)
            z = np.linalg.solve(eye + Y.T @ Y, Y.T @ w)
            self.set_users(X)
            A = self._gram + np.outer(z, z)
            Y = np.linalg.solve(A, (self._rhs0 + w[:, None] * z)[..., None])[..., 0]
        self.Y, self.z = Y, z
        return self.X, Y

    def set_users(self, X: np.ndarray):
        """Freeze user factors; item Gram matrices are cached against them."""
        d = self.d
        self.X = X
        self._gram = (self.Wt @ _outer_rows(X)).reshape(-1, d, d) + self.lam * np.eye(d)
        self._rhs0 = self.Rt @ X

    def respond(self, w: np.ndarray, Y_anchor: np.ndarray) -> "Response":
        """Refit z (items fixed at the anchor), then items (users fixed)."""
        d = self.d
        K = self.lam * np.eye(d) + Y_anchor.T @ Y_anchor
        z = np.linalg.solve(K, Y_anchor.T @ w)
        A = self._gram + np.outer(z, z)
        rhs = np.stack([self._rhs0 + w[:, None] * z, np.broadcast_to(z, self._rhs0.shape)], axis=-1)
        sol = np.linalg.solve(A, rhs)
        return Response(sol[..., 0], z, sol[..., 1], A, K, Y_anchor)


    def joint_params(self) -> np.ndarray:
        """``(vec X, z, vec Y)`` of the current fit."""
        return np.concatenate([self.X.ravel(), self.z, self.Y.ravel()])

    def _augmented(self, w: np.ndarray):
        """Edges of the data plus the fake user's dense row, and the stacked user factors."""
        ds = self.ds
        n_items = ds.n_items
        aug = SimpleNamespace(
            users=np.concatenate([ds.users, np.full(n_items, ds.n_users)]),
            items=np.concatenate([ds.items, np.arange(n_items)]),
            ratings=np.concatenate([ds.ratings.astype(float), w]),
        )
        return aug, np.vstack([self.X, self.z])

    def joint_residual(self, w: np.ndarray) -> float:
        """Infinity norm of half the gradient of the joint objective at the current fit."""
        aug, Xa = self._augmented(w)
        gx, gy, _ = gradient(aug, Xa, self.Y, self.lam)
        return float(max(np.abs(gx).max(), np.abs(gy).max()) / 2)

    def full_jacobian(self, w: np.ndarray) -> np.ndarray:
        """``dtheta/dw`` of the joint optimum, every factor free to move.

        Implicit differentiation of the stationarity conditions of the whole
        objective (users, fake user and items): ``H dtheta/dw = 2 A_v^T`` with
        ``A_v`` the fake user's edge rows. The objective is invariant under a
        common rotation of all factors, so ``H`` is singular along those
        directions; the minimum-norm solution is returned with the rotation
        component removed (compare with :func:`remove_rotation`). Dense, for
        small instances only; ``fit`` must have converged first. Rows follow
        :meth:`joint_params`, columns are items.
        """
        aug, Xa = self._augmented(w)
        H = hessian(aug, Xa, self.Y, self.lam).toarray()
        Av = edge_jacobian(aug, Xa, self.Y)[self.ds.n_edges:].toarray()
        D = np.linalg.lstsq(H, 2 * Av.T, rcond=1e-10)[0]
        return remove_rotation(D, self.joint_params(), self.d)

    def item_block(self, theta: np.ndarray) -> np.ndarray:
        """The ``Y`` part of a :meth:`joint_params`-shaped array, as ``(items, d, ...)``."""
        off = (self.ds.n_users + 1) * self.d
        return theta[off:].reshape(self.ds.n_items, self.d, *theta.shape[1:])


def remove_rotation(V: np.ndarray, theta: np.ndarray, d: int) -> np.ndarray:
    """Project out the infinitesimal rotations ``theta -> theta (I + Omega)``.

    ``theta`` is any stack of d-dimensional factor rows (flattened); ``V`` has
    the same leading length (vector or column block).
    """
    rows = theta.reshape(-1, d)
    gens = []
    for a in range(d):
        for b in range(a + 1, d):
            G = np.zeros((d, d))
            G[a, b], G[b, a] = 1.0, -1.0
            gens.append((rows @ G).ravel())
    if not gens:
        return V
    Q, _ = np.linalg.qr(np.array(gens).T)
    return V - Q @ (Q.T @ V)


@dataclass
class Response:
    """Items and fake-user factor after one ``respond`` call.

    ``J[i] = A_i^-1 z`` is the direct sensitivity ``dy_i/dw_i`` with ``z``
    held fixed; ``A`` and ``K`` are the item and fake-user normal matrices,
    kept so the gradient can also follow ``w -> z -> Y``.
    """

    Y: np.ndarray
    z: np.ndarray
    J: np.ndarray
    A: np.ndarray
    K: np.ndarray
    anchor: np.ndarray


def competitor_lists(X: np.ndarray, Y: np.ndarray, ds: RatingDataset, users, target: int, N: int):
    """Top-N unrated items per user with the target left out (padded by -1)."""
    scores = X @ Y.T
    scores[:, target] = -np.inf
    return top_n_matrix(scores, ds, N, users)


def attack_loss(X, Y, S, gamma, w, target, eta, b, weights=None) -> float:
    """``sum_{u in S} H_u sum_{i in Gamma_u} g(r_ui - r_ut) + eta |w|_1``.

    ``gamma`` holds one competitor row per member of ``S`` (``-1`` padding);
    ``weights`` defaults to 1 for every member.
    """
    S = np.asarray(S, dtype=np.int64)
    reg = eta * float(np.abs(w).sum())
    if S.size == 0:
        return reg
    XS = X[S]
    valid = gamma >= 0
    items = np.where(valid, gamma, 0)
    r_ui = np.einsum("sd,snd->sn", XS, Y[items])
    r_ut = XS @ Y[target]
    terms = np.where(valid, wmw_loss(r_ui - r_ut[:, None], b), 0.0)
    H = np.ones(S.size) if weights is None else np.asarray(weights, dtype=float)
    return float(H @ terms.sum(axis=1)) + reg


def loss_partials(X, Y, S, gamma, target, b, weights=None):
    """Partial derivatives of the ranking part of ``attack_loss``.

    Returns ``(CX, CY)`` with ``CX[u] = dL/dx_u`` (nonzero only on ``S``) and
    ``CY[i] = dL/dy_i``.
    """
    S = np.asarray(S, dtype=np.int64)
    CX, C = np.zeros_like(X), np.zeros_like(Y)
    if S.size == 0:
        return CX, C
    XS = X[S]
    valid = gamma >= 0
    items = np.where(valid, gamma, 0)
    r_ui = np.einsum("sd,snd->sn", XS, Y[items])
    r_ut = XS @ Y[target]
    H = np.ones(S.size) if weights is None else np.asarray(weights, dtype=float)
    gp = np.where(valid, wmw_grad(r_ui - r_ut[:, None], b), 0.0) * H[:, None]
    rows = np.broadcast_to(np.arange(S.size)[:, None], gamma.shape)[valid]
    np.add.at(C, items[valid], gp[valid][:, None] * XS[rows])
    C[target] -= gp.sum(axis=1) @ XS
    np.add.at(CX, S, np.einsum("sn,snd->sd", gp, Y[items] - Y[target]))
    return CX, C


def joint_rating_gradient(fm: "FakeUserModel", w, S, gamma, target, eta, b, weights=None) -> np.ndarray:
    """Gradient of ``attack_loss`` with every factor retrained (dense; small instances).

    A diagnostic reference for :func:`rating_gradient`, which freezes the
    normal users' factors. ``fm`` must be fit to stationarity at ``w``.
    """
    CX, CY = loss_partials(fm.X, fm.Y, S, gamma, target, b, weights)
    dtheta = np.concatenate([CX.ravel(), np.zeros(fm.d), CY.ravel()])
    return eta * np.sign(w) + fm.full_jacobian(w).T @ dtheta


def rating_gradient(X, resp: Response, S, gamma, w, target, eta, b, weights=None,
                    through_z: bool = True) -> np.ndarray:
    """Subgradient of ``attack_loss`` w.r.t. ``w``.

    User factors are held fixed. The direct term lets item ``i`` depend on
    ``w_i`` alone via ``J[i] = (lam I + sum x x^T + z z^T)^-1 z``. With
    ``through_z`` the change of the fake user's own factor is chained in as
    well: ``dz/dw = K^-1 Y_anchor^T`` moves every item, and for a barely rated
    target this indirect path is usually the larger one. The l1 subgradient
    at 0 is taken as 0.
    """
    S = np.asarray(S, dtype=np.int64)
    grad = eta * np.sign(w)
    if S.size == 0:
        return grad
    Y, J, z = resp.Y, resp.J, resp.z
    _, C = loss_partials(X, Y, S, gamma, target, b, weights)
    direct = np.einsum("id,id->i", C, J)
    grad += direct
    if through_z:
        touched = np.flatnonzero(np.any(C != 0, axis=1))
        a = np.linalg.solve(resp.A[touched], C[touched][..., None])[..., 0]
        coef = w[touched] - Y[touched] @ z
        h = coef @ a - direct[touched] @ Y[touched]
        grad += resp.anchor @ np.linalg.solve(resp.K, h)
    return grad


@dataclass
class OptimizeResult:
    w: np.ndarray
    loss_trace: list
    epochs: list
    converged: bool
    iterations: int
    Y: np.ndarray | None = None


def optimize_fake_user(ds: RatingDataset, target: int, plan: AttackPlan, S, weights=None,
                       init: tuple[np.ndarray, np.ndarray] | None = None) -> OptimizeResult:
    """Projected subgradient descent on one fake user's continuous ratings.

    Within an epoch the user factors and competitor lists are frozen and each
    candidate ``w`` is scored after refitting the fake user and the items, so
    backtracking (halving from ``plan.step0``) keeps the loss non-increasing.
    Every ``plan.refresh_every`` iterations the whole model is refit and the
    competitor lists recomputed, which starts a new epoch.
    """
    r_max = ds.r_max
    S = np.asarray(S, dtype=np.int64)
    w = np.zeros(ds.n_items)
    w[target] = r_max
    if init is None:
        base = train(ds, plan.d, plan.lam, plan.train_sweeps, plan.seed, polish_tol=None)
        init = (base.X, base.Y)
    fm = FakeUserModel(ds, plan.d, plan.lam)
    fm.fit(w, init[1], plan.refresh_sweeps)
    weights = None if weights is None else np.asarray(weights, dtype=float)

    def new_epoch():
        gamma = competitor_lists(fm.X, fm.Y, ds, S, target, plan.N) if S.size else np.zeros((0, plan.N), int)
        return fm.Y.copy(), gamma

    def evaluate(w_):
        r = fm.respond(w_, anchor)
        return attack_loss(fm.X, r.Y, S, gamma, w_, target, plan.eta, plan.b, weights), r

    anchor, gamma = new_epoch()
    loss, resp = evaluate(w)
    trace, epochs = [loss], [0]
    converged = False
    it = 0
    for it in range(1, plan.max_iter + 1):
        if it > 1 and (it - 1) % plan.refresh_every == 0:
            fm.fit(w, fm.Y, plan.refresh_sweeps)
            anchor, gamma = new_epoch()
            loss, resp = evaluate(w)
            trace.append(loss)
            epochs.append(len(trace) - 1)
        G = rating_gradient(fm.X, resp, S, gamma, w, target, plan.eta, plan.b, weights)
        step = plan.step0
        accepted = False
        for _ in range(plan.max_halvings):
            w_new = np.clip(w - step * G, 0.0, r_max)
            w_new[target] = r_max
            if np.array_equal(w_new, w):
                break
            loss_new, resp_new = evaluate(w_new)
            if loss_new <= loss:
                accepted = True
                break
            step /= 2
        if not accepted:
            converged = True
            break
        w, loss, resp = w_new, loss_new, resp_new
        trace.append(loss)
    return OptimizeResult(w, trace, epochs, converged, it, fm.Y)


# ---------------------------------------------------------------------------
# disguised integer profiles


@dataclass
class ItemStats:
    mean: np.ndarray
    std: np.ndarray
    rated: np.ndarray
    global_mean: float
    global_std: float

    @classmethod
    def of(cls, ds: RatingDataset, users=None) -> "ItemStats":
        """Per-item rating mean/std over ``users`` (default: everyone in ``ds``)."""
        if users is not None:
            ds = ds.subset(np.flatnonzero(np.isin(ds.users, np.asarray(list(users)))))
        r = ds.ratings.astype(float)
        cnt = np.bincount(ds.items, minlength=ds.n_items)
        s1 = np.bincount(ds.items, weights=r, minlength=ds.n_items)
        s2 = np.bincount(ds.items, weights=r * r, minlength=ds.n_items)
        safe = np.maximum(cnt, 1)
        mean = s1 / safe
        var = np.maximum(s2 / safe - mean**2, 0.0)
        gm = float(r.mean()) if r.size else ds.r_max / 2
        gs = float(r.std()) if r.size else 1.0
        return cls(mean, np.sqrt(var), cnt > 0, gm, gs)


def materialize_fake_user(w: np.ndarray, stats: ItemStats, target: int, n: int, r_max: int,
                          seed, user_id: str = "fake0", round_w: bool = False) -> FakeUserProfile:
    """Integer profile from optimized ``w``: target at r_max plus ``n`` fillers.

    Fillers are the ``n`` largest non-target entries of ``w`` (ties to the
    lower item id). Each filler rating is drawn from N(mean_i, std_i^2) of the
    item's normal ratings, rounded and clipped; items nobody rated use the
    global mean/std and flag the profile.
    """
    w = np.asarray(w, dtype=float)
    cand = np.flatnonzero(np.arange(w.size) != target)
    order = np.lexsort((cand, -w[cand]))
    fillers = tuple(int(i) for i in cand[order[:n]])
    rng = np.random.default_rng(seed)
    ratings = {int(target): int(r_max)}
    flags = []
    for i in fillers:
        if round_w:
            r = w[i]
        elif stats.rated[i]:
            r = rng.normal(stats.mean[i], stats.std[i])
        else:
            r = rng.normal(stats.global_mean, stats.global_std)
            flags.append(f"unrated-filler:{i}")
        ratings[i] = int(np.clip(np.rint(r), 0, r_max))
    return FakeUserProfile(user_id, int(target), fillers, ratings, tuple(flags))


def inject(ds: RatingDataset, profiles) -> RatingDataset:
    return ds.with_users([p.ratings for p in profiles], [p.id for p in profiles])


# ---------------------------------------------------------------------------
# full attack


@dataclass
class AttackResult:
    profiles: list
    plan: AttackPlan
    target: int
    selected: list = field(default_factory=list)
    loss_traces: list = field(default_factory=list)
    flags: list = field(default_factory=list)


def choose_users(ds: RatingDataset, target: int, plan: AttackPlan, model: FactorModel | None = None):
    """User set and optional weights for the optimized variants.

    Only users with at least one rating in ``ds`` (the attacker's view) are
    candidates; the others are invisible to the attacker.
    """
    known = np.flatnonzero(ds.user_degree() > 0)
    if plan.variant == "U-TNA":
        return known, None, []
    if plan.variant == "S-TNA-Rand":
        rng = np.random.default_rng([plan.seed, 1])
        k = min(plan.delta, known.size)
        return np.sort(rng.choice(known, size=k, replace=False)), None, []
    if model is None:
        model = train(ds, plan.d, plan.lam, plan.train_sweeps, plan.seed)
    engine = MFInfluence(model, ds, mode=plan.influence_mode)
    pi = engine.user_influence_all(target)
    return _by_influence(pi, known, plan) + (engine.flags,)


def _by_influence(pi: np.ndarray, known: np.ndarray, plan: AttackPlan):
    if plan.variant == "S-TNA-Inf":
        pick = greedy_select(pi[known], min(plan.delta, known.size))
        return known[pick], None
    return known, normalized_weights(pi[known])


def run_attack(ds: RatingDataset, target: int, plan: AttackPlan, model: FactorModel | None = None,
               id_prefix: str = "fake") -> AttackResult:
    """Generate ``plan.m`` fake users one after another.

    ``ds`` is the attacker's (clean) view; every user in it counts as normal.
    """
    plan.validate()
    width = len(str(max(plan.m - 1, 0)))
    ids = [f"{id_prefix}{v:0{width}d}" for v in range(plan.m)]
    if plan.variant not in OPTIMIZED:
        maker = {"Random": baselines.random_attack, "Average": baselines.average_attack,
                 "PGA-lite": baselines.pga_lite}[plan.variant]
        profiles = maker(ds, target, plan.m, plan.n, plan.seed, ids)
        return AttackResult(profiles, plan, target, flags=["simplified-baseline"])

    if model is None:
        model = train(ds, plan.d, plan.lam, plan.train_sweeps, plan.seed)
    S, weights, flags = choose_users(ds, target, plan, model)
    stats = ItemStats.of(ds)
    current = ds
    init = (model.X, model.Y)
    profiles, traces = [], []
    for v in range(plan.m):
        res = optimize_fake_user(current, target, plan, S, weights, init)
        traces.append(res.loss_trace)
        prof = materialize_fake_user(res.w, stats, target, plan.n, ds.r_max, [plan.seed, 2, v],
                                     ids[v], plan.round_w)
        profiles.append(prof)
        current = inject(current, [prof])
        # the next fit recomputes user factors from items, so only Y carries over
        init = (None, res.Y)
    return AttackResult(profiles, plan, target, [int(k) for k in S], traces, list(flags))


def run_graph_attack(ds: RatingDataset, target: int, plan: AttackPlan, alpha: float = 0.3,
                     resolvent_mode: str = "exact", taylor_T: int = 3,
                     id_prefix: str = "fake") -> AttackResult:
    """Fake users against the random-walk recommender.

    The user set comes from graph influence (S-TNA-Inf), random sampling
    (S-TNA-Rand), everyone (U-TNA) or everyone weighted by normalized graph
    influence (Weighted). Each fake user rates the target at r_max and takes
    as fillers the ``n`` items holding the most walk probability from that
    set, recomputed after every injection; filler ratings get the same
    disguise as the MF attack. Baseline variants are shared with MF.
    """
    from . import graph

    plan.validate()
    width = len(str(max(plan.m - 1, 0)))
    ids = [f"{id_prefix}{v:0{width}d}" for v in range(plan.m)]
    if plan.variant not in OPTIMIZED:
        return run_attack(ds, target, plan, id_prefix=id_prefix)
    trans = graph.build_transition(ds, alpha)
    weights = None
    if plan.variant in ("U-TNA", "S-TNA-Rand"):
        S, _, _ = choose_users(ds, target, plan)
    else:
        res = graph.ResolventApprox(trans, resolvent_mode, taylor_T)
        pi = graph.graph_user_influence_all(trans, ds, target, res)
        S, weights = _by_influence(pi, np.flatnonzero(ds.user_degree() > 0), plan)
    stats = ItemStats.of(ds)
    current = ds
    profiles = []
    for v in range(plan.m):
        P = graph.stationary_all(graph.build_transition(current, alpha), S)[:, current.n_users:]
        mass = (P if weights is None else P * weights[:, None]).sum(axis=0)
        prof = materialize_fake_user(mass, stats, target, plan.n, ds.r_max, [plan.seed, 2, v], ids[v])
        profiles.append(prof)
        current = inject(current, [prof])
    return AttackResult(profiles, plan, target, [int(k) for k in S], [], list(trans.flags))


# ---------------------------------------------------------------------------
# output formats


def dumps_profiles(profiles, ds: RatingDataset) -> str:
    lines = []
    for p in profiles:
        for i in sorted(p.ratings):
            lines.append(f"{p.id} {ds.item_ids[i]} {p.ratings[i]}")
    return "\n".join(lines) + ("\n" if lines else "")


def load_profiles(path, ds: RatingDataset, target: int | None = None) -> list:
    """Parse a profile file (``fake_id item_id rating`` lines) against ``ds``'s items."""
    rows: dict[str, dict] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 3 fields")
            rows.setdefault(parts[0], {})[ds.item_index(parts[1])] = int(parts[2])
    out = []
    for uid, ratings in rows.items():
        t = target
        if t is None:
            top = [i for i, r in ratings.items() if r == ds.r_max]
            t = min(top) if top else -1
        out.append(FakeUserProfile(uid, t, tuple(sorted(i for i in ratings if i != t)), ratings))
    return out


def manifest(result: AttackResult, ds: RatingDataset) -> str:
    data = {
        "variant": result.plan.variant,
        "target": ds.item_ids[result.target],
        "parameters": asdict(result.plan),
        "selected": [ds.user_ids[k] for k in result.selected],
        "flags": result.flags + [f for p in result.profiles for f in p.flags],
        "loss_traces": result.loss_traces,
    }
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
