"""Per-user shilling-detection features and a linear max-margin detector.

Features (r_i: the item's mean rating in the dataset examined, NR_i: its
number of ratings):

    RDMA    mean over the user's items of |r_ui - r_i| / NR_i
    WDMA    mean of |r_ui - r_i| / NR_i^2
    WDA     sum of |r_ui - r_i| / NR_i
    TMF     max over items the user rated r_max of the share of that item's
            raters who also gave r_max
    FMTD    |mean of the user's r_max ratings - mean of the rest|, 0 if
            either group is empty
    MeanVar mean of (r_ui - r_i)^2 over the user's items except the
            highest rated one (ties: lowest item id)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ratings import RatingDataset

FEATURES = ("rdma", "wdma", "wda", "tmf", "fmtd", "meanvar")


@dataclass
class UserFeatureVector:
    rdma: float = 0.0
    wdma: float = 0.0
    wda: float = 0.0
    tmf: float = 0.0
    fmtd: float = 0.0
    meanvar: float = 0.0
    flags: tuple = ()

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in FEATURES])


@dataclass
class ItemProfile:
    """Per-item statistics the features are measured against."""

    mean: np.ndarray
    count: np.ndarray
    top_share: np.ndarray

    @classmethod
    def of(cls, ds: RatingDataset, exclude_users=None) -> "ItemProfile":
        """Statistics over every rating in ``ds`` (optionally skipping some users)."""
        keep = np.ones(ds.n_edges, dtype=bool)
        if exclude_users is not None and len(exclude_users):
            keep &= ~np.isin(ds.users, np.asarray(exclude_users))
        items, r = ds.items[keep], ds.ratings[keep]
        cnt = np.bincount(items, minlength=ds.n_items).astype(float)
        tot = np.bincount(items, weights=r, minlength=ds.n_items)
        top = np.bincount(items, weights=(r == ds.r_max), minlength=ds.n_items)
        safe = np.maximum(cnt, 1)
        return cls(np.where(cnt > 0, tot / safe, 0.0), cnt, np.where(cnt > 0, top / safe, 0.0))


def deviation_features(dev: np.ndarray, nr: np.ndarray) -> tuple[float, float, float]:
    """RDMA, WDMA and WDA from absolute deviations and rating counts."""
    dev = np.asarray(dev, dtype=float)
    nr = np.asarray(nr, dtype=float)
    if dev.size == 0:
        return 0.0, 0.0, 0.0
    wda = float(np.sum(dev / nr))
    return wda / dev.size, float(np.mean(dev / nr**2)), wda


def _features(items, ratings, prof: ItemProfile, r_max: int) -> UserFeatureVector:
    if items.size == 0:
        return UserFeatureVector(flags=("no-ratings",))
    nr = np.maximum(prof.count[items], 1.0)
    diff = ratings - prof.mean[items]
    rdma, wdma, wda = deviation_features(np.abs(diff), nr)
    top = ratings == r_max
    tmf = float(prof.top_share[items[top]].max()) if top.any() else 0.0
    fmtd = abs(float(ratings[top].mean()) - float(ratings[~top].mean())) if top.any() and (~top).any() else 0.0
    if items.size > 1:
        drop = np.lexsort((items, -ratings))[0]
        rest = np.delete(diff, drop)
        meanvar = float(np.mean(rest**2))
    else:
        meanvar = 0.0
    return UserFeatureVector(rdma, wdma, wda, tmf, fmtd, meanvar)


def extract_features(ds: RatingDataset, u: int, profile: ItemProfile | None = None) -> UserFeatureVector:
    profile = profile or ItemProfile.of(ds)
    return _features(ds.user_items(u), ds.user_ratings(u).astype(float), profile, ds.r_max)


def feature_matrix(ds: RatingDataset, users=None, profile: ItemProfile | None = None) -> np.ndarray:
    """Users x 6 feature matrix."""
    profile = profile or ItemProfile.of(ds)
    users = range(ds.n_users) if users is None else users
    rows = [_features(ds.user_items(u), ds.user_ratings(u).astype(float), profile, ds.r_max).as_array()
            for u in users]
    return np.array(rows, dtype=float).reshape(-1, len(FEATURES))


def dumps_features(ds: RatingDataset, X: np.ndarray, labels, users=None) -> str:
    users = range(ds.n_users) if users is None else users
    lines = ["# user " + " ".join(FEATURES) + " label"]
    for u, row, y in zip(users, X, labels):
        lines.append(f"{ds.user_ids[u]} " + " ".join(f"{v:.17g}" for v in row) + f" {int(y)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# classifier


@dataclass
class DetectorConfig:
    penalty: float = 1.0
    epochs: int = 500
    lr: float = 0.01
    seed: int = 0


@dataclass
class DetectorModel:
    """Linear rule ``w . f + bias > 0 => fake`` on raw feature values."""

    w: np.ndarray
    bias: float
    config: DetectorConfig = field(default_factory=DetectorConfig)

    def decision(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.w + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        """1 for predicted fake, 0 for normal."""
        return (self.decision(X) > 0).astype(int)

    def dumps(self) -> str:
        c = self.config
        head = f"# detector penalty={c.penalty!r} epochs={c.epochs} lr={c.lr!r} seed={c.seed}"
        return head + "\n" + " ".join(f"{v:.17g}" for v in [*self.w, self.bias]) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DetectorModel":
        head, body = Path(path).read_text(encoding="utf-8").splitlines()[:2]
        kv = dict(tok.split("=") for tok in head.split()[2:])
        cfg = DetectorConfig(float(kv["penalty"]), int(kv["epochs"]), float(kv["lr"]), int(kv["seed"]))
        vals = np.array([float(v) for v in body.split()])
        return cls(vals[:-1], float(vals[-1]), cfg)


def train_detector(X: np.ndarray, y: np.ndarray, config: DetectorConfig | None = None) -> DetectorModel:
    """Hinge loss plus l2 penalty by per-sample subgradient steps.

    Features are standardized with the training mean/std (constant columns
    get std 1). Rows are put in a canonical order first and each epoch visits
    them in a seeded random order, so the result depends only on the set of
    examples and the seed. The step is ``lr / epoch``. The returned weights
    act on raw features.
    """
    cfg = config or DetectorConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ValueError("X must be samples x features with one label per row")
    if np.unique(y).size < 2:
        raise ValueError("training data needs both fake (1) and normal (0) users")
    order = np.lexsort((*X.T[::-1], y))
    X, y = X[order], y[order]
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Z = (X - mu) / sd
    s = np.where(y == 1, 1.0, -1.0)
    n, k = Z.shape
    w = np.zeros(k)
    b = 0.0
    reg = cfg.penalty / n
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    for epoch in range(1, cfg.epochs + 1):
        step = cfg.lr / epoch
        for i in rng.permutation(n):
            margin = s[i] * (Z[i] @ w + b)
            gw = reg * w
            if margin < 1:
                gw = gw - s[i] * Z[i]
                b += step * s[i]
            w -= step * gw
    w_raw = w / sd
    return DetectorModel(w_raw, float(b - w_raw @ mu), cfg)


def training_set(ds: RatingDataset, fake_users, normal_users, seed: int, cap: int = 800,
                 profile: ItemProfile | None = None):
    """Balanced labeled features: ``min(cap, |fakes|, |normals|)`` users per class."""
    rng = np.random.Generator(np.random.PCG64(seed))
    fake_users = np.asarray(fake_users)
    normal_users = np.asarray(normal_users)
    k = min(cap, fake_users.size, normal_users.size)
    fk = np.sort(rng.choice(fake_users, k, replace=False))
    nm = np.sort(rng.choice(normal_users, k, replace=False))
    profile = profile or ItemProfile.of(ds)
    X = np.vstack([feature_matrix(ds, fk, profile), feature_matrix(ds, nm, profile)])
    y = np.concatenate([np.ones(k, int), np.zeros(k, int)])
    return X, y


@dataclass
class DetectionResult:
    fnr: float
    flagged: np.ndarray
    filtered: RatingDataset
    balanced_accuracy: float


def evaluate_fnr(detector: DetectorModel, ds: RatingDataset, fake_users, normal_users=None,
                 profile: ItemProfile | None = None) -> DetectionResult:
    """Apply the detector to every user of ``ds`` and drop whoever it flags.

    FNR is the share of ``fake_users`` predicted normal; balanced accuracy
    averages the hit rate on fakes and the pass rate on normals.
    """
    fake_users = np.asarray(fake_users, dtype=np.int64)
    if fake_users.size == 0:
        raise ValueError("need at least one fake user")
    if normal_users is None:
        normal_users = np.setdiff1d(np.arange(ds.n_users), fake_users)
    normal_users = np.asarray(normal_users, dtype=np.int64)
    pred = detector.predict(feature_matrix(ds, None, profile))
    flagged = np.flatnonzero(pred == 1)
    fnr = float(np.mean(pred[fake_users] == 0))
    tnr = float(np.mean(pred[normal_users] == 0)) if normal_users.size else 1.0
    return DetectionResult(fnr, flagged, ds.without_users(flagged), 0.5 * ((1 - fnr) + tnr))
