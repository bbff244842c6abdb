"""Hit ratio and end-to-end attack experiments.

One experiment cell is (seed, target, knowledge fraction, variant): the
attacker sees a view of the data, builds fake users, they are injected into
the true data, the victim recommender is retrained and the target's hit
ratio among normal users is measured, optionally after a detector has
removed the users it flags.
"""

from __future__ import annotations

import copy
import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import detection, graph
from .attack import AttackPlan, inject, run_attack, run_graph_attack
from .mf import FactorModel, top_n_matrix, train
from .ratings import RatingDataset, ingest, partial_view, synth


def hit_ratio(rec, ds: RatingDataset, target: int, N: int, users=None) -> float:
    """Share of ``users`` (default: all of ``ds``) whose top-N list holds ``target``.

    ``rec`` is a FactorModel or a TransitionMatrix; pass only the normal users
    in ``users`` when ``ds`` contains fake ones.
    """
    if not 0 <= target < ds.n_items:
        raise IndexError(f"target {target} out of range")
    users = np.arange(ds.n_users) if users is None else np.asarray(users, dtype=np.int64)
    if users.size == 0:
        return 0.0
    return float(np.mean(hits(rec, ds, target, N, users)))


def hits(rec, ds, target, N, users) -> np.ndarray:
    if isinstance(rec, FactorModel):
        lists = top_n_matrix(rec.X @ rec.Y.T, ds, N, users)
    elif isinstance(rec, graph.TransitionMatrix):
        lists = graph.top_n_graph_matrix(rec, ds, N, users)
    else:
        raise TypeError("expected a FactorModel or TransitionMatrix")
    return (lists == target).any(axis=1)


# ---------------------------------------------------------------------------
# configuration


DEFAULT_CONFIG = {
    "dataset": {"synth": {"n_users": 500, "n_items": 200, "density": 0.05, "latent_rank": 8}},
    "recommender": "mf",
    "model": {"d": 8, "lam": 0.1, "sweeps": 30, "alpha": 0.3},
    "attack": {"variants": ["S-TNA-Inf"], "size": 0.03, "n": 10, "delta": 50, "eta": 0.01,
               "b": 1.0, "max_iter": 100, "attacker_d": None},
    "N": 10,
    "knowledge": [1.0],
    "detection": False,
    "targets": {"cold": 5},
    "seeds": [0],
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "dataset":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment settings; see DEFAULT_CONFIG for the layout.

    ``dataset`` is ``{"synth": {...}}`` (generated afresh with each seed) or
    ``{"file": path, "r_max": 5}``. ``targets`` is ``{"cold": k}`` for k
    items sampled per seed below the median rating count, or
    ``{"ids": [...]}``.
    """

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_CONFIG))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(_merge(DEFAULT_CONFIG, d)).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def __getitem__(self, key):
        return self.data[key]

    def validate(self) -> "ExperimentConfig":
        d = self.data
        if d["recommender"] not in ("mf", "graph"):
            raise ValueError("recommender must be 'mf' or 'graph'")
        if not 0 <= d["attack"]["size"] < 1:
            raise ValueError("attack size must lie in [0, 1)")
        if d["N"] < 1:
            raise ValueError("N must be at least 1")
        if not d["knowledge"] or any(not 0 < f <= 1 for f in d["knowledge"]):
            raise ValueError("knowledge fractions must lie in (0, 1]")
        if not d["seeds"]:
            raise ValueError("need at least one seed")
        if set(d["dataset"]) not in ({"synth"}, {"file"}, {"file", "r_max"}):
            raise ValueError("dataset must be {'synth': {...}} or {'file': path}")
        if set(d["targets"]) not in ({"cold"}, {"ids"}):
            raise ValueError("targets must be {'cold': k} or {'ids': [...]}")
        for v in d["attack"]["variants"]:
            AttackPlan(variant=v).validate()
        return self

    def dumps(self) -> str:
        return json.dumps(self.data, sort_keys=True)


def load_dataset(cfg: ExperimentConfig, seed: int) -> RatingDataset:
    source = cfg["dataset"]
    if "synth" in source:
        p = source["synth"]
        return synth(seed, p["n_users"], p["n_items"], p["density"], p["latent_rank"],
                     **{k: p[k] for k in ("r_max", "noise", "long_tail", "quality") if k in p})
    return ingest(source["file"], source.get("r_max", 5))


def cold_targets(ds: RatingDataset, k: int, seed: int) -> list[int]:
    """``k`` items drawn (seeded) from rated items with fewer raters than the median.

    Unrated items are left out: nobody can see them, and an attacker whose
    knowledge grows outward from such a target would see nothing at all.
    """
    deg = ds.item_degree()
    rated = deg > 0
    cold = np.flatnonzero(rated & (deg < np.median(deg[rated]))) if rated.any() else np.zeros(0, int)
    if cold.size == 0:
        cold = np.flatnonzero(rated) if rated.any() else np.arange(ds.n_items)
    rng = np.random.default_rng([seed, 11])
    return sorted(int(i) for i in rng.choice(cold, size=min(k, cold.size), replace=False))


def pick_targets(cfg: ExperimentConfig, ds: RatingDataset, seed: int) -> list[int]:
    t = cfg["targets"]
    if "ids" in t:
        return [ds.item_index(str(i)) for i in t["ids"]]
    return cold_targets(ds, int(t["cold"]), seed)


# ---------------------------------------------------------------------------
# report


COLUMNS = ("seed", "target", "variant", "knowledge", "m", "hr_before", "hr_after",
           "fnr", "det_acc", "hr_filtered", "status")


@dataclass
class Cell:
    seed: int
    target: str
    variant: str
    knowledge: float
    m: int
    hr_before: float
    hr_after: float | None = None
    fnr: float | None = None
    det_acc: float | None = None
    hr_filtered: float | None = None
    status: str = "ok"
    loss_traces: list = field(default_factory=list, repr=False)

    def row(self) -> list[str]:
        def f(x):
            return "" if x is None else f"{x:.6f}"
        return [str(self.seed), self.target, self.variant, f"{self.knowledge:g}", str(self.m),
                f(self.hr_before), f(self.hr_after), f(self.fnr), f(self.det_acc), f(self.hr_filtered), self.status]


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: list = field(default_factory=list)
    runtime: float = 0.0

    @property
    def ok(self) -> bool:
        return all(c.status == "ok" for c in self.cells)

    def summary(self) -> list[dict]:
        """Mean of each metric per (variant, knowledge) over successful cells."""
        groups: dict = {}
        for c in self.cells:
            if c.status == "ok":
                groups.setdefault((c.variant, c.knowledge), []).append(c)
        out = []
        for (variant, k), cs in sorted(groups.items()):
            row = {"variant": variant, "knowledge": k, "cells": len(cs)}
            for name in ("hr_before", "hr_after", "fnr", "det_acc", "hr_filtered"):
                vals = [getattr(c, name) for c in cs if getattr(c, name) is not None]
                row[name] = float(np.mean(vals)) if vals else None
            out.append(row)
        return out

    def mean(self, variant: str, metric: str = "hr_after", knowledge: float = 1.0) -> float:
        for row in self.summary():
            if row["variant"] == variant and row["knowledge"] == knowledge:
                return row[metric]
        raise KeyError((variant, knowledge))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for c in self.cells:
            w.writerow(c.row())
        return buf.getvalue()

    def to_text(self) -> str:
        """Human-readable table. Wall-clock time is left out so reruns compare byte for byte."""
        lines = ["# experiment report", "config " + self.config.dumps(), ""]
        widths = [4, 8, 10, 9, 4, 9, 9, 9, 9, 11, 6]
        lines.append("  ".join(h.ljust(w) for h, w in zip(COLUMNS, widths)))
        for c in self.cells:
            lines.append("  ".join(v.ljust(w) for v, w in zip(c.row(), widths)))
        lines += ["", "# mean over successful cells"]
        lines.append("variant     knowledge  cells  hr_before  hr_after   fnr        det_acc    hr_filtered")
        for r in self.summary():
            def f(x):
                return "-" if x is None else f"{x:.6f}"
            lines.append(f"{r['variant']:<11} {r['knowledge']:<10g} {r['cells']:<6d} {f(r['hr_before']):<10} "
                         f"{f(r['hr_after']):<10} {f(r['fnr']):<10} {f(r['det_acc']):<10} {f(r['hr_filtered'])}")
        failed = sum(c.status != "ok" for c in self.cells)
        lines.append("")
        lines.append(f"cells {len(self.cells)} failed {failed}")
        return "\n".join(lines) + "\n"

    def traces_json(self) -> str:
        return json.dumps([{"seed": c.seed, "target": c.target, "variant": c.variant,
                            "knowledge": c.knowledge, "loss_traces": c.loss_traces}
                           for c in self.cells], sort_keys=True)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.to_text(), encoding="utf-8")
        (out / "report.csv").write_text(self.to_csv(), encoding="utf-8")
        (out / "traces.json").write_text(self.traces_json(), encoding="utf-8")


# ---------------------------------------------------------------------------
# experiment


class _Victim:
    """Trains and scores the recommender under test."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.kind = cfg["recommender"]
        self.model_cfg = cfg["model"]
        self.seed = seed

    def fit(self, ds: RatingDataset):
        m = self.model_cfg
        if self.kind == "mf":
            return train(ds, m["d"], m["lam"], m["sweeps"], self.seed)
        return graph.build_transition(ds, m.get("alpha", 0.3))


def _plan(cfg: ExperimentConfig, variant: str, m: int, seed: int) -> AttackPlan:
    a, mc = cfg["attack"], cfg["model"]
    return AttackPlan(variant=variant, m=m, n=a["n"], eta=a["eta"], b=a["b"], delta=a["delta"],
                      N=cfg["N"], d=a.get("attacker_d") or mc["d"], lam=mc["lam"],
                      max_iter=a.get("max_iter", 100), train_sweeps=mc["sweeps"], seed=seed)


def _attack(cfg, view: RatingDataset, target: int, plan: AttackPlan, prefix: str):
    if cfg["recommender"] == "graph":
        return run_graph_attack(view, target, plan, cfg["model"].get("alpha", 0.3), id_prefix=prefix)
    model = None
    if plan.variant in ("S-TNA-Inf", "Weighted", "U-TNA", "S-TNA-Rand"):
        model = train(view, plan.d, plan.lam, plan.train_sweeps, plan.seed)
    return run_attack(view, target, plan, model=model, id_prefix=prefix)


def run_cell(cfg, victim: _Victim, ds: RatingDataset, target: int, variant: str, fraction: float,
             m: int, seed: int, hr_before: float) -> Cell:
    N = cfg["N"]
    normal = np.arange(ds.n_users)
    cell = Cell(seed, ds.item_ids[target], variant, fraction, m, hr_before)
    if m == 0:
        cell.hr_after = hr_before
        return cell
    view = ds if fraction >= 1 else partial_view(ds, target, fraction).dataset()
    plan = _plan(cfg, variant, m, seed)
    res = _attack(cfg, view, target, plan, "fake")
    cell.loss_traces = [[float(x) for x in tr] for tr in res.loss_traces]
    poisoned = inject(ds, res.profiles)
    cell.hr_after = hit_ratio(victim.fit(poisoned), poisoned, target, N, normal)
    if cfg["detection"]:
        # the defender learns from a separate batch of the same attack
        train_plan = _plan(cfg, variant, m, seed + 104729)
        extra = _attack(cfg, view, target, train_plan, "train")
        labeled = inject(ds, extra.profiles)
        fakes = np.arange(ds.n_users, labeled.n_users)
        X, y = detection.training_set(labeled, fakes, normal, seed)
        det = detection.train_detector(X, y, detection.DetectorConfig(seed=seed))
        fake_ids = np.arange(ds.n_users, poisoned.n_users)
        result = detection.evaluate_fnr(det, poisoned, fake_ids, normal)
        cell.fnr = result.fnr
        cell.det_acc = result.balanced_accuracy
        # flagged normal users are removed from the service and count as misses
        kept = np.setdiff1d(normal, result.flagged)
        rec = victim.fit(result.filtered)
        got = hits(rec, result.filtered, target, N, kept) if kept.size else np.zeros(0, bool)
        cell.hr_filtered = float(got.sum() / normal.size)
    return cell


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentReport:
    """Every (seed, target, knowledge, variant) cell; failures are recorded, not raised."""
    import time

    t0 = time.perf_counter()
    report = ExperimentReport(cfg)
    N = cfg["N"]
    for seed in cfg["seeds"]:
        try:
            ds = load_dataset(cfg, seed)
            targets = pick_targets(cfg, ds, seed)
            victim = _Victim(cfg, seed)
            clean = victim.fit(ds)
        except Exception as exc:  # noqa: BLE001 - a broken seed must not stop the run
            report.cells.append(Cell(seed, "-", "-", 0.0, 0, float("nan"),
                                     status=f"failed: {type(exc).__name__}: {exc}"))
            continue
        m = int(round(cfg["attack"]["size"] * ds.n_users))
        for t in targets:
            before = hit_ratio(clean, ds, t, N)
            report.cells.append(Cell(seed, ds.item_ids[t], "none", 1.0, 0, before, before))
            for fraction in cfg["knowledge"]:
                for variant in cfg["attack"]["variants"]:
                    try:
                        cell = run_cell(cfg, victim, ds, t, variant, fraction, m, seed, before)
                    except Exception as exc:  # noqa: BLE001
                        cell = Cell(seed, ds.item_ids[t], variant, fraction, m, before,
                                    status=f"failed: {type(exc).__name__}: {exc}")
                    report.cells.append(cell)
                    if progress:
                        progress(cell)
    report.runtime = time.perf_counter() - t0
    return report
