import json

import numpy as np
import pytest

from poisonrec import graph, mf
from poisonrec.attack import AttackPlan, run_attack
from poisonrec.evaluation import (
    Cell, ExperimentConfig, ExperimentReport, cold_targets, hit_ratio, run_cell, run_experiment, _Victim,
)
from poisonrec.ratings import RatingDataset, partial_view, synth

TINY = {
    "dataset": {"synth": {"n_users": 60, "n_items": 30, "density": 0.15, "latent_rank": 3}},
    "model": {"d": 3, "sweeps": 10},
    "attack": {"size": 0.05, "n": 4, "delta": 10, "max_iter": 5},
    "targets": {"cold": 2},
    "seeds": [0],
}


class TestHitRatio:
    def test_target_everywhere(self):
        ds = RatingDataset(3, 3, [0, 1, 2], [1, 2, 1], [5, 5, 5])
        model = mf.FactorModel(np.ones((3, 1)), np.array([[9.0], [1.0], [1.0]]), 0.1, 1)
        assert hit_ratio(model, ds, 0, 1) == 1.0

    def test_target_rated_by_all(self):
        ds = RatingDataset(2, 2, [0, 1], [0, 0], [5, 5])
        model = mf.FactorModel(np.ones((2, 1)), np.array([[9.0], [1.0]]), 0.1, 1)
        assert hit_ratio(model, ds, 0, 1) == 0.0

    def test_recount(self):
        ds = synth(1, 40, 20, 0.2, 3)
        model = mf.train(ds, 3, 0.1, 20, 0)
        S = model.scores()
        for t in (0, 5, 13):
            count = 0
            for u in range(ds.n_users):
                rated = set(ds.user_items(u).tolist())
                ranked = sorted((i for i in range(20) if i not in rated), key=lambda i: (-S[u, i], i))
                count += t in ranked[:3]
            assert hit_ratio(model, ds, t, 3) == count / 40

    def test_only_given_users_count(self):
        ds = RatingDataset(2, 2, [1], [0], [5])
        model = mf.FactorModel(np.ones((2, 1)), np.array([[9.0], [1.0]]), 0.1, 1)
        assert hit_ratio(model, ds, 0, 1, users=[0]) == 1.0
        assert hit_ratio(model, ds, 0, 1, users=[]) == 0.0

    def test_graph_recommender(self):
        ds = synth(2, 30, 15, 0.2, 2)
        T = graph.build_transition(ds)
        L = graph.top_n_graph_matrix(T, ds, 4)
        assert hit_ratio(T, ds, 3, 4) == np.mean((L == 3).any(axis=1))

    def test_bad_target(self):
        ds = RatingDataset(1, 1, [0], [0], [5])
        with pytest.raises(IndexError):
            hit_ratio(mf.FactorModel(np.ones((1, 1)), np.ones((1, 1)), 0.1, 1), ds, 3, 1)


class TestConfig:
    def test_defaults_fill_in(self):
        cfg = ExperimentConfig.from_dict({"N": 5})
        assert cfg["N"] == 5 and cfg["attack"]["n"] == 10

    @pytest.mark.parametrize("bad", [
        {"N": 0}, {"attack": {"size": 1.5}}, {"knowledge": [0.0]}, {"recommender": "knn"},
        {"attack": {"variants": ["SGLD"]}}, {"seeds": []}, {"targets": {"hot": 3}},
    ])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict(bad)

    def test_load(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(TINY))
        assert ExperimentConfig.load(p)["attack"]["delta"] == 10

    def test_cold_targets_are_rated_and_below_median(self):
        ds = synth(0, 200, 80, 0.05, 4)
        deg = ds.item_degree()
        ts = cold_targets(ds, 5, 0)
        med = np.median(deg[deg > 0])
        assert len(ts) == 5 and all(0 < deg[t] < med for t in ts)
        assert ts == cold_targets(ds, 5, 0)


class TestExperiment:
    def test_zero_attack_size(self):
        rep = run_experiment(ExperimentConfig.from_dict({**TINY, "attack": {**TINY["attack"], "size": 0.0}}))
        assert rep.ok
        for c in rep.cells:
            assert c.hr_after == c.hr_before

    def test_full_knowledge_equals_plain_path(self):
        ds = synth(3, 60, 30, 0.15, 3)
        t = 4
        plan = AttackPlan(variant="S-TNA-Inf", m=2, n=3, b=1.0, d=3, delta=8, max_iter=5)
        a = run_attack(partial_view(ds, t, 1.0).dataset(), t, plan)
        b = run_attack(ds, t, plan)
        assert [p.ratings for p in a.profiles] == [p.ratings for p in b.profiles]

    def test_hidden_edges_do_not_leak(self):
        """Changing ratings the attacker cannot see leaves its fake users unchanged."""
        ds = synth(3, 60, 30, 0.15, 3)
        t = int(np.argsort(ds.item_degree(), kind="stable")[-1])
        view = partial_view(ds, t, 0.3)
        hidden = np.setdiff1d(np.arange(ds.n_edges), view.visible_edges)
        assert hidden.size
        r = ds.ratings.copy()
        r[hidden] = ds.r_max - r[hidden]
        canary = RatingDataset(ds.n_users, ds.n_items, ds.users, ds.items, r, ds.r_max)
        view2 = partial_view(canary, t, 0.3)
        assert np.array_equal(view.visible_edges, view2.visible_edges)
        plan = AttackPlan(variant="S-TNA-Inf", m=2, n=3, b=1.0, d=3, delta=8, max_iter=5)
        a = run_attack(view.dataset(), t, plan)
        b = run_attack(view2.dataset(), t, plan)
        assert [p.ratings for p in a.profiles] == [p.ratings for p in b.profiles]

    def test_failed_cell_is_recorded(self, monkeypatch):
        from poisonrec import evaluation

        def boom(*args, **kw):
            raise RuntimeError("solver exploded")

        monkeypatch.setattr(evaluation, "_attack", boom)
        rep = run_experiment(ExperimentConfig.from_dict(TINY))
        failed = [c for c in rep.cells if c.status != "ok"]
        assert len(failed) == 2 and "solver exploded" in failed[0].status
        assert not rep.ok and "failed 2" in rep.to_text()

    def test_detection_cell(self):
        cfg = ExperimentConfig.from_dict({**TINY, "detection": True,
                                          "attack": {**TINY["attack"], "variants": ["Random"]}})
        ds = synth(0, 60, 30, 0.15, 3)
        victim = _Victim(cfg, 0)
        cell = run_cell(cfg, victim, ds, 2, "Random", 1.0, 3, 0, 0.0)
        assert cell.status == "ok" and 0 <= cell.fnr <= 1 and 0 <= cell.hr_filtered <= 1

    def test_report_outputs(self, tmp_path):
        cfg = ExperimentConfig.from_dict({**TINY, "attack": {**TINY["attack"], "variants": ["S-TNA-Inf", "Random"]}})
        rep = run_experiment(cfg)
        rep.write(tmp_path)
        text = (tmp_path / "report.txt").read_text()
        assert text.startswith("# experiment report\nconfig {")
        rows = (tmp_path / "report.csv").read_text().splitlines()
        assert rows[0].startswith("seed,target,variant") and len(rows) == 1 + len(rep.cells)
        traces = json.loads((tmp_path / "traces.json").read_text())
        assert any(t["loss_traces"] for t in traces if t["variant"] == "S-TNA-Inf")
        per_target = [c.hr_after for c in rep.cells if c.variant == "Random"]
        assert rep.mean("Random") == pytest.approx(np.mean(per_target))


class TestReport:
    def test_summary_skips_failures(self):
        cfg = ExperimentConfig.from_dict({})
        rep = ExperimentReport(cfg, [Cell(0, "i1", "Random", 1.0, 3, 0.0, 0.2),
                                     Cell(1, "i2", "Random", 1.0, 3, 0.0, 0.4),
                                     Cell(2, "i3", "Random", 1.0, 3, 0.0, status="failed: x")])
        assert rep.mean("Random") == pytest.approx(0.3)
        with pytest.raises(KeyError):
            rep.mean("U-TNA")
