import json
import subprocess
import sys

import pytest

from poisonrec.cli import main


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--seed", "1", "--users", "60", "--items", "30", "--density", "0.15",
                 "--rank", "3", "--out", str(d / "r.txt")]) == 0
    return d


class TestPipeline:
    """Each subcommand on a small synthetic file, chained the way a user would."""

    def test_ingest(self, data, capsys):
        assert main(["ingest", str(data / "r.txt")]) == 0
        assert capsys.readouterr().out.startswith("users 60 items")

    def test_train_and_evaluate(self, data, capsys):
        assert main(["train", str(data / "r.txt"), "--d", "3", "--out", str(data / "m.txt")]) == 0
        assert "residual_x" in capsys.readouterr().out
        assert main(["evaluate", str(data / "r.txt"), "--target", "i03", "--model", str(data / "m.txt"),
                     "--d", "3"]) == 0
        assert capsys.readouterr().out.startswith("HR@10 ")

    @pytest.mark.parametrize("extra", [[], ["--graph", "--weights"]])
    def test_influence(self, data, extra):
        out = data / "inf.txt"
        assert main(["influence", str(data / "r.txt"), "--target", "i03", "--delta", "5", "--d", "3",
                     "--out", str(out), *extra]) == 0
        lines = out.read_text().splitlines()
        assert lines[1] == "target i03" and len(lines[3].split()) == 6

    def test_attack_inject_detect(self, data, capsys):
        r = str(data / "r.txt")
        assert main(["attack", r, "--target", "i03", "--m", "3", "--n", "4", "--d", "3", "--delta", "10",
                     "--max-iter", "5", "--out", str(data / "p.txt"), "--manifest", str(data / "man.json")]) == 0
        assert len(json.loads((data / "man.json").read_text())["loss_traces"]) == 3
        assert main(["inject", r, str(data / "p.txt"), "--out", str(data / "poisoned.txt")]) == 0
        assert main(["attack", r, "--target", "i03", "--variant", "Random", "--m", "6", "--n", "4",
                     "--prefix", "fake", "--out", str(data / "rp.txt")]) == 0
        assert main(["inject", r, str(data / "rp.txt"), "--out", str(data / "train.txt")]) == 0
        capsys.readouterr()
        assert main(["detect", str(data / "poisoned.txt"), "--train", str(data / "train.txt"),
                     "--save-detector", str(data / "det.txt"), "--out", str(data / "clean.txt"),
                     "--features", str(data / "f.txt")]) == 0
        assert capsys.readouterr().out.startswith("fnr ")
        assert (data / "det.txt").exists() and (data / "clean.txt").exists()

    def test_graph_attack(self, data):
        assert main(["attack", str(data / "r.txt"), "--target", "i03", "--m", "2", "--n", "3",
                     "--recommender", "graph", "--out", str(data / "g.txt")]) == 0
        assert len((data / "g.txt").read_text().splitlines()) == 8

    def test_experiment(self, tmp_path):
        cfg = {"dataset": {"synth": {"n_users": 50, "n_items": 25, "density": 0.15, "latent_rank": 3}},
               "model": {"d": 3, "sweeps": 10}, "attack": {"n": 3, "delta": 8, "max_iter": 3},
               "targets": {"cold": 1}}
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        assert main(["experiment", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "o"),
                     "--variants", "S-TNA-Inf,Random", "--quiet"]) == 0
        assert (tmp_path / "o" / "report.csv").exists()


class TestErrors:
    def test_missing_file(self, tmp_path, capsys):
        assert main(["ingest", str(tmp_path / "nope.txt")]) == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_unknown_target(self, data):
        assert main(["evaluate", str(data / "r.txt"), "--target", "no-such-item", "--d", "2"]) == 2

    def test_module_entry_point(self):
        out = subprocess.run([sys.executable, "-m", "poisonrec", "--help"], capture_output=True, text=True)
        assert out.returncode == 0 and "experiment" in out.stdout
