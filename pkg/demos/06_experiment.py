"""A small experiment grid, the same machinery as ``poisonrec experiment``.

Run: python demos/06_experiment.py   (a few minutes)
"""
# %%
from poisonrec.evaluation import ExperimentConfig, run_experiment

cfg = ExperimentConfig.from_dict({
    "seeds": [0, 1],
    "targets": {"cold": 2},
    "knowledge": [0.5, 1.0],
    "attack": {"variants": ["Random", "S-TNA-Inf"]},
})
report = run_experiment(cfg, progress=lambda c: print(c.seed, c.target, c.variant, c.knowledge, c.hr_after))
print(report.to_text())
