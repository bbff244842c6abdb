"""Can a profile-statistics detector spot the fake users?

Run: python demos/05_detection.py   (about a minute)
"""
# %% Train on one batch of each attack, test on another
import numpy as np

from poisonrec import mf
from poisonrec.attack import AttackPlan, inject, run_attack
from poisonrec.detection import DetectorConfig, evaluate_fnr, train_detector, training_set
from poisonrec.evaluation import cold_targets
from poisonrec.ratings import synth

ds = synth(1, 500, 200, 0.05, 8)
t = cold_targets(ds, 1, seed=1)[0]
clean = mf.train(ds, 8, 0.1, 30, 1)
normal = np.arange(ds.n_users)

for variant in ("Random", "Average", "PGA-lite", "S-TNA-Inf"):
    batches = []
    for seed in (1, 2):
        plan = AttackPlan(variant=variant, m=15, n=10, b=1.0, delta=50, seed=seed)
        batches.append(inject(ds, run_attack(ds, t, plan, model=clean).profiles))
    fakes = np.arange(ds.n_users, batches[0].n_users)
    X, y = training_set(batches[0], fakes, normal, seed=0)
    det = train_detector(X, y, DetectorConfig(seed=0))
    res = evaluate_fnr(det, batches[1], fakes, normal)
    print(f"{variant:<10} FNR {res.fnr:.3f}  balanced accuracy {res.balanced_accuracy:.3f}  "
          f"flagged {res.flagged.size}")
