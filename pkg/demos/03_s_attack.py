"""Promote a cold item with optimized fake users.

Run: python demos/03_s_attack.py   (about a minute)
"""
# %% Pick a cold target and measure its hit ratio
import numpy as np

from poisonrec import mf
from poisonrec.attack import AttackPlan, inject, run_attack
from poisonrec.evaluation import cold_targets, hit_ratio
from poisonrec.ratings import synth

ds = synth(0, 500, 200, 0.05, 8)
t = cold_targets(ds, 1, seed=0)[0]
clean = mf.train(ds, 8, 0.1, 30, 0)
normal = np.arange(ds.n_users)
print(f"target {ds.item_ids[t]} rated by {ds.item_degree()[t]} users; "
      f"HR@10 = {hit_ratio(clean, ds, t, 10):.4f}")

# %% 3% fake users, 10 fillers each, for several strategies
for variant in ("Random", "S-TNA-Rand", "S-TNA-Inf"):
    plan = AttackPlan(variant=variant, m=15, n=10, b=1.0, delta=50, d=8)
    res = run_attack(ds, t, plan, model=clean)
    poisoned = inject(ds, res.profiles)
    hr = hit_ratio(mf.train(poisoned, 8, 0.1, 30, 0), poisoned, t, 10, normal)
    print(f"{variant:<11} HR@10 = {hr:.4f}")

# %% A fake user looks like this
p = res.profiles[0]
print(p.id, {ds.item_ids[i]: r for i, r in sorted(p.ratings.items())})
