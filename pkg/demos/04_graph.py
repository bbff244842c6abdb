"""Random walk with restart: scores, influence, and the Taylor shortcut.

Run: python demos/04_graph.py
"""
# %% Walk distribution of one user
import numpy as np

from poisonrec import graph
from poisonrec.ratings import synth

ds = synth(3, 80, 40, 0.1, 3)
T = graph.build_transition(ds, alpha=0.3)
d = graph.stationary(T, 0)
print(f"power iteration: {d.iterations} steps, mass {d.p.sum():.12f}, residual {d.residual:.1e}")

# %% Truncated series for the resolvent
exact = graph.ResolventApprox(T).matrix()
for k in (1, 2, 3, 5):
    approx = graph.ResolventApprox(T, "taylor", k).matrix()
    err = np.abs(approx - exact).sum(axis=0).max() / np.abs(exact).sum(axis=0).max()
    print(f"Taylor order {k}: relative error {err:.4f}")

# %% Users whose ratings steer the most walk mass to the target
t = 5
pi = graph.graph_user_influence_all(T, ds, t)
top = graph.graph_select_influential(T, ds, t, 5)
print("most influential users:", [ds.user_ids[k] for k in top], np.round(pi[top], 6))
