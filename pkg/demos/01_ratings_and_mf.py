"""Ratings data and the matrix-factorization recommender.

Run: python demos/01_ratings_and_mf.py
"""
# %% A synthetic rating matrix with a long popularity tail
import numpy as np

from poisonrec import mf
from poisonrec.ratings import partial_view, synth

ds = synth(seed=0, n_users=500, n_items=200, density=0.05, latent_rank=8)
deg = np.sort(ds.item_degree())[::-1]
print(f"{ds.n_users} users, {ds.n_items} items, {ds.n_edges} ratings")
print("ratings held by the 20 most popular items:", deg[:20].sum(), "of", deg.sum())

# %% Fit the recommender; on small problems training ends at a stationary point
small = synth(7, 30, 20, 0.4, 3, long_tail=False)
model = mf.train(small, d=3, lam=0.1, sweeps=100, seed=0)
print("stationarity residuals (users, items): %.2e %.2e" % mf.stationarity_residuals(model, small))

# %% Top-N lists never contain items the user already rated
big = mf.train(ds, d=8, lam=0.1, sweeps=30, seed=0)
lst = mf.top_n(big, ds, 0, 10)
print("user", ds.user_ids[0], "top-10:", [ds.item_ids[i] for i in lst.items])
assert not set(lst.items) & set(ds.user_items(0))

# %% What an attacker with partial knowledge sees
t = int(np.argmax(ds.item_degree()))
for f in (0.25, 0.5, 1.0):
    v = partial_view(ds, t, f)
    print(f"fraction {f:4}: {v.visible_edges.size} visible ratings")
