"""Which training ratings matter most for one item's predictions?

Run: python demos/02_influence.py
"""
# %% Influence of every rating edge on a target item
import numpy as np
from scipy.stats import spearmanr

from poisonrec import mf
from poisonrec.influence import MFInfluence, influence_report
from poisonrec.ratings import synth

ds = synth(7, 30, 20, 0.4, 3, long_tail=False)
model = mf.train(ds, 3, 0.1, 100, 0)
t = 0
eng = MFInfluence(model, ds, mode="dense")
phi = eng.edge_influence_all(t)

# %% Compare with what actually happens when each edge is removed and the model retrained
base = model.scores()[:, t]
truth = []
for e in range(ds.n_edges):
    keep = np.delete(np.arange(ds.n_edges), e)
    m2 = mf.train(ds.subset(keep), 3, 0.1, 20, 0, init=(model.X, model.Y))
    truth.append(np.abs(m2.scores()[:, t] - base).sum())
print("Spearman(influence, retraining) = %.3f over %d edges" % (spearmanr(phi, truth).statistic, ds.n_edges))

# %% The conjugate-gradient solver agrees with the dense solve
cg = MFInfluence(model, ds, mode="cg").edge_influence_all(t)
print("max relative CG error: %.1e" % (np.abs(cg - phi).max() / np.abs(phi).max()))

# %% User influence and the selected set
rep = influence_report(model, ds, t, delta=5, weights=True)
print(rep.to_text(ds)[:400])
