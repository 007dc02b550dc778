"""Warm up a network offline, then keep learning online as labels resolve.

Warmup trains the MLP with Adam and keeps a low-dimensional subspace of
the hidden weights spanned by late iterates. Deployment then updates a
Gaussian over the last layer and the subspace coordinates, one trade at a
time, only once each trade's label is known.
"""

# %%
import numpy as np

from toxicflow.baselines import fit_logreg
from toxicflow.evaluation import auc
from toxicflow.features import Standardizer, featurize, global_ts
from toxicflow.labeler import label_tape
from toxicflow.market_data import US_PER_SECOND, generate_tapes, preset
from toxicflow.pulse import AsyncEngine, MleLearner, PulseFilter, PulseLearner
from toxicflow.warmup import WarmupConfig, init_priors, run_warmup

G = 30 * US_PER_SECOND
tapes = generate_tapes(preset("default", session_len=2 * 3600 * US_PER_SECOND, n_days=3, seed=1))
labels = [label_tape(t, G) for t in tapes]
fm = featurize(tapes, labels)
y = np.concatenate([l.y for l in labels]).astype(int)
warm = fm.day_id < 2
print(f"warmup trades {warm.sum()}, deploy trades {(~warm).sum()}")

# %% one model stack per side: whether a buy is toxic depends on the drift's sign
cfg = WarmupConfig(epochs=30, skip=15, thin=1, dim=10, lr=3e-5,
                   prior_var_w=1e-3, prior_var_z=1e-3)
scores = {k: np.empty((~warm).sum()) for k in ("online", "frozen net", "logreg", "mle")}
for side in (1, -1):
    w_rows = warm & (fm.side == side)
    d_rows = ~warm & (fm.side == side)
    st = Standardizer.fit(fm.values[w_rows])
    Xw, Xd = st.transform(fm.values[w_rows]), st.transform(fm.values[d_rows])
    res = run_warmup(Xw, y[w_rows], cfg, st)
    print(f"side {side:+d}: warmup loss", np.round(res.loss_history[::10], 4))

    # deploy: each label becomes usable G after its trade
    ts = global_ts(fm.day_id[d_rows], fm.ts[d_rows])
    yd = y[d_rows]
    filt = PulseFilter(res.model, init_priors(res.model))
    online = AsyncEngine(PulseLearner(filt), G)
    mle = AsyncEngine(MleLearner(), G)
    out = np.nonzero(fm.side[~warm] == side)[0]
    scores["online"][out] = [online.process_arrival(t, x, v)[0] for t, x, v in zip(ts, Xd, yd)]
    scores["mle"][out] = [mle.process_arrival(t, None, v)[0] for t, v in zip(ts, yd)]
    scores["frozen net"][out] = res.model.predict_map(Xd)
    scores["logreg"][out] = fit_logreg(Xw, y[w_rows]).predict(Xd)
    print(f"side {side:+d}: {filt.post.update_count} online updates over {len(yd)} trades")

# %% compare on the deploy day
for name, p in scores.items():
    print(f"{name:>10s} AUC {auc(p, y[~warm]):.4f}")
