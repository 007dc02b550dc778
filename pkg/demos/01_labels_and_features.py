"""Label a synthetic session and look at the feature vector.

A trade is toxic at horizon G when the market moves through the broker's
fill price within G of the trade. Longer horizons can only add toxic trades.
"""

# %%
import numpy as np

from toxicflow.features import feature_names, featurize
from toxicflow.labeler import Horizon, label_tape
from toxicflow.market_data import US_PER_SECOND, generate_tape, preset

cfg = preset("default", session_len=3600 * US_PER_SECOND, seed=7)
tape = generate_tape(cfg)
print(f"{tape.n_quotes} quotes, {tape.n_trades} trades")

# %% toxic proportion by horizon
for s in (1, 5, 10, 30, 60):
    labels = label_tape(tape, Horizon.seconds(s))
    print(f"G={s:>2}s  toxic {labels.toxic_rate():.3f}  "
          f"censored {labels.censored.mean():.3f}")

# %% informed clients show up as more toxic
labels = label_tape(tape, Horizon.seconds(30))
for cid, inf in zip(cfg.client_ids, cfg.informedness):
    m = tape.client == cid
    print(f"{cid}: informedness {inf:.2f}  toxic {labels.y[m].mean():.3f}  trades {m.sum()}")

# %% features: 15 state values plus 3 clocks x 7 look-back intervals x 8 statistics
fm = featurize([tape], [labels])
names = feature_names()
row = fm.values[len(fm) // 2]
for k in list(range(15)) + [15, 16, 17, 18]:
    print(f"{names[k]:>22s} {row[k]: .6g}")
print("shape", fm.values.shape, "| nonzero share", np.mean(fm.values != 0).round(3))
