"""Decide which client trades to keep and what that would have earned.

A trade is kept (internalised) when its predicted toxicity is below the
cutoff; the broker then unwinds it G later. Externalised trades record the
PnL the broker avoided. Raising the cutoff keeps more volume.
"""

# %%
import numpy as np

from toxicflow.labeler import label_tape
from toxicflow.market_data import US_PER_SECOND, generate_tapes, preset
from toxicflow.strategy import StrategyConfig, run_backtest, sweep

G = 30 * US_PER_SECOND
tapes = generate_tapes(preset("default", session_len=3600 * US_PER_SECOND, n_days=2, seed=3))

# a perfect-foresight score and a noisy one, for contrast
labels = [label_tape(t, G) for t in tapes]
rng = np.random.default_rng(0)
oracle = [l.y.astype(float) * 0.8 + 0.1 for l in labels]
noisy = [np.clip(p + rng.normal(0, 0.35, len(p)), 0, 1) for p in oracle]

# %% one cutoff, full ledger
led = run_backtest(tapes, noisy, StrategyConfig(cutoff=0.5, horizon=G))
s = led.summary()
print(f"pnl {s['pnl_usd']:.2f}  avoided loss {s['avoided_loss_usd']:.2f}  "
      f"internalised {s['internalised_vol_pct']:.1f}% of volume")

# %% sweep cutoffs
print("cutoff   pnl(oracle)   pnl(noisy)   vol%(noisy)")
for a, b in zip(sweep(tapes, oracle, G), sweep(tapes, noisy, G)):
    print(f"{a[2]:>5.2f}  {a[4]:>12.2f}  {b[4]:>11.2f}  {b[6]:>10.1f}")

# %% inventory aversion makes the broker lean against its position
for aversion in (0.0, 0.05, 0.2):
    led = run_backtest(tapes, noisy, StrategyConfig(0.5, aversion, G))
    print(f"aversion {aversion:.2f}: max |inventory| {np.abs(led.inventory).max():,.0f}, "
          f"pnl {led.total_pnl:.2f}")
