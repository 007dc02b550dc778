"""Internalise/externalise decisions and their PnL accounting.

A client buy is internalised when ``cutoff + aversion * Q > p`` and a
client sell when ``cutoff - aversion * Q > p``, with ``Q`` the broker's
inventory in median-trade-size units. Every internalised trade is unwound
``G`` later by crossing the spread; externalised trades book the same
hypothetical PnL as avoided PnL, so the two buckets always sum to the same
total for a given tape.
"""

from __future__ import annotations

import csv
import heapq
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .market_data import Side, Tape

INTERNALISE = 1
EXTERNALISE = 0


@dataclass(frozen=True)
class StrategyConfig:
    cutoff: float = 0.5
    aversion: float = 0.0
    horizon: int = 30_000_000  # microseconds
    fee: float = 0.0           # per unit of notional

    def __post_init__(self):
        if not 0.0 <= self.cutoff <= 1.0:
            raise ValueError("cutoff must lie in [0, 1]")
        if self.aversion < 0:
            raise ValueError("aversion must be non-negative")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.fee < 0:
            raise ValueError("fee must be non-negative")


def decide(p: float, side: int, Q: float, cfg: StrategyConfig) -> int:
    """INTERNALISE or EXTERNALISE; exact ties externalise."""
    shift = cfg.aversion * Q
    threshold = cfg.cutoff + shift if side == Side.BUY else cfg.cutoff - shift
    return INTERNALISE if threshold > p else EXTERNALISE


@dataclass(frozen=True, eq=False)
class TradeOutcome:
    """Per-trade unwind PnL, independent of any decision."""

    pnl: np.ndarray            # money, after fees
    unwind_ts: np.ndarray      # within-day microseconds
    truncated: np.ndarray      # unwind clipped to the last quote of the day
    day_id: np.ndarray


def trade_outcomes(tape: Tape, horizon: int, fee: float = 0.0) -> TradeOutcome:
    """PnL of internalising each trade of ``tape`` and unwinding ``horizon`` later.

    A client buy filled at ask ``a0`` is bought back at the ask prevailing at
    the unwind time: ``qty * (a0 - ask_u)``. A client sell filled at ``b0`` is
    sold at the bid: ``qty * (bid_u - b0)``.
    """
    t = tape.t_ts
    j0 = np.searchsorted(tape.q_ts, t, side="right") - 1
    u = t + horizon
    truncated = u > tape.session_end
    u = np.minimum(u, tape.session_end)
    ju = np.searchsorted(tape.q_ts, u, side="right") - 1
    buy = tape.side == Side.BUY
    ticks = np.where(buy, tape.ask[j0] - tape.ask[ju], tape.bid[ju] - tape.bid[j0])
    px0 = np.where(buy, tape.ask[j0], tape.bid[j0]) * tape.tick
    pnl = tape.qty * ticks * tape.tick - fee * tape.qty * px0
    return TradeOutcome(pnl, u, truncated, np.full(len(t), tape.day_id))


@dataclass(eq=False)
class BacktestLedger:
    ts: np.ndarray
    day_id: np.ndarray
    client: np.ndarray
    side: np.ndarray
    qty: np.ndarray
    p: np.ndarray
    decision: np.ndarray
    realized_pnl: np.ndarray   # 0 where externalised
    avoided_pnl: np.ndarray    # 0 where internalised
    inventory: np.ndarray      # broker base-currency position after the trade
    truncated: np.ndarray
    cfg: StrategyConfig = field(default_factory=StrategyConfig)

    @property
    def total_pnl(self) -> float:
        return float(self.realized_pnl.sum())

    @property
    def total_avoided_pnl(self) -> float:
        return float(self.avoided_pnl.sum())

    @property
    def avoided_loss(self) -> float:
        """Losses the externalised trades would have made, as a positive number."""
        return float(-np.minimum(self.avoided_pnl, 0.0).sum()) + 0.0

    @property
    def internalised_vol_pct(self) -> float:
        tot = self.qty.sum()
        return float(100.0 * self.qty[self.decision == INTERNALISE].sum() / tot) if tot else 0.0

    def daily_volume(self) -> dict[int, float]:
        """Internalised volume per day."""
        out = {}
        for d in np.unique(self.day_id):
            m = (self.day_id == d) & (self.decision == INTERNALISE)
            out[int(d)] = float(self.qty[m].sum())
        return out

    def summary(self) -> dict:
        return {
            **asdict(self.cfg),
            "n_trades": int(len(self.ts)),
            "pnl_usd": self.total_pnl,
            "avoided_pnl_usd": self.total_avoided_pnl,
            "avoided_loss_usd": self.avoided_loss,
            "internalised_vol_pct": self.internalised_vol_pct,
            "n_truncated_unwinds": int(self.truncated.sum()),
            "daily_internalised_volume": {str(k): v for k, v in self.daily_volume().items()},
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["day_id", "ts_us", "client_id", "side", "qty", "p_toxic", "decision",
                        "realized_pnl", "avoided_pnl", "inventory", "unwind_truncated"])
            for i in range(len(self.ts)):
                w.writerow([int(self.day_id[i]), int(self.ts[i]), self.client[i],
                            Side(int(self.side[i])).code, repr(float(self.qty[i])),
                            repr(float(self.p[i])),
                            "I" if self.decision[i] == INTERNALISE else "E",
                            repr(float(self.realized_pnl[i])), repr(float(self.avoided_pnl[i])),
                            repr(float(self.inventory[i])), int(self.truncated[i])])

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def run_backtest(tapes: list[Tape], predictions: list[np.ndarray], cfg: StrategyConfig,
                 unit_qty: float | None = None) -> BacktestLedger:
    """Replay the decision rule over consecutive days.

    Args:
        tapes: One tape per day, in order.
        predictions: Toxicity probabilities aligned with each tape's trades.
        cfg: Decision and accounting settings.
        unit_qty: Trade size that counts as one unit of inventory; defaults
            to the median trade size over all tapes.
    """
    if len(tapes) != len(predictions):
        raise ValueError("need one prediction array per tape")
    for tape, p in zip(tapes, predictions):
        if len(p) != tape.n_trades:
            raise ValueError(f"day {tape.day_id}: {len(p)} predictions for {tape.n_trades} trades")
    if unit_qty is None:
        allq = np.concatenate([t.qty for t in tapes]) if tapes else np.ones(1)
        unit_qty = float(np.median(allq)) if len(allq) else 1.0
    cols = {k: [] for k in ("ts", "day", "client", "side", "qty", "p", "dec", "real",
                            "avoid", "inv", "trunc")}
    Q = 0.0
    for tape, p in zip(tapes, predictions):
        out = trade_outcomes(tape, cfg.horizon, cfg.fee)
        unwinds: list = []   # (unwind_ts, seq, signed position to remove)
        n = tape.n_trades
        dec = np.empty(n, np.int8)
        inv = np.empty(n)
        for i in range(n):
            t = int(tape.t_ts[i])
            while unwinds and unwinds[0][0] <= t:
                Q -= heapq.heappop(unwinds)[2]
            side = int(tape.side[i])
            d = decide(float(p[i]), side, Q / unit_qty, cfg)
            dec[i] = d
            if d == INTERNALISE:
                pos = -side * float(tape.qty[i])  # client buy leaves the broker short
                Q += pos
                heapq.heappush(unwinds, (int(out.unwind_ts[i]), i, pos))
            inv[i] = Q
        # every position is flat by the session end
        while unwinds:
            Q -= heapq.heappop(unwinds)[2]
        internal = dec == INTERNALISE
        cols["ts"].append(tape.t_ts)
        cols["day"].append(out.day_id)
        cols["client"].append(tape.client)
        cols["side"].append(tape.side)
        cols["qty"].append(tape.qty)
        cols["p"].append(np.asarray(p, float))
        cols["dec"].append(dec)
        cols["real"].append(np.where(internal, out.pnl, 0.0))
        cols["avoid"].append(np.where(internal, 0.0, out.pnl))
        cols["inv"].append(inv)
        cols["trunc"].append(out.truncated)

    def cat(k, dtype=None):
        return np.concatenate(cols[k]) if cols[k] else np.zeros(0, dtype)

    return BacktestLedger(cat("ts", np.int64), cat("day", np.int64), cat("client", object),
                          cat("side", np.int8), cat("qty"), cat("p"), cat("dec", np.int8),
                          cat("real"), cat("avoid"), cat("inv"), cat("trunc", bool), cfg)


SWEEP_HEADER = ["model", "horizon_us", "cutoff", "aversion", "pnl_usd", "avoided_loss_usd",
                "internalised_vol_pct"]
DEFAULT_CUTOFFS = tuple(np.round(np.arange(0.05, 1.0, 0.1), 2))


def sweep(tapes, predictions, horizon: int, cutoffs=DEFAULT_CUTOFFS, aversions=(0.0,),
          model: str = "", fee: float = 0.0) -> list[list]:
    """Backtest every (cutoff, aversion) pair; rows follow ``SWEEP_HEADER``."""
    rows = []
    for a in aversions:
        for c in cutoffs:
            led = run_backtest(tapes, predictions, StrategyConfig(float(c), float(a), horizon, fee))
            rows.append([model, horizon, float(c), float(a), led.total_pnl, led.avoided_loss,
                         led.internalised_vol_pct])
    return rows


def write_sweep(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow(r)
