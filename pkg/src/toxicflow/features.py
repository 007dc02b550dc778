"""The 183-dimensional predictor snapshot taken at each trade arrival.

Layout: 15 state features, then 3 clocks x 7 look-back intervals x 8
statistics (clock-major, interval-minor, statistic-innermost).

Clocks measure distance back from the current trade in seconds (time),
client trades (txn) or traded euros (vol). Interval 0 is ``[0, U)`` and
interval ``n`` (1..6) is ``[U 2^(n-1), U 2^n)`` for the clock unit ``U``.
A quote's txn/vol coordinate is the count/volume of the day's trades that
precede it in stream order (quotes before trades at equal timestamps).
"""

from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .labeler import Labels
from .market_data import Side, Tape, TapeError

N_STATE = 15
N_INTERVALS = 7
N_STATS = 8
CLOCKS = ("time", "txn", "vol")
CLOCK_UNITS = {"time": 1_000_000, "txn": 1, "vol": 2000.0}
N_FEATURES = N_STATE + len(CLOCKS) * N_INTERVALS * N_STATS
LOT = 10_000.0
DAY_US = 86_400_000_000

STATE_NAMES = [
    "cash", "inventory", "qty", "spread", "imbalance", "bid_vol", "ask_vol",
    "ask", "bid", "mid", "n_updates", "client_trades", "all_trades",
    "expanding_vol", "sharp_ratio",
]
STAT_NAMES = ["vol", "client_trades", "updates", "return",
              "bid_vol", "ask_vol", "spread", "imbalance"]
CLIENT_STATE_IDX = (0, 1, 11, 14)
CLIENT_STAT_IDX = 1


def feature_names() -> list[str]:
    names = list(STATE_NAMES)
    for c in CLOCKS:
        for k in range(N_INTERVALS):
            names += [f"{c}{k}_{s}" for s in STAT_NAMES]
    return names


def feature_columns(clocks=CLOCKS, client_features: bool = True) -> np.ndarray:
    """Column indices kept by the clock-ablation and client-feature switches."""
    unknown = set(clocks) - set(CLOCKS)
    if unknown:
        raise ValueError(f"unknown clocks {sorted(unknown)}")
    cols = [i for i in range(N_STATE) if client_features or i not in CLIENT_STATE_IDX]
    for ci, c in enumerate(CLOCKS):
        if c not in clocks:
            continue
        for k in range(N_INTERVALS):
            base = N_STATE + (ci * N_INTERVALS + k) * N_STATS
            cols += [base + s for s in range(N_STATS)
                     if client_features or s != CLIENT_STAT_IDX]
    return np.array(cols, dtype=np.int64)


def global_ts(day_id: int, ts) -> np.ndarray | int:
    return day_id * DAY_US + ts


# -- scalar transforms ---------------------------------------------------------

def signed_log(x):
    return np.sign(x) * np.log1p(np.abs(x))


def imbalance(bid_vol, ask_vol):
    tot = np.asarray(bid_vol, float) + np.asarray(ask_vol, float)
    if np.any(tot <= 0):
        raise ValueError("imbalance undefined when both volumes are zero")
    out = (np.asarray(bid_vol, float) - np.asarray(ask_vol, float)) / tot
    return float(out) if out.ndim == 0 else out


def realized_vol(mids) -> float:
    """Square root of the summed squared log-increments of ``mids``."""
    mids = np.asarray(mids, dtype=float)
    if len(mids) < 2:
        return 0.0
    if np.any(mids <= 0):
        raise ValueError("mid prices must be positive")
    r = np.diff(np.log(mids))
    r = r[r != 0]
    return float(np.sqrt(np.sum(r * r)))


def interval_index(dist, unit):
    """Look-back interval of a clock distance: 0..6, or 7 when out of range."""
    th = unit * (2 ** np.arange(N_INTERVALS))
    return np.searchsorted(th, dist, side="right")


# -- state ---------------------------------------------------------------------

@dataclass
class ClientState:
    inventory: float = 0.0  # lots of 10,000 base units
    cash: float = 0.0       # quote currency
    n_trades: int = 0
    sharp_count: int = 0
    resolved_count: int = 0
    window: deque = field(default_factory=deque)  # (ts, txn, vol) of today's trades

    @property
    def sharp_ratio(self) -> float:
        return self.sharp_count / max(self.resolved_count, 1)


class MarketState:
    """Rolling market state for one pass over a sequence of sessions.

    Holds counters that persist across days (updates, trades, realised
    variance) and the current day's quote arrays with a sliding window
    ``[start, end)`` over the quotes still inside some clock's range.
    """

    # statistic columns carried per quote: 1, dlog^2, dlog, tvb, tva, spread, imb
    _N_COLS = 7

    def __init__(self, units: dict | None = None):
        self.units = dict(CLOCK_UNITS if units is None else units)
        self.n_updates = 0
        self.n_trades = 0
        self.qv = 0.0
        self.tape: Tape | None = None

    def start_day(self, tape: Tape) -> None:
        if self.tape is not None:
            # quotes after the previous session's last trade still count
            self.advance(int(self.tape.q_ts[-1]))
        self.tape = tape
        tick = tape.tick
        bid_px = tape.bid * tick
        ask_px = tape.ask * tick
        mid = (tape.bid + tape.ask) * (0.5 * tick)
        logmid = np.log(mid)
        dlog = np.zeros(len(mid))
        dlog[1:] = logmid[1:] - logmid[:-1]
        tvb = np.log1p(tape.bid_vol)
        tva = np.log1p(tape.ask_vol)
        imb = (tape.bid_vol - tape.ask_vol) / (tape.bid_vol + tape.ask_vol)
        spread = ask_px - bid_px
        self.bid_px, self.ask_px, self.mid = bid_px, ask_px, mid
        self.spread, self.imb, self.tvb, self.tva = spread, imb, tvb, tva
        self.stats = np.column_stack([np.ones(len(mid)), dlog * dlog, dlog, tvb, tva, spread, imb])
        self.dlog2 = dlog * dlog
        # trade-clock coordinates
        self.cumvol = np.concatenate([[0.0], np.cumsum(tape.qty)])
        self.q_txn = np.searchsorted(tape.t_ts, tape.q_ts, side="left")
        self.q_vol = self.cumvol[self.q_txn]
        self.q_time = tape.q_ts
        self.start = 0
        self.end = 0  # quotes [0, end) have been consumed

    def advance(self, ts: int) -> int:
        """Consume quotes with q_ts <= ts; return the prevailing quote index."""
        j = int(np.searchsorted(self.tape.q_ts, ts, side="right"))
        if j == 0:
            raise TapeError("no prevailing quote")
        if j > self.end:
            self.n_updates += j - self.end
            self.qv += float(np.sum(self.dlog2[self.end:j]))
            self.end = j
        return j - 1

    def coords(self, i: int) -> dict:
        return {"time": int(self.tape.t_ts[i]), "txn": i, "vol": float(self.cumvol[i])}

    def evict(self, cur: dict) -> None:
        """Drop quotes that are beyond 64 units on every clock."""
        u = self.units
        q = {"time": self.q_time, "txn": self.q_txn, "vol": self.q_vol}
        while self.start < self.end and all(
            cur[c] - q[c][self.start] >= 64 * u[c] for c in CLOCKS
        ):
            self.start += 1

    def window_stats(self, clock: str, cur) -> np.ndarray:
        """(7 intervals, 7 stat sums) over the buffered quotes for one clock."""
        coord = {"time": self.q_time, "txn": self.q_txn, "vol": self.q_vol}[clock]
        lo, hi = self.start, self.end
        out = np.zeros((N_INTERVALS, self._N_COLS))
        if hi <= lo:
            return out
        dist = cur - coord[lo:hi]  # non-increasing along the window
        u = self.units[clock]
        edges = np.array([u * 2 ** k for k in range(N_INTERVALS - 1, -1, -1)] + [0],
                         dtype=dist.dtype)
        # first quote with dist < edge, for edges 64U, 32U, ..., U; the last
        # segment runs to the end of the window
        pos = np.searchsorted(-dist, -edges, side="right")
        pos[-1] = len(dist)
        nonempty = np.diff(pos) > 0
        if nonempty.any():
            # consecutive non-empty segments tile [pos[0], len) exactly
            starts = pos[:-1][nonempty] - pos[0]
            sums = np.add.reduceat(self.stats[lo + pos[0]:hi], starts, axis=0)
            # segment s covers interval 6 - s
            out[N_INTERVALS - 1 - np.nonzero(nonempty)[0]] = sums
        return out


def _clock_features(sums: np.ndarray, client_counts: np.ndarray) -> np.ndarray:
    """Turn per-interval stat sums into the 8 features per interval."""
    n = sums[:, 0]
    safe = np.where(n > 0, n, 1.0)
    f = np.empty((N_INTERVALS, N_STATS))
    f[:, 0] = np.sqrt(sums[:, 1])
    f[:, 1] = client_counts
    f[:, 2] = n
    f[:, 3] = sums[:, 2]
    f[:, 4:8] = np.where(n[:, None] > 0, sums[:, 3:7] / safe[:, None], 0.0)
    return f


def build_features(market: MarketState, client: ClientState, i: int, j: int) -> np.ndarray:
    """Feature vector of trade ``i`` given the prevailing quote ``j``.

    Both states must reflect only events visible before the trade.
    """
    tape = market.tape
    x = np.empty(N_FEATURES)
    x[0] = signed_log(client.cash)
    x[1] = signed_log(client.inventory)
    x[2] = tape.qty[i]
    x[3] = market.spread[j]
    x[4] = market.imb[j]
    x[5] = market.tvb[j]
    x[6] = market.tva[j]
    x[7] = market.ask_px[j]
    x[8] = market.bid_px[j]
    x[9] = market.mid[j]
    x[10] = market.n_updates
    x[11] = client.n_trades
    x[12] = market.n_trades
    x[13] = math.sqrt(market.qv)
    x[14] = client.sharp_ratio

    cur = market.coords(i)
    for ci, c in enumerate(CLOCKS):
        sums = market.window_stats(c, cur[c])
        counts = np.zeros(N_INTERVALS)
        u = market.units[c]
        for co in client.window:
            d = cur[c] - co[ci]
            k = int(interval_index(d, u))
            if k < N_INTERVALS:
                counts[k] += 1
        base = N_STATE + ci * N_INTERVALS * N_STATS
        x[base:base + N_INTERVALS * N_STATS] = _clock_features(sums, counts).ravel()
    return x


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # (n, 183)
    ts: np.ndarray
    client: np.ndarray
    side: np.ndarray
    day_id: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def subset(self, mask) -> "FeatureMatrix":
        return FeatureMatrix(self.values[mask], self.ts[mask], self.client[mask],
                             self.side[mask], self.day_id[mask])

    @staticmethod
    def concat(parts: list["FeatureMatrix"]) -> "FeatureMatrix":
        if not parts:
            return FeatureMatrix(np.zeros((0, N_FEATURES)), np.zeros(0, np.int64),
                                 np.zeros(0, "<U1"), np.zeros(0, np.int8), np.zeros(0, np.int64))
        return FeatureMatrix(*(np.concatenate([getattr(p, f) for p in parts])
                               for f in ("values", "ts", "client", "side", "day_id")))


class Featurizer:
    """Streams tapes in day order and emits one feature row per trade.

    Client inventory, cash, trade counts and the sharp-trade ratio persist
    across days; look-back windows restart each session. Labels feed the
    sharp ratio only after their resolution time has passed.
    """

    def __init__(self, units: dict | None = None):
        self.market = MarketState(units)
        self.clients: dict[str, ClientState] = {}
        self._pending: list = []
        self._seq = 0
        self._last_day = None

    def client(self, cid: str) -> ClientState:
        st = self.clients.get(cid)
        if st is None:
            st = self.clients[cid] = ClientState()
        return st

    def _resolve(self, now: int) -> None:
        while self._pending and self._pending[0][0] < now:
            _, _, cid, y = heapq.heappop(self._pending)
            st = self.clients[cid]
            st.resolved_count += 1
            st.sharp_count += y

    def featurize_tape(self, tape: Tape, labels: Labels | None = None) -> FeatureMatrix:
        if self._last_day is not None and tape.day_id <= self._last_day:
            raise ValueError("tapes must be fed in increasing day_id order")
        self._last_day = tape.day_id
        if labels is not None and len(labels) != tape.n_trades:
            raise ValueError("labels do not match the tape's trades")
        m = self.market
        m.start_day(tape)
        for st in self.clients.values():
            st.window.clear()
        units = m.units
        out = np.empty((tape.n_trades, N_FEATURES))
        for i in range(tape.n_trades):
            t = int(tape.t_ts[i])
            j = m.advance(t)
            self._resolve(global_ts(tape.day_id, t))
            cid = str(tape.client[i])
            st = self.client(cid)
            cur = m.coords(i)
            m.evict(cur)
            while st.window and all(
                cur[c] - st.window[0][k] >= 64 * units[c] for k, c in enumerate(CLOCKS)
            ):
                st.window.popleft()
            out[i] = build_features(m, st, i, j)

            side = int(tape.side[i])
            q = float(tape.qty[i])
            px = m.ask_px[j] if side == Side.BUY else m.bid_px[j]
            st.inventory += side * q / LOT
            st.cash -= side * px * q
            st.n_trades += 1
            st.window.append((t, cur["txn"], cur["vol"]))
            m.n_trades += 1
            if labels is not None:
                heapq.heappush(self._pending, (global_ts(tape.day_id, int(labels.resolved_ts[i])),
                                               self._seq, cid, int(labels.y[i])))
                self._seq += 1
        return FeatureMatrix(out, tape.t_ts.copy(), tape.client.copy(), tape.side.copy(),
                             np.full(tape.n_trades, tape.day_id, np.int64))


def featurize(tapes: list[Tape], labels: list[Labels] | None = None,
              units: dict | None = None) -> FeatureMatrix:
    fz = Featurizer(units)
    parts = []
    for k, tape in enumerate(tapes):
        parts.append(fz.featurize_tape(tape, None if labels is None else labels[k]))
    return FeatureMatrix.concat(parts)


class Standardizer:
    """Per-feature affine scaling fitted once on the warmup set.

    Constant columns keep scale 1 so they map to 0.
    """

    def __init__(self, mean: np.ndarray, scale: np.ndarray):
        self.mean = np.asarray(mean, float)
        self.scale = np.asarray(scale, float)

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, float)
        mean = X.mean(axis=0)
        sd = X.std(axis=0)
        scale = np.where(sd > 1e-12 * np.maximum(np.abs(mean), 1.0), sd, 1.0)
        return cls(mean, scale)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, float) - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(d["mean"], d["scale"])


def write_feature_csv(fm: FeatureMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts_us", "client_id", "side"] + [f"f{k}" for k in range(fm.values.shape[1])])
        for r in range(len(fm)):
            w.writerow([int(fm.ts[r]), fm.client[r], Side(int(fm.side[r])).code]
                       + [repr(float(v)) for v in fm.values[r]])


def save_features(fm: FeatureMatrix, path) -> None:
    np.savez(path, values=fm.values, ts=fm.ts, client=fm.client, side=fm.side, day_id=fm.day_id)


def load_features(path) -> FeatureMatrix:
    with np.load(path) as z:
        return FeatureMatrix(z["values"], z["ts"], z["client"], z["side"], z["day_id"])
