"""Toxicity labels: did the client get a chance to unwind at a profit?

A client buy filled at the prevailing ask ``a0`` is toxic for horizon ``g``
when some later quote within ``(t, min(t + g, T)]`` shows a bid strictly
above ``a0``; a sell at bid ``b0`` is toxic when an ask strictly below
``b0`` appears. ``T`` is the last quote of the session.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass

import numpy as np

from .market_data import US_PER_SECOND, Side, Tape, TapeError


@dataclass(frozen=True)
class Horizon:
    g: int  # microseconds

    def __post_init__(self):
        if self.g <= 0:
            raise ValueError("horizon must be positive")

    @classmethod
    def seconds(cls, s: float) -> "Horizon":
        return cls(int(round(s * US_PER_SECOND)))


@dataclass(frozen=True)
class Label:
    y: int
    resolved_ts: int
    tau: int | None = None
    censored: bool = False


@dataclass(frozen=True, eq=False)
class Labels:
    """Column-wise labels for every trade of one tape."""

    y: np.ndarray
    resolved_ts: np.ndarray
    tau: np.ndarray  # -1 where no profitable unwind occurred
    censored: np.ndarray
    horizon: int
    day_id: int = 0

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i: int) -> Label:
        tau = int(self.tau[i])
        return Label(int(self.y[i]), int(self.resolved_ts[i]),
                     None if tau < 0 else tau, bool(self.censored[i]))

    def to_list(self) -> list[Label]:
        return [self[i] for i in range(len(self))]

    def toxic_rate(self, include_censored: bool = True) -> float:
        keep = np.ones(len(self.y), bool) if include_censored else ~self.censored
        return float(self.y[keep].mean()) if keep.any() else float("nan")


def _as_h(h) -> int:
    return h.g if isinstance(h, Horizon) else int(h)


def label_trade(tape: Tape, i: int, h: Horizon | int) -> Label:
    """Label trade ``i`` of ``tape`` by scanning the quotes after it."""
    g = _as_h(h)
    t = int(tape.t_ts[i])
    j0 = tape.prevailing_index(t)
    if j0 < 0:
        raise TapeError("trade not covered by any quote")
    T = tape.session_end
    end = min(t + g, T)
    lo = j0 + 1
    hi = int(np.searchsorted(tape.q_ts, end, side="right"))
    if tape.side[i] == Side.BUY:
        hits = np.nonzero(tape.bid[lo:hi] > tape.ask[j0])[0]
    else:
        hits = np.nonzero(tape.ask[lo:hi] < tape.bid[j0])[0]
    tau = int(tape.q_ts[lo + hits[0]]) if len(hits) else None
    return Label(int(tau is not None), end, tau, t + g > T)


def label_tape(tape: Tape, h: Horizon | int) -> Labels:
    """Label every trade with one forward sweep over the quotes.

    Open buys wait in a min-heap keyed by entry ask, open sells in a max-heap
    keyed by entry bid; each quote pops the entries it makes profitable.
    An entry popped after its window closed is benign, and a closed window
    can never reopen, so lazy expiry is exact.
    """
    g = _as_h(h)
    n = tape.n_trades
    T = tape.session_end
    y = np.zeros(n, np.int8)
    tau = np.full(n, -1, np.int64)
    t_ts = tape.t_ts
    resolved = np.minimum(t_ts + g, T)
    censored = t_ts + g > T
    if n == 0:
        return Labels(y, resolved, tau, censored, g, tape.day_id)

    q_ts, bid, ask = tape.q_ts, tape.bid, tape.ask
    # trade i enters the book once every quote with ts <= t_i is processed
    entry_after = np.searchsorted(q_ts, t_ts, side="right") - 1
    if entry_after[0] < 0:
        raise TapeError("trade not covered by any quote")
    buys: list = []
    sells: list = []
    k = 0
    for j in range(len(q_ts)):
        u = q_ts[j]
        b, a = bid[j], ask[j]
        while buys and buys[0][0] < b:
            _, i = heapq.heappop(buys)
            if u <= resolved[i]:
                y[i], tau[i] = 1, u
        while sells and -sells[0][0] > a:
            _, i = heapq.heappop(sells)
            if u <= resolved[i]:
                y[i], tau[i] = 1, u
        while k < n and entry_after[k] == j:
            if tape.side[k] == Side.BUY:
                heapq.heappush(buys, (int(a), k))
            else:
                heapq.heappush(sells, (-int(b), k))
            k += 1
    return Labels(y, resolved, tau, censored, g, tape.day_id)


def write_labels(tape: Tape, labels: Labels, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts_us", "client_id", "side", "horizon_us", "y", "tau_us", "censored"])
        for i in range(len(labels)):
            tau = int(labels.tau[i])
            w.writerow([int(tape.t_ts[i]), tape.client[i], Side(int(tape.side[i])).code,
                        labels.horizon, int(labels.y[i]), "" if tau < 0 else tau,
                        int(labels.censored[i])])


def read_labels(path, tape: Tape) -> Labels:
    """Read a labels CSV written for ``tape`` (rows must match its trades)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(row)
    if len(rows) != tape.n_trades:
        raise TapeError(f"{path}: {len(rows)} labels for {tape.n_trades} trades")
    if not rows:
        empty = np.zeros(0, np.int64)
        return Labels(empty.astype(np.int8), empty, empty, empty.astype(bool), 0, tape.day_id)
    g = int(rows[0]["horizon_us"])
    y = np.array([int(r["y"]) for r in rows], np.int8)
    tau = np.array([int(r["tau_us"]) if r["tau_us"] else -1 for r in rows], np.int64)
    cens = np.array([r["censored"] == "1" for r in rows])
    resolved = np.minimum(tape.t_ts + g, tape.session_end)
    return Labels(y, resolved, tau, cens, g, tape.day_id)
