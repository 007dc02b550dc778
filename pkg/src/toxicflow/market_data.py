"""Tick tapes: best bid/ask quotes plus client trades for one trading session.

Prices are held as integer tick counts so spread arithmetic and the strict
price comparisons used by the labeler are exact. Conversion to decimal
prices only happens at I/O boundaries.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import json
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

QUOTE_HEADER = ["ts_us", "bid", "ask", "bid_vol", "ask_vol"]
TRADE_HEADER = ["ts_us", "client_id", "side", "qty"]
US_PER_SECOND = 1_000_000


class TapeError(ValueError):
    """Raised when tape data violates the quote/trade invariants."""


class Side(enum.IntEnum):
    BUY = 1
    SELL = -1

    @classmethod
    def parse(cls, s: str) -> "Side":
        if s == "B":
            return cls.BUY
        if s == "S":
            return cls.SELL
        raise ValueError(f"side must be B or S, got {s!r}")

    @property
    def code(self) -> str:
        return "B" if self is Side.BUY else "S"


@dataclass(frozen=True)
class Quote:
    ts: int
    bid: float
    ask: float
    bid_vol: float
    ask_vol: float


@dataclass(frozen=True)
class TradeEvent:
    ts: int
    client_id: str
    side: Side
    qty: float


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Tape:
    """One session of quotes and trades, stored column-wise.

    ``bid``/``ask`` are integer tick counts; multiply by ``tick`` for prices.
    ``side`` holds +1 for client buys and -1 for client sells.
    """

    q_ts: np.ndarray
    bid: np.ndarray
    ask: np.ndarray
    bid_vol: np.ndarray
    ask_vol: np.ndarray
    t_ts: np.ndarray
    client: np.ndarray
    side: np.ndarray
    qty: np.ndarray
    tick: float = 1e-6
    day_id: int = 0

    def __post_init__(self):
        cast = {
            "q_ts": np.int64, "bid": np.int64, "ask": np.int64,
            "bid_vol": np.float64, "ask_vol": np.float64,
            "t_ts": np.int64, "client": np.str_, "side": np.int8,
            "qty": np.float64,
        }
        for name, dtype in cast.items():
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        self.validate()

    def validate(self) -> None:
        nq = len(self.q_ts)
        if not (len(self.bid) == len(self.ask) == len(self.bid_vol) == len(self.ask_vol) == nq):
            raise TapeError("quote columns have different lengths")
        nt = len(self.t_ts)
        if not (len(self.client) == len(self.side) == len(self.qty) == nt):
            raise TapeError("trade columns have different lengths")
        if nq == 0:
            raise TapeError("tape has no quotes")
        if np.any(self.q_ts < 0):
            raise TapeError("negative quote timestamp")
        if np.any(np.diff(self.q_ts) < 0):
            raise TapeError("quote timestamps not sorted")
        if np.any(self.ask <= self.bid):
            i = int(np.argmax(self.ask <= self.bid))
            raise TapeError(f"crossed quote at index {i}")
        if np.any(self.bid_vol <= 0) or np.any(self.ask_vol <= 0):
            raise TapeError("non-positive quote volume")
        if nt:
            if np.any(np.diff(self.t_ts) < 0):
                raise TapeError("trade timestamps not sorted")
            if self.t_ts[0] < self.q_ts[0] or self.t_ts[-1] > self.q_ts[-1]:
                raise TapeError("trade outside quote span")
            if np.any(self.qty <= 0):
                raise TapeError("non-positive trade quantity")
            if not np.all(np.isin(self.side, (1, -1))):
                raise TapeError("side must be +1 or -1")

    # -- convenience views -------------------------------------------------

    @property
    def n_quotes(self) -> int:
        return len(self.q_ts)

    @property
    def n_trades(self) -> int:
        return len(self.t_ts)

    @property
    def session_end(self) -> int:
        return int(self.q_ts[-1])

    @property
    def bid_px(self) -> np.ndarray:
        return self.bid * self.tick

    @property
    def ask_px(self) -> np.ndarray:
        return self.ask * self.tick

    @property
    def mid_px(self) -> np.ndarray:
        return (self.bid + self.ask) * (0.5 * self.tick)

    def prevailing_index(self, ts) -> np.ndarray | int:
        """Index of the last quote with quote.ts <= ts (-1 if none)."""
        idx = np.searchsorted(self.q_ts, ts, side="right") - 1
        return int(idx) if np.ndim(idx) == 0 else idx

    def quote(self, i: int) -> Quote:
        return Quote(int(self.q_ts[i]), float(self.bid[i] * self.tick),
                     float(self.ask[i] * self.tick), float(self.bid_vol[i]),
                     float(self.ask_vol[i]))

    def trade(self, i: int) -> TradeEvent:
        return TradeEvent(int(self.t_ts[i]), str(self.client[i]),
                          Side(int(self.side[i])), float(self.qty[i]))

    @property
    def quotes(self) -> list[Quote]:
        return [self.quote(i) for i in range(self.n_quotes)]

    @property
    def trades(self) -> list[TradeEvent]:
        return [self.trade(i) for i in range(self.n_trades)]

    def iter_trades(self) -> Iterator[TradeEvent]:
        for i in range(self.n_trades):
            yield self.trade(i)

    def same_as(self, other: "Tape") -> bool:
        if self.tick != other.tick or self.day_id != other.day_id:
            return False
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name))
            for f in dataclasses.fields(self)
            if f.name not in ("tick", "day_id")
        )

    def to_bytes(self) -> bytes:
        """Canonical byte serialisation, used for replay/determinism checks."""
        parts = [np.float64(self.tick).tobytes(), np.int64(self.day_id).tobytes()]
        for name in ("q_ts", "bid", "ask", "bid_vol", "ask_vol", "t_ts", "side", "qty"):
            parts.append(np.ascontiguousarray(getattr(self, name)).tobytes())
        parts.append("\x1f".join(self.client.tolist()).encode())
        return b"".join(parts)


def tape_from_records(quotes: Sequence[Quote], trades: Sequence[TradeEvent],
                      tick: float = 1e-6, day_id: int = 0) -> Tape:
    """Build a tape from record objects; prices must sit on the tick grid."""
    def ticks(px: float) -> int:
        n = round(px / tick)
        if abs(n * tick - px) > tick * 1e-6:
            raise TapeError(f"price {px} is not a multiple of tick {tick}")
        return n

    return Tape(
        q_ts=[q.ts for q in quotes],
        bid=[ticks(q.bid) for q in quotes],
        ask=[ticks(q.ask) for q in quotes],
        bid_vol=[q.bid_vol for q in quotes],
        ask_vol=[q.ask_vol for q in quotes],
        t_ts=[t.ts for t in trades],
        client=[t.client_id for t in trades],
        side=[int(t.side) for t in trades],
        qty=[t.qty for t in trades],
        tick=tick,
        day_id=day_id,
    )


# -- CSV I/O -----------------------------------------------------------------

def _decimal_ticks(text: str, scale: Decimal, line: int, what: str) -> int:
    try:
        d = Decimal(text)
    except InvalidOperation:
        raise TapeError(f"malformed {what} {text!r} at line {line}") from None
    q = d / scale
    if q != q.to_integral_value():
        raise TapeError(f"{what} {text!r} at line {line} is not on the tick grid")
    return int(q)


def _read_rows(path: Path, header: list[str]):
    if not path.exists():
        raise FileNotFoundError(f"missing file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [c.strip() for c in first] != header:
            raise TapeError(f"{path}: expected header {','.join(header)} at line 1")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise TapeError(f"{path}: malformed row at line {lineno}")
            yield lineno, [c.strip() for c in row]


def load_tape(quotes_path, trades_path, day_id: int = 0, tick: float = 1e-6) -> Tape:
    """Read a tape from the quotes/trades CSV pair.

    Rows must already be time-ordered; out-of-order rows are rejected rather
    than sorted.
    """
    scale = Decimal(str(tick))
    q_cols = [[] for _ in range(5)]
    prev = None
    for line, row in _read_rows(Path(quotes_path), QUOTE_HEADER):
        try:
            ts = int(row[0])
            bv, av = float(row[3]), float(row[4])
        except ValueError:
            raise TapeError(f"malformed quote row at line {line}") from None
        bid = _decimal_ticks(row[1], scale, line, "bid")
        ask = _decimal_ticks(row[2], scale, line, "ask")
        if ts < 0:
            raise TapeError(f"negative timestamp at line {line}")
        if prev is not None and ts < prev:
            raise TapeError(f"non-monotone quote timestamp at line {line}")
        if ask <= bid:
            raise TapeError(f"crossed quote at line {line}")
        if not (bv > 0 and av > 0):
            raise TapeError(f"non-positive quote volume at line {line}")
        prev = ts
        for col, v in zip(q_cols, (ts, bid, ask, bv, av)):
            col.append(v)
    if not q_cols[0]:
        raise TapeError(f"{quotes_path}: no quotes")
    first_q, last_q = q_cols[0][0], q_cols[0][-1]

    t_cols = [[] for _ in range(4)]
    prev = None
    for line, row in _read_rows(Path(trades_path), TRADE_HEADER):
        try:
            ts = int(row[0])
            side = int(Side.parse(row[2]))
            qty = float(row[3])
        except ValueError:
            raise TapeError(f"malformed trade row at line {line}") from None
        if prev is not None and ts < prev:
            raise TapeError(f"non-monotone trade timestamp at line {line}")
        if not qty > 0:
            raise TapeError(f"non-positive quantity at line {line}")
        if ts < first_q or ts > last_q:
            raise TapeError(f"trade outside quote span at line {line}")
        prev = ts
        for col, v in zip(t_cols, (ts, row[1], side, qty)):
            col.append(v)

    return Tape(q_ts=q_cols[0], bid=q_cols[1], ask=q_cols[2], bid_vol=q_cols[3],
                ask_vol=q_cols[4], t_ts=t_cols[0], client=t_cols[1], side=t_cols[2],
                qty=t_cols[3], tick=tick, day_id=day_id)


def _fmt_price(ticks: int, tick: Decimal) -> str:
    return f"{Decimal(int(ticks)) * tick:.6f}"


def write_tape(tape: Tape, quotes_path, trades_path) -> None:
    tick = Decimal(str(tape.tick))
    if tick.as_tuple().exponent < -6:
        raise TapeError("tick finer than 1e-6 cannot be written to CSV")
    with open(quotes_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QUOTE_HEADER)
        for i in range(tape.n_quotes):
            w.writerow([int(tape.q_ts[i]), _fmt_price(tape.bid[i], tick),
                        _fmt_price(tape.ask[i], tick), repr(float(tape.bid_vol[i])),
                        repr(float(tape.ask_vol[i]))])
    with open(trades_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRADE_HEADER)
        for i in range(tape.n_trades):
            w.writerow([int(tape.t_ts[i]), tape.client[i], Side(int(tape.side[i])).code,
                        repr(float(tape.qty[i]))])


# -- synthetic generator -------------------------------------------------------

@dataclass
class SynthConfig:
    """Parameters of the synthetic tape generator.

    Rates are per second. ``informedness`` and ``trade_rate`` are per client;
    a scalar is broadcast to every client. ``qty_params`` holds ``value`` for
    the fixed distribution and ``median``/``sigma`` for the lognormal one.
    ``move_prob`` is the chance that a quote update moves the price (the rest
    only refresh volumes), which sets the tick volatility.
    """

    seed: int = 0
    n_days: int = 1
    session_len: int = 3600 * US_PER_SECOND
    tick: float = 1e-5
    base_mid: float = 1.0
    spread_ticks: int = 1
    quote_rate: float = 4.0
    drift_regime_rate: float = 1 / 60
    drift_magnitude: float = 1e-6
    n_clients: int = 6
    informedness: float | list[float] = 0.0
    trade_rate: float | list[float] = 0.1
    qty_dist: str = "fixed"
    qty_params: dict = field(default_factory=lambda: {"value": 2000.0})
    move_prob: float = 0.1
    volume_median: float = 1.0e6
    volume_sigma: float = 0.8

    def __post_init__(self):
        self.informedness = self._per_client(self.informedness, "informedness")
        self.trade_rate = self._per_client(self.trade_rate, "trade_rate")
        self.validate()

    def _per_client(self, v, name):
        if np.ndim(v) == 0:
            return [float(v)] * self.n_clients
        v = [float(x) for x in v]
        if len(v) != self.n_clients:
            raise ValueError(f"{name} needs {self.n_clients} entries, got {len(v)}")
        return v

    def validate(self) -> None:
        if self.n_days < 1 or self.n_clients < 1:
            raise ValueError("n_days and n_clients must be >= 1")
        if self.session_len <= 0:
            raise ValueError("session_len must be positive")
        if not (self.tick > 0 and self.base_mid > 0):
            raise ValueError("tick and base_mid must be positive")
        if self.spread_ticks < 1:
            raise ValueError("spread_ticks must be >= 1")
        if not (self.quote_rate > 0 and self.drift_regime_rate > 0):
            raise ValueError("quote_rate and drift_regime_rate must be > 0")
        if any(r <= 0 for r in self.trade_rate):
            raise ValueError("trade_rate must be > 0 for every client")
        if any(not 0.0 <= p <= 1.0 for p in self.informedness):
            raise ValueError("informedness must lie in [0, 1]")
        if self.drift_magnitude < 0:
            raise ValueError("drift_magnitude must be >= 0")
        if not 0.0 < self.move_prob <= 1.0:
            raise ValueError("move_prob must lie in (0, 1]")
        if self.qty_dist == "fixed":
            if not self.qty_params.get("value", 0) > 0:
                raise ValueError("fixed qty needs a positive 'value'")
        elif self.qty_dist == "lognormal":
            if not (self.qty_params.get("median", 0) > 0 and self.qty_params.get("sigma", -1) >= 0):
                raise ValueError("lognormal qty needs 'median' > 0 and 'sigma' >= 0")
        else:
            raise ValueError(f"unknown qty_dist {self.qty_dist!r}")

    @property
    def client_ids(self) -> list[str]:
        return [f"c{i}" for i in range(self.n_clients)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SynthConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


# Calibrated so about 58% of all trades are toxic at a 30 s horizon, with a
# mix of informed and noise clients.
PRESETS: dict[str, dict] = {
    "default": dict(
        session_len=8 * 3600 * US_PER_SECOND,
        quote_rate=4.0,
        move_prob=0.07,
        spread_ticks=1,
        drift_regime_rate=1 / 90,
        drift_magnitude=1.5e-6,
        n_clients=6,
        informedness=[0.6, 0.4, 0.25, 0.1, 0.0, 0.0],
        trade_rate=[0.45, 0.15, 0.1, 0.1, 0.1, 0.05],
        qty_dist="lognormal",
        qty_params={"median": 2000.0, "sigma": 1.0},
    ),
    "tiny": dict(
        session_len=600 * US_PER_SECOND,
        quote_rate=2.0,
        move_prob=0.2,
        n_clients=2,
        informedness=[0.5, 0.0],
        trade_rate=[0.2, 0.2],
    ),
}


def preset(name: str, **overrides) -> SynthConfig:
    params = dict(PRESETS[name])
    params.update(overrides)
    return SynthConfig(**params)


def _poisson_times(rng: np.random.Generator, rate: float, start: int, end: int) -> np.ndarray:
    """Integer-microsecond event times of a homogeneous Poisson process on (start, end]."""
    span_s = (end - start) / US_PER_SECOND
    n = rng.poisson(rate * span_s)
    t = rng.uniform(start, end, size=n)
    return np.sort(np.ceil(t).astype(np.int64).clip(start + 1, end))


def _strictly_increasing(ts: np.ndarray) -> np.ndarray:
    """Push tied timestamps forward by 1 us each, deterministically."""
    k = np.arange(len(ts), dtype=np.int64)
    return np.maximum.accumulate(ts - k) + k


def generate_tape(cfg: SynthConfig, day_id: int = 0) -> Tape:
    """Simulate one session.

    The bid level follows a tick random walk whose drift switches between
    -m, 0 and +m (``m = drift_magnitude``) at Poisson regime changes. Each
    client trades at Poisson times; with probability ``informedness`` the
    side follows the current drift, otherwise it is a fair coin.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, day_id]))
    T = int(cfg.session_len)

    q_ts = np.concatenate([[0], _poisson_times(rng, cfg.quote_rate, 0, T)])
    q_ts = _strictly_increasing(q_ts)
    nq = len(q_ts)

    # drift regimes
    switch = _poisson_times(rng, cfg.drift_regime_rate, 0, T)
    levels = rng.integers(-1, 2, size=len(switch) + 1).astype(float) * cfg.drift_magnitude
    regime_at = lambda ts: levels[np.searchsorted(switch, ts, side="right")]

    # tick walk of the bid level
    step_scale = cfg.quote_rate * cfg.move_prob * cfg.tick
    bias = np.clip(regime_at(q_ts) / step_scale, -1.0, 1.0)
    moves = rng.random(nq) < cfg.move_prob
    up = rng.random(nq) < 0.5 * (1.0 + bias)
    steps = np.where(moves, np.where(up, 1, -1), 0)
    steps[0] = 0
    half = cfg.spread_ticks / 2
    bid0 = int(round(cfg.base_mid / cfg.tick - half))
    bid = bid0 + np.cumsum(steps)
    ask = bid + cfg.spread_ticks

    bid_vol = np.round(rng.lognormal(np.log(cfg.volume_median), cfg.volume_sigma, nq))
    ask_vol = np.round(rng.lognormal(np.log(cfg.volume_median), cfg.volume_sigma, nq))
    bid_vol = np.maximum(bid_vol, 1.0)
    ask_vol = np.maximum(ask_vol, 1.0)

    first, last = int(q_ts[0]), int(q_ts[-1])
    t_ts, t_client, t_side, t_qty = [], [], [], []
    for c, cid in enumerate(cfg.client_ids):
        ts = _poisson_times(rng, cfg.trade_rate[c], first, last)
        drift = np.sign(regime_at(ts))
        informed = rng.random(len(ts)) < cfg.informedness[c]
        coin = np.where(rng.random(len(ts)) < 0.5, 1, -1)
        side = np.where(informed & (drift != 0), drift, coin).astype(np.int8)
        if cfg.qty_dist == "fixed":
            qty = np.full(len(ts), float(cfg.qty_params["value"]))
        else:
            qty = np.maximum(np.round(rng.lognormal(np.log(cfg.qty_params["median"]),
                                                    cfg.qty_params["sigma"], len(ts))), 1.0)
        t_ts.append(ts)
        t_client.append(np.full(len(ts), cid))
        t_side.append(side)
        t_qty.append(qty)
    t_ts = np.concatenate(t_ts)
    order = np.argsort(t_ts, kind="stable")

    return Tape(q_ts=q_ts, bid=bid, ask=ask, bid_vol=bid_vol, ask_vol=ask_vol,
                t_ts=t_ts[order], client=np.concatenate(t_client)[order],
                side=np.concatenate(t_side)[order], qty=np.concatenate(t_qty)[order],
                tick=cfg.tick, day_id=day_id)


def generate_tapes(cfg: SynthConfig) -> list[Tape]:
    """One independent session per day; day ids run 0..n_days-1."""
    return [generate_tape(cfg, day) for day in range(cfg.n_days)]
