import numpy as np
import pytest

from oracles import random_tape
from toxicflow.market_data import Tape
from toxicflow.strategy import (EXTERNALISE, INTERNALISE, StrategyConfig, decide, run_backtest,
                                sweep, trade_outcomes, write_sweep)


def brute_force(p, side, Q, spread, eta, phi, S=1.0):
    """Best delta in {0, 1} for the expected one-trade objective, by enumeration."""
    def value(delta):
        total = 0.0
        for z, prob in ((1, p), (0, 1 - p)):
            if side == 1:    # client buys: the broker sells at S + spread
                v = delta * (S + spread) + (S + eta * z) * (Q - delta) - phi * (Q - delta) ** 2
            else:
                v = -delta * (S - spread) + (S - eta * z) * (Q + delta) - phi * (Q + delta) ** 2
            total += prob * v
        return total
    return value(1) - value(0)


def test_decide_matches_brute_force(rng):
    checked = 0
    while checked < 2000:
        spread = rng.uniform(1e-5, 1e-3)
        eta = rng.uniform(2 * spread, 20 * spread)
        phi = rng.uniform(0, spread)
        p, Q, side = rng.random(), rng.normal() * 3, rng.choice([1, -1])
        gain = brute_force(p, side, Q, spread, eta, phi)
        if abs(gain) < 1e-12:
            continue
        cfg = StrategyConfig(cutoff=(spread - phi) / eta, aversion=2 * phi / eta)
        assert decide(p, side, Q, cfg) == (INTERNALISE if gain > 0 else EXTERNALISE)
        checked += 1


def test_decide_examples():
    cfg = StrategyConfig(cutoff=0.5, aversion=0.1)
    assert decide(0.4, 1, 0.0, cfg) == INTERNALISE
    assert decide(0.5, 1, 0.0, cfg) == EXTERNALISE            # ties externalise
    assert decide(0.55, 1, 1.0, cfg) == INTERNALISE           # long broker takes buys
    assert decide(0.45, -1, 1.0, cfg) == EXTERNALISE          # but not sells
    with pytest.raises(ValueError):
        StrategyConfig(cutoff=1.5)


def _example_tape():
    return Tape(q_ts=[0, 20_000_000, 40_000_000], bid=[10999, 10987, 10987],
                ask=[11000, 10988, 10988], bid_vol=[1] * 3, ask_vol=[1] * 3,
                t_ts=[1_000_000], client=["c"], side=[1], qty=[1000.0], tick=1e-4)


def test_unwind_pnl_example():
    out = trade_outcomes(_example_tape(), 30_000_000)
    assert out.pnl[0] == pytest.approx(1.20, abs=1e-9)
    assert out.unwind_ts[0] == 31_000_000 and not out.truncated[0]
    led = run_backtest([_example_tape()], [np.array([0.1])], StrategyConfig(0.5))
    assert led.total_pnl == pytest.approx(1.20) and led.avoided_loss == 0.0
    led = run_backtest([_example_tape()], [np.array([0.9])], StrategyConfig(0.5))
    assert led.total_pnl == 0.0 and led.total_avoided_pnl == pytest.approx(1.20)


def test_unwind_truncated_at_session_end():
    out = trade_outcomes(_example_tape(), 60_000_000)
    assert out.truncated[0] and out.unwind_ts[0] == 40_000_000


def test_conservation_and_monotonicity(rng):
    tapes = [random_tape(rng, day_id=d, tick=1e-5) for d in range(2)]
    preds = [rng.random(t.n_trades) for t in tapes]
    total = sum(trade_outcomes(t, 5_000_000).pnl.sum() for t in tapes)
    vols = []
    for a in (0.0, 0.05, 0.5):
        for c in np.linspace(0, 1, 11):
            led = run_backtest(tapes, preds, StrategyConfig(c, a, 5_000_000))
            assert abs(led.total_pnl + led.total_avoided_pnl - total) < 0.005
            if a == 0.0:
                vols.append(led.internalised_vol_pct)
    assert all(b >= a for a, b in zip(vols, vols[1:]))
    assert vols[0] == 0.0 and vols[-1] == 100.0


def test_inventory_flat_each_day(rng):
    tapes = [random_tape(rng, day_id=d) for d in range(2)]
    preds = [np.zeros(t.n_trades) for t in tapes]
    # unwinds never fall inside the session, so positions pile up until the close
    led = run_backtest(tapes, preds, StrategyConfig(0.5, 0.0, 10 ** 12))
    first = int(np.nonzero(led.day_id == 1)[0][0])
    assert led.inventory[first - 1] != 0.0
    assert led.inventory[first] == -led.side[first] * led.qty[first]
    assert led.truncated.all()


def test_sweep_rows(tmp_path, rng):
    tape = random_tape(rng)
    rows = sweep([tape], [rng.random(tape.n_trades)], 2_000_000, cutoffs=(0.2, 0.8),
                 aversions=(0.0, 0.1), model="m")
    assert len(rows) == 4 and rows[0][:4] == ["m", 2_000_000, 0.2, 0.0]
    write_sweep(tmp_path / "s.csv", rows)
    assert (tmp_path / "s.csv").read_text().startswith("model,horizon_us,cutoff")


def test_ledger_outputs(tmp_path):
    led = run_backtest([_example_tape()], [np.array([0.1])], StrategyConfig(0.5))
    led.write_csv(tmp_path / "l.csv")
    led.write_summary(tmp_path / "s.json")
    assert led.summary()["daily_internalised_volume"] == {"0": 1000.0}
    assert "I" in (tmp_path / "l.csv").read_text()
