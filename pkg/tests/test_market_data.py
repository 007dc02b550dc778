import numpy as np
import pytest

from toxicflow.market_data import (Side, Tape, TapeError, generate_tape, generate_tapes,
                                   load_tape, preset, tape_from_records, write_tape,
                                   Quote, TradeEvent)


def _write(tmp_path, quotes, trades):
    qp, tp = tmp_path / "q.csv", tmp_path / "t.csv"
    qp.write_text("ts_us,bid,ask,bid_vol,ask_vol\n" + "".join(q + "\n" for q in quotes))
    tp.write_text("ts_us,client_id,side,qty\n" + "".join(t + "\n" for t in trades))
    return qp, tp


def test_side_codes():
    assert Side.parse("B") is Side.BUY and Side.parse("S") is Side.SELL
    assert Side.BUY.code == "B" and int(Side.SELL) == -1
    with pytest.raises(ValueError):
        Side.parse("X")


def test_load_parses_prices_exactly(tmp_path):
    qp, tp = _write(tmp_path, ["0,1.100000,1.100010,5,7", "10,1.100001,1.100011,5,7"],
                    ["5,c1,B,1000", "10,c2,S,2500"])
    tape = load_tape(qp, tp, day_id=3)
    assert tape.bid.tolist() == [1_100_000, 1_100_001]
    assert tape.ask.tolist() == [1_100_010, 1_100_011]
    assert tape.side.tolist() == [1, -1]
    assert tape.day_id == 3 and tape.n_trades == 2


@pytest.mark.parametrize("quotes,trades,msg", [
    (["0,1.1,1.0,5,7"], [], "crossed"),
    (["0,1.1,1.1,5,7"], [], "crossed"),
    (["5,1.0,1.1,5,7", "4,1.0,1.1,5,7"], [], "non-monotone"),
    (["-1,1.0,1.1,5,7"], [], "negative"),
    (["0,1.0,1.1,0,7"], [], "volume"),
    (["0,1.0,1.1,5,7", "9,1.0,1.1,5,7"], ["3,c,B,1", "2,c,B,1"], "non-monotone"),
    (["0,1.0,1.1,5,7", "9,1.0,1.1,5,7"], ["10,c,B,1"], "outside"),
    (["0,1.0,1.1,5,7", "9,1.0,1.1,5,7"], ["3,c,B,-2"], "quantity"),
    (["0,1.0,1.1,5,7", "9,1.0,1.1,5,7"], ["3,c,X,2"], "malformed"),
    (["0,1.0000001,1.1,5,7"], [], "tick"),
])
def test_load_rejects_bad_rows(tmp_path, quotes, trades, msg):
    qp, tp = _write(tmp_path, quotes, trades)
    with pytest.raises(TapeError, match=msg):
        load_tape(qp, tp)


def test_bad_header_reports_line(tmp_path):
    qp, tp = _write(tmp_path, ["0,1.0,1.1,5,7"], [])
    qp.write_text("time,bid,ask,bv,av\n0,1.0,1.1,5,7\n")
    with pytest.raises(TapeError, match="line 1"):
        load_tape(qp, tp)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_tape(tmp_path / "nope.csv", tmp_path / "nope2.csv")


def test_roundtrip(tmp_path):
    tape = generate_tape(preset("tiny", seed=4), day_id=2)
    qp, tp = tmp_path / "q.csv", tmp_path / "t.csv"
    write_tape(tape, qp, tp)
    back = load_tape(qp, tp, day_id=2, tick=tape.tick)
    assert back.same_as(tape)


def test_tape_is_read_only():
    tape = generate_tape(preset("tiny"))
    with pytest.raises(ValueError):
        tape.bid[0] = 0


def test_records_constructor():
    tape = tape_from_records([Quote(0, 1.0, 1.1, 1, 1), Quote(5, 1.0, 1.2, 1, 1)],
                             [TradeEvent(3, "a", Side.SELL, 10.0)], tick=1e-1)
    assert tape.ask.tolist() == [11, 12]
    assert tape.prevailing_index(5) == 1 and tape.prevailing_index(4) == 0


def test_generator_is_deterministic_and_valid():
    cfg = preset("tiny", seed=11, n_days=2)
    a, b = generate_tapes(cfg), generate_tapes(cfg)
    assert all(x.same_as(y) for x, y in zip(a, b))
    assert not a[0].same_as(a[1])
    for t in a:
        assert np.all(np.diff(t.q_ts) > 0)
        assert np.all(t.ask > t.bid)
        assert t.n_trades > 0


def test_seed_changes_tape():
    assert not generate_tape(preset("tiny", seed=1)).same_as(generate_tape(preset("tiny", seed=2)))


def test_construction_validates():
    with pytest.raises(TapeError):
        Tape(q_ts=[0, 1], bid=[1, 1], ask=[2, 2], bid_vol=[1, 1], ask_vol=[1, 1],
             t_ts=[5], client=["a"], side=[1], qty=[1.0])
