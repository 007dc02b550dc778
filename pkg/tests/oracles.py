"""Independent reference implementations used as test oracles.

Nothing here calls into the package's numerical code: the oracles rescan
raw arrays with plain loops so they can be compared against the
incremental and vectorized implementations.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize

from toxicflow.market_data import Tape

DAY = 86_400_000_000


# -- random tapes ----------------------------------------------------------------

def random_tape(rng: np.random.Generator, n_quotes: int = 300, n_trades: int = 80,
                day_id: int = 0, n_clients: int = 3, mean_gap_us: int = 500_000,
                tick: float = 1e-5) -> Tape:
    """A small messy tape: tied timestamps, 1-3 tick spreads, assorted sizes."""
    gaps = rng.integers(1, 2 * mean_gap_us, size=n_quotes)
    gaps[0] = rng.integers(0, 1000)
    q_ts = np.cumsum(gaps)
    steps = rng.choice([-2, -1, 0, 0, 0, 1, 2], size=n_quotes)
    steps[0] = 0
    bid = 110_000 + np.cumsum(steps)
    ask = bid + rng.integers(1, 4, size=n_quotes)
    bid_vol = rng.integers(1, 5_000_000, size=n_quotes).astype(float)
    ask_vol = rng.integers(1, 5_000_000, size=n_quotes).astype(float)
    t_ts = rng.integers(q_ts[0], q_ts[-1] + 1, size=n_trades)
    # a few trades exactly on quote timestamps and a few duplicated times
    k = max(1, n_trades // 10)
    t_ts[:k] = rng.choice(q_ts, size=k)
    t_ts[k:2 * k] = t_ts[2 * k:3 * k] if n_trades >= 3 * k else t_ts[k:2 * k]
    t_ts = np.sort(t_ts)
    clients = np.array([f"k{c}" for c in rng.integers(0, n_clients, size=n_trades)])
    side = rng.choice([1, -1], size=n_trades).astype(np.int8)
    qty = rng.choice([1000.0, 2000.0, 5000.0, 10_000.0, 250_000.0], size=n_trades)
    qty = qty + rng.integers(0, 3, size=n_trades) * 333.0
    return Tape(q_ts=q_ts, bid=bid, ask=ask, bid_vol=bid_vol, ask_vol=ask_vol, t_ts=t_ts,
                client=clients, side=side, qty=qty, tick=tick, day_id=day_id)


# -- labels ----------------------------------------------------------------------

def naive_labels(tape: Tape, g: int):
    """O(n m) rescan: (y, tau or -1, resolved_ts, censored) per trade."""
    q_ts, bid, ask = tape.q_ts, tape.bid, tape.ask
    T = int(q_ts.max())
    out = []
    for i in range(tape.n_trades):
        t = int(tape.t_ts[i])
        j0 = int(np.max(np.nonzero(q_ts <= t)[0]))
        end = min(t + g, T)
        inside = (q_ts > t) & (q_ts <= end)
        if tape.side[i] == 1:
            hit = inside & (bid > ask[j0])
        else:
            hit = inside & (ask < bid[j0])
        tau = int(q_ts[np.nonzero(hit)[0][0]]) if hit.any() else -1
        out.append((int(hit.any()), tau, end, t + g > T))
    return out


# -- features --------------------------------------------------------------------

UNITS = {"time": 1_000_000, "txn": 1, "vol": 2000.0}


def _slog(v):
    return math.copysign(math.log1p(abs(v)), v) if v != 0 else 0.0


def _bucket(d, u):
    if d < u:
        return 0
    for k in range(1, 7):
        if d < u * 2 ** k:
            return k
    return None


def rescan_features(tapes, labels, day: int, i: int, units=UNITS):
    """Features of trade ``i`` of ``tapes[day]`` recomputed from scratch.

    Returns ``(values, magnitudes)``: ``magnitudes`` holds, per feature, the
    sum of absolute terms entering it, a scale for relative comparisons.
    """
    tape = tapes[day]
    t = int(tape.t_ts[i])
    now = tape.day_id * DAY + t
    tick = tape.tick

    def px(tp, k):
        return tp.bid[k] * tick, tp.ask[k] * tick

    def mid(tp, k):
        # from integer ticks so an unchanged mid gives an exactly zero return
        return (int(tp.bid[k]) + int(tp.ask[k])) / 2 * tick

    def prevailing(tp, ts):
        j = -1
        for k in range(tp.n_quotes):
            if tp.q_ts[k] <= ts:
                j = k
        return j

    cid = tape.client[i]
    cash = inv = 0.0
    n_client = n_all = n_upd = 0
    qv = 0.0
    sharp = resolved = 0
    for d in range(day + 1):
        tp = tapes[d]
        last_trade = i if d == day else tp.n_trades
        for m in range(last_trade):
            n_all += 1
            if tp.client[m] == cid:
                n_client += 1
                jm = prevailing(tp, int(tp.t_ts[m]))
                b, a = px(tp, jm)
                s = int(tp.side[m])
                p = a if s == 1 else b
                inv += s * float(tp.qty[m]) / 10_000.0
                cash -= s * p * float(tp.qty[m])
                if tp.day_id * DAY + int(labels[d].resolved_ts[m]) < now:
                    resolved += 1
                    sharp += int(labels[d].y[m])
        last_quote = prevailing(tp, t) if d == day else tp.n_quotes - 1
        for k in range(last_quote + 1):
            n_upd += 1
            if k:
                r = math.log(mid(tp, k)) - math.log(mid(tp, k - 1))
                qv += r * r

    j = prevailing(tape, t)
    b, a = px(tape, j)
    x = [_slog(cash), _slog(inv), float(tape.qty[i]), a - b,
         (tape.bid_vol[j] - tape.ask_vol[j]) / (tape.bid_vol[j] + tape.ask_vol[j]),
         math.log1p(tape.bid_vol[j]), math.log1p(tape.ask_vol[j]), a, b, (a + b) / 2,
         float(n_upd), float(n_client), float(n_all), math.sqrt(qv),
         sharp / max(resolved, 1)]
    mag = [abs(v) for v in x]

    # clock coordinates of the current trade, earlier trades and quotes
    def trade_coord(m):
        vol = 0.0
        for r in range(m):
            vol += float(tape.qty[r])
        return {"time": int(tape.t_ts[m]), "txn": m, "vol": vol}

    def quote_coord(k):
        n = 0
        vol = 0.0
        for r in range(tape.n_trades):
            if tape.t_ts[r] < tape.q_ts[k]:
                n += 1
                vol += float(tape.qty[r])
        return {"time": int(tape.q_ts[k]), "txn": n, "vol": vol}

    cur = trade_coord(i)
    qcoords = [quote_coord(k) for k in range(j + 1)]
    ccoords = [trade_coord(m) for m in range(i) if tape.client[m] == cid]
    for c in ("time", "txn", "vol"):
        u = units[c]
        acc = [[0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0] for _ in range(7)]
        for k in range(j + 1):
            kb = _bucket(cur[c] - qcoords[k][c], u)
            if kb is None:
                continue
            r = math.log(mid(tape, k)) - math.log(mid(tape, k - 1)) if k else 0.0
            qb, qa = px(tape, k)
            imb = (tape.bid_vol[k] - tape.ask_vol[k]) / (tape.bid_vol[k] + tape.ask_vol[k])
            row = acc[kb]
            row[0] += 1
            row[1] += r * r
            row[2] += r
            row[3] += math.log1p(tape.bid_vol[k])
            row[4] += math.log1p(tape.ask_vol[k])
            row[5] += qa - qb
            row[6] += imb
            row[7] += abs(r)
            row[8] += abs(imb)
        counts = [0] * 7
        for co in ccoords:
            kb = _bucket(cur[c] - co[c], u)
            if kb is not None:
                counts[kb] += 1
        for kb in range(7):
            n, r2, rs, tb, ta, sp, im, rabs, imabs = acc[kb]
            if n:
                vals = [math.sqrt(r2), counts[kb], n, rs, tb / n, ta / n, sp / n, im / n]
                mags = [math.sqrt(r2), counts[kb], n, rabs, tb / n, ta / n, sp / n, imabs / n]
            else:
                vals = [0.0, counts[kb], 0, 0.0, 0.0, 0.0, 0.0, 0.0]
                mags = [0.0, counts[kb], 0, 0.0, 0.0, 0.0, 0.0, 0.0]
            x += [float(v) for v in vals]
            mag += [abs(float(v)) for v in mags]
    return np.array(x), np.array(mag)


# -- networks ----------------------------------------------------------------------

def mlp_hidden(psi, shapes, x, margin=False):
    """Straight-line ReLU forward with per-unit sums; returns the last activation.

    With ``margin`` also returns the smallest |pre-activation|, the distance
    to the nearest ReLU kink.
    """
    a = [float(v) for v in x]
    gap = math.inf
    k = 0
    for fan_in, fan_out in shapes:
        W = [[psi[k + r * fan_out + c] for c in range(fan_out)] for r in range(fan_in)]
        k += fan_in * fan_out
        bias = psi[k:k + fan_out]
        k += fan_out
        nxt = []
        for c in range(fan_out):
            s = float(bias[c])
            for r in range(fan_in):
                s += a[r] * W[r][c]
            gap = min(gap, abs(s))
            nxt.append(max(s, 0.0))
        a = nxt
    return (np.array(a), gap) if margin else np.array(a)


def h_bar(psi, shapes, x):
    return np.append(mlp_hidden(psi, shapes, x), 1.0)


def central_diff(fun, x0, step=1e-5):
    x0 = np.asarray(x0, float)
    g = np.empty_like(x0)
    for k in range(len(x0)):
        e = np.zeros_like(x0)
        e[k] = step
        g[k] = (fun(x0 + e) - fun(x0 - e)) / (2 * step)
    return g


def power_iteration_basis(E, d, iters=5000, tol=1e-15, seed=0):
    """Top-``d`` eigenvectors of ``E^T E`` by power iteration with deflation."""
    M = E.T @ E
    rng = np.random.default_rng(seed)
    vecs = []
    for _ in range(d):
        v = rng.normal(size=M.shape[0])
        for _ in range(iters):
            for u in vecs:
                v -= (u @ v) * u
            w = M @ v
            for u in vecs:
                w -= (u @ w) * u
            w /= np.linalg.norm(w)
            if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
                v = w
                break
            v = w
        vecs.append(v)
    return np.column_stack(vecs)


# -- variational oracle ---------------------------------------------------------------

def _sig(f):
    return 1.0 / (1.0 + np.exp(-f))


def kl_gauss(m, S, m0, S0):
    k = len(m)
    S0i = np.linalg.inv(S0)
    dm = m - m0
    return 0.5 * (np.trace(S0i @ S) + dm @ S0i @ dm - k
                  + np.linalg.slogdet(S0)[1] - np.linalg.slogdet(S)[1])


def linearized_expectations(hbar, F, nu0, y, Sigma0, Gamma0, n_samples=1_000_000, seed=0):
    """Monte-Carlo moments of the mean-linearized log-likelihood under the prior.

    The mean of ``y`` is written to first order around the prior means:
    ``E[y | w, z] ~ s0 + s0' (hbar.(w - nu0) + F.(z - mu0))``; with canonical
    link the score is ``(y - E[y | w, z]) * J``. The expected score comes
    from sampling, and the expected Hessian blocks from Stein's identity
    ``E[H] = S0^-1 E[(theta - m0) score^T]``.
    """
    rng = np.random.default_rng(seed)
    L, d = len(hbar), len(F)
    f0 = nu0 @ hbar
    s0, ds0 = _sig(f0), _sig(f0) * (1 - _sig(f0))
    dw = rng.multivariate_normal(np.zeros(L), Sigma0, size=n_samples)
    dz = rng.multivariate_normal(np.zeros(d), Gamma0, size=n_samples)
    mean_y = s0 + ds0 * (dw @ hbar + dz @ F)
    resid = y - mean_y
    gw = (resid[:, None] * hbar).mean(axis=0)
    gz = (resid[:, None] * F).mean(axis=0)
    Hw = np.linalg.solve(Sigma0, (dw * resid[:, None]).T @ np.tile(hbar, (n_samples, 1)) / n_samples)
    Hz = np.linalg.solve(Gamma0, (dz * resid[:, None]).T @ np.tile(F, (n_samples, 1)) / n_samples)
    return gw, gz, 0.5 * (Hw + Hw.T), 0.5 * (Hz + Hz.T)


def _unpack_chol(v, k):
    Lm = np.zeros((k, k))
    Lm[np.tril_indices(k)] = v
    Lm[np.diag_indices(k)] = np.exp(Lm[np.diag_indices(k)])
    return Lm @ Lm.T


def _pack_chol(S):
    Lm = np.linalg.cholesky(S)
    Lm[np.diag_indices(len(S))] = np.log(np.diag(Lm))
    return Lm[np.tril_indices(len(S))]


def minimize_linearized_kl(nu0, Sigma0, mu0, Gamma0, gw, gz, Hw, Hz):
    """Numerically minimize KL(q || q0) minus the linearized expected log-likelihood.

    The expected log-likelihood is expanded to first order in the
    variational parameters at the previous posterior:
    ``g.(m - m0) + 1/2 tr(H (S - S0))`` per factor.
    """
    L, d = len(nu0), len(mu0)
    nL = L * (L + 1) // 2

    def split(v):
        nu = v[:L]
        mu = v[L:L + d]
        S = _unpack_chol(v[L + d:L + d + nL], L)
        G = _unpack_chol(v[L + d + nL:], d)
        return nu, S, mu, G

    def objective(v):
        nu, S, mu, G = split(v)
        ell = (gw @ (nu - nu0) + 0.5 * np.trace(Hw @ (S - Sigma0))
               + gz @ (mu - mu0) + 0.5 * np.trace(Hz @ (G - Gamma0)))
        return kl_gauss(nu, S, nu0, Sigma0) + kl_gauss(mu, G, mu0, Gamma0) - ell

    v0 = np.concatenate([nu0, mu0, _pack_chol(Sigma0), _pack_chol(Gamma0)])
    res = minimize(objective, v0, method="BFGS", options={"gtol": 1e-10, "maxiter": 10_000})
    return split(res.x)


def rescan_all(tapes, labels, units=UNITS):
    """Rescan features for every trade of every day, stacked."""
    rows, mags = [], []
    for d, tape in enumerate(tapes):
        for i in range(tape.n_trades):
            x, m = rescan_features(tapes, labels, d, i, units)
            rows.append(x)
            mags.append(m)
    return np.array(rows), np.array(mags)


def relative_error(got, want, magnitude):
    """Elementwise error scaled by the summed-term magnitude; exact matches give 0."""
    err = np.abs(got - want) / np.maximum(magnitude, np.finfo(float).tiny)
    err[got == want] = 0.0
    return err
