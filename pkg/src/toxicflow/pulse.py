"""Recursive Gaussian filter over last-layer and subspace hidden parameters.

Each resolved trade moves the posterior means along the prior covariance
times the observed residual, and shrinks both covariances by a rank-one
Sherman-Morrison term, so a step costs one forward/backward pass plus
O(L^2 + d^2) arithmetic with no matrix inversion.

Deploy-time delays are handled by :class:`AsyncEngine`: a trade's label is
only applied once its horizon has strictly elapsed before a new arrival.
"""

from __future__ import annotations

import csv
import heapq
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .nnet import NumericalError, sigmoid

SYMMETRIZE_EVERY = 1000


@dataclass(eq=False)
class PulsePosterior:
    nu: np.ndarray       # L
    Sigma: np.ndarray    # L x L
    mu: np.ndarray       # d
    Gamma: np.ndarray    # d x d
    update_count: int = 0

    def copy(self) -> "PulsePosterior":
        return PulsePosterior(self.nu.copy(), self.Sigma.copy(), self.mu.copy(),
                              self.Gamma.copy(), self.update_count)

    def is_pd(self, tol: float = 1e-12) -> bool:
        """Both covariances symmetric with smallest eigenvalue above ``tol``."""
        for S in (self.Sigma, self.Gamma):
            if not np.allclose(S, S.T, rtol=0, atol=1e-10 * max(1.0, np.abs(S).max())):
                return False
            if np.linalg.eigvalsh(0.5 * (S + S.T))[0] <= tol:
                return False
        return True

    def save(self, path, meta: dict | None = None) -> None:
        save_checkpoint(path, {"nu": self.nu, "Sigma": self.Sigma, "mu": self.mu,
                               "Gamma": self.Gamma},
                        {"update_count": self.update_count, **(meta or {})})

    @classmethod
    def load(cls, path) -> "PulsePosterior":
        a, meta = load_checkpoint(path)
        return cls(a["nu"], a["Sigma"], a["mu"], a["Gamma"], int(meta["update_count"]))


def _sm_downdate(S: np.ndarray, v: np.ndarray, s: float) -> np.ndarray:
    """Covariance after adding ``s v v^T`` to its inverse (Sherman-Morrison)."""
    Sv = S @ v
    return S - (s / (1.0 + s * (v @ Sv))) * np.outer(Sv, Sv)


class PulseFilter:
    """Plug-in predictor and one-step updater bound to a warmup model.

    The hidden weights ``psi = A mu + b`` are cached and refreshed only when
    ``mu`` changes, so a prediction is one forward pass.
    """

    def __init__(self, model, posterior: PulsePosterior, dump_dir=None):
        self.model = model
        self.post = posterior
        self.dump_dir = dump_dir
        self._shapes = model.arch.layer_shapes
        self._refresh()

    def _refresh(self) -> None:
        psi = self.model.A @ self.post.mu + self.model.b
        self._layers = []
        k = 0
        for i, o in self._shapes:
            W = psi[k:k + i * o].reshape(i, o)
            k += i * o
            self._layers.append((W, psi[k:k + o]))
            k += o

    def _forward(self, x: np.ndarray):
        a = np.asarray(x, float)
        pre = []
        acts = [a]
        for W, b in self._layers:
            z = a @ W + b
            a = np.maximum(z, 0.0)
            pre.append(z)
            acts.append(a)
        h = np.empty(len(a) + 1)
        h[:-1] = a
        h[-1] = 1.0
        return h, pre, acts

    def hidden(self, x: np.ndarray) -> np.ndarray:
        """h(mu; x) with the appended constant."""
        return self._forward(x)[0]

    def logit(self, x: np.ndarray) -> float:
        return float(self.post.nu @ self.hidden(x))

    def predict(self, x: np.ndarray) -> float:
        """Plug-in probability sigma(nu^T h(mu; x)); covariances are not used."""
        return float(sigmoid(self.logit(x)))

    def grad_z(self, x: np.ndarray, nu: np.ndarray | None = None) -> np.ndarray:
        """F_z: gradient of ``z -> nu^T h(z; x)`` at ``z = mu``."""
        h, pre, acts = self._forward(x)
        return self._grad_z(pre, acts, self.post.nu if nu is None else nu)

    def _grad_z(self, pre, acts, nu) -> np.ndarray:
        A = self.model.A
        g = nu[:-1] * (pre[-1] > 0)
        F = np.zeros(A.shape[1])
        offsets = np.cumsum([0] + [i * o + o for i, o in self._shapes])
        for li in range(len(self._layers) - 1, -1, -1):
            i, o = self._shapes[li]
            k = offsets[li]
            # d(nu^T h)/dW = outer(acts[li], g); contract with A's rows block-wise
            F += np.outer(acts[li], g).ravel() @ A[k:k + i * o]
            F += g @ A[k + i * o:k + i * o + o]
            if li:
                g = (self._layers[li][0] @ g) * (pre[li - 1] > 0)
        return F

    def update(self, x: np.ndarray, y: int) -> None:
        """Apply one resolved observation in place."""
        post = self.post
        h, pre, acts = self._forward(x)
        f = float(post.nu @ h)
        p = float(sigmoid(f))
        r = y - p
        s = p * (1.0 - p)
        F = self._grad_z(pre, acts, post.nu)
        Sh = post.Sigma @ h
        GF = post.Gamma @ F
        nu = post.nu + Sh * r
        Sigma = post.Sigma - (s / (1.0 + s * (h @ Sh))) * np.outer(Sh, Sh)
        mu = post.mu + GF * r
        Gamma = post.Gamma - (s / (1.0 + s * (F @ GF))) * np.outer(GF, GF)
        if not (np.isfinite(nu).all() and np.isfinite(mu).all()
                and np.isfinite(Sigma).all() and np.isfinite(Gamma).all()):
            self._dump()
            raise NumericalError(f"non-finite posterior at update {post.update_count + 1}")
        post.nu, post.Sigma, post.mu, post.Gamma = nu, Sigma, mu, Gamma
        post.update_count += 1
        if post.update_count % SYMMETRIZE_EVERY == 0:
            post.Sigma = 0.5 * (post.Sigma + post.Sigma.T)
            post.Gamma = 0.5 * (post.Gamma + post.Gamma.T)
        if r != 0.0:
            self._refresh()

    def _dump(self) -> None:
        if self.dump_dir is not None:
            os.makedirs(self.dump_dir, exist_ok=True)
            self.post.save(os.path.join(self.dump_dir, "posterior_at_failure.ckpt"))


def predict(post: PulsePosterior, model, x: np.ndarray) -> float:
    """Stateless plug-in prediction."""
    return PulseFilter(model, post).predict(x)


def update(post: PulsePosterior, model, x: np.ndarray, y: int) -> PulsePosterior:
    """Stateless single update; returns a new posterior."""
    filt = PulseFilter(model, post.copy())
    filt.update(x, y)
    return filt.post


class MleLearner:
    """Running toxic fraction exposed through the learner interface."""

    def __init__(self):
        self.success = 0
        self.total = 0

    @property
    def update_count(self) -> int:
        return self.total

    def predict(self, x=None) -> float:
        return self.success / self.total if self.total else 0.5

    def update(self, x, y: int) -> None:
        self.success += int(y)
        self.total += 1


class PulseLearner:
    """Adapter giving :class:`PulseFilter` the learner interface."""

    def __init__(self, filt: PulseFilter):
        self.filter = filt

    @property
    def update_count(self) -> int:
        return self.filter.post.update_count

    def predict(self, x) -> float:
        return self.filter.predict(x)

    def update(self, x, y: int) -> None:
        self.filter.update(x, y)


class FrozenLearner:
    """Wraps a fixed scoring function; updates are ignored."""

    def __init__(self, score):
        self.score = score
        self.update_count = 0

    def predict(self, x) -> float:
        return float(self.score(x))

    def update(self, x, y) -> None:
        pass


@dataclass(order=True)
class _Pending:
    resolve_ts: int
    seq: int
    x: np.ndarray = field(compare=False)
    y: int = field(compare=False)


class AsyncEngine:
    """Delayed-label scheduler around a learner.

    A trade arriving at ``t`` with horizon ``G`` becomes usable for updates
    only by arrivals strictly after ``t + G``. Before every prediction the
    engine applies all such trades in (resolve time, arrival order).

    Args:
        learner: Object with ``predict(x)``, ``update(x, y)`` and ``update_count``.
        horizon: ``G`` in microseconds.
    """

    def __init__(self, learner, horizon: int):
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        self.learner = learner
        self.horizon = int(horizon)
        self._pending: list[_Pending] = []
        self._seq = 0
        self._last_ts: int | None = None

    @property
    def n_pending(self) -> int:
        return len(self._pending)

    def resolve_until(self, ts: int) -> int:
        """Apply every pending trade with resolve time strictly before ``ts``."""
        n = 0
        while self._pending and self._pending[0].resolve_ts < ts:
            item = heapq.heappop(self._pending)
            self.learner.update(item.x, item.y)
            n += 1
        return n

    def process_arrival(self, ts: int, x: np.ndarray, y: int,
                        resolve_ts: int | None = None) -> tuple[float, int]:
        """Resolve due labels, predict for the new trade, then queue it.

        Args:
            ts: Arrival time (microseconds, monotone across calls).
            x: Feature vector given to the learner.
            y: The trade's label; held back until it resolves.
            resolve_ts: Override for ``ts + G``.

        Returns:
            ``(probability, params_version)`` where the version counts the
            updates applied before this prediction.
        """
        ts = int(ts)
        if self._last_ts is not None and ts < self._last_ts:
            raise ValueError(f"out-of-order arrival: {ts} after {self._last_ts}")
        self._last_ts = ts
        self.resolve_until(ts)
        version = self.learner.update_count
        p = self.learner.predict(x)
        rts = ts + self.horizon if resolve_ts is None else int(resolve_ts)
        heapq.heappush(self._pending, _Pending(rts, self._seq, x, int(y)))
        self._seq += 1
        return p, version


PREDICTION_HEADER = ["ts_us", "client_id", "side", "horizon_us", "p_toxic", "params_version"]


def write_prediction_log(path, ts, client, side, horizon: int, p, version) -> None:
    """Write a prediction-log CSV; ``side`` holds +1/-1 codes."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_HEADER)
        for row in zip(ts, client, side, p, version):
            t, c, sd, pr, v = row
            w.writerow([int(t), c, "B" if int(sd) == 1 else "S", horizon, repr(float(pr)), int(v)])


def read_prediction_log(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {
        "ts": np.array([int(r["ts_us"]) for r in rows], np.int64),
        "client": np.array([r["client_id"] for r in rows], dtype=object),
        "side": np.array([1 if r["side"] == "B" else -1 for r in rows], np.int8),
        "horizon": np.array([int(r["horizon_us"]) for r in rows], np.int64),
        "p": np.array([float(r["p_toxic"]) for r in rows]),
        "version": np.array([int(r["params_version"]) for r in rows], np.int64),
    }
