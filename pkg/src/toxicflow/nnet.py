"""ReLU MLP feature transform with an explicit logistic last layer.

The hidden parameters ``psi`` live in one flat vector (per layer: weight
matrix in row-major ``(fan_in, fan_out)`` order, then bias). The feature
map ``g(x; psi)`` is the last hidden activation with a constant 1 appended,
so the last-layer vector ``w`` has ``hidden[-1] + 1`` entries and carries
the output bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NumericalError(ArithmeticError):
    """A computation produced a non-finite value."""


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def bernoulli_nll(logits, y) -> float:
    """Sum of -log Bern(y | sigmoid(logit)), via softplus."""
    logits = np.asarray(logits, float)
    y = np.asarray(y, float)
    return float(np.sum(softplus(logits) - y * logits))


@dataclass(frozen=True)
class MlpArch:
    input_dim: int = 183
    hidden: tuple[int, ...] = (100, 100, 100)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim,) + tuple(self.hidden)
        return list(zip(dims[:-1], dims[1:]))

    @property
    def n_hidden_params(self) -> int:
        """D: weights plus biases of all hidden layers."""
        return sum(i * o + o for i, o in self.layer_shapes)

    @property
    def last_dim(self) -> int:
        """L: last hidden width plus the appended constant."""
        return self.hidden[-1] + 1

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpArch":
        return cls(int(d["input_dim"]), tuple(int(h) for h in d["hidden"]))


def unpack(arch: MlpArch, psi: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of ``psi`` as ``[(W, b), ...]``."""
    psi = np.asarray(psi)
    if psi.shape != (arch.n_hidden_params,):
        raise ValueError(f"psi has shape {psi.shape}, expected ({arch.n_hidden_params},)")
    layers, k = [], 0
    for i, o in arch.layer_shapes:
        W = psi[k:k + i * o].reshape(i, o)
        k += i * o
        layers.append((W, psi[k:k + o]))
        k += o
    return layers


def init_params(arch: MlpArch, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """He-uniform hidden weights, zero biases; LeCun-uniform last layer."""
    parts = []
    for i, o in arch.layer_shapes:
        lim = np.sqrt(6.0 / i)
        parts.append(rng.uniform(-lim, lim, size=i * o))
        parts.append(np.zeros(o))
    psi = np.concatenate(parts)
    lim = np.sqrt(3.0 / arch.hidden[-1])
    w = np.concatenate([rng.uniform(-lim, lim, size=arch.hidden[-1]), [0.0]])
    return psi, w


def _forward_layers(layers, X):
    acts = [X]
    pre = []
    a = X
    for W, b in layers:
        z = a @ W + b
        a = np.maximum(z, 0.0)
        pre.append(z)
        acts.append(a)
    return pre, acts


def hidden_features(arch: MlpArch, psi: np.ndarray, X: np.ndarray) -> np.ndarray:
    """g(x; psi) with the constant 1 appended; rows follow ``X``."""
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[1] != arch.input_dim:
        raise ValueError(f"x has {X.shape[1]} features, expected {arch.input_dim}")
    _, acts = _forward_layers(unpack(arch, psi), X)
    return np.hstack([acts[-1], np.ones((len(X), 1))])


def forward(arch: MlpArch, psi: np.ndarray, w: np.ndarray, x: np.ndarray):
    """Logit(s) and hidden features; 1-D ``x`` gives a scalar logit."""
    w = np.asarray(w, float)
    if w.shape != (arch.last_dim,):
        raise ValueError(f"w has shape {w.shape}, expected ({arch.last_dim},)")
    single = np.ndim(x) == 1
    H = hidden_features(arch, psi, x)
    f = H @ w
    if single:
        return float(f[0]), H[0]
    return f, H


def _backprop(layers, pre, acts, delta_out, W_last):
    """Gradient of sum(delta_out * (acts[-1] @ W_last)) wrt every layer."""
    grads = [None] * len(layers)
    g = np.outer(delta_out, W_last) if delta_out.ndim == 1 else delta_out @ W_last.T
    for li in range(len(layers) - 1, -1, -1):
        g = g * (pre[li] > 0)
        gW = acts[li].T @ g
        gb = g.sum(axis=0)
        grads[li] = (gW, gb)
        if li:
            g = g @ layers[li][0].T
    return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])


def nll_and_grad(arch: MlpArch, psi: np.ndarray, w: np.ndarray, X: np.ndarray, y: np.ndarray):
    """Summed Bernoulli NLL and its exact gradients wrt ``psi`` and ``w``."""
    X = np.atleast_2d(np.asarray(X, float))
    y = np.asarray(y, float).ravel()
    layers = unpack(arch, psi)
    pre, acts = _forward_layers(layers, X)
    H = np.hstack([acts[-1], np.ones((len(X), 1))])
    f = H @ w
    loss = bernoulli_nll(f, y)
    resid = sigmoid(f) - y           # d loss / d logit
    grad_w = H.T @ resid
    grad_psi = _backprop(layers, pre, acts, resid, w[:-1])
    return loss, grad_psi, grad_w


def logit_grad_psi(arch: MlpArch, psi: np.ndarray, v: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Gradient of ``v . g(x; psi)`` wrt ``psi`` for a single input ``x``."""
    x = np.asarray(x, float).reshape(1, -1)
    layers = unpack(arch, psi)
    pre, acts = _forward_layers(layers, x)
    return _backprop(layers, pre, acts, np.ones(1), np.asarray(v, float)[:-1])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float):
    """One bias-corrected Adam step; returns ``(new_params, new_state)``."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads and Adam moments must share a shape")
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grads
    v = state.beta2 * state.v + (1 - state.beta2) * grads * grads
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.beta1, state.beta2, state.eps)
