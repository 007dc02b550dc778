"""Offline warmup: mini-batch Adam training, iterate stacking and subspace extraction.

The hidden parameters seen during the last epochs of training are stacked
row-wise; the top right singular vectors of that matrix span the subspace
in which the deploy-time filter moves the hidden layers, anchored at the
final iterate.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .features import Standardizer
from .nnet import (AdamState, MlpArch, NumericalError, adam_step, forward, init_params,
                   nll_and_grad, sigmoid)
from .pulse import PulsePosterior


@dataclass
class WarmupConfig:
    epochs: int = 850
    skip: int = 50
    thin: int = 4
    dim: int = 20
    lr: float = 1e-7
    batch_size: int = 256
    seed: int = 0
    prior_var_w: float = 1.0
    prior_var_z: float = 1.0
    weight_decay: float = 0.0  # Gaussian prior precision on all weights
    hidden: tuple[int, ...] = (100, 100, 100)

    def validate(self) -> None:
        if not 0 < self.skip < self.epochs:
            raise ValueError("need 0 < skip < epochs")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.dim < 1:
            raise ValueError("subspace dim must be >= 1")
        if self.dim > self.n_rows:
            raise ValueError(f"subspace dim {self.dim} exceeds {self.n_rows} stored iterates")
        if self.lr <= 0 or self.batch_size < 1:
            raise ValueError("lr and batch_size must be positive")
        if self.prior_var_w <= 0 or self.prior_var_z <= 0:
            raise ValueError("prior variances must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")

    @property
    def n_rows(self) -> int:
        """Number of stored iterates: floor((E - n) / k) + 1."""
        return (self.epochs - self.skip) // self.thin + 1

    def stored_epochs(self) -> list[int]:
        """Epochs whose iterates are stacked, counted back from the last one."""
        return sorted(self.epochs - j * self.thin for j in range(self.n_rows))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WarmupConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass(eq=False)
class SubspaceModel:
    """Everything the deploy stage needs from warmup."""

    arch: MlpArch
    A: np.ndarray          # D x d, orthonormal columns
    b: np.ndarray          # D, final hidden iterate
    w_final: np.ndarray    # L
    standardizer: Standardizer
    config: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def psi(self, z: np.ndarray) -> np.ndarray:
        return self.A @ z + self.b

    def predict_map(self, X: np.ndarray) -> np.ndarray:
        """Probabilities of the warmup network on standardized inputs."""
        f, _ = forward(self.arch, self.b, self.w_final, np.atleast_2d(X))
        return sigmoid(f)

    def save(self, path) -> None:
        meta = {"arch": self.arch.to_dict(), "config": self.config,
                "standardizer": self.standardizer.to_dict()}
        save_checkpoint(path, {"A": self.A, "b": self.b, "w_final": self.w_final}, meta)

    @classmethod
    def load(cls, path) -> "SubspaceModel":
        arrays, meta = load_checkpoint(path)
        return cls(MlpArch.from_dict(meta["arch"]), arrays["A"], arrays["b"], arrays["w_final"],
                   Standardizer.from_dict(meta["standardizer"]), meta.get("config", {}))


@dataclass(eq=False)
class WarmupResult:
    model: SubspaceModel
    iterates: np.ndarray   # rows = stored hidden iterates, ascending epoch
    epochs: list[int]
    loss_history: list[float]  # mean full-set NLL after each epoch; entry 0 is the init


def mean_nll(arch: MlpArch, psi: np.ndarray, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    loss, _, _ = nll_and_grad(arch, psi, w, X, y)
    return loss / len(y)


def run_warmup(X: np.ndarray, y: np.ndarray, cfg: WarmupConfig,
               standardizer: Standardizer | None = None) -> WarmupResult:
    """Train the MLP with mini-batch Adam and extract the subspace.

    The objective is the summed Bernoulli NLL plus
    ``weight_decay / 2 * |theta|^2`` (a zero-mean Gaussian prior).

    Args:
        X: Standardized warmup features, one row per trade.
        y: Resolved 0/1 labels.
        cfg: Training and subspace settings.
        standardizer: Scaling already applied to ``X``; stored in the model.

    Raises:
        NumericalError: if the loss becomes non-finite.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float).ravel()
    if len(y) == 0 or len(X) != len(y):
        raise ValueError("warmup set must be non-empty with one label per row")
    cfg.validate()
    arch = MlpArch(X.shape[1], tuple(cfg.hidden))
    D = arch.n_hidden_params
    rng = np.random.default_rng(cfg.seed)
    psi, w = init_params(arch, rng)
    theta = np.concatenate([psi, w])
    state = AdamState.zeros(len(theta))
    keep = set(cfg.stored_epochs())
    rows, epochs = [], []
    history = [mean_nll(arch, psi, w, X, y)]
    n = len(y)
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, g_psi, g_w = nll_and_grad(arch, theta[:D], theta[D:], X[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite warmup loss at epoch {epoch}")
            grads = np.concatenate([g_psi, g_w])
            if cfg.weight_decay:
                # the prior term is spread evenly over the epoch's batches
                grads += cfg.weight_decay * (len(idx) / n) * theta
            grads /= len(idx)
            theta, state = adam_step(theta, grads, state, cfg.lr)
        history.append(mean_nll(arch, theta[:D], theta[D:], X, y))
        if not np.isfinite(history[-1]):
            raise NumericalError(f"non-finite warmup loss after epoch {epoch}")
        if epoch in keep:
            rows.append(theta[:D].copy())
            epochs.append(epoch)
    iterates = np.vstack(rows)
    A = compute_projection(iterates, cfg.dim)
    model = SubspaceModel(arch, A, theta[:D].copy(), theta[D:].copy(),
                          standardizer or Standardizer.identity(X.shape[1]), cfg.to_dict())
    return WarmupResult(model, iterates, epochs, history)


def _fix_signs(V: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def compute_projection(E: np.ndarray, d: int) -> np.ndarray:
    """Top-``d`` right singular vectors of ``E`` as columns, sign-normalized.

    Columns follow descending singular value; each column's largest-magnitude
    entry is positive. If ``E`` has fewer than ``d`` non-negligible singular
    values, the basis is completed with unit vectors orthogonalized against
    it (with a warning).
    """
    E = np.asarray(E, float)
    if E.ndim != 2:
        raise ValueError("iterate matrix must be 2-D")
    n_rows, D = E.shape
    if not 1 <= d <= D:
        raise ValueError(f"subspace dim {d} outside [1, {D}]")
    if d > n_rows:
        raise ValueError(f"subspace dim {d} exceeds {n_rows} stored iterates")
    _, s, Vt = np.linalg.svd(E, full_matrices=False)
    tol = max(E.shape) * np.finfo(float).eps * (s[0] if len(s) else 0.0)
    rank = int(np.sum(s > tol))
    V = Vt[:min(d, rank)].T
    if rank < d:
        warnings.warn(f"iterate matrix has rank {rank} < {d}; completing the basis",
                      RuntimeWarning, stacklevel=2)
        cols = [V[:, k] for k in range(V.shape[1])]
        for k in range(D):
            if len(cols) == d:
                break
            e = np.zeros(D)
            e[k] = 1.0
            for _ in range(2):
                for c in cols:
                    e -= (c @ e) * c
            nrm = np.linalg.norm(e)
            if nrm > 0.5:
                cols.append(e / nrm)
        V = np.column_stack(cols)
    return _fix_signs(V)


def init_priors(model: SubspaceModel, psi_final: np.ndarray | None = None,
                prior_var_w: float | None = None,
                prior_var_z: float | None = None) -> PulsePosterior:
    """Gaussian priors centred on the warmup solution.

    The hidden-subspace mean is ``A^T (psi_final - b)``, which is zero when
    ``psi_final`` is the anchor ``b`` itself.
    """
    vw = model.config.get("prior_var_w", 1.0) if prior_var_w is None else prior_var_w
    vz = model.config.get("prior_var_z", 1.0) if prior_var_z is None else prior_var_z
    psi_final = model.b if psi_final is None else np.asarray(psi_final, float)
    L, d = len(model.w_final), model.dim
    mu = model.A.T @ (psi_final - model.b)
    return PulsePosterior(model.w_final.copy(), vw * np.eye(L), mu, vz * np.eye(d))
