"""Bias-augmented linear logistic detector.

A model holds ``d + 1`` weights; the last one multiplies a constant 1 appended
to every feature vector. Scores are probabilities ``sigmoid(w . phi + b)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .errors import BadMagic, Degenerate, DimMismatch, NonFinite, TruncatedFile

MODEL_MAGIC = b"ODMW"


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        if w.size < 2:
            raise ValueError("a model needs at least one feature weight and a bias")
        if not np.all(np.isfinite(w)):
            raise NonFinite("model weights must be finite")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, dim: int) -> "LinearModel":
        return cls(np.zeros(dim + 1))

    @property
    def dim(self) -> int:
        return self.weights.size - 1

    @property
    def w(self) -> np.ndarray:
        return self.weights[:-1]

    @property
    def bias(self) -> float:
        return float(self.weights[-1])

    def __eq__(self, other):
        if not isinstance(other, LinearModel):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash(self.weights.tobytes())

    def margin(self, phi) -> np.ndarray | float:
        """Raw score ``w . phi + b`` for one vector or a ``(n, d)`` stack."""
        phi = np.asarray(phi, dtype=float)
        if phi.shape[-1] != self.dim:
            raise DimMismatch(f"feature dim {phi.shape[-1]} != model dim {self.dim}")
        return phi @ self.weights[:-1] + self.weights[-1]

    def prob(self, phi):
        return expit(self.margin(phi))


def augment(phi) -> np.ndarray:
    """Append the constant bias coordinate to one vector or a stack."""
    phi = np.asarray(phi, dtype=float)
    ones = np.ones(phi.shape[:-1] + (1,))
    return np.concatenate([phi, ones], axis=-1)


def normalize_features(phi, norm: float = 1.0) -> np.ndarray:
    """Rescale rows to L2 norm ``norm``; all-zero rows stay zero."""
    phi = np.asarray(phi, dtype=float)
    n = np.linalg.norm(phi, axis=-1, keepdims=True)
    return np.divide(phi * norm, n, out=np.zeros_like(phi), where=n > 0)


def predict_prob(m: LinearModel, phi) -> float:
    return float(m.prob(phi))


def logistic_loss(m: LinearModel, phi, y: int) -> float:
    """``log(1 + exp(-y (w . phi + b)))``, computed without overflow."""
    return float(-log_expit(y * m.margin(phi)))


def loss_gradient(m: LinearModel, phi, y: int) -> np.ndarray:
    z = y * m.margin(phi)
    return -y * expit(-z) * augment(phi)


def batch_loss_gradient(weights: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Mean logistic-loss gradient over rows of ``X`` (already augmented)."""
    z = y * (X @ weights)
    return -(X * (y * expit(-z))[:, None]).mean(axis=0)


def sgd_step(m: LinearModel, grad, eta: float) -> LinearModel:
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    grad = np.asarray(grad, dtype=float)
    if grad.shape != m.weights.shape:
        raise DimMismatch(f"gradient shape {grad.shape} != {m.weights.shape}")
    new = m.weights - eta * grad
    if not np.all(np.isfinite(new)):
        raise NonFinite("SGD step produced non-finite weights")
    return LinearModel(new)


def _fit_logreg(X, y, lam, w0, max_iter=500, gtol=1e-6):
    # mean logistic loss + lam/2 ||w||^2, bias unregularized
    reg = np.ones(X.shape[1])
    reg[-1] = 0.0

    def fun(w):
        z = y * (X @ w)
        f = -log_expit(z).mean() + 0.5 * lam * np.sum(reg * w * w)
        g = -(X * (y * expit(-z))[:, None]).mean(axis=0) + lam * reg * w
        return f, g

    res = minimize(fun, w0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": gtol})
    return res.x


def batch_train(pos, neg_pool, lam: float = 1e-3, rounds: int = 3, *,
                n_init_neg: int | None = None, mine_prob: float = 0.3,
                seed: int = 0) -> LinearModel:
    """Offline L2-regularized logistic regression with hard-negative mining.

    Training starts from a random subset of ``neg_pool``. Each mining round
    adds the highest-scoring pool negatives with probability above
    ``mine_prob``, at most twice the current negative count, and retrains.
    Mining stops early when no new hard negatives are found.
    """
    pos = np.atleast_2d(np.asarray(pos, dtype=float))
    neg_pool = np.atleast_2d(np.asarray(neg_pool, dtype=float))
    if pos.size == 0 or neg_pool.size == 0:
        raise Degenerate("batch_train needs non-empty positive and negative sets")
    if pos.shape[1] != neg_pool.shape[1]:
        raise DimMismatch("positive and negative feature dims differ")
    rng = np.random.default_rng(seed)
    n_pool = len(neg_pool)
    if n_init_neg is None:
        n_init_neg = max(1, min(len(pos), n_pool // 4))
    n_init_neg = min(n_init_neg, n_pool)
    in_set = np.zeros(n_pool, dtype=bool)
    in_set[rng.choice(n_pool, size=n_init_neg, replace=False)] = True

    Xp = augment(pos)
    Xpool = augment(neg_pool)
    w = np.zeros(Xp.shape[1])
    for r in range(rounds + 1):
        X = np.vstack([Xp, Xpool[in_set]])
        y = np.concatenate([np.ones(len(Xp)), -np.ones(int(in_set.sum()))])
        w = _fit_logreg(X, y, lam, w)
        if r == rounds:
            break
        p = expit(Xpool @ w)
        cand = np.flatnonzero(~in_set & (p > mine_prob))
        if cand.size == 0:
            break
        order = cand[np.argsort(-p[cand], kind="stable")]
        in_set[order[: 2 * int(in_set.sum())]] = True
    return LinearModel(w)


def save_model(m: LinearModel, path) -> None:
    data = MODEL_MAGIC + struct.pack("<I", m.dim) + m.weights.astype("<f8").tobytes()
    Path(path).write_bytes(data)


def load_model(path, dim: int | None = None) -> LinearModel:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise TruncatedFile(f"{path}: header truncated")
    if data[:4] != MODEL_MAGIC:
        raise BadMagic(f"{path}: expected {MODEL_MAGIC!r}, got {data[:4]!r}")
    (d,) = struct.unpack_from("<I", data, 4)
    need = 8 + 8 * (d + 1)
    if len(data) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, got {len(data)}")
    if dim is not None and d != dim:
        raise DimMismatch(f"{path}: model dim {d} != run dim {dim}")
    return LinearModel(np.frombuffer(data, dtype="<f8", count=d + 1, offset=8).astype(np.float64))
