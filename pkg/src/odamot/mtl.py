"""Joint online learning of per-target detectors around a shared running mean.

Every tracked target ``i`` owns a linear model ``w_i``. In each frame the
models are updated jointly by SGD on

    (1/N) sum_i (1/n_i) sum_k loss(x_ik, y_ik, w_i)
        + lam/(2N) sum_i ||w_i - w_mean||^2

where ``w_mean`` is the running mean of every instance model seen so far. The
mean is held fixed during the update and refreshed afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .core import BBox, iou_matrix
from .errors import DimMismatch, NonFinite, NoNegatives
from .linmodel import LinearModel, augment

ModelBank = dict  # TrackId -> LinearModel


@dataclass(frozen=True)
class RunningMean:
    mean: LinearModel
    count: float = 0.0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("running-mean count must be non-negative")


@dataclass(frozen=True)
class TargetSamples:
    """Training samples mined for one target in one frame (row 0 is the positive)."""

    X: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return len(self.y)


@dataclass
class MtlConfig:
    lam: float = 100.0
    eta: float = 1e-5
    epochs: int = 1
    n_neg: int = 10
    tau_neg: float = 0.3

    def __post_init__(self):
        if self.lam < 0 or self.eta <= 0 or self.epochs < 1 or self.n_neg < 1:
            raise ValueError(f"invalid MtlConfig {self}")
        if not 0 < self.tau_neg < 1:
            raise ValueError("tau_neg must lie in (0, 1)")


def warm_start(rm: RunningMean) -> LinearModel:
    """A fresh target model: an exact copy of the current category mean."""
    return LinearModel(rm.mean.weights.copy())


def mine_samples(predicted: BBox, proposals, features, model: LinearModel,
                 cfg: MtlConfig, positive=None, exclude=None) -> TargetSamples:
    """One positive at the predicted box plus the hardest distant negatives.

    Negatives are proposals overlapping the prediction by less than
    ``cfg.tau_neg`` IoU, ranked by the target's own score (stable by index).
    ``positive`` overrides the positive feature when the caller can extract
    features at arbitrary boxes. Proposals overlapping any box in ``exclude``
    by ``cfg.tau_neg`` or more are never used as negatives.
    """
    proposals = np.asarray(proposals, dtype=float).reshape(-1, 4)
    features = np.asarray(features, dtype=float)
    if len(proposals) != len(features):
        raise ValueError("proposals and features are not aligned")
    if len(proposals) == 0:
        raise NoNegatives("no proposals in frame")
    ov = iou_matrix(predicted.to_array(), proposals)[0]
    if positive is None:
        positive = features[int(np.argmax(ov))]
    ok = ov < cfg.tau_neg
    if exclude is not None and len(exclude):
        ok &= iou_matrix(proposals, np.asarray(exclude, dtype=float).reshape(-1, 4)).max(axis=1) < cfg.tau_neg
    cand = np.flatnonzero(ok)
    if cand.size == 0:
        raise NoNegatives("every proposal overlaps the target")
    scores = model.margin(features[cand])
    hard = cand[np.argsort(-scores, kind="stable")[: cfg.n_neg]]
    X = np.vstack([np.asarray(positive, dtype=float)[None, :], features[hard]])
    y = np.concatenate([[1.0], -np.ones(len(hard))])
    return TargetSamples(X, y)


def _check(bank, samples, rm):
    d = rm.mean.dim
    for tid, s in samples.items():
        if tid not in bank:
            raise KeyError(f"target {tid} has samples but no model")
        if bank[tid].dim != d or s.X.shape[1] != d:
            raise DimMismatch(f"target {tid}: dimension mismatch")


def mtl_objective(bank: ModelBank, samples: dict, rm: RunningMean, lam: float) -> float:
    _check(bank, samples, rm)
    n_tasks = len(samples)
    if n_tasks == 0:
        return 0.0
    data = 0.0
    reg = 0.0
    for tid, s in samples.items():
        w = bank[tid].weights
        z = s.y * (augment(s.X) @ w)
        data += -log_expit(z).mean()
        diff = w - rm.mean.weights
        reg += diff @ diff
    return data / n_tasks + lam * reg / (2 * n_tasks)


def mtl_gradient(bank: ModelBank, samples: dict, rm: RunningMean, lam: float) -> dict:
    """Gradient of ``mtl_objective`` with respect to each sampled ``w_i``."""
    _check(bank, samples, rm)
    n_tasks = len(samples)
    mean = rm.mean.weights.copy()
    grads = {}
    for tid, s in samples.items():
        w = bank[tid].weights
        Xa = augment(s.X)
        z = s.y * (Xa @ w)
        g_data = -(Xa * (s.y * expit(-z))[:, None]).mean(axis=0)
        grads[tid] = (g_data + lam * (w - mean)) / n_tasks
    return grads


def _sgd_target(w, Xa, y, mean, lam, n_tasks, eta, epochs, rng):
    n = len(y)
    scale = eta / (n_tasks * n)
    w = w.copy()
    for _ in range(epochs):
        for k in rng.permutation(n):
            z = y[k] * (Xa[k] @ w)
            g = -y[k] * expit(-z) * Xa[k] + lam * (w - mean)
            w -= scale * g
    return w


def update_targets(bank: ModelBank, samples: dict, rm: RunningMean, cfg: MtlConfig,
                   seed=0) -> ModelBank:
    """Run ``cfg.epochs`` SGD passes over each target's samples.

    A pass over target ``i``'s ``n_i`` samples in seeded random order applies
    per-sample steps whose sum at fixed weights equals that target's full
    gradient. Targets are independent given the frozen mean; each one draws
    its visiting order from its own stream derived from ``seed`` and its id.
    Raises ``NonFinite`` if any updated model diverges.
    """
    _check(bank, samples, rm)
    out = dict(bank)
    n_tasks = len(samples)
    mean = rm.mean.weights
    for tid, s in samples.items():
        rng = np.random.default_rng(np.random.SeedSequence([*np.atleast_1d(seed), tid]))
        w = _sgd_target(bank[tid].weights, augment(s.X), s.y, mean, cfg.lam, n_tasks,
                        cfg.eta, cfg.epochs, rng)
        if not np.all(np.isfinite(w)):
            raise NonFinite(f"target {tid} diverged")
        out[tid] = LinearModel(w)
    return out


def update_running_mean(rm: RunningMean, bank: ModelBank) -> RunningMean:
    """Fold one frame's instance models into the running mean.

    ``mean <- (count * mean + sum_i w_i) / (count + N)`` and ``count += N``.
    """
    if not bank:
        return rm
    stack = np.stack([bank[k].weights for k in sorted(bank)])
    n = len(stack)
    new_count = rm.count + n
    total = rm.count * rm.mean.weights + stack.sum(axis=0)
    return RunningMean(LinearModel(total / new_count), new_count)
