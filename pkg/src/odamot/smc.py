"""Per-target Sequential Monte Carlo motion model.

Particles are candidate boxes. They are moved by the median optical-flow
velocity of the previous estimate plus Gaussian noise whose standard deviation
is relative to each particle's size and shrinks with the number of successful
updates of the target. Weights follow Sequential Importance Sampling with the
transition prior as proposal, so each weight is multiplied by the observation
likelihood and renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BBox, Detection, clip_boxes
from .errors import AllZeroWeights, EmptyBox, FeatureUnavailable
from .linmodel import LinearModel

MIN_SIDE = 1.0


@dataclass(frozen=True, eq=False)
class ParticleSet:
    boxes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = np.array(self.boxes, dtype=float).reshape(-1, 4)
        w = np.array(self.weights, dtype=float).ravel()
        if len(b) != len(w) or len(b) == 0:
            raise ValueError("boxes and weights must be non-empty and aligned")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(w))) or np.any(w < 0):
            raise ValueError("particles must be finite with non-negative weights")
        b.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "boxes", b)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.weights)

    def __len__(self):
        return self.n


@dataclass(frozen=True)
class NoiseSchedule:
    sigma0: float = 0.05
    successes: int = 0

    def __post_init__(self):
        if self.sigma0 < 0 or self.successes < 0:
            raise ValueError("sigma0 and successes must be non-negative")

    @property
    def sigma(self) -> float:
        return noise_sigma(self.sigma0, self.successes)


def noise_sigma(sigma0: float, successes: int) -> float:
    """Relative noise after ``successes`` successful updates: ``sigma0 / (1 + k)``."""
    return sigma0 / (1.0 + successes)


def _relative_noise(boxes, sigma, rng):
    scale = np.stack([boxes[:, 2], boxes[:, 3], boxes[:, 2], boxes[:, 3]], axis=1)
    out = boxes + sigma * scale * rng.standard_normal(boxes.shape)
    out[:, 2:] = np.maximum(out[:, 2:], MIN_SIDE)
    return out


def init_particles(det, sigma0: float, n: int, rng) -> ParticleSet:
    """Sample ``n`` boxes around a detection with relative std ``sigma0``."""
    if n < 1:
        raise ValueError("need at least one particle")
    box = det.box if isinstance(det, Detection) else det
    rng = np.random.default_rng(rng)
    base = np.tile(box.to_array(), (n, 1))
    boxes = base if sigma0 == 0 else _relative_noise(base, sigma0, rng)
    return ParticleSet(boxes, np.full(n, 1.0 / n))


def velocity(flow, box: BBox) -> tuple[float, float]:
    """Per-component median of the flow vectors whose pixels lie inside ``box``.

    Pixel ``(c, r)`` is inside when ``x <= c < x + w`` and ``y <= r < y + h``
    after clipping the box to the raster.
    """
    c0 = max(int(np.ceil(box.x)), 0)
    r0 = max(int(np.ceil(box.y)), 0)
    c1 = min(int(np.ceil(box.x + box.w)), flow.width)
    r1 = min(int(np.ceil(box.y + box.h)), flow.height)
    if c1 <= c0 or r1 <= r0:
        raise EmptyBox(f"{box} has no pixels inside the {flow.width}x{flow.height} flow raster")
    patch = flow.vectors[r0:r1, c0:c1].reshape(-1, 2)
    vx, vy = np.median(patch, axis=0)
    return float(vx), float(vy)


def propagate(ps: ParticleSet, v, ns, rng) -> ParticleSet:
    """Shift every particle by ``v`` (one frame) and add relative Gaussian noise."""
    sigma = ns.sigma if isinstance(ns, NoiseSchedule) else float(ns)
    boxes = ps.boxes.copy()
    boxes[:, 0] += v[0]
    boxes[:, 1] += v[1]
    if sigma > 0:
        boxes = _relative_noise(boxes, sigma, np.random.default_rng(rng))
    return ParticleSet(boxes, ps.weights)


def likelihood(box: BBox, target_model: LinearModel, category_model: LinearModel,
               features_at) -> float:
    """Product of target and category probabilities at ``box``.

    ``features_at`` maps a box to its feature vector or raises
    ``FeatureUnavailable``; an unavailable box has likelihood 0.
    """
    try:
        phi = features_at(box)
    except FeatureUnavailable:
        return 0.0
    return float(target_model.prob(phi) * category_model.prob(phi))


def particle_likelihoods(boxes, target_model, category_model, provider) -> np.ndarray:
    """Vectorized ``likelihood`` over an ``(n, 4)`` array via a feature provider."""
    feats, ok = provider.features_at(boxes)
    out = np.zeros(len(ok))
    if ok.any():
        f = feats[ok]
        out[ok] = target_model.prob(f) * category_model.prob(f)
    return out


def reweight(ps: ParticleSet, likelihoods) -> ParticleSet:
    lik = np.asarray(likelihoods, dtype=float)
    if lik.shape != ps.weights.shape or np.any(lik < 0):
        raise ValueError("likelihoods must be non-negative, one per particle")
    w = ps.weights * lik
    total = w.sum()
    if not total > 0:
        raise AllZeroWeights("every particle has zero weight")
    return ParticleSet(ps.boxes, w / total)


def systematic_indices(weights, n: int, u: float) -> np.ndarray:
    """Systematic resampling of ``n`` indices given one uniform offset ``u`` in [0, 1)."""
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    positions = (np.arange(n) + u) / n
    return np.searchsorted(cdf, positions, side="right")


def resample(ps: ParticleSet, rng) -> ParticleSet:
    rng = np.random.default_rng(rng)
    idx = systematic_indices(ps.weights, ps.n, rng.random())
    return ParticleSet(ps.boxes[idx], np.full(ps.n, 1.0 / ps.n))


def estimate(ps: ParticleSet) -> BBox:
    """Weighted mean of the particle boxes."""
    w = ps.weights / ps.weights.sum()
    return BBox.from_array(w @ ps.boxes)


def effective_sample_size(ps: ParticleSet) -> float:
    w = ps.weights / ps.weights.sum()
    return float(1.0 / np.sum(w * w))


def filter_step(ps, v, sigma, lik_fn, rng, resample_below=0.5, resample_every_frame=False):
    """Propagate, reweight, estimate and (conditionally) resample.

    Returns ``(new_set, estimate, evidence)`` where ``evidence`` is the
    prior-weighted mean likelihood. Raises ``AllZeroWeights``.
    """
    rng = np.random.default_rng(rng)
    moved = propagate(ps, v, sigma, rng)
    lik = lik_fn(moved.boxes)
    evidence = float(moved.weights @ lik)
    weighted = reweight(moved, lik)
    est = estimate(weighted)
    if resample_every_frame or effective_sample_size(weighted) < resample_below * ps.n:
        weighted = resample(weighted, rng)
    return weighted, est, evidence


def clip_particles(ps: ParticleSet, frame_w, frame_h) -> ParticleSet:
    boxes, _ = clip_boxes(ps.boxes, frame_w, frame_h)
    boxes[:, 2:] = np.maximum(boxes[:, 2:], MIN_SIDE)
    return ParticleSet(boxes, ps.weights)
