"""Synthetic driving-like scenes with a controllable appearance domain shift.

Objects are boxes moving at roughly constant velocity. Features live directly
in ``R^d``: a proposal that covers object ``j`` well looks like

    c + delta * u + o_j + noise

(category prototype, domain shift, instance offset, isotropic noise) while a
background proposal looks like ``b + noise``. Partially overlapping proposals
blend the two with a weight that ramps linearly from 0 at IoU 0.2 to 1 at IoU 1. The
source (pretraining) domain is the same model with ``delta = 0``.

Everything numeric is rounded to float32 so that a scene written to disk and
read back is indistinguishable from the in-memory one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BBox, iou_matrix
from .metricsio import AnnotatedSequence, Annotation
from .providers import FlowField, FrameBundle, ProposalSet

BLEND_LO = 0.2
BLEND_HI = 1.0
POS_IOU = 0.7


@dataclass
class ScenarioConfig:
    n_frames: int = 200
    frame_w: int = 400
    frame_h: int = 150
    min_objects: int = 3
    max_objects: int = 6
    birth_rate: float = 0.05
    speed: tuple = (1.0, 3.0)
    motion_jitter: float = 0.3
    obj_width: tuple = (40.0, 80.0)
    obj_aspect: tuple = (0.5, 0.8)
    dim: int = 16
    margin: float = 6.0
    common: float = 3.0
    rho_inst: float = 0.5
    delta: float = 2.0
    shift_angle: float = 45.0
    shift_dir: tuple | None = None
    sigma_f: float = 1.0
    n_proposals: int = 200
    pos_per_object: int = 3
    partial_per_object: int = 3
    flow_noise: float = 0.0
    min_visible: float = 0.25
    oracle_features: bool = True
    offset_space: str = "orthogonal"
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("feature dim must be at least 2")
        for name in ("margin", "rho_inst", "delta", "sigma_f", "flow_noise", "motion_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.min_objects > self.max_objects:
            raise ValueError("min_objects > max_objects")
        if self.offset_space not in ("isotropic", "orthogonal"):
            raise ValueError("offset_space must be 'isotropic' or 'orthogonal'")

    @property
    def prototype(self) -> np.ndarray:
        """Category prototype ``c``."""
        c = np.zeros(self.dim)
        c[0] = self.margin
        c[-1] = self.common
        return c

    @property
    def background(self) -> np.ndarray:
        b = np.zeros(self.dim)
        b[-1] = self.common
        return b

    @property
    def shift_direction(self) -> np.ndarray:
        """Unit shift direction ``u``; by default partly against the prototype axis."""
        if self.shift_dir is not None:
            u = np.asarray(self.shift_dir, dtype=float)
            if u.shape != (self.dim,):
                raise ValueError("shift_dir must have length dim")
        else:
            a = np.deg2rad(self.shift_angle)
            u = np.zeros(self.dim)
            u[0] = -np.cos(a)
            u[1] = np.sin(a)
        n = np.linalg.norm(u)
        if n == 0:
            raise ValueError("shift direction must be non-zero")
        return u / n

    def instance_offsets(self, rng, n: int) -> np.ndarray:
        """Per-instance appearance offsets ``o ~ N(0, rho^2 I)``.

        With ``offset_space="orthogonal"`` the draw is projected off the span of
        the prototype, background and shift, so instances differ from each other
        without changing how category-like they are.
        """
        o = self.rho_inst * rng.standard_normal((n, self.dim))
        if self.offset_space == "orthogonal":
            q, _ = np.linalg.qr(np.stack([self.prototype, self.background, self.shift_direction], axis=1))
            o = o - (o @ q) @ q.T
        return o


@dataclass
class _Object:
    oid: int
    box: np.ndarray
    vel: np.ndarray
    offset: np.ndarray
    trail: list = field(default_factory=list)


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def blend_weight(q):
    """Object share of a proposal's feature as a function of its best GT IoU."""
    return np.clip((np.asarray(q) - BLEND_LO) / (BLEND_HI - BLEND_LO), 0.0, 1.0)


def _visible(box, sc):
    x1, y1 = max(box[0], 0.0), max(box[1], 0.0)
    x2, y2 = min(box[0] + box[2], sc.frame_w), min(box[1] + box[3], sc.frame_h)
    if x2 <= x1 or y2 <= y1:
        return None, 0.0
    clipped = np.array([x1, y1, x2 - x1, y2 - y1])
    return clipped, clipped[2] * clipped[3] / (box[2] * box[3])


def _spawn(oid, sc, rng, at_edge):
    w = rng.uniform(*sc.obj_width)
    h = w * rng.uniform(*sc.obj_aspect)
    speed = rng.uniform(*sc.speed)
    direction = 1.0 if rng.random() < 0.5 else -1.0
    y = rng.uniform(0, sc.frame_h - h)
    if at_edge:
        x = -0.8 * w if direction > 0 else sc.frame_w - 0.2 * w
    else:
        x = rng.uniform(0, sc.frame_w - w)
    vel = np.array([direction * speed, rng.normal(0, 0.1)])
    offset = sc.instance_offsets(rng, 1)[0]
    return _Object(oid, np.array([x, y, w, h]), vel, offset)


def _jitter_box(box, rng, lo, hi, sc, tries=50):
    """A box near ``box`` whose IoU with it lies in ``[lo, hi]``."""
    w, h = box[2], box[3]
    spread = 0.06 if lo >= 0.6 else 0.5
    for _ in range(tries):
        cand = box + np.array([rng.normal(0, spread) * w, rng.normal(0, spread) * h,
                               rng.normal(0, spread / 2) * w, rng.normal(0, spread / 2) * h])
        cand[2:] = np.maximum(cand[2:], 4.0)
        clipped, frac = _visible(cand, sc)
        if clipped is None:
            continue
        q = iou_matrix(clipped, box)[0, 0]
        if lo <= q <= hi:
            return clipped
    return None


def _random_boxes(n, sc, rng):
    w = rng.uniform(15, 100, n)
    h = w * rng.uniform(0.4, 1.0, n)
    x = rng.uniform(0, 1, n) * (sc.frame_w - w)
    y = rng.uniform(0, 1, n) * np.maximum(sc.frame_h - h, 0)
    h = np.minimum(h, sc.frame_h)
    return np.stack([x, y, w, h], axis=1)


def proposal_features(boxes, gt_boxes, gt_feats, sc, rng) -> np.ndarray:
    """Features of proposals given the visible GT boxes and their object features."""
    n = len(boxes)
    base = np.tile(sc.background, (n, 1))
    if len(gt_boxes):
        ov = iou_matrix(boxes, gt_boxes)
        best = ov.argmax(axis=1)
        alpha = blend_weight(ov[np.arange(n), best])[:, None]
        base = alpha * gt_feats[best] + (1 - alpha) * base
    return base + sc.sigma_f * rng.standard_normal((n, sc.dim))


def generate(sc: ScenarioConfig):
    """Simulate a sequence; returns ``(bundles, gt)``."""
    rng = np.random.default_rng(sc.seed)
    c, u = sc.prototype, sc.shift_direction
    objects: list[_Object] = []
    next_id = 0
    for _ in range(int(rng.integers(sc.min_objects, sc.max_objects + 1))):
        objects.append(_spawn(next_id, sc, rng, at_edge=False))
        next_id += 1
    bundles, rows = [], []
    for t in range(sc.n_frames):
        flow = np.zeros((sc.frame_h, sc.frame_w, 2), dtype=np.float32)
        if t > 0:
            # paint far objects first so nearer (lower) ones own overlapping pixels
            for ob in sorted(objects, key=lambda o: o.box[1] + o.box[3]):
                prev = ob.box.copy()
                step = ob.vel + sc.motion_jitter * rng.standard_normal(2)
                ob.box = ob.box + np.array([step[0], step[1], 0.0, 0.0])
                clipped, _ = _visible(prev, sc)
                if clipped is None:
                    continue
                c0, r0 = int(np.ceil(clipped[0])), int(np.ceil(clipped[1]))
                c1 = int(np.ceil(clipped[0] + clipped[2]))
                r1 = int(np.ceil(clipped[1] + clipped[3]))
                flow[r0:r1, c0:c1] = step
            objects = [o for o in objects if _visible(o.box, sc)[0] is not None]
            while len(objects) < sc.min_objects or (
                    len(objects) < sc.max_objects and rng.random() < sc.birth_rate):
                objects.append(_spawn(next_id, sc, rng, at_edge=True))
                next_id += 1
            if sc.flow_noise > 0:
                flow += (sc.flow_noise * rng.standard_normal(flow.shape)).astype(np.float32)

        gt_boxes, gt_feats, gt = [], [], []
        for ob in objects:
            clipped, frac = _visible(ob.box, sc)
            if clipped is None or frac < sc.min_visible:
                continue
            clipped = _f32(clipped)
            if clipped[2] <= 0 or clipped[3] <= 0:
                continue
            gt_boxes.append(clipped)
            gt_feats.append(c + sc.delta * u + ob.offset)
            gt.append((ob.oid, BBox.from_array(clipped)))
            rows.append(Annotation.from_box(t, ob.oid, BBox.from_array(clipped)))
        gt_boxes = np.array(gt_boxes).reshape(-1, 4)
        gt_feats = np.array(gt_feats).reshape(-1, sc.dim)

        props = []
        for g in gt_boxes:
            for _ in range(sc.pos_per_object):
                b = _jitter_box(g, rng, POS_IOU, 1.0, sc)
                if b is not None:
                    props.append(b)
            for _ in range(sc.partial_per_object):
                b = _jitter_box(g, rng, 0.1, 0.45, sc)
                if b is not None:
                    props.append(b)
        n_rand = max(sc.n_proposals - len(props), 0)
        boxes = np.vstack([np.array(props).reshape(-1, 4), _random_boxes(n_rand, sc, rng)])
        boxes = boxes[rng.permutation(len(boxes))]
        boxes = _f32(boxes)
        keep = (boxes[:, 2] > 0) & (boxes[:, 3] > 0)
        boxes = boxes[keep]
        feats = _f32(proposal_features(boxes, gt_boxes, gt_feats, sc, rng))
        provider = OracleFeatureProvider(gt_boxes, gt_feats, sc, t) if sc.oracle_features else None
        bundles.append(FrameBundle(t, ProposalSet(t, boxes), feats.astype(np.float32),
                                   FlowField(flow), gt, provider))
    seq = AnnotatedSequence(rows, sc.n_frames, sc.frame_w, sc.frame_h)
    return bundles, seq


def make_pretrain_set(sc: ScenarioConfig, n_pos: int, n_neg: int, seed: int | None = None):
    """Source-domain samples (no shift): fresh instances as positives, background
    and partial-overlap crops as negatives."""
    rng = np.random.default_rng(sc.seed + 7919 if seed is None else seed)
    c, b = sc.prototype, sc.background
    pos = c + sc.instance_offsets(rng, n_pos) \
        + sc.sigma_f * rng.standard_normal((n_pos, sc.dim))
    obj = c + sc.instance_offsets(rng, n_neg)
    alpha = np.where(rng.random(n_neg) < 0.3, rng.uniform(0, blend_weight(0.45), n_neg), 0.0)
    neg = alpha[:, None] * obj + (1 - alpha[:, None]) * b \
        + sc.sigma_f * rng.standard_normal((n_neg, sc.dim))
    return _f32(pos.reshape(n_pos, sc.dim)), _f32(neg.reshape(n_neg, sc.dim))


class OracleFeatureProvider:
    """Features at arbitrary boxes drawn from the scene's generative model.

    The noise for a query is seeded from ``(seed, frame)`` and the queried
    coordinates, so repeating a query reproduces it exactly and results do not
    depend on how often the provider was called before.
    """

    def __init__(self, gt_boxes, gt_feats, sc: ScenarioConfig, frame: int = 0):
        self.gt_boxes = np.asarray(gt_boxes, dtype=float).reshape(-1, 4)
        self.gt_feats = np.asarray(gt_feats, dtype=float).reshape(-1, sc.dim)
        self.sc = sc
        self.frame = frame

    @property
    def dim(self) -> int:
        return self.sc.dim

    def features_at(self, boxes):
        boxes = np.ascontiguousarray(boxes, dtype=float).reshape(-1, 4)
        key = np.frombuffer(boxes.tobytes(), dtype=np.uint32)
        rng = np.random.default_rng(np.random.SeedSequence([self.sc.seed, self.frame, *key.tolist()]))
        f = proposal_features(boxes, self.gt_boxes, self.gt_feats, self.sc, rng)
        return f, np.ones(len(boxes), dtype=bool)

    def __call__(self, box: BBox):
        return self.features_at(box.to_array())[0][0]
