"""Causal multi-object tracking with online detector adaptation.

Each call to :func:`step` processes one frame in a fixed order:

1. move every active target with its particle filter; lost targets scan the
   proposals with their own detector and may be re-initialized;
2. detect new targets with the current category detector;
3. merge tracks that have overlapped for too long;
4. create detectors for new targets, drop targets whose detector no longer
   fires, and jointly update the detectors of the others;
5. fold the updated detectors into the category running mean.

Three modes share this loop. ``ODAMOT`` warm-starts target detectors from the
category mean, regularizes them towards it and keeps adapting the mean.
``CIT`` warm-starts but learns targets independently and never changes the
category detector. ``CFT`` starts every target from a zero model trained on
its first frame, with no regularization and a frozen category detector.
"""

from __future__ import annotations

import dataclasses
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import BBox, Detection, clip_to_frame, iou_matrix, overlap_min_area
from .errors import AllZeroWeights, EmptyBox, NonFinite, NoNegatives, OutOfOrderFrame
from .linmodel import LinearModel, normalize_features
from .metricsio import AnnotatedSequence, Annotation
from .mtl import (MtlConfig, RunningMean, mine_samples, update_running_mean, update_targets,
                  warm_start)
from .providers import ProposalFeatureProvider
from .smc import (ParticleSet, filter_step, init_particles, noise_sigma,
                  particle_likelihoods, velocity)

MODES = ("ODAMOT", "CIT", "CFT")

# stream tags for derived random generators
_MOVE, _BIRTH, _REINIT, _SGD = 1, 2, 3, 4


@dataclass
class TrackerConfig:
    T: int = 3
    overlap_merge: float = 0.3
    overlap_measure: str = "iou"
    tau_detect: float = 0.5
    tau_lost: float = 0.5
    nms_iou: float = 0.5
    gate_iou: float = 0.5
    lost_iou: float = 0.5
    feature_min_iou: float = 0.5
    mode: str = "ODAMOT"
    n_particles: int = 100
    sigma0: float = 0.05
    resample_threshold: float = 0.5
    resample_every_frame: bool = False
    feature_norm: float = 3000.0
    category_term: str = "adapted"
    prior_count: float = 100.0
    cft_init_epochs: int = 20
    exclude_targets: bool = True
    seed: int = 0
    mtl: MtlConfig = field(default_factory=MtlConfig)

    def __post_init__(self):
        self.mode = self.mode.upper()
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.T < 1 or self.n_particles < 1:
            raise ValueError("T and n_particles must be at least 1")
        for name in ("overlap_merge", "tau_detect", "tau_lost", "nms_iou", "gate_iou",
                     "lost_iou", "feature_min_iou", "resample_threshold"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.overlap_measure not in ("iou", "min_area"):
            raise ValueError("overlap_measure must be 'iou' or 'min_area'")
        if self.category_term not in ("adapted", "pretrained"):
            raise ValueError("category_term must be 'adapted' or 'pretrained'")
        if self.sigma0 < 0 or self.feature_norm <= 0 or self.prior_count < 0:
            raise ValueError("sigma0, feature_norm and prior_count must be non-negative")


@dataclass(eq=False)
class Track:
    id: int
    model: LinearModel
    particles: ParticleSet
    last_estimate: BBox
    born: int
    successes: int = 1
    lost: int = 0
    scores: deque = field(default_factory=deque)

    @property
    def active(self) -> bool:
        return self.lost == 0

    @property
    def score(self) -> float:
        return float(np.mean(self.scores)) if self.scores else 0.0

    def copy(self) -> "Track":
        return dataclasses.replace(self, scores=deque(self.scores, maxlen=self.scores.maxlen))


@dataclass
class TrackSet:
    pretrained: LinearModel
    tracks: list = field(default_factory=list)
    history: list = field(default_factory=list)
    streaks: dict = field(default_factory=dict)
    next_id: int = 0
    last_frame: int = -1

    def copy(self) -> "TrackSet":
        return TrackSet(self.pretrained, [t.copy() for t in self.tracks], list(self.history),
                        dict(self.streaks), self.next_id, self.last_frame)

    def active(self) -> list:
        return [t for t in self.tracks if t.active]

    def to_sequence(self, n_frames=None) -> AnnotatedSequence:
        rows = [Annotation.from_box(f, i, b, score=s) for f, i, b, s in self.history]
        return AnnotatedSequence(rows, n_frames or 0)


def initial_state(pretrained: LinearModel, cfg: TrackerConfig):
    """Empty track list and the running mean seeded with the pretrained detector."""
    return TrackSet(pretrained), RunningMean(pretrained, cfg.prior_count)


def _rng(cfg, frame, tid, tag):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, frame, tid, tag]))


def greedy_nms(boxes, scores, iou_thr) -> list:
    """Indices kept by greedy non-maximum suppression, best score first."""
    order = np.argsort(-np.asarray(scores), kind="stable")
    ov = iou_matrix(boxes, boxes)
    keep = []
    suppressed = np.zeros(len(order), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(int(i))
        suppressed |= ov[i] > iou_thr
    return keep


def detect_new_targets(rm: RunningMean, proposals, features, existing, cfg: TrackerConfig):
    """Category detections not already covered by a track.

    ``existing`` holds the boxes of active and lost tracks, shape ``(k, 4)``.
    """
    proposals = np.asarray(proposals, dtype=float).reshape(-1, 4)
    if len(proposals) == 0:
        return []
    probs = rm.mean.prob(features)
    cand = np.flatnonzero(probs >= cfg.tau_detect)
    if cand.size == 0:
        return []
    kept = cand[greedy_nms(proposals[cand], probs[cand], cfg.nms_iou)]
    existing = np.asarray(existing, dtype=float).reshape(-1, 4)
    if len(existing):
        kept = kept[iou_matrix(proposals[kept], existing).max(axis=1) < cfg.gate_iou]
    return [Detection(BBox.from_array(proposals[i]), float(probs[i])) for i in kept]


def merge_tracks(state: TrackSet, cfg: TrackerConfig) -> TrackSet:
    """Terminate the weaker of two active tracks overlapping for more than T frames."""
    act = sorted(state.active(), key=lambda t: t.id)
    boxes = np.array([t.last_estimate.to_array() for t in act]).reshape(-1, 4)
    measure = iou_matrix if cfg.overlap_measure == "iou" else overlap_min_area
    ov = measure(boxes, boxes) if len(act) else np.zeros((0, 0))
    streaks = {}
    doomed = set()
    for a in range(len(act)):
        for b in range(a + 1, len(act)):
            if ov[a, b] > cfg.overlap_merge:
                key = (act[a].id, act[b].id)
                streaks[key] = state.streaks.get(key, 0) + 1
    for (ia, ib), n in sorted(streaks.items()):
        if n > cfg.T and ia not in doomed and ib not in doomed:
            ta = next(t for t in act if t.id == ia)
            tb = next(t for t in act if t.id == ib)
            # lower score loses; on a tie the younger (larger id) track goes
            doomed.add(ia if ta.score < tb.score else ib)
    state.tracks = [t for t in state.tracks if t.id not in doomed]
    state.streaks = {k: v for k, v in streaks.items() if not doomed.intersection(k)}
    return state


def handle_lost(track: Track, proposals, features, blocked, cfg: TrackerConfig, frame: int):
    """One re-initialization attempt for a lost track.

    Returns ``(track, hit_box)``; ``track`` is ``None`` once it has failed for
    more than ``T`` frames. Proposals overlapping an active track (``blocked``)
    are not considered.
    """
    proposals = np.asarray(proposals, dtype=float).reshape(-1, 4)
    if len(proposals):
        probs = track.model.prob(features)
        if len(blocked):
            probs = np.where(iou_matrix(proposals, blocked).max(axis=1) >= cfg.gate_iou, -1.0, probs)
        best = int(np.argmax(probs))
        if probs[best] >= cfg.tau_lost:
            hit = BBox.from_array(proposals[best])
            track.particles = init_particles(hit, noise_sigma(cfg.sigma0, track.successes),
                                             cfg.n_particles, _rng(cfg, frame, track.id, _REINIT))
            track.last_estimate = hit
            track.lost = 0
            track.scores.append(float(probs[best]))
            return track, hit
    track.lost += 1
    if track.lost > cfg.T:
        return None, None
    return track, None


def _learn_from_scratch(samples, dim, cfg, frame, tid):
    bank = {tid: LinearModel.zeros(dim)}
    zero = RunningMean(LinearModel.zeros(dim), 0.0)
    init_cfg = dataclasses.replace(cfg.mtl, lam=0.0, epochs=cfg.cft_init_epochs)
    return update_targets(bank, {tid: samples}, zero, init_cfg, seed=(cfg.seed, frame))[tid]


def step(bundle, state: TrackSet, rm: RunningMean, cfg: TrackerConfig):
    """Process one frame. Returns ``(state, rm, outputs)``.

    ``outputs`` lists ``(track_id, box, score)`` for the tracks that are active
    at the end of the frame. The input state is not modified.
    """
    t = bundle.frame
    if t <= state.last_frame:
        raise OutOfOrderFrame(f"frame {t} after frame {state.last_frame}")
    state = state.copy()
    state.last_frame = t
    W, H = bundle.width, bundle.height
    boxes = np.asarray(bundle.proposals.boxes, dtype=float).reshape(-1, 4)
    feats = normalize_features(np.asarray(bundle.features, dtype=float), cfg.feature_norm)
    if bundle.provider is not None:
        base = bundle.provider

        class _Scaled:
            def features_at(self, b):
                f, ok = base.features_at(b)
                return normalize_features(f, cfg.feature_norm), ok
        provider = _Scaled()
    else:
        provider = ProposalFeatureProvider(boxes, feats, cfg.feature_min_iou)
    category = rm.mean if cfg.category_term == "adapted" else state.pretrained
    just_found = set()

    # 1. locations
    was_lost = {tr.id for tr in state.tracks if not tr.active}
    for tr in sorted(state.active(), key=lambda x: x.id):
        try:
            v = velocity(bundle.flow, tr.last_estimate)
        except EmptyBox:
            v = (0.0, 0.0)
        sigma = noise_sigma(cfg.sigma0, tr.successes)
        model = tr.model

        def lik(b, model=model):
            return particle_likelihoods(b, model, category, provider)

        try:
            ps, est, evidence = filter_step(
                tr.particles, v, sigma, lik, _rng(cfg, t, tr.id, _MOVE),
                cfg.resample_threshold, cfg.resample_every_frame)
            est = clip_to_frame(est, W, H)
        except (AllZeroWeights, EmptyBox):
            tr.lost = 1
            continue
        tr.particles = ps
        tr.last_estimate = est
        tr.scores.append(evidence)
    blocked = np.array([tr.last_estimate.to_array() for tr in state.active()]).reshape(-1, 4)
    survivors = []
    for tr in sorted(state.tracks, key=lambda x: x.id):
        if tr.id in was_lost:
            tr, hit = handle_lost(tr, boxes, feats, blocked, cfg, t)
            if tr is None:
                continue
            if hit is not None:
                just_found.add(tr.id)
                blocked = np.vstack([blocked, hit.to_array()])
        survivors.append(tr)
    state.tracks = survivors

    # 2. new targets
    existing = np.array([tr.last_estimate.to_array() for tr in state.tracks]).reshape(-1, 4)
    new_ids = set()
    for det in detect_new_targets(rm, boxes, feats, existing, cfg):
        tid = state.next_id
        state.next_id += 1
        model = LinearModel.zeros(rm.mean.dim) if cfg.mode == "CFT" else warm_start(rm)
        ps = init_particles(det, cfg.sigma0, cfg.n_particles, _rng(cfg, t, tid, _BIRTH))
        f, ok = provider.features_at(det.box.to_array())
        first = det.score * float(model.prob(f[0])) if ok[0] else 0.0
        tr = Track(tid, model, ps, clip_to_frame(det.box, W, H), born=t, successes=1,
                   scores=deque([first], maxlen=cfg.T))
        state.tracks.append(tr)
        new_ids.add(tid)

    # 3. merge
    state = merge_tracks(state, cfg)

    # 4. target detectors
    samples = {}
    for tr in sorted(state.active(), key=lambda x: x.id):
        if tr.id not in new_ids and tr.id not in just_found:
            near = np.flatnonzero(iou_matrix(tr.last_estimate.to_array(), boxes)[0] >= cfg.lost_iou) \
                if len(boxes) else np.zeros(0, dtype=int)
            if near.size == 0 or tr.model.prob(feats[near]).max() < cfg.tau_lost:
                tr.lost = 1
                continue
        others = [o.last_estimate.to_array() for o in state.active() if o.id != tr.id] \
            if cfg.exclude_targets else None
        pf, pok = provider.features_at(tr.last_estimate.to_array())
        pos = pf[0] if pok[0] else None
        try:
            s = mine_samples(tr.last_estimate, boxes, feats, tr.model, cfg.mtl,
                             positive=pos, exclude=others)
        except NoNegatives:
            continue
        if cfg.mode == "CFT" and tr.id in new_ids:
            try:
                tr.model = _learn_from_scratch(s, rm.mean.dim, cfg, t, tr.id)
            except NonFinite:
                pass
            continue
        samples[tr.id] = s
    active = {tr.id: tr for tr in state.active()}
    if samples:
        lam = cfg.mtl.lam if cfg.mode == "ODAMOT" else 0.0
        mcfg = dataclasses.replace(cfg.mtl, lam=lam)
        bank = {tid: active[tid].model for tid in samples}
        try:
            bank = update_targets(bank, samples, rm, mcfg, seed=(cfg.seed, t))
        except NonFinite:
            bank = {}
        for tid, m in bank.items():
            active[tid].model = m
            if tid not in new_ids:
                active[tid].successes += 1

    # 5. category detector
    if cfg.mode == "ODAMOT":
        rm = update_running_mean(rm, {tid: tr.model for tid, tr in active.items()})

    outputs = []
    for tr in sorted(active.values(), key=lambda x: x.id):
        outputs.append((tr.id, tr.last_estimate, tr.score))
        state.history.append((t, tr.id, tr.last_estimate, tr.score))
    return state, rm, outputs


class Tracker:
    """Stateful convenience wrapper around :func:`step`."""

    def __init__(self, pretrained: LinearModel, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.state, self.rm = initial_state(pretrained, self.cfg)

    def step(self, bundle):
        self.state, self.rm, out = step(bundle, self.state, self.rm, self.cfg)
        return out

    def run(self, bundles) -> AnnotatedSequence:
        n = 0
        for b in bundles:
            self.step(b)
            n = b.frame + 1
        return self.state.to_sequence(n)

    @property
    def adapted_model(self) -> LinearModel:
        return self.rm.mean
