"""Sources of proposals, features and optical flow.

Three binary formats carry externally computed data into a run (all integers
``u32`` and floats ``f32``, little-endian):

* ``ODFL``: width, height, then ``width * height`` ``(vx, vy)`` pairs, row-major.
* ``ODFT``: frame, n, dim, then n records of ``(x, y, w, h)`` + ``dim`` floats.
* ``ODPR``: frame, n, then ``n * 4`` floats ``(x, y, w, h)``.

Features can also be computed from a gray raster with a single-Gaussian
Fisher vector ("mini-FV") over simple patch descriptors.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import map_coordinates

from .core import BBox, iou_matrix
from .errors import (BadMagic, DegenerateVariance, DimMismatch, EmptyBox, FeatureUnavailable,
                     NoDescriptors, TruncatedFile)

FLOW_MAGIC = b"ODFL"
FEATURE_MAGIC = b"ODFT"
PROPOSAL_MAGIC = b"ODPR"
VAR_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense per-pixel displacement; ``vectors[row, col] = (vx, vy)``."""

    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float32)
        if v.ndim != 3 or v.shape[2] != 2:
            raise ValueError("flow vectors must have shape (height, width, 2)")
        if not np.all(np.isfinite(v)):
            raise ValueError("flow vectors must be finite")
        object.__setattr__(self, "vectors", v)

    @classmethod
    def constant(cls, width, height, vx=0.0, vy=0.0) -> "FlowField":
        v = np.empty((height, width, 2), dtype=np.float32)
        v[..., 0] = vx
        v[..., 1] = vy
        return cls(v)

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def height(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True, eq=False)
class ProposalSet:
    frame: int
    boxes: np.ndarray = field(repr=False)

    def __post_init__(self):
        b = np.asarray(self.boxes, dtype=np.float32).reshape(-1, 4)
        object.__setattr__(self, "boxes", b)

    def __len__(self):
        return len(self.boxes)


# ---------------------------------------------------------------- binary formats

def _read(path, magic):
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedFile(f"{path}: header truncated")
    if data[:4] != magic:
        raise BadMagic(f"{path}: expected {magic!r}, got {data[:4]!r}")
    return data


def _unpack(data, fmt, offset, path):
    size = struct.calcsize(fmt)
    if len(data) < offset + size:
        raise TruncatedFile(f"{path}: header truncated")
    return struct.unpack_from(fmt, data, offset)


def _floats(data, offset, count, path):
    need = offset + 4 * count
    if len(data) < need:
        raise TruncatedFile(f"{path}: expected {need} bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float32)


def write_flow(flow: FlowField, path) -> None:
    head = FLOW_MAGIC + struct.pack("<II", flow.width, flow.height)
    Path(path).write_bytes(head + flow.vectors.astype("<f4").tobytes())


def load_flow(path) -> FlowField:
    data = _read(path, FLOW_MAGIC)
    w, h = _unpack(data, "<II", 4, path)
    v = _floats(data, 12, w * h * 2, path)
    return FlowField(v.reshape(h, w, 2))


def write_features(frame: int, boxes, features, path) -> None:
    boxes = np.asarray(boxes, dtype="<f4").reshape(-1, 4)
    features = np.asarray(features, dtype="<f4")
    features = features.reshape(len(boxes), -1) if features.size else features.reshape(len(boxes), 0)
    dim = features.shape[1]
    head = FEATURE_MAGIC + struct.pack("<III", frame, len(boxes), dim)
    Path(path).write_bytes(head + np.hstack([boxes, features]).astype("<f4").tobytes())


def load_features(path, dim: int | None = None):
    """Return ``(ProposalSet, features)`` with features as an ``(n, dim)`` float32 array."""
    data = _read(path, FEATURE_MAGIC)
    frame, n, d = _unpack(data, "<III", 4, path)
    if dim is not None and d != dim:
        raise DimMismatch(f"{path}: feature dim {d} != run dim {dim}")
    rec = _floats(data, 16, n * (4 + d), path).reshape(n, 4 + d)
    return ProposalSet(frame, rec[:, :4].copy()), rec[:, 4:].copy()


def write_proposals(ps: ProposalSet, path) -> None:
    head = PROPOSAL_MAGIC + struct.pack("<II", ps.frame, len(ps))
    Path(path).write_bytes(head + ps.boxes.astype("<f4").tobytes())


def load_proposals(path) -> ProposalSet:
    data = _read(path, PROPOSAL_MAGIC)
    frame, n = _unpack(data, "<II", 4, path)
    return ProposalSet(frame, _floats(data, 12, 4 * n, path).reshape(n, 4))


# ---------------------------------------------------------------- mini Fisher vectors

@dataclass(frozen=True, eq=False)
class GaussianParams:
    mu: np.ndarray
    var: np.ndarray

    @property
    def d_loc(self) -> int:
        return self.mu.size


def fit_gaussian(descriptors) -> GaussianParams:
    """Maximum-likelihood diagonal Gaussian with a variance floor of 1e-6."""
    X = np.asarray(descriptors, dtype=float)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("fit_gaussian needs at least two descriptors")
    mu = X.mean(axis=0)
    var = X.var(axis=0)
    low = var < VAR_FLOOR
    if low.any():
        warnings.warn(f"{int(low.sum())} descriptor dimension(s) floored at {VAR_FLOOR}",
                      DegenerateVariance, stacklevel=2)
        var = np.where(low, VAR_FLOOR, var)
    return GaussianParams(mu, var)


def fisher_statistics(descriptors, g: GaussianParams) -> np.ndarray:
    """Unnormalized mean and variance gradients, concatenated."""
    X = np.atleast_2d(np.asarray(descriptors, dtype=float))
    if X.size == 0:
        raise NoDescriptors("no descriptors to encode")
    if X.shape[1] != g.d_loc:
        raise DimMismatch(f"descriptor dim {X.shape[1]} != model dim {g.d_loc}")
    u = (X - g.mu) / np.sqrt(g.var)
    g_mu = u.mean(axis=0)
    g_sigma = (u * u - 1.0).mean(axis=0) / math.sqrt(2.0)
    return np.concatenate([g_mu, g_sigma])


def minifv_encode(descriptors, g: GaussianParams) -> np.ndarray:
    """Single-Gaussian Fisher vector with signed square-root and L2 normalization."""
    fv = fisher_statistics(descriptors, g)
    fv = np.sign(fv) * np.sqrt(np.abs(fv))
    n = np.linalg.norm(fv)
    return fv / n if n > 0 else fv


def patch_descriptors(image, box: BBox, grid: int = 2, cell: int = 4) -> np.ndarray:
    """Split ``box`` into ``grid x grid`` cells and describe each one.

    Every cell is bilinearly resampled to ``cell x cell`` values, mean
    subtracted and scaled to unit L2 norm (flat cells give zeros). Returns an
    array of shape ``(grid**2, cell**2)``.
    """
    img = np.asarray(image, dtype=float)
    H, W = img.shape
    x0, y0 = max(box.x, 0.0), max(box.y, 0.0)
    x1, y1 = min(box.x + box.w, float(W)), min(box.y + box.h, float(H))
    if x1 <= x0 or y1 <= y0:
        raise EmptyBox(f"{box} does not intersect the {W}x{H} image")
    cw = (x1 - x0) / grid
    ch = (y1 - y0) / grid
    frac = (np.arange(cell) + 0.5) / cell
    out = np.empty((grid * grid, cell * cell))
    for gi in range(grid):
        rows = y0 + (gi + frac) * ch - 0.5
        for gj in range(grid):
            cols = x0 + (gj + frac) * cw - 0.5
            rr, cc = np.meshgrid(rows, cols, indexing="ij")
            block = map_coordinates(img, [rr.ravel(), cc.ravel()], order=1, mode="nearest")
            block = block - block.mean()
            n = np.linalg.norm(block)
            out[gi * grid + gj] = block / n if n > 1e-12 else 0.0
    return out


# ---------------------------------------------------------------- providers

class ProposalFeatureProvider:
    """Features known only at proposals; other boxes borrow the best-overlap proposal.

    A query box whose best IoU with any proposal is below ``min_iou`` is
    unavailable.
    """

    def __init__(self, boxes, features, min_iou=0.5):
        self.boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
        self.features = np.asarray(features, dtype=float)
        if len(self.boxes) != len(self.features):
            raise ValueError("boxes and features are not aligned")
        self.min_iou = min_iou

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def features_at(self, boxes):
        boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
        if len(self.boxes) == 0:
            return np.zeros((len(boxes), self.dim)), np.zeros(len(boxes), dtype=bool)
        ov = iou_matrix(boxes, self.boxes)
        best = ov.argmax(axis=1)
        ok = ov[np.arange(len(boxes)), best] >= self.min_iou
        return self.features[best], ok

    def __call__(self, box: BBox) -> np.ndarray:
        f, ok = self.features_at(box.to_array())
        if not ok[0]:
            raise FeatureUnavailable(f"no proposal overlaps {box} by {self.min_iou} IoU")
        return f[0]


class MiniFVProvider:
    """Computes mini-FV features directly from a gray raster at any box."""

    def __init__(self, image, gaussian: GaussianParams, grid=2, cell=4):
        self.image = np.asarray(image, dtype=float)
        self.gaussian = gaussian
        self.grid = grid
        self.cell = cell
        if cell * cell != gaussian.d_loc:
            raise DimMismatch("descriptor size does not match the Gaussian")

    @property
    def dim(self) -> int:
        return 2 * self.gaussian.d_loc

    def __call__(self, box: BBox) -> np.ndarray:
        try:
            desc = patch_descriptors(self.image, box, self.grid, self.cell)
        except EmptyBox as e:
            raise FeatureUnavailable(str(e)) from e
        return minifv_encode(desc, self.gaussian)

    def features_at(self, boxes):
        boxes = np.asarray(boxes, dtype=float).reshape(-1, 4)
        out = np.zeros((len(boxes), self.dim))
        ok = np.zeros(len(boxes), dtype=bool)
        for i, b in enumerate(boxes):
            if b[2] <= 0 or b[3] <= 0:
                continue
            try:
                out[i] = self(BBox.from_array(b))
                ok[i] = True
            except FeatureUnavailable:
                pass
        return out, ok


# ---------------------------------------------------------------- frame bundles

@dataclass(eq=False)
class FrameBundle:
    """Everything the tracker sees for one frame.

    ``flow`` maps frame ``t - 1`` to frame ``t`` (evaluated at ``t - 1`` pixel
    positions). ``provider`` optionally answers feature queries at arbitrary
    boxes; without it features are looked up at the nearest proposal.
    """

    frame: int
    proposals: ProposalSet
    features: np.ndarray
    flow: FlowField
    gt: list = field(default_factory=list)
    provider: object = None

    def __post_init__(self):
        if len(self.proposals) != len(self.features):
            raise ValueError("proposals and features are not aligned")

    @property
    def width(self) -> int:
        return self.flow.width

    @property
    def height(self) -> int:
        return self.flow.height


def write_sequence(bundles, seqdir) -> None:
    """Write ``features/``, ``proposals/`` and ``flow/`` subdirectories, one file per frame."""
    root = Path(seqdir)
    for sub in ("features", "proposals", "flow"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for b in bundles:
        name = f"{b.frame:06d}"
        write_features(b.frame, b.proposals.boxes, b.features, root / "features" / f"{name}.odft")
        write_proposals(b.proposals, root / "proposals" / f"{name}.odpr")
        write_flow(b.flow, root / "flow" / f"{name}.odfl")


def iter_sequence(seqdir, dim: int | None = None):
    """Yield ``FrameBundle`` objects from a sequence directory in frame order."""
    root = Path(seqdir)
    files = sorted((root / "features").glob("*.odft"))
    if not files:
        raise FileNotFoundError(f"{root}: no feature files")
    for f in files:
        props, feats = load_features(f, dim)
        flow = load_flow(root / "flow" / f"{f.stem}.odfl")
        yield FrameBundle(props.frame, props, feats, flow)
