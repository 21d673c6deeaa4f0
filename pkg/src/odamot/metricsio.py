"""CLEAR MOT evaluation and KITTI tracking-format I/O.

KITTI rows are whitespace separated::

    frame track_id type truncated occluded alpha left top right bottom
    h w l x y z rotation_y [score]

Only the 2D fields are interpreted. The remaining columns are kept verbatim so
that parsing and writing a file does not lose them.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import BBox, iou_matrix
from .errors import FrameRangeMismatch, MalformedRow, NonMonotoneFrames

DEFAULT_PRE = ("-1", "-1", "-10")
DEFAULT_3D = ("-1", "-1", "-1", "-1000", "-1000", "-1000", "-10")
COLUMNS = ("MOTA", "MOTP", "MT", "ML", "Rec", "Prec", "FAR", "IDS", "FRG")
FAR_NOTE = "FAR = 100 * false positives / frames"


@dataclass(frozen=True)
class Annotation:
    frame: int
    track_id: int
    cls: str
    left: float
    top: float
    right: float
    bottom: float
    score: float | None = None
    pre: tuple = DEFAULT_PRE
    dims3d: tuple = DEFAULT_3D

    @classmethod
    def from_box(cls, frame, track_id, box: BBox, cls_name="Car", score=None):
        l, t, r, b = box.ltrb()
        return cls(frame, track_id, cls_name, l, t, r, b, score)

    @property
    def box(self) -> BBox:
        return BBox.from_ltrb(self.left, self.top, self.right, self.bottom)

    def ltrb(self):
        return (self.left, self.top, self.right, self.bottom)


@dataclass
class AnnotatedSequence:
    rows: list = field(default_factory=list)
    n_frames: int = 0
    width: float | None = None
    height: float | None = None

    def __post_init__(self):
        if self.rows:
            self.n_frames = max(self.n_frames, max(r.frame for r in self.rows) + 1)

    def by_frame(self, cls: str | None = None) -> list:
        out = [[] for _ in range(self.n_frames)]
        for r in self.rows:
            if cls is None or r.cls == cls:
                out[r.frame].append(r)
        return out

    def content_2d(self):
        return [(r.frame, r.track_id, r.cls, r.ltrb()) for r in self.rows]


def parse_kitti(path, n_frames: int | None = None) -> AnnotatedSequence:
    rows = []
    last = -1
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        tok = line.split()
        if not tok:
            continue
        if len(tok) not in (10, 17, 18):
            raise MalformedRow(lineno, f"expected 10, 17 or 18 fields, got {len(tok)}")
        try:
            frame, tid = int(tok[0]), int(tok[1])
            l, t, r, b = (float(v) for v in tok[6:10])
            score = float(tok[17]) if len(tok) == 18 else None
            if len(tok) >= 17:
                [float(v) for v in tok[10:17]]
            [float(v) for v in tok[3:6]]
        except ValueError as e:
            raise MalformedRow(lineno, str(e)) from None
        if frame < 0:
            raise MalformedRow(lineno, "negative frame index")
        if not all(math.isfinite(v) for v in (l, t, r, b)) or r <= l or b <= t:
            raise MalformedRow(lineno, f"invalid box ({l}, {t}, {r}, {b})")
        if frame < last:
            raise NonMonotoneFrames(f"line {lineno}: frame {frame} after frame {last}")
        last = frame
        dims3d = tuple(tok[10:17]) if len(tok) >= 17 else DEFAULT_3D
        rows.append(Annotation(frame, tid, tok[2], l, t, r, b, score, tuple(tok[3:6]), dims3d))
    return AnnotatedSequence(rows, n_frames or 0)


def format_kitti_row(a: Annotation) -> str:
    parts = [str(a.frame), str(a.track_id), a.cls, *a.pre,
             repr(float(a.left)), repr(float(a.top)), repr(float(a.right)), repr(float(a.bottom)),
             *a.dims3d]
    if a.score is not None:
        parts.append(repr(float(a.score)))
    return " ".join(parts)


def write_kitti(seq: AnnotatedSequence, path) -> None:
    rows = sorted(seq.rows, key=lambda r: r.frame)
    Path(path).write_text("".join(format_kitti_row(r) + "\n" for r in rows))


# ---------------------------------------------------------------- CLEAR MOT

@dataclass
class MetricsReport:
    mota: float
    motp: float
    mt: float
    ml: float
    recall: float
    precision: float
    far: float
    ids: int
    frg: int
    tp: int = 0
    fp: int = 0
    fn: int = 0
    n_gt: int = 0
    n_frames: int = 0
    n_trajectories: int = 0
    precision_undefined: bool = False

    def row(self) -> dict:
        """Table columns; rates as percentages."""
        pct = [self.mota, self.motp, self.mt, self.ml, self.recall, self.precision]
        vals = [100.0 * v for v in pct] + [self.far, self.ids, self.frg]
        return dict(zip(COLUMNS, vals))


def match_frame(gt_boxes, gt_ids, hyp_boxes, hyp_ids, prev: dict, iou_thr: float):
    """Match one frame; returns a list of ``(gt_index, hyp_index, iou)``.

    GT objects whose previous-frame hypothesis is present and still overlaps
    by ``iou_thr`` keep it. The rest are matched by maximum-cardinality,
    maximum-overlap assignment restricted to pairs with IoU >= ``iou_thr``.
    """
    if len(gt_boxes) == 0 or len(hyp_boxes) == 0:
        return []
    ov = iou_matrix(gt_boxes, hyp_boxes)
    hyp_pos = {}
    for j, h in enumerate(hyp_ids):
        hyp_pos.setdefault(h, j)
    matches = []
    used_g, used_h = set(), set()
    for i, g in enumerate(gt_ids):
        h = prev.get(g)
        j = hyp_pos.get(h) if h is not None else None
        if j is not None and j not in used_h and ov[i, j] >= iou_thr:
            matches.append((i, j, float(ov[i, j])))
            used_g.add(i)
            used_h.add(j)
    rg = [i for i in range(len(gt_ids)) if i not in used_g]
    rh = [j for j in range(len(hyp_ids)) if j not in used_h]
    if rg and rh:
        sub = ov[np.ix_(rg, rh)]
        valid = sub >= iou_thr
        if valid.any():
            cost = np.where(valid, 1.0 - sub, min(len(rg), len(rh)) + 1.0)
            for a, b in zip(*linear_sum_assignment(cost)):
                if valid[a, b]:
                    matches.append((rg[a], rh[b], float(sub[a, b])))
    return matches


def trajectory_counts(seq) -> tuple[int, int, int]:
    """Identity switches, fragmentations and tracked frames of one GT trajectory.

    ``seq`` lists the matched hypothesis id per frame of the trajectory, -1
    where unmatched.
    """
    if not seq:
        return 0, 0, 0
    ids = frg = 0
    last_id = seq[0]
    tracked = int(seq[0] != -1)
    n = len(seq)
    for f in range(1, n):
        cur, prev = seq[f], seq[f - 1]
        if cur != -1 and last_id != -1:
            if prev != -1 and cur != last_id:
                ids += 1
            if prev != cur and (f == n - 1 or seq[f + 1] != -1):
                frg += 1
        if cur != -1:
            tracked += 1
            last_id = cur
    return ids, frg, tracked


def clear_mot(gt: AnnotatedSequence, hyp: AnnotatedSequence, iou_thr: float = 0.5,
              cls: str | None = "Car", mt_ratio: float = 0.8, ml_ratio: float = 0.2) -> MetricsReport:
    n_frames = gt.n_frames
    if hyp.rows and max(r.frame for r in hyp.rows) >= n_frames:
        raise FrameRangeMismatch(
            f"hypotheses reach frame {max(r.frame for r in hyp.rows)}, GT has {n_frames} frames")
    gframes = gt.by_frame(cls)
    hframes = AnnotatedSequence(hyp.rows, n_frames).by_frame(cls)
    tp = fp = fn = 0
    overlap_sum = 0.0
    prev: dict = {}
    traj = defaultdict(list)
    for t in range(n_frames):
        G, Hh = gframes[t], hframes[t]
        gb = np.array([r.box.to_array() for r in G]).reshape(-1, 4)
        hb = np.array([r.box.to_array() for r in Hh]).reshape(-1, 4)
        gids = [r.track_id for r in G]
        hids = [r.track_id for r in Hh]
        matches = match_frame(gb, gids, hb, hids, prev, iou_thr)
        assigned = {i: hids[j] for i, j, _ in matches}
        for i, g in enumerate(gids):
            traj[g].append(assigned.get(i, -1))
        prev = {gids[i]: hids[j] for i, j, _ in matches}
        tp += len(matches)
        fn += len(G) - len(matches)
        fp += len(Hh) - len(matches)
        overlap_sum += sum(o for _, _, o in matches)
    ids = frg = mt = ml = 0
    for seq in traj.values():
        s, f, tracked = trajectory_counts(seq)
        ids += s
        frg += f
        ratio = tracked / len(seq)
        mt += ratio >= mt_ratio
        ml += ratio <= ml_ratio
    n_gt = tp + fn
    n_traj = len(traj)
    return MetricsReport(
        mota=1.0 - (fn + fp + ids) / n_gt if n_gt else 0.0,
        motp=overlap_sum / tp if tp else 0.0,
        mt=mt / n_traj if n_traj else 0.0,
        ml=ml / n_traj if n_traj else 0.0,
        recall=tp / n_gt if n_gt else 0.0,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        far=100.0 * fp / n_frames if n_frames else 0.0,
        ids=ids, frg=frg, tp=tp, fp=fp, fn=fn, n_gt=n_gt, n_frames=n_frames,
        n_trajectories=n_traj, precision_undefined=(tp + fp == 0),
    )


# ---------------------------------------------------------------- tables

def _fmt_col(col, v) -> str:
    if col in ("IDS", "FRG") and float(v).is_integer():
        return str(int(v))
    return f"{float(v):.4f}"


def format_table(rows: dict) -> str:
    """Aligned text table; ``rows`` maps method name to a column dict."""
    header = ["method", *COLUMNS]
    body = [[name] + [_fmt_col(c, vals[c]) for c in COLUMNS] for name, vals in rows.items()]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = [f"# rates in percent; {FAR_NOTE}"]
    for r in [header] + body:
        lines.append("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def format_csv(rows: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", *COLUMNS])
    for name, vals in rows.items():
        w.writerow([name] + [_fmt_col(c, vals[c]) for c in COLUMNS])
    return buf.getvalue()


def read_csv(path) -> list:
    """Rows of a metrics CSV as ``(method, {column: float})``; ``ValueError`` if malformed."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != ("method", *COLUMNS):
            raise ValueError(f"{path}: unexpected header {header}")
        out = []
        for rec in reader:
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValueError(f"{path}: row has {len(rec)} fields")
            out.append((rec[0], {c: float(v) for c, v in zip(COLUMNS, rec[1:])}))
    return out
