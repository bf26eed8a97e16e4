"""Edge benchmark: thinning, tolerance matching, PR tables, MF (ODS) and AP."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components, maximum_bipartite_matching
from scipy.spatial import cKDTree

from semedge.errors import DataError
from semedge.labels import downsample_half

DEFAULT_TOLERANCE = 0.02


def default_thresholds(n: int = 99) -> np.ndarray:
    """``n`` evenly spaced interior thresholds; the default grid is 0.01 .. 0.99."""
    return np.round(np.arange(1, n + 1) / (n + 1), 10)


# ------------------------------------------------------------------- thinning

# neighbour bit order P2..P9: N, NE, E, SE, S, SW, W, NW
_OFFSETS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _zhang_suen_luts() -> tuple[np.ndarray, np.ndarray]:
    first = np.zeros(256, dtype=bool)
    second = np.zeros(256, dtype=bool)
    for code in range(256):
        p = [(code >> i) & 1 for i in range(8)]  # p[0]=P2 ... p[7]=P9
        b = sum(p)
        a = sum(1 for i in range(8) if p[i] == 0 and p[(i + 1) % 8] == 1)
        if not (2 <= b <= 6 and a == 1):
            continue
        p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
        first[code] = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
        second[code] = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
    return first, second


_LUT_FIRST, _LUT_SECOND = _zhang_suen_luts()


def _neighbour_codes(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    padded = np.pad(img, 1).astype(np.uint8)
    code = np.zeros((h, w), dtype=np.uint8)
    for bit, (dy, dx) in enumerate(_OFFSETS):
        code |= padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w] << bit
    return code


def thin(binary: np.ndarray) -> np.ndarray:
    """Zhang-Suen skeleton of a 2-D binary map (uint8 0/1 out); iterates to a fixed point."""
    img = np.asarray(binary) > 0
    if img.ndim != 2:
        raise DataError(f"thin expects a 2-D map, got {img.shape}")
    img = img.copy()
    while True:
        changed = False
        for lut in (_LUT_FIRST, _LUT_SECOND):
            kill = img & lut[_neighbour_codes(img)]
            if kill.any():
                img &= ~kill
                changed = True
        if not changed:
            return img.astype(np.uint8)


# ------------------------------------------------------------------- matching


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list[tuple[tuple[int, int], tuple[int, int]]] = field(default_factory=list)


def _candidates(pred_pts: np.ndarray, gt_pts: np.ndarray, max_dist: float) -> csr_matrix:
    """Sparse boolean (n_pred, n_gt) adjacency of pairs within ``max_dist``."""
    n_p, n_g = len(pred_pts), len(gt_pts)
    if n_p == 0 or n_g == 0 or max_dist < 0:
        return csr_matrix((n_p, n_g), dtype=np.int8)
    tree = cKDTree(gt_pts)
    hits = tree.query_ball_point(pred_pts, r=max_dist + 1e-9)
    rows = np.repeat(np.arange(n_p), [len(h) for h in hits])
    cols = np.fromiter((j for h in hits for j in h), dtype=np.intp, count=len(rows))
    d2 = ((pred_pts[rows] - gt_pts[cols]) ** 2).sum(axis=1)
    keep = d2 <= max_dist * max_dist
    rows, cols = rows[keep], cols[keep]
    return coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n_p, n_g)).tocsr()


def match_count(pred_thin: np.ndarray, gt_thin: np.ndarray, max_dist: float) -> tuple[int, int, int]:
    """(tp, fp, fn) of a maximum-cardinality one-to-one matching (Hopcroft-Karp)."""
    pred_pts = np.argwhere(np.asarray(pred_thin) > 0)
    gt_pts = np.argwhere(np.asarray(gt_thin) > 0)
    adj = _candidates(pred_pts, gt_pts, max_dist)
    tp = int((maximum_bipartite_matching(adj, perm_type="column") >= 0).sum()) if adj.nnz else 0
    return tp, len(pred_pts) - tp, len(gt_pts) - tp


def match(pred_thin: np.ndarray, gt_thin: np.ndarray, max_dist: float) -> MatchResult:
    """One-to-one matching of pred and gt pixels within Euclidean ``max_dist``.

    The matching has maximum cardinality and, among those, minimum total
    distance: each connected component of the candidate graph is solved as
    a rectangular assignment with a penalty larger than any feasible total
    standing in for "unmatched".
    """
    pred_thin = np.asarray(pred_thin)
    gt_thin = np.asarray(gt_thin)
    if pred_thin.shape != gt_thin.shape:
        raise DataError(f"match: shape mismatch {pred_thin.shape} vs {gt_thin.shape}")
    pred_pts = np.argwhere(pred_thin > 0)
    gt_pts = np.argwhere(gt_thin > 0)
    n_p, n_g = len(pred_pts), len(gt_pts)
    adj = _candidates(pred_pts, gt_pts, max_dist)
    pairs: list[tuple[tuple[int, int], tuple[int, int]]] = []
    if adj.nnz:
        coo = adj.tocoo()
        graph = coo_matrix((np.ones(adj.nnz), (coo.row, coo.col + n_p)), shape=(n_p + n_g, n_p + n_g))
        n_comp, comp = connected_components(graph, directed=False)
        edge_comp = comp[coo.row]
        order = np.argsort(edge_comp, kind="stable")
        bounds = np.searchsorted(edge_comp[order], np.arange(n_comp + 1))
        for c in range(n_comp):
            sel = order[bounds[c]:bounds[c + 1]]
            if sel.size == 0:
                continue
            r_ids = np.unique(coo.row[sel])
            c_ids = np.unique(coo.col[sel])
            big = (min(len(r_ids), len(c_ids)) + 1) * (max_dist + 1.0)
            cost = np.full((len(r_ids), len(c_ids)), big)
            ri = np.searchsorted(r_ids, coo.row[sel])
            ci = np.searchsorted(c_ids, coo.col[sel])
            cost[ri, ci] = np.sqrt(((pred_pts[coo.row[sel]] - gt_pts[coo.col[sel]]) ** 2).sum(axis=1))
            rr, cc = linear_sum_assignment(cost)
            for a, b in zip(rr, cc):
                if cost[a, b] < big:
                    pairs.append((tuple(int(v) for v in pred_pts[r_ids[a]]),
                                  tuple(int(v) for v in gt_pts[c_ids[b]])))
    pairs.sort()
    tp = len(pairs)
    return MatchResult(tp=tp, fp=n_p - tp, fn=n_g - tp, pairs=pairs)


# ------------------------------------------------------------------- PR tables


@dataclass
class PRTable:
    """Dataset-aggregated counts per class and threshold; arrays are (K, T)."""

    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    class_names: list[str]

    @property
    def n_gt(self) -> np.ndarray:
        return self.tp[:, 0] + self.fn[:, 0] if self.tp.shape[1] else np.zeros(len(self.class_names), int)

    def precision_recall(self) -> tuple[np.ndarray, np.ndarray]:
        tp = self.tp.astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(self.tp + self.fp > 0, tp / (self.tp + self.fp), 0.0)
            r = np.where(self.tp + self.fn > 0, tp / (self.tp + self.fn), 0.0)
        return p, r

    def rows(self, k: int) -> list[tuple[float, int, int, int]]:
        return [(float(t), int(a), int(b), int(c))
                for t, a, b, c in zip(self.thresholds, self.tp[k], self.fp[k], self.fn[k])]

    def to_csv(self) -> str:
        p, r = self.precision_recall()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "threshold", "tp", "fp", "fn", "precision", "recall"])
        for k, name in enumerate(self.class_names):
            for j, t in enumerate(self.thresholds):
                w.writerow([name, f"{t:.4f}", int(self.tp[k, j]), int(self.fp[k, j]), int(self.fn[k, j]),
                            f"{p[k, j]:.6f}", f"{r[k, j]:.6f}"])
        return buf.getvalue()


def image_counts(prob: np.ndarray, gt: np.ndarray, thresholds: Sequence[float], max_dist: float | None = None,
                 tolerance: float = DEFAULT_TOLERANCE, halve: bool = False) -> np.ndarray:
    """(3, K, T) integer counts (tp, fp, fn) for one image."""
    prob = np.asarray(prob)
    gt = np.asarray(gt)
    if prob.shape != gt.shape or prob.ndim != 3:
        raise DataError(f"prediction {prob.shape} and ground truth {gt.shape} must both be (K, H, W)")
    if halve:
        prob = downsample_half(prob.astype(np.float32), binary=False)
        gt = downsample_half(gt, binary=True)
    k, h, w = prob.shape
    if max_dist is None:
        max_dist = tolerance * math.hypot(h, w)
    out = np.zeros((3, k, len(thresholds)), dtype=np.int64)
    # compare at the prediction's own precision so a stored 0.35 passes threshold 0.35
    cast = prob.dtype.type if np.issubdtype(prob.dtype, np.floating) else float
    for c in range(k):
        g = thin(gt[c])
        last_bin = None
        last = (0, 0, int(g.sum()))
        for j, t in enumerate(thresholds):
            b = prob[c] >= cast(t)
            if last_bin is None or not np.array_equal(b, last_bin):
                last = match_count(thin(b), g, max_dist)
                last_bin = b
            out[:, c, j] = last
    return out


def pr_table(probs: Sequence[np.ndarray], gts: Sequence[np.ndarray], thresholds: Sequence[float] | None = None,
             max_dist: float | None = None, tolerance: float = DEFAULT_TOLERANCE, halve: bool = False,
             class_names: Sequence[str] | None = None) -> PRTable:
    """Binarize at each threshold, thin, match, and sum counts over images."""
    thr = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if thr.ndim != 1 or thr.size == 0 or np.any(np.diff(thr) <= 0):
        raise DataError("thresholds must be a non-empty strictly increasing sequence")
    if len(probs) != len(gts):
        raise DataError(f"{len(probs)} predictions vs {len(gts)} ground truths")
    if not probs:
        raise DataError("pr_table needs at least one image")
    k = np.asarray(probs[0]).shape[0]
    total = np.zeros((3, k, thr.size), dtype=np.int64)
    for prob, gt in zip(probs, gts):
        total += image_counts(prob, gt, thr, max_dist, tolerance, halve)
    names = list(class_names) if class_names is not None else [f"class{c + 1}" for c in range(k)]
    return PRTable(thr, total[0], total[1], total[2], names)


# ------------------------------------------------------------------- summaries


def f_measure(p, r):
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(p + r > 0, 2 * p * r / (p + r), 0.0)


def mf_ods(table: PRTable) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-class max F over the shared threshold grid, the arg-max thresholds,
    and the mean over classes that have ground truth."""
    if table.tp.size == 0:
        raise DataError("empty PR table")
    # 2PR/(P+R) rewritten over counts: one division, so exact ratios round correctly
    denom = 2 * table.tp + table.fp + table.fn
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(table.tp > 0, 2.0 * table.tp / np.where(denom > 0, denom, 1), 0.0)
    best = f.argmax(axis=1)
    mf = f[np.arange(f.shape[0]), best]
    present = table.n_gt > 0
    mean = float(mf[present].mean()) if present.any() else 0.0
    return mf, table.thresholds[best], mean


def average_precision(precision: Sequence, recall: Sequence) -> float:
    """Area under the precision envelope (max precision at recall >= r),
    integrated as steps from recall 0.

    Works on floats or ``Fraction``s; with fractions the area is exact until
    the final conversion.
    """
    pts = sorted(zip(recall, precision), key=lambda rp: (rp[0], -rp[1]))
    if not pts:
        return 0.0
    # suffix maximum of precision is the envelope at each recall
    env = [p for _, p in pts]
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    area, prev = 0, 0
    for (r, _), e in zip(pts, env):
        area += (r - prev) * e
        prev = r
    return float(area)


def ap(table: PRTable) -> tuple[np.ndarray, float]:
    """Per-class AP and the mean over classes that have ground truth.

    Thresholds with no predicted pixels have undefined precision and are
    skipped. Precision and recall are exact ratios of the integer counts.
    """
    if table.tp.size == 0:
        raise DataError("empty PR table")
    vals = np.zeros(table.tp.shape[0])
    for k in range(table.tp.shape[0]):
        p, r = [], []
        for tp, fp, fn in zip(table.tp[k].tolist(), table.fp[k].tolist(), table.fn[k].tolist()):
            if tp + fp == 0:
                continue
            p.append(Fraction(tp, tp + fp))
            r.append(Fraction(tp, tp + fn) if tp + fn else Fraction(0))
        vals[k] = average_precision(p, r)
    present = table.n_gt > 0
    mean = float(vals[present].mean()) if present.any() else 0.0
    return vals, mean


# ------------------------------------------------------------------- reports


@dataclass
class EvalReport:
    class_names: list[str]
    mf: list[float]
    ap: list[float]
    ods_threshold: list[float]
    n_gt: list[int]
    mean_mf: float
    mean_ap: float
    thresholds: list[float]
    config: dict = field(default_factory=dict)

    @classmethod
    def from_table(cls, table: PRTable, config: dict | None = None) -> "EvalReport":
        mf, best_t, mean_mf = mf_ods(table)
        aps, mean_ap = ap(table)
        return cls(
            class_names=list(table.class_names),
            mf=[float(v) for v in mf],
            ap=[float(v) for v in aps],
            ods_threshold=[float(v) for v in best_t],
            n_gt=[int(v) for v in table.n_gt],
            mean_mf=mean_mf,
            mean_ap=mean_ap,
            thresholds=[float(t) for t in table.thresholds],
            config=dict(config or {}),
        )

    @property
    def excluded(self) -> list[str]:
        return [n for n, g in zip(self.class_names, self.n_gt) if g == 0]

    def to_json(self) -> dict:
        rows = [
            {"class": n, "mf": m, "ap": a, "ods_threshold": t, "n_gt": g, "excluded_from_mean": g == 0}
            for n, m, a, t, g in zip(self.class_names, self.mf, self.ap, self.ods_threshold, self.n_gt)
        ]
        return {
            "classes": rows,
            "mean_mf": self.mean_mf,
            "mean_ap": self.mean_ap,
            "excluded_classes": self.excluded,
            "thresholds": self.thresholds,
            "config": self.config,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    def to_text(self) -> str:
        width = max([len("class"), len("mean")] + [len(n) for n in self.class_names])
        lines = [f"{'class':<{width}}  {'MF(ODS)':>8}  {'AP':>8}  {'thresh':>6}  {'n_gt':>6}"]
        for n, m, a, t, g in zip(self.class_names, self.mf, self.ap, self.ods_threshold, self.n_gt):
            note = "  (no gt; excluded)" if g == 0 else ""
            lines.append(f"{n:<{width}}  {100 * m:8.2f}  {100 * a:8.2f}  {t:6.2f}  {g:6d}{note}")
        lines.append(f"{'mean':<{width}}  {100 * self.mean_mf:8.2f}  {100 * self.mean_ap:8.2f}")
        return "\n".join(lines) + "\n"
