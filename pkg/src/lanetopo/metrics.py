"""Detection and topology metrics.

Detection quality is mean AP over distance thresholds {1, 2, 3} m (points and
lanes, Euclidean / discrete Fréchet) or per-category AP at IoU >= 0.5
(traffic boxes). Topology quality is a documented simplified variant: after
instance matching (1.0 m Fréchet for lanes, 0.5 IoU for traffic), every
GT-indexed edge slot is ranked by its predicted score; slots of unmatched
instances score 0 and become unreachable positives. The overall score folds
the four components together with square-rooted topology terms.

All public scores are percentages in [0, 100]; rounding happens only at
presentation time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .geometry import frechet_matrix
from .scene import DetectionSet, Scene

DISTANCE_THRESHOLDS = (1.0, 2.0, 3.0)
IOU_THRESHOLD = 0.5
TOP_MATCH_FRECHET = 1.0
GAP_HIST_EDGES = np.linspace(0.0, 3.0, 13)


def average_precision(scores, tp_flags, num_gt: int) -> float:
    """All-points AP: area under the precision-recall envelope.

    Ranks by descending score (stable on ties), so each true positive at
    rank r contributes envelope_precision(r) / num_gt. Returns 0 when there
    is nothing to recall.
    """
    scores = np.asarray(scores, dtype=np.float64)
    flags = np.asarray(tp_flags, dtype=bool)
    if num_gt <= 0 or scores.size == 0 or not flags.any():
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = flags[order]
    precision = np.cumsum(tp) / np.arange(1, tp.size + 1)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(envelope[tp].sum() / num_gt)


# -- greedy one-to-one matching ---------------------------------------------------


def match_by_distance(dist: np.ndarray, scores: np.ndarray, threshold: float):
    """Greedy matching of predictions to GT under a strict distance cutoff.

    Predictions are visited in descending score (ties: lower index first);
    each takes its nearest unclaimed GT with distance strictly below the
    threshold (distance ties: lowest GT index). Returns (tp_flags,
    pred_to_gt) where unmatched predictions map to -1.
    """
    n_pred, n_gt = dist.shape
    flags = np.zeros(n_pred, dtype=bool)
    assign = np.full(n_pred, -1, dtype=np.int64)
    if n_pred == 0 or n_gt == 0:
        return flags, assign
    taken = np.zeros(n_gt, dtype=bool)
    for i in np.argsort(-np.asarray(scores), kind="stable"):
        d = np.where(taken, np.inf, dist[i])
        j = int(np.argmin(d))
        if d[j] < threshold:
            flags[i] = True
            assign[i] = j
            taken[j] = True
    return flags, assign


def match_by_iou(iou: np.ndarray, scores: np.ndarray, threshold: float):
    """Greedy matching with an inclusive IoU cutoff (largest overlap wins)."""
    n_pred, n_gt = iou.shape
    flags = np.zeros(n_pred, dtype=bool)
    assign = np.full(n_pred, -1, dtype=np.int64)
    if n_pred == 0 or n_gt == 0:
        return flags, assign
    taken = np.zeros(n_gt, dtype=bool)
    for i in np.argsort(-np.asarray(scores), kind="stable"):
        o = np.where(taken, -np.inf, iou[i])
        j = int(np.argmax(o))
        if o[j] >= threshold:
            flags[i] = True
            assign[i] = j
            taken[j] = True
    return flags, assign


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of [x1, y1, x2, y2] boxes; degenerate boxes give 0."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0.0, None) * np.clip(y2 - y1, 0.0, None)
    area_a = np.clip(a[:, 2] - a[:, 0], 0.0, None) * np.clip(a[:, 3] - a[:, 1], 0.0, None)
    area_b = np.clip(b[:, 2] - b[:, 0], 0.0, None) * np.clip(b[:, 3] - b[:, 1], 0.0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0.0, inter / np.where(union > 0.0, union, 1.0), 0.0)


# -- detection scores ---------------------------------------------------------------


def det_p(pred_points, scores, gt_points, thresholds=DISTANCE_THRESHOLDS) -> float:
    """Mean AP of point detections over the distance thresholds, x100."""
    pred = np.asarray(pred_points, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    if gt.shape[0] == 0:
        return 0.0
    dist = np.linalg.norm(pred[:, None, :] - gt[None, :, :], axis=2) if pred.size else np.zeros(
        (0, gt.shape[0])
    )
    aps = []
    for t in thresholds:
        flags, _ = match_by_distance(dist, scores, t)
        aps.append(average_precision(scores, flags, gt.shape[0]))
    return 100.0 * float(np.mean(aps))


def det_l(pred_lanes, scores, gt_lanes, thresholds=DISTANCE_THRESHOLDS) -> float:
    """Mean AP of lane detections over Fréchet thresholds, x100."""
    if len(gt_lanes) == 0:
        return 0.0
    dist = frechet_matrix(pred_lanes, gt_lanes)
    aps = []
    for t in thresholds:
        flags, _ = match_by_distance(dist, scores, t)
        aps.append(average_precision(scores, flags, len(gt_lanes)))
    return 100.0 * float(np.mean(aps))


def det_t(pred_boxes, box_scores, gt_boxes, gt_cats) -> float:
    """Mean per-category AP of traffic boxes at IoU >= 0.5, x100."""
    gt_cats = np.asarray(gt_cats, dtype=np.int64)
    if gt_cats.size == 0:
        return 0.0
    box_scores = np.asarray(box_scores, dtype=np.float64)
    aps = []
    for cat in sorted(set(gt_cats.tolist())):
        gt_sel = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)[gt_cats == cat]
        iou = box_iou_matrix(pred_boxes, gt_sel)
        sc = box_scores[:, cat] if box_scores.size else np.zeros(0)
        flags, _ = match_by_iou(iou, sc, IOU_THRESHOLD)
        aps.append(average_precision(sc, flags, gt_sel.shape[0]))
    return 100.0 * float(np.mean(aps))


def top_score(pred_edges: np.ndarray, gt_edges: np.ndarray, skip_diagonal: bool = False) -> float:
    """Edge-slot AP for topology, x100.

    ``pred_edges`` must already be GT-indexed (unmatched instances' slots are
    0). Only slots with positive score enter the ranking; every positive GT
    slot counts toward recall, so zeroed slots depress the score exactly as
    unreachable positives should.
    """
    pred = np.asarray(pred_edges, dtype=np.float64)
    gt = np.asarray(gt_edges, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractError(f"edge matrices must align, got {pred.shape} vs {gt.shape}")
    scores, truth = _edge_slots(pred, gt, skip_diagonal)
    num_gt = int(truth.sum())
    if num_gt == 0:
        return 0.0
    ranked = scores > 0.0
    return 100.0 * average_precision(scores[ranked], truth[ranked], num_gt)


def _edge_slots(pred: np.ndarray, gt: np.ndarray, skip_diagonal: bool):
    if skip_diagonal:
        if pred.shape[0] != pred.shape[1]:
            raise ContractError("diagonal skipping needs a square matrix")
        mask = ~np.eye(pred.shape[0], dtype=bool)
        return pred[mask], gt[mask] > 0.5
    return pred.ravel(), gt.ravel() > 0.5


def ols(det_l_score: float, det_t_score: float, top_ll_score: float, top_lt_score: float) -> float:
    """Overall score: mean of the two detection fractions and the square
    roots of the two topology fractions, x100."""
    for name, v in (
        ("det_l", det_l_score),
        ("det_t", det_t_score),
        ("top_ll", top_ll_score),
        ("top_lt", top_lt_score),
    ):
        if not (0.0 <= v <= 100.0) or not np.isfinite(v):
            raise ContractError(f"{name} must be in [0, 100], got {v}")
    return float(
        100.0
        * 0.25
        * (
            det_l_score / 100.0
            + det_t_score / 100.0
            + np.sqrt(top_ll_score / 100.0)
            + np.sqrt(top_lt_score / 100.0)
        )
    )


# -- endpoint-gap diagnostics ----------------------------------------------------------


@dataclass
class GapReport:
    mean: float
    max: float
    count: int
    hist_counts: np.ndarray
    hist_edges: np.ndarray = field(default_factory=lambda: GAP_HIST_EDGES.copy())


def edge_gaps(lanes, edges: np.ndarray) -> np.ndarray:
    """Raw end-to-start distances for every off-diagonal (i, j) edge."""
    lanes = np.asarray(lanes, dtype=np.float64)
    edges = np.asarray(edges)
    return np.asarray(
        [
            float(np.linalg.norm(lanes[i, -1] - lanes[j, 0]))
            for i, j in zip(*np.nonzero(edges))
            if i != j
        ],
        dtype=np.float64,
    )


def endpoint_gap_report(lanes, edges: np.ndarray) -> GapReport:
    """Gaps between endpoints that the topology says should coincide.

    For every (i, j) edge, measures the Euclidean distance between lane i's
    end and lane j's start. The diagonal is ignored. Overflowing gaps land in
    the last histogram bin.
    """
    arr = edge_gaps(lanes, edges)
    if arr.size == 0:
        return GapReport(0.0, 0.0, 0, np.zeros(len(GAP_HIST_EDGES) - 1, dtype=np.int64))
    counts, _ = np.histogram(np.clip(arr, 0.0, GAP_HIST_EDGES[-1]), bins=GAP_HIST_EDGES)
    return GapReport(float(arr.mean()), float(arr.max()), int(arr.size), counts)


# -- scene-level evaluation ---------------------------------------------------------------


@dataclass
class SceneCurves:
    """Per-scene matching outcomes, poolable across a dataset."""

    n_gt_points: int
    n_gt_lanes: int
    point: dict  # threshold -> (scores, flags)
    lane: dict  # threshold -> (scores, flags)
    traffic: dict  # category -> (scores, flags, n_gt)
    top_ll_slots: tuple  # (scores, truth)
    top_lt_slots: tuple
    gaps: np.ndarray


@dataclass
class MetricReport:
    det_p: float
    det_l: float
    det_t: float
    top_ll: float
    top_lt: float
    ols: float
    endpoint_gap_mean: float
    endpoint_gap_max: float
    breakdown: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "det_p": self.det_p,
            "det_l": self.det_l,
            "det_t": self.det_t,
            "top_ll": self.top_ll,
            "top_lt": self.top_lt,
            "ols": self.ols,
            "endpoint_gap_mean": self.endpoint_gap_mean,
            "endpoint_gap_max": self.endpoint_gap_max,
            "breakdown": self.breakdown,
            "flags": list(self.flags),
        }


def collect_curves(scene: Scene, dets: DetectionSet) -> SceneCurves:
    gt_points = scene.points
    gt_lanes = [lane.points for lane in scene.lanes]
    pred = dets.pred_points
    dist_p = (
        np.linalg.norm(pred[:, None, :] - gt_points[None, :, :], axis=2)
        if pred.size and gt_points.size
        else np.zeros((pred.shape[0], gt_points.shape[0]))
    )
    dist_l = frechet_matrix(dets.pred_lanes, gt_lanes)

    point_curves = {}
    lane_curves = {}
    lane_assign_at_1 = np.full(dets.pred_lanes.shape[0], -1, dtype=np.int64)
    for t in DISTANCE_THRESHOLDS:
        p_flags, _ = match_by_distance(dist_p, dets.point_scores, t)
        point_curves[t] = (dets.point_scores.copy(), p_flags)
        l_flags, l_assign = match_by_distance(dist_l, dets.lane_scores, t)
        lane_curves[t] = (dets.lane_scores.copy(), l_flags)
        if t == TOP_MATCH_FRECHET:
            lane_assign_at_1 = l_assign

    gt_cats = np.asarray([el.cat for el in scene.traffic], dtype=np.int64)
    gt_boxes = np.asarray([el.box for el in scene.traffic], dtype=np.float64).reshape(-1, 4)
    traffic_curves = {}
    box_to_gt = np.full(dets.pred_boxes.shape[0], -1, dtype=np.int64)
    for cat in sorted(set(gt_cats.tolist())):
        gt_idx = np.nonzero(gt_cats == cat)[0]
        iou = box_iou_matrix(dets.pred_boxes, gt_boxes[gt_idx])
        sc = dets.box_scores[:, cat] if dets.box_scores.size else np.zeros(0)
        flags, assign = match_by_iou(iou, sc, IOU_THRESHOLD)
        traffic_curves[cat] = (sc.copy(), flags, len(gt_idx))
        for p, local in enumerate(assign):
            if local >= 0 and box_to_gt[p] < 0:
                box_to_gt[p] = gt_idx[local]

    # GT-indexed topology slots via the instance matches
    gt_to_pred_lane = np.full(len(gt_lanes), -1, dtype=np.int64)
    for p, g in enumerate(lane_assign_at_1):
        if g >= 0:
            gt_to_pred_lane[g] = p
    gt_to_pred_box = np.full(len(gt_cats), -1, dtype=np.int64)
    for p, g in enumerate(box_to_gt):
        if g >= 0:
            gt_to_pred_box[g] = p

    ll_pred = _aligned_edges(dets.pred_g_ll, scene.g_ll.shape, gt_to_pred_lane, gt_to_pred_lane)
    lt_pred = _aligned_edges(dets.pred_g_lt, scene.g_lt.shape, gt_to_pred_lane, gt_to_pred_box)
    top_ll_slots = _edge_slots(ll_pred, scene.g_ll, skip_diagonal=True)
    top_lt_slots = _edge_slots(lt_pred, scene.g_lt, skip_diagonal=False)

    gap_values = edge_gaps(dets.pred_lanes, dets.pred_g_ll > 0.5)
    return SceneCurves(
        n_gt_points=gt_points.shape[0],
        n_gt_lanes=len(gt_lanes),
        point=point_curves,
        lane=lane_curves,
        traffic=traffic_curves,
        top_ll_slots=top_ll_slots,
        top_lt_slots=top_lt_slots,
        gaps=gap_values,
    )


def _aligned_edges(pred_matrix, gt_shape, row_map, col_map) -> np.ndarray:
    out = np.zeros(gt_shape, dtype=np.float64)
    for i in range(gt_shape[0]):
        pi = row_map[i]
        if pi < 0:
            continue
        for j in range(gt_shape[1]):
            pj = col_map[j]
            if pj < 0:
                continue
            out[i, j] = pred_matrix[pi, pj]
    return out


def aggregate_curves(curves: list[SceneCurves]) -> MetricReport:
    """Dataset-pooled metrics: matches pool across scenes, one PR curve per
    threshold/category, totals over all GT."""
    flags: list[str] = []
    n_gt_points = sum(c.n_gt_points for c in curves)
    n_gt_lanes = sum(c.n_gt_lanes for c in curves)

    def pooled_ap(kind: str, t: float, num_gt: int) -> float:
        scores = np.concatenate([getattr(c, kind)[t][0] for c in curves]) if curves else np.zeros(0)
        tps = np.concatenate([getattr(c, kind)[t][1] for c in curves]) if curves else np.zeros(0, bool)
        return average_precision(scores, tps, num_gt)

    p_aps = {t: pooled_ap("point", t, n_gt_points) for t in DISTANCE_THRESHOLDS}
    l_aps = {t: pooled_ap("lane", t, n_gt_lanes) for t in DISTANCE_THRESHOLDS}
    det_p_score = 100.0 * float(np.mean(list(p_aps.values()))) if n_gt_points else 0.0
    det_l_score = 100.0 * float(np.mean(list(l_aps.values()))) if n_gt_lanes else 0.0
    if n_gt_points == 0:
        flags.append("no_gt_points")
    if n_gt_lanes == 0:
        flags.append("no_gt_lanes")

    cats = sorted({cat for c in curves for cat in c.traffic})
    cat_aps = {}
    for cat in cats:
        scores = np.concatenate([c.traffic[cat][0] for c in curves if cat in c.traffic])
        tps = np.concatenate([c.traffic[cat][1] for c in curves if cat in c.traffic])
        num = sum(c.traffic[cat][2] for c in curves if cat in c.traffic)
        cat_aps[cat] = average_precision(scores, tps, num)
    det_t_score = 100.0 * float(np.mean(list(cat_aps.values()))) if cats else 0.0
    if not cats:
        flags.append("no_gt_traffic")

    def pooled_top(attr: str) -> float:
        scores = np.concatenate([getattr(c, attr)[0] for c in curves]) if curves else np.zeros(0)
        truth = np.concatenate([getattr(c, attr)[1] for c in curves]) if curves else np.zeros(0, bool)
        num_gt = int(truth.sum())
        if num_gt == 0:
            flags.append(f"no_gt_edges_{attr.split('_')[1]}")
            return 0.0
        ranked = scores > 0.0
        return 100.0 * average_precision(scores[ranked], truth[ranked], num_gt)

    top_ll_score = pooled_top("top_ll_slots")
    top_lt_score = pooled_top("top_lt_slots")

    gaps = np.concatenate([c.gaps for c in curves]) if curves else np.zeros(0)
    gap_mean = float(gaps.mean()) if gaps.size else 0.0
    gap_max = float(gaps.max()) if gaps.size else 0.0

    return MetricReport(
        det_p=det_p_score,
        det_l=det_l_score,
        det_t=det_t_score,
        top_ll=top_ll_score,
        top_lt=top_lt_score,
        ols=ols(det_l_score, det_t_score, top_ll_score, top_lt_score),
        endpoint_gap_mean=gap_mean,
        endpoint_gap_max=gap_max,
        breakdown={
            "det_p_per_threshold": {str(t): p_aps[t] for t in DISTANCE_THRESHOLDS},
            "det_l_per_threshold": {str(t): l_aps[t] for t in DISTANCE_THRESHOLDS},
            "det_t_per_category": {str(c): cat_aps[c] for c in cats},
        },
        flags=flags,
    )


def evaluate_scene(scene: Scene, dets: DetectionSet) -> MetricReport:
    return aggregate_curves([collect_curves(scene, dets)])


def evaluate_many(scenes: list[Scene], dets_list: list[DetectionSet]):
    """Per-scene reports plus the dataset-pooled aggregate."""
    if len(scenes) != len(dets_list):
        raise ContractError("scenes and detections must pair up")
    curves = [collect_curves(s, d) for s, d in zip(scenes, dets_list)]
    per_scene = [aggregate_curves([c]) for c in curves]
    return aggregate_curves(curves), per_scene
