"""Target assignment, loss terms, and the optimization loop.

Set-based supervision in the DETR style: per layer, predictions are matched
one-to-one to ground truth by a Hungarian solve over a focal + geometry
cost, classification targets follow the matching, and topology targets are
re-indexed through it (unmatched rows and columns are all-negative).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .autodiff import Tensor
from .decoder import PointLaneModel, Predictions, bev_raster
from .errors import ConfigError, ContractError, DivergenceError, EmptyDataError
from .scene import NoiseSpec, Scene

CLS_EPS = 1e-7
GEOMETRY_COST_WEIGHT = 5.0


@dataclass
class LossWeights:
    lambda_t: float = 1.0
    lambda_p: float = 1.0
    lambda_l: float = 1.0
    lambda_pl: float = 5.0
    lambda_ll: float = 5.0
    lambda_lt: float = 5.0

    def validate(self) -> None:
        for name, v in vars(self).items():
            if v < 0:
                raise ConfigError(f"{name} must be non-negative, got {v}")


@dataclass
class Assignment:
    point_matches: list[tuple[int, int]]
    lane_matches: list[tuple[int, int]]
    traffic_matches: list[tuple[int, int]]


def hungarian_match(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment, canonicalized so that among
    equal-cost optima the lexicographically smallest (row, col) list wins."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    if not np.all(np.isfinite(cost)):
        raise ContractError("assignment cost must be finite")
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    changed = True
    while changed:
        changed = False
        for a in range(len(pairs)):
            for b in range(a + 1, len(pairs)):
                (i, x), (j, y) = pairs[a], pairs[b]
                if y < x and abs(cost[i, x] + cost[j, y] - cost[i, y] - cost[j, x]) < 1e-12:
                    pairs[a], pairs[b] = (i, y), (j, x)
                    changed = True
        pairs.sort()
    return pairs


def focal_loss(p, y, alpha_f: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Elementwise focal term; scores are clamped away from exact 0/1.

    The clamp is numerical protection for the logs, not part of the loss
    shape, so its gradient passes straight through: a score saturated past
    the clamp keeps feeling the pull back toward the correct class.
    """
    p_t = p if isinstance(p, Tensor) else Tensor(np.asarray(p, dtype=np.float64))
    p_c = ad.clamp_values(p_t, CLS_EPS, 1.0 - CLS_EPS)
    y_arr = np.asarray(y, dtype=np.float64)
    pos = -alpha_f * ad.power(1.0 - p_c, gamma) * ad.log(p_c)
    neg = -(1.0 - alpha_f) * ad.power(p_c, gamma) * ad.log(1.0 - p_c)
    return Tensor(y_arr) * pos + Tensor(1.0 - y_arr) * neg


def l1_reg_loss(pred: Tensor, gt) -> Tensor:
    """Mean absolute error over all coordinates of the matched instances."""
    if pred.data.size == 0:
        warnings.warn("no matched instances for the regression loss", stacklevel=2)
        return Tensor(0.0)
    return ad.amean(ad.absolute(pred - Tensor(np.asarray(gt, dtype=np.float64))))


def _giou_value(a: np.ndarray, b: np.ndarray) -> float:
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(ix2 - ix1, 0.0) * max(iy2 - iy1, 0.0)
    area_a = max(a[2] - a[0], 0.0) * max(a[3] - a[1], 0.0)
    area_b = max(b[2] - b[0], 0.0) * max(b[3] - b[1], 0.0)
    union = area_a + area_b - inter
    cx1, cy1 = min(a[0], b[0]), min(a[1], b[1])
    cx2, cy2 = max(a[2], b[2]), max(a[3], b[3])
    c_area = (cx2 - cx1) * (cy2 - cy1)
    iou = inter / union if union > 0 else 0.0
    if c_area <= 0:
        return iou
    return iou - (c_area - union) / c_area


def giou_loss(box_a, box_b) -> float:
    """1 - GIoU of two valid boxes; ranges over [0, 2]."""
    a = np.asarray(box_a, dtype=np.float64)
    b = np.asarray(box_b, dtype=np.float64)
    for box in (a, b):
        if box.shape != (4,) or box[2] <= box[0] or box[3] <= box[1]:
            raise ContractError(f"degenerate box {box}")
    return 1.0 - _giou_value(a, b)


def giou_loss_graph(box_a, box_b) -> Tensor:
    """Differentiable twin of :func:`giou_loss` built from autodiff ops.

    Same arithmetic on valid boxes, so the value matches the float form;
    use this one when the loss must carry gradient into the box
    coordinates, and the float form for matching costs and reports.
    """
    a_arr = np.asarray(box_a.data if isinstance(box_a, Tensor) else box_a, dtype=np.float64)
    b_arr = np.asarray(box_b.data if isinstance(box_b, Tensor) else box_b, dtype=np.float64)
    for box in (a_arr, b_arr):
        if box.shape != (4,) or box[2] <= box[0] or box[3] <= box[1]:
            raise ContractError(f"degenerate box {box}")
    a = box_a if isinstance(box_a, Tensor) else Tensor(a_arr)
    b = box_b if isinstance(box_b, Tensor) else Tensor(b_arr)
    ax1, ay1, ax2, ay2 = ad.split_rows(a, [1, 1, 1, 1])
    bx1, by1, bx2, by2 = ad.split_rows(b, [1, 1, 1, 1])
    iw = ad.maximum_scalar(ad.minimum(ax2, bx2) - ad.maximum(ax1, bx1), 0.0)
    ih = ad.maximum_scalar(ad.minimum(ay2, by2) - ad.maximum(ay1, by1), 0.0)
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    c_area = (ad.maximum(ax2, bx2) - ad.minimum(ax1, bx1)) * (
        ad.maximum(ay2, by2) - ad.minimum(ay1, by1)
    )
    giou = inter / union - (c_area - union) / c_area
    return ad.asum(1.0 - giou)


def topology_loss(pred: Tensor, gt: np.ndarray, row_matches, col_matches,
                  alpha_f: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Mean focal loss over all cells of the prediction-indexed matrix; GT
    entries land where both endpoints matched, everything else is negative."""
    aligned = np.zeros(pred.shape)
    gt = np.asarray(gt, dtype=np.float64)
    for pr, gr in row_matches:
        for pc, gc in col_matches:
            aligned[pr, pc] = gt[gr, gc]
    return ad.amean(focal_loss(pred, aligned, alpha_f, gamma))


def _focal_cost(p: np.ndarray, alpha_f: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    """Matching cost per prediction: focal-if-positive minus focal-if-negative."""
    p_c = np.clip(p, CLS_EPS, 1.0 - CLS_EPS)
    pos = -alpha_f * (1.0 - p_c) ** gamma * np.log(p_c)
    neg = -(1.0 - alpha_f) * p_c**gamma * np.log(1.0 - p_c)
    return pos - neg


def resample_polyline(pts: np.ndarray, k: int) -> np.ndarray:
    """Linearly resample a polyline to k points by arc-index parameter."""
    pts = np.asarray(pts, dtype=np.float64)
    if pts.shape[0] == k:
        return pts
    t_old = np.linspace(0.0, 1.0, pts.shape[0])
    t_new = np.linspace(0.0, 1.0, k)
    return np.stack([np.interp(t_new, t_old, pts[:, c]) for c in range(pts.shape[1])], axis=1)


def match_scene(preds: Predictions, scene: Scene, boxes: np.ndarray,
                box_scores: np.ndarray) -> Assignment:
    """Hungarian assignment of every prediction family to its GT set."""
    gt_points = scene.points
    cost_p = _focal_cost(preds.points_cls.data[:, 0])[:, None] + GEOMETRY_COST_WEIGHT * np.mean(
        np.abs(preds.points_reg.data[:, None, :] - gt_points[None, :, :]), axis=2
    )
    gt_lanes = np.stack(
        [resample_polyline(lane.points, preds.lanes_reg.shape[1]) for lane in scene.lanes]
    )
    lane_flat = preds.lanes_reg.data.reshape(preds.lanes_reg.shape[0], -1)
    gt_flat = gt_lanes.reshape(gt_lanes.shape[0], -1)
    cost_l = _focal_cost(preds.lanes_cls.data[:, 0])[:, None] + GEOMETRY_COST_WEIGHT * np.mean(
        np.abs(lane_flat[:, None, :] - gt_flat[None, :, :]), axis=2
    )
    if scene.traffic:
        gt_boxes = np.stack([el.box.astype(np.float64) for el in scene.traffic])
        gt_cats = [el.cat for el in scene.traffic]
        n_t = boxes.shape[0]
        cost_t = np.zeros((n_t, len(gt_cats)))
        for j, (gb, cat) in enumerate(zip(gt_boxes, gt_cats)):
            cost_t[:, j] = _focal_cost(box_scores[:, cat]) + GEOMETRY_COST_WEIGHT * (
                np.mean(np.abs(boxes - gb[None, :]), axis=1)
                + np.array([1.0 - _giou_value(b, gb) for b in boxes])
            )
        traffic_matches = hungarian_match(cost_t)
    else:
        traffic_matches = []
    return Assignment(
        point_matches=hungarian_match(cost_p),
        lane_matches=hungarian_match(cost_l),
        traffic_matches=traffic_matches,
    )


def _select_rows(t: Tensor, idx: list[int]) -> Tensor:
    """Differentiable row gather via a constant selection matrix."""
    flat = ad.reshape(t, (t.shape[0], int(np.prod(t.shape[1:])))) if t.ndim > 2 else t
    sel = np.zeros((len(idx), t.shape[0]))
    for r, i in enumerate(idx):
        sel[r, i] = 1.0
    return ad.matmul(Tensor(sel), flat)


def _cls_targets(n: int, matches: list[tuple[int, int]]) -> np.ndarray:
    y = np.zeros((n, 1))
    for pr, _ in matches:
        y[pr, 0] = 1.0
    return y


def total_loss(preds_per_layer: list[Predictions], scene: Scene, boxes: np.ndarray,
               box_scores: np.ndarray, weights: LossWeights | None = None,
               assignments: list[Assignment] | None = None):
    """Deep-supervised loss over all layers.

    Returns (scalar Tensor, breakdown) where the breakdown holds the
    unweighted per-term sums over layers plus the weighted total, so
    weighted contributions can be audited term by term. ``assignments``
    pins the per-layer matching (useful for finite-difference checks).
    """
    weights = weights or LossWeights()
    weights.validate()
    terms = {"t": 0.0, "p": 0.0, "l": 0.0, "pl": 0.0, "ll": 0.0, "lt": 0.0}
    total = Tensor(0.0)
    gt_points = scene.points
    lam = {
        "t": weights.lambda_t,
        "p": weights.lambda_p,
        "l": weights.lambda_l,
        "pl": weights.lambda_pl,
        "ll": weights.lambda_ll,
        "lt": weights.lambda_lt,
    }
    for li, preds in enumerate(preds_per_layer):
        # check inputs up front: the focal clamp would otherwise mask NaNs
        for key, tensors in (
            ("p", (preds.points_reg, preds.points_cls)),
            ("l", (preds.lanes_reg, preds.lanes_cls)),
            ("pl", (preds.g_pl,)),
            ("ll", (preds.g_ll,)),
            ("lt", (preds.g_lt,)),
        ):
            for t in tensors:
                if not np.all(np.isfinite(t.data)):
                    raise DivergenceError(f"loss term {key} has non-finite inputs at layer {li}")
        asg = assignments[li] if assignments is not None else match_scene(preds, scene, boxes, box_scores)
        gt_lanes = np.stack(
            [resample_polyline(lane.points, preds.lanes_reg.shape[1]) for lane in scene.lanes]
        )

        layer_terms: dict[str, Tensor] = {}
        p_cls = ad.amean(focal_loss(preds.points_cls, _cls_targets(preds.points_cls.shape[0], asg.point_matches)))
        p_reg = l1_reg_loss(
            _select_rows(preds.points_reg, [pr for pr, _ in asg.point_matches]),
            gt_points[[gr for _, gr in asg.point_matches]],
        )
        layer_terms["p"] = p_cls + p_reg
        l_cls = ad.amean(focal_loss(preds.lanes_cls, _cls_targets(preds.lanes_cls.shape[0], asg.lane_matches)))
        l_reg = l1_reg_loss(
            _select_rows(preds.lanes_reg, [pr for pr, _ in asg.lane_matches]),
            gt_lanes[[gr for _, gr in asg.lane_matches]].reshape(len(asg.lane_matches), -1),
        )
        layer_terms["l"] = l_cls + l_reg

        # traffic predictions come from the stub, so this term carries no
        # gradient; it still contributes its value to the objective
        t_targets = np.zeros_like(box_scores)
        for pr, gr in asg.traffic_matches:
            t_targets[pr, scene.traffic[gr].cat] = 1.0
        t_val = float(np.mean(_focal_np(box_scores, t_targets)))
        if asg.traffic_matches:
            gt_boxes = np.stack([el.box.astype(np.float64) for el in scene.traffic])
            sel_p = [pr for pr, _ in asg.traffic_matches]
            sel_g = [gr for _, gr in asg.traffic_matches]
            t_val += float(np.mean(np.abs(boxes[sel_p] - gt_boxes[sel_g])))
            t_val += float(
                np.mean([1.0 - _giou_value(boxes[p], gt_boxes[g]) for p, g in zip(sel_p, sel_g)])
            )
        layer_terms["t"] = Tensor(t_val)

        layer_terms["pl"] = topology_loss(preds.g_pl, scene.g_pl, asg.point_matches, asg.lane_matches)
        layer_terms["ll"] = topology_loss(preds.g_ll, scene.g_ll, asg.lane_matches, asg.lane_matches)
        layer_terms["lt"] = topology_loss(preds.g_lt, scene.g_lt, asg.lane_matches, asg.traffic_matches)

        for key, term in layer_terms.items():
            v = term.item()
            if not np.isfinite(v):
                raise DivergenceError(f"loss term {key} is non-finite at layer {li}")
            terms[key] += v
            total = total + lam[key] * term
    breakdown = dict(terms)
    breakdown["total"] = total.item()
    return total, breakdown


def _focal_np(p: np.ndarray, y: np.ndarray, alpha_f: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    p_c = np.clip(p, CLS_EPS, 1.0 - CLS_EPS)
    pos = -alpha_f * (1.0 - p_c) ** gamma * np.log(p_c)
    neg = -(1.0 - alpha_f) * p_c**gamma * np.log(1.0 - p_c)
    return y * pos + (1.0 - y) * neg


# -- optimization loop -------------------------------------------------------------


@dataclass
class TrainConfig:
    iterations: int = 200
    lr: float = 1e-2
    batch_size: int = 4
    optimizer: str = "sgd"
    schedule: str = "constant"
    seed: int = 0
    weight_decay: float = 0.0
    weights: LossWeights = field(default_factory=LossWeights)
    stub_noise: NoiseSpec | None = None

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be positive")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        self.weights.validate()


def paper_preset() -> TrainConfig:
    """The published-style recipe: adam with decoupled decay and a cosine
    schedule from 2e-4."""
    return TrainConfig(optimizer="adam", schedule="cosine", lr=2e-4, weight_decay=0.01)


def _decays(name: str, data: np.ndarray) -> bool:
    """Weight decay targets matrix-shaped trunk weights only. Biases, gains,
    scalar map parameters, reference-point geometry, and the prediction
    heads stay free: decay on a regression head caps how far its outputs
    can reach, and decay on reference points drags predictions toward the
    origin. Decaying the trunk is what matters, because unchecked query
    feature growth blows up the pairwise score logits quadratically."""
    return data.ndim >= 2 and not name.startswith("bank.ref") and ".head." not in name


@dataclass
class TrainResult:
    history: list[dict]
    diverged: bool


def fit(model: PointLaneModel, scenes: list[Scene], cfg: TrainConfig | None = None) -> TrainResult:
    """Train in place over cycling minibatches.

    Deterministic for a fixed seed: scenes are visited in a fixed cyclic
    order and the traffic stub jitter is seeded per scene. On divergence the
    parameters roll back to the last finite iteration.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if not scenes:
        raise EmptyDataError("need at least one training scene")
    rasters = [bev_raster(s, model.config.bev_shape, model.config.extent) for s in scenes]
    history: list[dict] = []
    adam_m = {k: np.zeros_like(t.data) for k, t in model.params.items()}
    adam_v = {k: np.zeros_like(t.data) for k, t in model.params.items()}
    snapshot = {k: t.data.copy() for k, t in model.params.items()}
    diverged = False

    for it in range(cfg.iterations):
        if cfg.schedule == "cosine":
            lr_t = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * it / cfg.iterations))
        else:
            lr_t = cfg.lr
        batch = [(it * cfg.batch_size + j) % len(scenes) for j in range(cfg.batch_size)]
        model.zero_grad()
        total = Tensor(0.0)
        breakdown_sum = {k: 0.0 for k in ("t", "p", "l", "pl", "ll", "lt", "total")}
        try:
            for si in batch:
                scene = scenes[si]
                f_bev = model.lift_raster(rasters[si])
                # stub jitter is seeded per scene, so boxes repeat across epochs
                q_t_hat, boxes, scores = model.traffic_stub(
                    scene, noise=cfg.stub_noise, seed=cfg.seed + si
                )
                preds = model.forward(f_bev, q_t_hat)
                loss, breakdown = total_loss(preds, scene, boxes, scores, cfg.weights)
                total = total + loss * (1.0 / len(batch))
                for k, v in breakdown.items():
                    breakdown_sum[k] += v / len(batch)
            if not np.isfinite(total.item()):
                raise DivergenceError("batch loss is non-finite")
            total.backward()
        except DivergenceError:
            for k, t in model.params.items():
                t.data = np.array(snapshot[k], dtype=np.float64)
            diverged = True
            break

        snapshot = {k: np.array(t.data, dtype=np.float64) for k, t in model.params.items()}
        for k, t in model.params.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if cfg.optimizer == "adam":
                adam_m[k] = 0.9 * adam_m[k] + 0.1 * g
                adam_v[k] = 0.999 * adam_v[k] + 0.001 * g * g
                m_hat = adam_m[k] / (1.0 - 0.9 ** (it + 1))
                v_hat = adam_v[k] / (1.0 - 0.999 ** (it + 1))
                step = lr_t * m_hat / (np.sqrt(v_hat) + 1e-8)
            else:
                step = lr_t * g
            if cfg.weight_decay > 0.0 and _decays(k, t.data):
                step = step + lr_t * cfg.weight_decay * t.data
            t.data = np.asarray(t.data - step)
        row = {"iteration": it, "lr": lr_t}
        row.update(breakdown_sum)
        history.append(row)
    return TrainResult(history=history, diverged=diverged)


def write_history_csv(history: list[dict], path: str) -> None:
    """One row per iteration: iteration, lr, per-term means, total."""
    cols = ["iteration", "lr", "t", "p", "l", "pl", "ll", "lt", "total"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in history:
            writer.writerow({c: row.get(c, "") for c in cols})
