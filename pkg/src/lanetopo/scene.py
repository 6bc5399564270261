"""Synthetic intersection scenes with exact ground-truth topology.

A scene is a small road junction in a bird's-eye-view frame (x forward,
y left, z up, meters): straight approach and exit lanes on 2..4 arms,
cubic-Bezier connectors across the junction, abstract traffic elements
(2D boxes with category ids, no rendering), and binary topology matrices.
Connecting lanes share endpoint coordinates exactly, which is what makes
endpoint-level reasoning meaningful downstream.

A detector is emulated by :func:`perturb_scene`: it drops lanes, invents
spurious ones, jitters scores, and displaces endpoints independently per
lane, so endpoints that coincide in the ground truth come apart in the
predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConsistencyError, ContractError, ParseError

QUANT = 1e-6  # endpoint dedup grid, meters
N_CATEGORIES = 13
SCHEMA_VERSION = 1


@dataclass
class Lane:
    """An ordered polyline of k 3D points; travel goes points[0] -> points[-1]."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 2 or self.points.shape[1] != 3:
            raise ContractError(f"lane needs (k>=2, 3) points, got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ContractError("lane coordinates must be finite")

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]


@dataclass
class TrafficElement:
    """Front-view box [x1, y1, x2, y2] in pixels plus a category id."""

    box: np.ndarray
    cat: int

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=np.float64)
        if self.box.shape != (4,):
            raise ContractError("traffic box must be [x1, y1, x2, y2]")
        if not (0 <= self.cat < N_CATEGORIES):
            raise ContractError(f"category id out of range: {self.cat}")


@dataclass
class SceneConfig:
    arms: int = 4
    lanes_per_arm: int = 1
    k: int = 11
    extent: tuple[float, float, float, float] = (-30.0, 30.0, -30.0, 30.0)
    junction_radius: float = 6.0
    approach_length: float = 14.0
    lane_spacing: float = 3.5
    connection_prob: float = 0.7
    traffic_prob: float = 1.0
    rotation_jitter: float = 1.0  # fraction of a full turn
    center_sigma: float = 2.0
    length_jitter: float = 0.25
    image_size: tuple[int, int] = (1920, 1080)

    def validate(self) -> None:
        if not (2 <= self.arms <= 4):
            raise ConfigError(f"arms must be in [2, 4], got {self.arms}")
        if self.lanes_per_arm < 1:
            raise ConfigError("lanes_per_arm must be >= 1")
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")
        x_min, x_max, y_min, y_max = self.extent
        if x_max <= x_min or y_max <= y_min:
            raise ConfigError("degenerate extent")
        for name in ("connection_prob", "traffic_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.junction_radius <= 0 or self.approach_length <= 0 or self.lane_spacing <= 0:
            raise ConfigError("geometry lengths must be positive")


@dataclass
class NoiseSpec:
    """Detector-noise model. All sigmas in meters except score/box jitter."""

    endpoint_sigma: float = 0.5
    interior_sigma: float = 0.15
    drop_rate: float = 0.1
    spurious_rate: float = 0.1
    score_noise: float = 0.1
    box_sigma: float = 2.0

    def validate(self) -> None:
        for name in ("endpoint_sigma", "interior_sigma", "score_noise", "box_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("drop_rate", "spurious_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {v}")


ZERO_NOISE = NoiseSpec(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass
class Scene:
    """Ground truth: lanes, deduplicated endpoints, traffic, binary topology."""

    lanes: list[Lane]
    points: np.ndarray  # (n_p, 3)
    traffic: list[TrafficElement]
    g_pl: np.ndarray  # (n_p, n_l) binary
    g_ll: np.ndarray  # (n_l, n_l) binary
    g_lt: np.ndarray  # (n_l, n_t) binary
    seed: int = 0
    lane_roles: list[str] | None = None  # "in" | "out" | "conn", not serialized


@dataclass
class DetectionSet:
    """Scored predictions in the same frame as a Scene.

    Topology matrices hold scores in [0, 1]. Point and lane counts are
    independent in general; :func:`perturb_scene` happens to emit two points
    per lane (its start then its end), but consumers must not rely on that.
    """

    pred_points: np.ndarray  # (n_p, 3)
    point_scores: np.ndarray  # (n_p,)
    pred_lanes: np.ndarray  # (n_l, k, 3)
    lane_scores: np.ndarray  # (n_l,)
    pred_boxes: np.ndarray  # (n_t, 4)
    box_scores: np.ndarray  # (n_t, N_CATEGORIES)
    pred_g_pl: np.ndarray  # (n_p, n_l)
    pred_g_ll: np.ndarray  # (n_l, n_l)
    pred_g_lt: np.ndarray  # (n_l, n_t)

    def __post_init__(self):
        self.pred_points = np.asarray(self.pred_points, dtype=np.float64).reshape(-1, 3)
        self.point_scores = np.asarray(self.point_scores, dtype=np.float64).reshape(-1)
        self.pred_lanes = np.asarray(self.pred_lanes, dtype=np.float64)
        self.lane_scores = np.asarray(self.lane_scores, dtype=np.float64).reshape(-1)
        self.pred_boxes = np.asarray(self.pred_boxes, dtype=np.float64).reshape(-1, 4)
        self.box_scores = np.asarray(self.box_scores, dtype=np.float64)
        n_p, n_l, n_t = len(self.pred_points), len(self.pred_lanes), len(self.pred_boxes)
        if self.point_scores.shape != (n_p,) or self.lane_scores.shape != (n_l,):
            raise ContractError("score arrays must parallel their geometry")
        if n_t and self.box_scores.shape != (n_t, N_CATEGORIES):
            raise ContractError("box scores must be (n_t, n_categories)")
        self.pred_g_pl = np.asarray(self.pred_g_pl, dtype=np.float64).reshape(n_p, n_l)
        self.pred_g_ll = np.asarray(self.pred_g_ll, dtype=np.float64).reshape(n_l, n_l)
        self.pred_g_lt = np.asarray(self.pred_g_lt, dtype=np.float64).reshape(n_l, n_t)
        for name in ("point_scores", "lane_scores", "box_scores", "pred_g_pl", "pred_g_ll", "pred_g_lt"):
            arr = getattr(self, name)
            if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
                raise ContractError(f"{name} must lie in [0, 1]")


# -- endpoint bookkeeping ------------------------------------------------------


def quantize_key(p: np.ndarray) -> tuple[int, int, int]:
    """Integer grid key used for exact endpoint identity (1e-6 m cells)."""
    return (
        int(round(float(p[0]) / QUANT)),
        int(round(float(p[1]) / QUANT)),
        int(round(float(p[2]) / QUANT)),
    )


def extract_endpoints(lanes: list[Lane]) -> np.ndarray:
    """Unique lane endpoints in first-occurrence order (start before end)."""
    seen: dict[tuple[int, int, int], int] = {}
    out: list[np.ndarray] = []
    for lane in lanes:
        for p in (lane.start, lane.end):
            key = quantize_key(p)
            if key not in seen:
                seen[key] = len(out)
                out.append(np.asarray(p, dtype=np.float64))
    return np.asarray(out, dtype=np.float64).reshape(-1, 3)


def build_gt_topology(
    lanes: list[Lane],
    points: np.ndarray,
    traffic_assignments: dict[int, set[int]],
    n_traffic: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Binary point-lane, lane-lane, and lane-traffic incidence matrices.

    Point-lane marks endpoint membership; lane-lane marks exact end-to-start
    continuation; lane-traffic comes straight from the assignment map.
    """
    n_l = len(lanes)
    n_p = len(points)
    if n_traffic is None:
        n_traffic = max((max(v) + 1 for v in traffic_assignments.values() if v), default=0)
    index = {quantize_key(points[i]): i for i in range(n_p)}

    g_pl = np.zeros((n_p, n_l), dtype=np.float64)
    for j, lane in enumerate(lanes):
        for p in (lane.start, lane.end):
            i = index.get(quantize_key(p))
            if i is None:
                raise ConsistencyError("lane endpoint missing from the point set")
            g_pl[i, j] = 1.0
        if g_pl[:, j].sum() != 2.0:
            raise ConsistencyError(f"lane {j} must touch exactly 2 distinct points")

    g_ll = np.zeros((n_l, n_l), dtype=np.float64)
    for i, a in enumerate(lanes):
        for j, b in enumerate(lanes):
            if np.array_equal(a.end, b.start):
                g_ll[i, j] = 1.0

    g_lt = np.zeros((n_l, n_traffic), dtype=np.float64)
    for lane_idx, tset in traffic_assignments.items():
        for t in tset:
            g_lt[lane_idx, t] = 1.0
    return g_pl, g_ll, g_lt


# -- generation ----------------------------------------------------------------


def _bezier(p0, p1, p2, p3, k: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, k)[:, None]
    return (
        (1 - t) ** 3 * p0
        + 3 * (1 - t) ** 2 * t * p1
        + 3 * (1 - t) * t**2 * p2
        + t**3 * p3
    )


def generate_scene(seed: int, cfg: SceneConfig | None = None) -> Scene:
    """Deterministic junction scene for a seed and config.

    Arms radiate from a jittered center; each arm carries inbound lanes on
    one side of its axis and outbound lanes on the other, so inbound ends
    never coincide with outbound starts of the same arm. Connectors are
    Bezier arcs whose first and last points are overwritten with the exact
    shared coordinates.
    """
    if cfg is None:
        cfg = SceneConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)

    center = np.zeros(3)
    center[:2] = rng.normal(scale=cfg.center_sigma, size=2) if cfg.center_sigma > 0 else 0.0
    base_angle = rng.uniform(0.0, 2.0 * np.pi) * cfg.rotation_jitter

    lanes: list[Lane] = []
    roles: list[str] = []
    # per arm: lists of (lane index, junction-side coordinate)
    inbound_of_arm: list[list[int]] = [[] for _ in range(cfg.arms)]
    outbound_of_arm: list[list[int]] = [[] for _ in range(cfg.arms)]

    for a in range(cfg.arms):
        angle = base_angle + 2.0 * np.pi * a / cfg.arms
        u = np.array([np.cos(angle), np.sin(angle), 0.0])  # outward
        n = np.array([-np.sin(angle), np.cos(angle), 0.0])  # left of outward
        if cfg.length_jitter > 0:
            stretch = 1.0 + rng.uniform(-cfg.length_jitter, cfg.length_jitter)
        else:
            stretch = 1.0
        reach = cfg.approach_length * stretch
        for m in range(cfg.lanes_per_arm):
            off = (m + 0.5) * cfg.lane_spacing
            # inbound: runs from the rim toward the junction, right of axis
            far = center + u * (cfg.junction_radius + reach) - n * off
            near = center + u * cfg.junction_radius - n * off
            pts = np.linspace(far, near, cfg.k)
            pts[0], pts[-1] = far, near
            inbound_of_arm[a].append(len(lanes))
            lanes.append(Lane(pts))
            roles.append("in")
            # outbound: junction rim outward, left of axis
            near_o = center + u * cfg.junction_radius + n * off
            far_o = center + u * (cfg.junction_radius + reach) + n * off
            pts_o = np.linspace(near_o, far_o, cfg.k)
            pts_o[0], pts_o[-1] = near_o, far_o
            outbound_of_arm[a].append(len(lanes))
            lanes.append(Lane(pts_o))
            roles.append("out")

    # connectors: each inbound lane reaches >=1 other arm; every outbound lane
    # receives >=1 connector, so junction endpoints are always shared
    conn_pairs: list[tuple[int, int]] = []
    source_arm: dict[int, int] = {}
    for a in range(cfg.arms):
        others = [b for b in range(cfg.arms) if b != a]
        for li in inbound_of_arm[a]:
            targets = [b for b in others if rng.uniform() < cfg.connection_prob]
            if not targets:
                targets = [others[int(rng.integers(len(others)))]]
            for b in targets:
                lo = outbound_of_arm[b][int(rng.integers(cfg.lanes_per_arm))]
                conn_pairs.append((li, lo))
    covered = {lo for _, lo in conn_pairs}
    for b in range(cfg.arms):
        for lo in outbound_of_arm[b]:
            if lo in covered:
                continue
            donors = [a for a in range(cfg.arms) if a != b]
            a = donors[int(rng.integers(len(donors)))]
            li = inbound_of_arm[a][int(rng.integers(cfg.lanes_per_arm))]
            conn_pairs.append((li, lo))

    for li, lo in sorted(set(conn_pairs)):
        p0 = lanes[li].end.copy()
        p3 = lanes[lo].start.copy()
        chord = float(np.linalg.norm(p3 - p0))
        dir_in = (lanes[li].end - lanes[li].start)
        dir_in = dir_in / np.linalg.norm(dir_in)
        dir_out = (lanes[lo].end - lanes[lo].start)
        dir_out = dir_out / np.linalg.norm(dir_out)
        p1 = p0 + dir_in * (0.5 * chord)
        p2 = p3 - dir_out * (0.5 * chord)
        pts = _bezier(p0, p1, p2, p3, cfg.k)
        pts[0], pts[-1] = p0, p3  # exact endpoint sharing
        source_arm[len(lanes)] = next(a for a in range(cfg.arms) if li in inbound_of_arm[a])
        lanes.append(Lane(pts))
        roles.append("conn")

    # traffic elements: one candidate per arm, band position follows the arm
    img_w, img_h = cfg.image_size
    traffic: list[TrafficElement] = []
    arm_of_element: list[int] = []
    for a in range(cfg.arms):
        if rng.uniform() >= cfg.traffic_prob:
            continue
        frac = (a + rng.uniform(0.2, 0.8)) / cfg.arms
        w = rng.uniform(25.0, 70.0)
        h = rng.uniform(40.0, 110.0)
        x1 = frac * (img_w - w - 2.0) + 1.0
        y1 = rng.uniform(0.05, 0.45) * (img_h - h)
        traffic.append(TrafficElement(np.array([x1, y1, x1 + w, y1 + h]), int(rng.integers(N_CATEGORIES))))
        arm_of_element.append(a)

    assignments: dict[int, set[int]] = {}
    for t, a in enumerate(arm_of_element):
        for li in inbound_of_arm[a]:
            assignments.setdefault(li, set()).add(t)
        for idx, arm in source_arm.items():
            if arm == a:
                assignments.setdefault(idx, set()).add(t)

    points = extract_endpoints(lanes)
    g_pl, g_ll, g_lt = build_gt_topology(lanes, points, assignments, n_traffic=len(traffic))
    return Scene(
        lanes=lanes,
        points=points,
        traffic=traffic,
        g_pl=g_pl,
        g_ll=g_ll,
        g_lt=g_lt,
        seed=seed,
        lane_roles=roles,
    )


# -- detector-noise model --------------------------------------------------------


def ground_truth_detections(scene: Scene) -> DetectionSet:
    """The scene itself re-packaged as a perfect, fully confident detector.

    Unlike :func:`perturb_scene` this keeps the deduplicated point list, so
    there are no duplicate predictions to count as false positives when
    scores tie. Scoring it yields 100 on every metric.
    """
    boxes = np.asarray([el.box for el in scene.traffic], dtype=np.float64).reshape(-1, 4)
    box_scores = np.zeros((len(scene.traffic), N_CATEGORIES))
    for i, el in enumerate(scene.traffic):
        box_scores[i, el.cat] = 1.0
    lanes = (
        np.stack([lane.points for lane in scene.lanes])
        if scene.lanes
        else np.zeros((0, 2, 3))
    )
    return DetectionSet(
        pred_points=scene.points.copy(),
        point_scores=np.ones(len(scene.points)),
        pred_lanes=lanes,
        lane_scores=np.ones(len(scene.lanes)),
        pred_boxes=boxes,
        box_scores=box_scores,
        pred_g_pl=scene.g_pl.astype(np.float64),
        pred_g_ll=scene.g_ll.astype(np.float64),
        pred_g_lt=scene.g_lt.astype(np.float64),
    )


def perturb_scene(scene: Scene, noise: NoiseSpec | None = None, seed: int = 0) -> DetectionSet:
    """Emulate a detector: jittered survivors of the GT plus spurious lanes.

    Every surviving lane contributes its own two endpoints to the predicted
    point list, so endpoints shared in the GT become distinct points here;
    that separation is exactly what the refinement stage later collapses.
    GT topology is carried over as scores near 1, everything else near 0.
    """
    if noise is None:
        noise = NoiseSpec()
    noise.validate()
    rng = np.random.default_rng(seed)
    sn = noise.score_noise

    def high() -> float:
        return 1.0 - rng.uniform(0.0, sn) if sn > 0 else 1.0

    def low() -> float:
        return rng.uniform(0.0, sn) if sn > 0 else 0.0

    lanes_out: list[np.ndarray] = []
    lane_scores: list[float] = []
    origin: list[int | None] = []
    for j, lane in enumerate(scene.lanes):
        if rng.uniform() < noise.drop_rate:
            continue
        pts = lane.points.copy()
        if noise.interior_sigma > 0 and pts.shape[0] > 2:
            pts[1:-1] += rng.normal(scale=noise.interior_sigma, size=pts[1:-1].shape)
        if noise.endpoint_sigma > 0:
            pts[0] += rng.normal(scale=noise.endpoint_sigma, size=3)
            pts[-1] += rng.normal(scale=noise.endpoint_sigma, size=3)
        lanes_out.append(pts)
        lane_scores.append(high())
        origin.append(j)

    k = scene.lanes[0].points.shape[0] if scene.lanes else 2
    if scene.lanes:
        stack = np.concatenate([lane.points for lane in scene.lanes], axis=0)
        (x_min, y_min), (x_max, y_max) = stack[:, :2].min(0), stack[:, :2].max(0)
    else:
        x_min = y_min = -30.0
        x_max = y_max = 30.0
    for _ in range(len(scene.lanes)):
        if rng.uniform() < noise.spurious_rate:
            a = np.array([rng.uniform(x_min, x_max), rng.uniform(y_min, y_max), 0.0])
            ang = rng.uniform(0.0, 2.0 * np.pi)
            length = rng.uniform(3.0, 10.0)
            b = a + length * np.array([np.cos(ang), np.sin(ang), 0.0])
            pts = np.linspace(a, b, k)
            lanes_out.append(pts)
            lane_scores.append(float(rng.uniform(0.05, 0.45)))
            origin.append(None)

    n_l = len(lanes_out)
    pred_lanes = np.asarray(lanes_out, dtype=np.float64).reshape(n_l, k, 3)

    # per-lane endpoints, no dedup
    pred_points = np.zeros((2 * n_l, 3))
    point_scores = np.zeros(2 * n_l)
    point_origin: list[int | None] = []
    gt_index = {quantize_key(scene.points[i]): i for i in range(len(scene.points))}
    for j in range(n_l):
        pred_points[2 * j] = pred_lanes[j, 0]
        pred_points[2 * j + 1] = pred_lanes[j, -1]
        oj = origin[j]
        for s in (0, 1):
            if oj is None:
                point_scores[2 * j + s] = rng.uniform(0.05, 0.45)
                point_origin.append(None)
            else:
                point_scores[2 * j + s] = high()
                endpoint = scene.lanes[oj].points[0 if s == 0 else -1]
                point_origin.append(gt_index[quantize_key(endpoint)])

    n_t = len(scene.traffic)
    pred_boxes = np.zeros((n_t, 4))
    box_scores = np.zeros((n_t, N_CATEGORIES))
    for t, el in enumerate(scene.traffic):
        box = el.box.copy()
        if noise.box_sigma > 0:
            box = box + rng.normal(scale=noise.box_sigma, size=4)
        x1, x2 = sorted((box[0], box[2]))
        y1, y2 = sorted((box[1], box[3]))
        pred_boxes[t] = (x1, y1, x2, y2)
        for c in range(N_CATEGORIES):
            box_scores[t, c] = high() if c == el.cat else low()

    g_pl = np.zeros((2 * n_l, n_l))
    for i in range(2 * n_l):
        for j in range(n_l):
            oi, oj = point_origin[i], origin[j]
            true_pair = oi is not None and oj is not None and scene.g_pl[oi, oj] > 0
            g_pl[i, j] = high() if true_pair else low()

    g_ll = np.zeros((n_l, n_l))
    for i in range(n_l):
        for j in range(n_l):
            oi, oj = origin[i], origin[j]
            true_pair = oi is not None and oj is not None and scene.g_ll[oi, oj] > 0
            g_ll[i, j] = high() if true_pair else low()

    g_lt = np.zeros((n_l, n_t))
    for i in range(n_l):
        for t in range(n_t):
            oi = origin[i]
            true_pair = oi is not None and scene.g_lt[oi, t] > 0
            g_lt[i, t] = high() if true_pair else low()

    return DetectionSet(
        pred_points=pred_points,
        point_scores=np.clip(point_scores, 0.0, 1.0),
        pred_lanes=pred_lanes,
        lane_scores=np.clip(np.asarray(lane_scores), 0.0, 1.0),
        pred_boxes=pred_boxes,
        box_scores=np.clip(box_scores, 0.0, 1.0),
        pred_g_pl=np.clip(g_pl, 0.0, 1.0),
        pred_g_ll=np.clip(g_ll, 0.0, 1.0),
        pred_g_lt=np.clip(g_lt, 0.0, 1.0),
    )


# -- JSON interchange --------------------------------------------------------------


def _sparse_pairs(g: np.ndarray) -> list[list[int]]:
    rows, cols = np.nonzero(g)
    return [[int(i), int(j)] for i, j in zip(rows, cols)]


def _dense_from_pairs(pairs, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=np.float64)
    for entry in pairs:
        i, j = int(entry[0]), int(entry[1])
        if not (0 <= i < shape[0] and 0 <= j < shape[1]):
            raise ParseError(f"sparse index ({i}, {j}) outside shape {shape}")
        out[i, j] = 1.0
    return out


def scene_to_dict(scene: Scene) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "lanes": [lane.points.tolist() for lane in scene.lanes],
        "points": scene.points.tolist(),
        "traffic": [{"box": el.box.tolist(), "cat": int(el.cat)} for el in scene.traffic],
        "g_pl": _sparse_pairs(scene.g_pl),
        "g_ll": _sparse_pairs(scene.g_ll),
        "g_lt": _sparse_pairs(scene.g_lt),
        "seed": int(scene.seed),
    }


def scene_from_dict(doc: dict) -> Scene:
    if not isinstance(doc, dict):
        raise ParseError("scene document must be a JSON object")
    if doc.get("version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema version: {doc.get('version')!r}")
    try:
        lanes = [Lane(np.asarray(p, dtype=np.float64)) for p in doc["lanes"]]
        points = np.asarray(doc["points"], dtype=np.float64).reshape(-1, 3)
        traffic = [
            TrafficElement(np.asarray(t["box"], dtype=np.float64), int(t["cat"]))
            for t in doc.get("traffic", [])
        ]
        n_p, n_l, n_t = len(points), len(lanes), len(traffic)
        g_pl = _dense_from_pairs(doc.get("g_pl", []), (n_p, n_l))
        g_ll = _dense_from_pairs(doc.get("g_ll", []), (n_l, n_l))
        g_lt = _dense_from_pairs(doc.get("g_lt", []), (n_l, n_t))
        seed = int(doc.get("seed", 0))
    except (KeyError, TypeError, ValueError, ContractError) as exc:
        raise ParseError(f"malformed scene document: {exc}") from exc
    return Scene(lanes, points, traffic, g_pl, g_ll, g_lt, seed=seed)


def detections_to_dict(ds: DetectionSet) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "lanes": ds.pred_lanes.tolist(),
        "lane_scores": ds.lane_scores.tolist(),
        "points": ds.pred_points.tolist(),
        "point_scores": ds.point_scores.tolist(),
        "traffic": [
            {"box": ds.pred_boxes[t].tolist(), "scores": ds.box_scores[t].tolist()}
            for t in range(len(ds.pred_boxes))
        ],
        "g_pl": ds.pred_g_pl.tolist(),
        "g_ll": ds.pred_g_ll.tolist(),
        "g_lt": ds.pred_g_lt.tolist(),
    }


def detections_from_dict(doc: dict) -> DetectionSet:
    if not isinstance(doc, dict):
        raise ParseError("detections document must be a JSON object")
    if doc.get("version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema version: {doc.get('version')!r}")
    try:
        lanes = np.asarray(doc["lanes"], dtype=np.float64)
        if lanes.size == 0:
            lanes = lanes.reshape(0, 2, 3)
        traffic = doc.get("traffic", [])
        boxes = np.asarray([t["box"] for t in traffic], dtype=np.float64).reshape(-1, 4)
        box_scores = np.asarray([t["scores"] for t in traffic], dtype=np.float64).reshape(
            -1, N_CATEGORIES
        )
        return DetectionSet(
            pred_points=np.asarray(doc["points"], dtype=np.float64),
            point_scores=np.asarray(doc["point_scores"], dtype=np.float64),
            pred_lanes=lanes,
            lane_scores=np.asarray(doc["lane_scores"], dtype=np.float64),
            pred_boxes=boxes,
            box_scores=box_scores,
            pred_g_pl=np.asarray(doc["g_pl"], dtype=np.float64),
            pred_g_ll=np.asarray(doc["g_ll"], dtype=np.float64),
            pred_g_lt=np.asarray(doc["g_lt"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError, ContractError) as exc:
        raise ParseError(f"malformed detections document: {exc}") from exc
