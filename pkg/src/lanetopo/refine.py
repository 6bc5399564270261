"""Inference-time endpoint refinement.

Detected lane endpoints rarely coincide even when the underlying junction
point is shared. This stage filters high-confidence points and lanes,
clusters unclaimed lane endpoints around each point (highest-scoring points
first), and snaps every matched endpoint to the arithmetic mean of the point
and its matched endpoints. Interior lane geometry, scores, and topology are
never touched.

Two implementations live here on purpose: :func:`refine` is the real one,
and :func:`refine_oracle` is a deliberately plain re-transcription used by
the tests to pin down the exact semantics (it shares no helper code). Both
accumulate in the same scalar order so their outputs match bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .scene import DetectionSet


@dataclass
class RefinementConfig:
    """Score thresholds for points/lanes and the cluster radius in meters."""

    tau_p: float = 0.3
    tau_l: float = 0.3
    delta: float = 1.5

    def validate(self) -> None:
        for name in ("tau_p", "tau_l"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.delta < 0.0:
            raise ConfigError(f"delta must be non-negative, got {self.delta}")


@dataclass
class RefinementCluster:
    point_index: int
    members: list[tuple[int, int]]  # (lane index, 0 for start / 1 for end)
    refined: np.ndarray  # (3,)
    moved: list[float]  # displacement of each member, meters


@dataclass
class RefinementTrace:
    clusters: list[RefinementCluster] = field(default_factory=list)

    def moved_distances(self) -> np.ndarray:
        return np.array([m for c in self.clusters for m in c.moved], dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "clusters": [
                {
                    "point": int(c.point_index),
                    "members": [[int(j), int(s)] for j, s in c.members],
                    "refined": [float(v) for v in c.refined],
                    "moved": [float(m) for m in c.moved],
                }
                for c in self.clusters
            ]
        }


def refine(
    dets: DetectionSet, cfg: RefinementConfig | None = None
) -> tuple[np.ndarray, RefinementTrace]:
    """Snap clustered lane endpoints to shared refined positions.

    Points with score > tau_p are processed in descending score (ties go to
    the lower index). Each claims the still-unclaimed start/end endpoints of
    lanes with score > tau_l that lie strictly within ``delta`` (Euclidean;
    compared in the squared domain). A non-empty cluster of size n snaps all
    its endpoints to (point + sum of endpoints) / (n + 1).

    Returns the refined lane array (a copy) and a trace of every cluster.
    """
    if cfg is None:
        cfg = RefinementConfig()
    cfg.validate()
    lanes = dets.pred_lanes.copy()
    n_l = lanes.shape[0]
    trace = RefinementTrace()
    if n_l == 0 or dets.pred_points.shape[0] == 0:
        return lanes, trace

    last = lanes.shape[1] - 1
    lane_ok = dets.lane_scores > cfg.tau_l
    claimed = np.zeros((n_l, 2), dtype=bool)
    delta_sq = cfg.delta * cfg.delta
    # (n_l, 2, 3): pre-refinement start/end positions; matching always uses
    # these, never positions snapped by an earlier cluster.
    endpoints = np.stack([dets.pred_lanes[:, 0, :], dets.pred_lanes[:, last, :]], axis=1)

    order = np.argsort(-dets.point_scores, kind="stable")
    for pi in order:
        if not (dets.point_scores[pi] > cfg.tau_p):
            break
        p = dets.pred_points[pi]
        diff = endpoints - p
        d_sq = np.einsum("jfc,jfc->jf", diff, diff)
        mask = lane_ok[:, None] & ~claimed & (d_sq < delta_sq)
        if not mask.any():
            continue
        js, flags = np.nonzero(mask)  # row-major: lane index, then start before end
        members = [(int(j), int(f)) for j, f in zip(js, flags)]
        # Sequential accumulation keeps the float op order identical to the
        # plain transcription in refine_oracle (bitwise equality is tested).
        acc = p.copy()
        for e in endpoints[mask]:
            acc = acc + e
        refined = acc / float(len(members) + 1)
        moved = []
        for j, flag in members:
            row = 0 if flag == 0 else last
            moved.append(float(np.linalg.norm(refined - dets.pred_lanes[j, row])))
            lanes[j, row] = refined
            claimed[j, flag] = True
        trace.clusters.append(RefinementCluster(int(pi), members, refined, moved))
    return lanes, trace


def refine_oracle(dets: DetectionSet, cfg: RefinementConfig | None = None) -> np.ndarray:
    """Plain re-transcription of the refinement procedure, used as an oracle.

    Same three steps, written with nothing but explicit loops: pick the
    highest-scoring unprocessed point, scan every lane endpoint, average,
    overwrite. Intentionally unoptimized and structurally independent of
    :func:`refine`.
    """
    if cfg is None:
        cfg = RefinementConfig()
    cfg.validate()
    out = dets.pred_lanes.copy()
    n_p = dets.pred_points.shape[0]
    n_l = out.shape[0]
    if n_p == 0 or n_l == 0:
        return out
    k = out.shape[1]

    used_point = [False] * n_p
    claimed_start = [False] * n_l
    claimed_end = [False] * n_l

    while True:
        # highest-scoring unprocessed point above threshold, lowest index on ties
        best = -1
        best_score = cfg.tau_p
        for i in range(n_p):
            if used_point[i]:
                continue
            if dets.point_scores[i] > best_score:
                best = i
                best_score = dets.point_scores[i]
        if best < 0:
            break
        used_point[best] = True

        cluster: list[tuple[int, int]] = []
        for j in range(n_l):
            if not (dets.lane_scores[j] > cfg.tau_l):
                continue
            if not claimed_start[j]:
                dx = float(dets.pred_lanes[j, 0, 0]) - float(dets.pred_points[best, 0])
                dy = float(dets.pred_lanes[j, 0, 1]) - float(dets.pred_points[best, 1])
                dz = float(dets.pred_lanes[j, 0, 2]) - float(dets.pred_points[best, 2])
                if dx * dx + dy * dy + dz * dz < cfg.delta * cfg.delta:
                    cluster.append((j, 0))
            if not claimed_end[j]:
                dx = float(dets.pred_lanes[j, k - 1, 0]) - float(dets.pred_points[best, 0])
                dy = float(dets.pred_lanes[j, k - 1, 1]) - float(dets.pred_points[best, 1])
                dz = float(dets.pred_lanes[j, k - 1, 2]) - float(dets.pred_points[best, 2])
                if dx * dx + dy * dy + dz * dz < cfg.delta * cfg.delta:
                    cluster.append((j, 1))
        if not cluster:
            continue

        sx = float(dets.pred_points[best, 0])
        sy = float(dets.pred_points[best, 1])
        sz = float(dets.pred_points[best, 2])
        for j, flag in cluster:
            row = 0 if flag == 0 else k - 1
            sx += float(dets.pred_lanes[j, row, 0])
            sy += float(dets.pred_lanes[j, row, 1])
            sz += float(dets.pred_lanes[j, row, 2])
        count = float(len(cluster) + 1)
        ex, ey, ez = sx / count, sy / count, sz / count
        for j, flag in cluster:
            row = 0 if flag == 0 else k - 1
            out[j, row, 0] = ex
            out[j, row, 1] = ey
            out[j, row, 2] = ez
            if flag == 0:
                claimed_start[j] = True
            else:
                claimed_end[j] = True
    return out


def apply_refinement(dets: DetectionSet, refined_lanes: np.ndarray) -> DetectionSet:
    """A DetectionSet identical to ``dets`` except for the lane geometry."""
    return replace(dets, pred_lanes=np.asarray(refined_lanes, dtype=np.float64))
