"""Stacked point-lane decoder.

Each layer runs geometry-biased self-attention over the concatenated point
and lane queries, cross-attends both groups into a BEV feature grid through
their own reference points, applies feed-forward blocks, couples the three
query families through a graph block, and finally regresses geometry and
classification/topology scores. Geometry predicted by one layer biases the
attention of the next; those carried states are treated as constants so each
layer's supervision stays local.

Traffic participants come from a deterministic stub (the full perception
stack is out of scope): ground-truth boxes, optionally jittered, embedded
with a learned linear layer.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DivergenceError, ParseError
from .geometry import lane_lane_distance, map_sigma, point_lane_distance
from .kernels import (
    assemble_joint_bias,
    bev_cross_attention,
    biased_self_attention,
    distance_decay,
    ffn,
    gcn_layer,
    layer_norm,
    linear,
    project_to_raster,
)
from .scene import N_CATEGORIES, DetectionSet, NoiseSpec, Scene

CHECKPOINT_VERSION = 1

# Initial probability assigned to any single topology edge. Real adjacency
# matrices are sparse, so fresh pair-score heads should lean negative.
PAIR_SCORE_PRIOR = 0.01
# Multiplier on the pair-score output weights at init; see _init_params.
PAIR_SCORE_WEIGHT_DAMPING = 0.1


@dataclass
class ModelConfig:
    """Dimensions and initial values for the decoder stack.

    Defaults are desk scale; the larger published-style sizes (d=256,
    300 lanes, 6 layers, ...) remain valid settings.
    """

    d: int = 32
    n_points: int = 40
    n_lanes: int = 60
    n_traffic: int = 10
    k: int = 11
    layers: int = 2
    n_ref_samples: int = 4
    bev_shape: tuple[int, int] = (32, 32)
    extent: tuple[float, float, float, float] = (-30.0, 30.0, -30.0, 30.0)
    anchor_half_length: float = 4.0
    lam_init: float = 0.2
    alpha_init: float = 2.0
    lambda1_init: float = 1.0
    lambda2_init: float = 1.0
    map_params_per_layer: bool = False

    def validate(self) -> None:
        if self.d < 2:
            raise ConfigError("d must be at least 2")
        if min(self.n_points, self.n_lanes, self.n_traffic) < 1:
            raise ConfigError("query counts must be positive")
        if self.k < 2:
            raise ConfigError("lanes need at least 2 sample points")
        if self.layers < 1:
            raise ConfigError("need at least one decoder layer")
        if self.n_ref_samples < 1:
            raise ConfigError("need at least one BEV sample per query")
        h, w = self.bev_shape
        if h < 2 or w < 2:
            raise ConfigError("BEV grid must be at least 2x2")
        x0, x1, y0, y1 = self.extent
        if x1 <= x0 or y1 <= y0:
            raise ConfigError("degenerate extent")


@dataclass
class QueryBank:
    """Learned query embeddings and reference points, one row per slot."""

    q_p: Tensor
    q_l: Tensor
    q_t: Tensor
    ref_p: Tensor
    ref_l: Tensor


@dataclass
class LayerState:
    """Geometry and topology carried from the previous layer, as constants."""

    prev_points: np.ndarray  # (N_p, 3)
    prev_lanes: np.ndarray  # (N_l, k, 3)
    prev_g_pl: np.ndarray  # (N_p, N_l) in [0, 1]
    prev_g_lt: np.ndarray  # (N_l, N_t) in [0, 1]


@dataclass
class Predictions:
    """One layer's outputs; cls and topology entries are post-sigmoid."""

    points_reg: Tensor  # (N_p, 3)
    points_cls: Tensor  # (N_p, 1)
    lanes_reg: Tensor  # (N_l, k, 3)
    lanes_cls: Tensor  # (N_l, 1)
    g_pl: Tensor  # (N_p, N_l)
    g_ll: Tensor  # (N_l, N_l)
    g_lt: Tensor  # (N_l, N_t)


def lane_anchor_offsets(k: int, half_length: float) -> np.ndarray:
    """Straight x-axis anchor polyline, centered on the reference point."""
    xs = np.linspace(-half_length, half_length, k)
    return np.stack([xs, np.zeros(k), np.zeros(k)], axis=1)


def plmsa(q_p: Tensor, q_l: Tensor, state: LayerState, weights: dict, map_weights: dict,
          bias_override: Tensor | None = None):
    """Geometry-biased self-attention over the joined point and lane queries.

    Distances come from the carried state (L1 end-to-start for lane pairs,
    nearest-endpoint L1 for point-lane pairs), are decayed into (0, 1]
    affinities, and enter the attention logits additively with a zero
    point-point block. Returns the updated queries plus the two affinity
    maps so the graph block can reuse them.
    """
    if q_p.shape[1] != q_l.shape[1]:
        raise ContractError(f"query widths differ: {q_p.shape} vs {q_l.shape}")
    d_pl = point_lane_distance(state.prev_points, state.prev_lanes)
    d_ll = lane_lane_distance(state.prev_lanes)
    m_pl = distance_decay(d_pl, map_weights["pl.lam"], map_weights["pl.alpha"], map_sigma(d_pl))
    m_ll = distance_decay(d_ll, map_weights["ll.lam"], map_weights["ll.alpha"], map_sigma(d_ll))
    bias = assemble_joint_bias(m_pl, m_ll) if bias_override is None else bias_override
    x = ad.concat([q_p, q_l])
    attn = biased_self_attention(x, bias, weights["wq"], weights["wk"], weights["wv"], weights["wo"])
    y = layer_norm(x + attn, weights["ln.g"], weights["ln.b"])
    q_p2, q_l2 = ad.split_rows(y, [q_p.shape[0], q_l.shape[0]])
    return q_p2, q_l2, m_pl, m_ll


def unified_scene_graph(q_p: Tensor, q_l: Tensor, q_t: Tensor, m_pl: Tensor, m_ll: Tensor,
                        g_pl, g_lt, weights: dict):
    """Graph coupling of point, lane, and traffic queries.

    The point-lane adjacency blends last layer's predicted incidence with
    the geometric affinity (lambda1 * g + lambda2 * m, floored at zero to
    satisfy the graph kernel's non-negativity contract). Lanes additionally
    aggregate from other lanes through I + M + M^T and from traffic through
    the carried lane-traffic scores; the two lane branches concatenate and a
    single linear layer brings them back to width d. A second point-lane
    exchange closes the block.
    """
    lam1, lam2 = weights["lambda1"], weights["lambda2"]
    if not (np.all(np.isfinite(lam1.data)) and np.all(np.isfinite(lam2.data))):
        raise DivergenceError("scene-graph mixing weights became non-finite")
    a_pl = ad.maximum_scalar(lam1 * Tensor(np.asarray(g_pl, dtype=np.float64)) + lam2 * m_pl, 0.0)
    q_p1 = gcn_layer(q_l, a_pl, weights["gcn_pl1.w"]) + q_p
    q_l1 = gcn_layer(q_p, ad.transpose(a_pl), weights["gcn_lp1.w"]) + q_l
    m_ll_bar = Tensor(np.eye(m_ll.shape[0])) + m_ll + ad.transpose(m_ll)
    branch_ll = gcn_layer(q_l1, m_ll_bar, weights["gcn_ll.w"]) + q_l1
    branch_lt = gcn_layer(q_t, np.asarray(g_lt, dtype=np.float64), weights["gcn_lt.w"]) + q_l1
    q_l2 = linear(ad.concat([branch_ll, branch_lt], axis=1), weights["down.w"], weights["down.b"])
    q_p3 = gcn_layer(q_l2, a_pl, weights["gcn_pl2.w"]) + q_p1
    q_l3 = gcn_layer(q_p1, ad.transpose(a_pl), weights["gcn_lp2.w"]) + q_l2
    return q_p3, q_l3


class PointLaneModel:
    """Owns all learnable parameters and runs the layered decoder."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.config.validate()
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    # -- parameter registry -------------------------------------------------

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True)

    def _add_linear(self, rng, name: str, d_in: int, d_out: int) -> None:
        scale = np.sqrt(2.0 / (d_in + d_out))
        self._add(f"{name}.w", rng.normal(0.0, scale, (d_in, d_out)))
        self._add(f"{name}.b", np.zeros(d_out))

    def _add_mlp(self, rng, name: str, d_in: int, d_hidden: int, d_out: int) -> None:
        self._add_linear(rng, f"{name}.fc1", d_in, d_hidden)
        self._add_linear(rng, f"{name}.fc2", d_hidden, d_out)

    def _add_ln(self, name: str) -> None:
        self._add(f"{name}.g", np.ones(self.config.d))
        self._add(f"{name}.b", np.zeros(self.config.d))

    def _add_map_params(self, prefix: str) -> None:
        c = self.config
        self._add(f"{prefix}.pl.lam", np.asarray(c.lam_init))
        self._add(f"{prefix}.pl.alpha", np.asarray(c.alpha_init))
        self._add(f"{prefix}.ll.lam", np.asarray(c.lam_init))
        self._add(f"{prefix}.ll.alpha", np.asarray(c.alpha_init))

    def _init_params(self, rng) -> None:
        c = self.config
        d = c.d
        x0, x1, y0, y1 = c.extent
        cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        sx, sy = 0.4 * (x1 - x0), 0.4 * (y1 - y0)

        self._add("bank.q_p", rng.normal(0.0, 1.0 / np.sqrt(d), (c.n_points, d)))
        self._add("bank.q_l", rng.normal(0.0, 1.0 / np.sqrt(d), (c.n_lanes, d)))
        self._add("bank.q_t", rng.normal(0.0, 1.0 / np.sqrt(d), (c.n_traffic, d)))
        ref_p = np.zeros((c.n_points, 3))
        ref_p[:, 0] = rng.uniform(cx - sx, cx + sx, c.n_points)
        ref_p[:, 1] = rng.uniform(cy - sy, cy + sy, c.n_points)
        self._add("bank.ref_p", ref_p)
        ref_l = np.zeros((c.n_lanes, 3))
        ref_l[:, 0] = rng.uniform(cx - sx, cx + sx, c.n_lanes)
        ref_l[:, 1] = rng.uniform(cy - sy, cy + sy, c.n_lanes)
        self._add("bank.ref_l", ref_l)

        self._add_linear(rng, "bev.lift", 4, d)
        self._add_linear(rng, "traffic.embed", 4 + N_CATEGORIES, d)
        if not c.map_params_per_layer:
            self._add_map_params("map")

        s = c.n_ref_samples
        for i in range(c.layers):
            p = f"layer{i}"
            if c.map_params_per_layer:
                self._add_map_params(f"{p}.map")
            for w in ("wq", "wk", "wv", "wo"):
                self._add(f"{p}.attn.{w}", rng.normal(0.0, np.sqrt(1.0 / d), (d, d)))
            self._add_ln(f"{p}.attn.ln")
            for grp in ("bev_p", "bev_l"):
                self._add_linear(rng, f"{p}.{grp}.off", d, s * 2)
                self._add_linear(rng, f"{p}.{grp}.wgt", d, s)
                self._add_ln(f"{p}.{grp}.ln")
            for grp in ("ffn_p", "ffn_l"):
                self._add_linear(rng, f"{p}.{grp}.fc1", d, 2 * d)
                self._add_linear(rng, f"{p}.{grp}.fc2", 2 * d, d)
                self._add_ln(f"{p}.{grp}.ln")
            self._add(f"{p}.usg.lambda1", np.asarray(c.lambda1_init))
            self._add(f"{p}.usg.lambda2", np.asarray(c.lambda2_init))
            for g in ("gcn_pl1", "gcn_lp1", "gcn_ll", "gcn_lt", "gcn_pl2", "gcn_lp2"):
                self._add(f"{p}.usg.{g}.w", rng.normal(0.0, np.sqrt(1.0 / d), (d, d)))
            self._add_linear(rng, f"{p}.usg.down", 2 * d, d)
            self._add_mlp(rng, f"{p}.head.point_reg", d, d, 3)
            self._add_mlp(rng, f"{p}.head.point_cls", d, d, 1)
            self._add_mlp(rng, f"{p}.head.lane_reg", d, d, c.k * 3)
            self._add_mlp(rng, f"{p}.head.lane_cls", d, d, 1)
            # Pair-score embeddings start with opposed constant output biases
            # so the initial dot product sits at the logit of a small edge
            # prior rather than at 0. Adjacency targets are almost entirely
            # negative; from a 0.5 start the shared head weights get driven
            # so far down that every score saturates at the clamp floor and
            # the positive cells stop receiving gradient. The output weights
            # are damped as well, which keeps the early gradient flow from
            # these dense pairwise heads into the shared trunk weak until
            # the geometry branches have settled.
            shift = np.sqrt(-np.log(PAIR_SCORE_PRIOR / (1.0 - PAIR_SCORE_PRIOR)) / d)
            for mat in ("top_pl", "top_ll", "top_lt"):
                self._add_mlp(rng, f"{p}.head.{mat}.a", d, d, d)
                self._add_mlp(rng, f"{p}.head.{mat}.b", d, d, d)
                for side in ("a", "b"):
                    self.params[f"{p}.head.{mat}.{side}.fc2.w"].data[...] *= (
                        PAIR_SCORE_WEIGHT_DAMPING
                    )
                self.params[f"{p}.head.{mat}.a.fc2.b"].data[...] = shift
                self.params[f"{p}.head.{mat}.b.fc2.b"].data[...] = -shift

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    # -- small forward helpers ------------------------------------------------

    def _mlp(self, name: str, x: Tensor) -> Tensor:
        p = self.params
        h = ad.relu(linear(x, p[f"{name}.fc1.w"], p[f"{name}.fc1.b"]))
        return linear(h, p[f"{name}.fc2.w"], p[f"{name}.fc2.b"])

    def _map_weights(self, layer: int) -> dict:
        prefix = f"layer{layer}.map" if self.config.map_params_per_layer else "map"
        return {
            "pl.lam": self.params[f"{prefix}.pl.lam"],
            "pl.alpha": self.params[f"{prefix}.pl.alpha"],
            "ll.lam": self.params[f"{prefix}.ll.lam"],
            "ll.alpha": self.params[f"{prefix}.ll.alpha"],
        }

    def _attn_weights(self, layer: int) -> dict:
        p = self.params
        return {
            "wq": p[f"layer{layer}.attn.wq"],
            "wk": p[f"layer{layer}.attn.wk"],
            "wv": p[f"layer{layer}.attn.wv"],
            "wo": p[f"layer{layer}.attn.wo"],
            "ln.g": p[f"layer{layer}.attn.ln.g"],
            "ln.b": p[f"layer{layer}.attn.ln.b"],
        }

    def _usg_weights(self, layer: int) -> dict:
        p = self.params
        names = ("gcn_pl1", "gcn_lp1", "gcn_ll", "gcn_lt", "gcn_pl2", "gcn_lp2")
        out = {f"{g}.w": p[f"layer{layer}.usg.{g}.w"] for g in names}
        out["lambda1"] = p[f"layer{layer}.usg.lambda1"]
        out["lambda2"] = p[f"layer{layer}.usg.lambda2"]
        out["down.w"] = p[f"layer{layer}.usg.down.w"]
        out["down.b"] = p[f"layer{layer}.usg.down.b"]
        return out

    def _bev_block(self, layer: int, grp: str, q: Tensor, ref: np.ndarray, f_bev: Tensor) -> Tensor:
        p = self.params
        c = self.config
        n, s = q.shape[0], c.n_ref_samples
        off = ad.reshape(linear(q, p[f"layer{layer}.{grp}.off.w"], p[f"layer{layer}.{grp}.off.b"]), (n, s, 2))
        wgt = linear(q, p[f"layer{layer}.{grp}.wgt.w"], p[f"layer{layer}.{grp}.wgt.b"])
        out = bev_cross_attention(q, ref, f_bev, off, wgt, c.extent)
        return layer_norm(q + out, p[f"layer{layer}.{grp}.ln.g"], p[f"layer{layer}.{grp}.ln.b"])

    def _ffn_block(self, layer: int, grp: str, q: Tensor) -> Tensor:
        p = self.params
        out = ffn(q, p[f"layer{layer}.{grp}.fc1.w"], p[f"layer{layer}.{grp}.fc1.b"],
                  p[f"layer{layer}.{grp}.fc2.w"], p[f"layer{layer}.{grp}.fc2.b"])
        return layer_norm(q + out, p[f"layer{layer}.{grp}.ln.g"], p[f"layer{layer}.{grp}.ln.b"])

    def _pair_scores(self, layer: int, mat: str, a: Tensor, b: Tensor) -> Tensor:
        ea = self._mlp(f"layer{layer}.head.{mat}.a", a)
        eb = self._mlp(f"layer{layer}.head.{mat}.b", b)
        return ad.sigmoid(ad.matmul(ea, ad.transpose(eb)))

    def bank(self) -> QueryBank:
        p = self.params
        return QueryBank(p["bank.q_p"], p["bank.q_l"], p["bank.q_t"], p["bank.ref_p"], p["bank.ref_l"])

    def initial_state(self) -> LayerState:
        c = self.config
        anchors = self.params["bank.ref_l"].data[:, None, :] + lane_anchor_offsets(
            c.k, c.anchor_half_length
        )[None, :, :]
        return LayerState(
            prev_points=self.params["bank.ref_p"].data.copy(),
            prev_lanes=anchors,
            prev_g_pl=np.zeros((c.n_points, c.n_lanes)),
            prev_g_lt=np.zeros((c.n_lanes, c.n_traffic)),
        )

    def lift_raster(self, raster: np.ndarray) -> Tensor:
        h, w, ch = raster.shape
        if ch != 4:
            raise ContractError(f"raster must have 4 channels, got {ch}")
        flat = linear(Tensor(raster.reshape(h * w, ch)), self.params["bev.lift.w"], self.params["bev.lift.b"])
        return ad.reshape(flat, (h, w, self.config.d))

    # -- main entry points ---------------------------------------------------------

    def forward(self, f_bev: Tensor, q_t_hat: Tensor,
                states_override: list[LayerState] | None = None) -> list[Predictions]:
        """Run all layers. ``states_override`` pins the carried states (one
        per layer); the carried state is gradient-stopped, so pinning it
        makes the forward map a fixed differentiable function of the
        parameters, which finite-difference checks need."""
        c = self.config
        if states_override is not None and len(states_override) != c.layers:
            raise ContractError(f"need {c.layers} pinned states, got {len(states_override)}")
        bank = self.bank()
        q_p, q_l = bank.q_p, bank.q_l
        state = self.initial_state()
        anchor_off = Tensor(lane_anchor_offsets(c.k, c.anchor_half_length)[None, :, :])
        out: list[Predictions] = []
        for i in range(c.layers):
            if states_override is not None:
                state = states_override[i]
            q_p, q_l, m_pl, m_ll = plmsa(q_p, q_l, state, self._attn_weights(i), self._map_weights(i))
            q_p = self._bev_block(i, "bev_p", q_p, bank.ref_p.data, f_bev)
            q_l = self._bev_block(i, "bev_l", q_l, bank.ref_l.data, f_bev)
            q_p = self._ffn_block(i, "ffn_p", q_p)
            q_l = self._ffn_block(i, "ffn_l", q_l)
            q_p, q_l = unified_scene_graph(
                q_p, q_l, q_t_hat, m_pl, m_ll, state.prev_g_pl, state.prev_g_lt, self._usg_weights(i)
            )
            points_reg = bank.ref_p + self._mlp(f"layer{i}.head.point_reg", q_p)
            points_cls = ad.sigmoid(self._mlp(f"layer{i}.head.point_cls", q_p))
            lane_anchor = ad.reshape(bank.ref_l, (c.n_lanes, 1, 3)) + anchor_off
            lanes_reg = lane_anchor + ad.reshape(
                self._mlp(f"layer{i}.head.lane_reg", q_l), (c.n_lanes, c.k, 3)
            )
            lanes_cls = ad.sigmoid(self._mlp(f"layer{i}.head.lane_cls", q_l))
            g_pl = self._pair_scores(i, "top_pl", q_p, q_l)
            g_ll = self._pair_scores(i, "top_ll", q_l, q_l)
            g_lt = self._pair_scores(i, "top_lt", q_l, q_t_hat)
            for name, t in (("points", points_reg), ("lanes", lanes_reg), ("g_pl", g_pl),
                            ("g_ll", g_ll), ("g_lt", g_lt)):
                if not np.all(np.isfinite(t.data)):
                    raise DivergenceError(f"non-finite {name} at layer {i}")
            out.append(Predictions(points_reg, points_cls, lanes_reg, lanes_cls, g_pl, g_ll, g_lt))
            state = LayerState(
                prev_points=points_reg.data.copy(),
                prev_lanes=lanes_reg.data.copy(),
                prev_g_pl=g_pl.data.copy(),
                prev_g_lt=g_lt.data.copy(),
            )
        return out

    def collect_states(self, preds: list[Predictions]) -> list[LayerState]:
        """Carried states that a forward run producing ``preds`` saw, ready
        to pass back as ``states_override``."""
        states = [self.initial_state()]
        for pr in preds[:-1]:
            states.append(
                LayerState(
                    prev_points=pr.points_reg.data.copy(),
                    prev_lanes=pr.lanes_reg.data.copy(),
                    prev_g_pl=pr.g_pl.data.copy(),
                    prev_g_lt=pr.g_lt.data.copy(),
                )
            )
        return states

    def traffic_stub(self, scene: Scene, noise: NoiseSpec | None = None, seed: int = 0):
        """Embed ground-truth traffic boxes in place of a detector.

        Returns (q_t_hat, boxes, box_scores); boxes and scores double as the
        traffic predictions. Noise translates each box, keeping it valid.
        """
        c = self.config
        els = scene.traffic
        if len(els) > c.n_traffic:
            warnings.warn(
                f"scene has {len(els)} traffic elements, keeping the first {c.n_traffic}",
                stacklevel=2,
            )
            els = els[: c.n_traffic]
        rng = np.random.default_rng(seed)
        boxes = np.zeros((c.n_traffic, 4))
        scores = np.zeros((c.n_traffic, N_CATEGORIES))
        for i, el in enumerate(els):
            box = el.box.astype(np.float64)
            if noise is not None and noise.box_sigma > 0:
                dx, dy = rng.normal(0.0, noise.box_sigma, 2)
                box = box + np.array([dx, dy, dx, dy])
            boxes[i] = box
            scores[i, el.cat] = 1.0
        feats = np.concatenate([boxes / 1000.0, scores], axis=1)
        q_t_hat = self.params["bank.q_t"] + linear(
            Tensor(feats), self.params["traffic.embed.w"], self.params["traffic.embed.b"]
        )
        return q_t_hat, boxes, scores

    def run_scene(self, scene: Scene, noise: NoiseSpec | None = None, seed: int = 0):
        """Full pipeline on one scene: raster, stub, forward. Returns the
        per-layer predictions plus a DetectionSet built from the last layer."""
        raster = bev_raster(scene, self.config.bev_shape, self.config.extent)
        f_bev = self.lift_raster(raster)
        q_t_hat, boxes, box_scores = self.traffic_stub(scene, noise=noise, seed=seed)
        preds = self.forward(f_bev, q_t_hat)
        return preds, predictions_to_detections(preds[-1], boxes, box_scores)

    # -- persistence --------------------------------------------------------------

    def save(self, path: str) -> None:
        blob = {
            "version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "config": _config_to_dict(self.config),
            "params": {k: v.data.tolist() for k, v in self.params.items()},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(blob, fh)

    @classmethod
    def load(cls, path: str) -> "PointLaneModel":
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
        if blob.get("version") != CHECKPOINT_VERSION:
            raise ParseError(f"unsupported checkpoint version {blob.get('version')!r}")
        model = cls(_config_from_dict(blob["config"]), seed=int(blob.get("seed", 0)))
        saved = blob["params"]
        if set(saved) != set(model.params):
            missing = sorted(set(model.params) - set(saved))[:3]
            extra = sorted(set(saved) - set(model.params))[:3]
            raise ParseError(f"parameter names do not match (missing {missing}, extra {extra})")
        for name, value in saved.items():
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != model.params[name].shape:
                raise ParseError(f"shape mismatch for {name}: {arr.shape} vs {model.params[name].shape}")
            model.params[name] = Tensor(arr, requires_grad=True)
        return model


def _config_to_dict(cfg: ModelConfig) -> dict:
    out = asdict(cfg)
    out["bev_shape"] = list(cfg.bev_shape)
    out["extent"] = list(cfg.extent)
    return out


def _config_from_dict(raw: dict) -> ModelConfig:
    known = {f.name for f in ModelConfig.__dataclass_fields__.values()}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    kwargs = dict(raw)
    if "bev_shape" in kwargs:
        kwargs["bev_shape"] = tuple(kwargs["bev_shape"])
    if "extent" in kwargs:
        kwargs["extent"] = tuple(kwargs["extent"])
    return ModelConfig(**kwargs)


def bev_raster(scene: Scene, shape: tuple[int, int], extent) -> np.ndarray:
    """Rasterize a scene into the (H, W, 4) grid the decoder samples from.

    Channels: saturating lane occupancy 1 - exp(-hits), endpoint occupancy,
    and the two normalized coordinate ramps.
    """
    h, w = shape
    acc = np.zeros((h, w))
    epo = np.zeros((h, w))

    def hits(xy: np.ndarray):
        rc = np.rint(project_to_raster(xy, extent, shape)).astype(np.int64)
        rc[:, 0] = np.clip(rc[:, 0], 0, h - 1)
        rc[:, 1] = np.clip(rc[:, 1], 0, w - 1)
        return rc

    for lane in scene.lanes:
        pts = lane.points[:, :2]
        mids = 0.5 * (pts[:-1] + pts[1:])
        rc = hits(np.concatenate([pts, mids], axis=0))
        np.add.at(acc, (rc[:, 0], rc[:, 1]), 1.0)
    if scene.points.size:
        rc = hits(scene.points[:, :2])
        epo[rc[:, 0], rc[:, 1]] = 1.0
    ramp_r = np.linspace(0.0, 1.0, h)[:, None] * np.ones((1, w))
    ramp_c = np.ones((h, 1)) * np.linspace(0.0, 1.0, w)[None, :]
    return np.stack([1.0 - np.exp(-acc), epo, ramp_r, ramp_c], axis=2)


def predictions_to_detections(preds: Predictions, boxes: np.ndarray, box_scores: np.ndarray) -> DetectionSet:
    """Freeze one layer's predictions into the evaluation container."""
    return DetectionSet(
        pred_points=preds.points_reg.data.copy(),
        point_scores=preds.points_cls.data[:, 0].copy(),
        pred_lanes=preds.lanes_reg.data.copy(),
        lane_scores=preds.lanes_cls.data[:, 0].copy(),
        pred_boxes=np.asarray(boxes, dtype=np.float64).copy(),
        box_scores=np.asarray(box_scores, dtype=np.float64).copy(),
        pred_g_pl=preds.g_pl.data.copy(),
        pred_g_ll=preds.g_ll.data.copy(),
        pred_g_lt=preds.g_lt.data.copy(),
    )
