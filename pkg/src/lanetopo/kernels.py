"""Differentiable building blocks: biased self-attention, layer norm, GCN
layers, distance-decay weighting, and bilinear BEV sampling.

Everything here takes and returns :class:`~lanetopo.autodiff.Tensor` so the
decoder can chain blocks freely. Custom ops (``distance_decay``,
``bilinear_gather``) carry hand-written backward rules and are covered by
finite-difference checks in the test suite.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DivergenceError
from .geometry import ALPHA_RANGE, f_map_partials

LAM_FLOOR = 1e-4


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = ad.matmul(x, w)
    if b is not None:
        out = out + b
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax. The row max is subtracted as a detached constant;
    softmax is shift-invariant so the gradient is unaffected."""
    shift = Tensor(np.max(x.data, axis=-1, keepdims=True))
    e = ad.exp(x - shift)
    return e / ad.asum(e, axis=-1, keepdims=True)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = ad.amean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = ad.amean(centered * centered, axis=-1, keepdims=True)
    return centered / ad.sqrt(var + eps) * gamma + beta


def ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer feed-forward block with a ReLU hidden layer."""
    return linear(ad.relu(linear(x, w1, b1)), w2, b2)


def biased_self_attention(
    x: Tensor,
    bias: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
) -> Tensor:
    """Single-head self-attention with an additive pre-softmax bias.

    ``bias`` has shape (n, n) and is added to the scaled dot-product logits,
    so strongly related rows (large bias) attend to each other even early in
    training when content features are uninformative.
    """
    n, d = x.shape
    if bias.shape != (n, n):
        raise ContractError(f"bias shape {bias.shape} does not match {n} tokens")
    q = ad.matmul(x, wq)
    k = ad.matmul(x, wk)
    scores = ad.matmul(q, ad.transpose(k)) * (1.0 / np.sqrt(d)) + bias
    attn = softmax_rows(scores)
    return ad.matmul(ad.matmul(attn, ad.matmul(x, wv)), wo)


def silu(x: Tensor) -> Tensor:
    return x * ad.sigmoid(x)


def gcn_layer(x: Tensor, adj, w: Tensor, activation: str = "sigmoid") -> Tensor:
    """One graph-convolution step: act(row_norm(adj) @ x @ w).

    Rows of the adjacency are normalized by max(row_sum, 1e-6), so rows with
    meaningful degree sum to one and all-zero rows stay all-zero. ``adj`` may
    be a plain array (fixed graph) or a Tensor (learned, e.g. decayed
    distances), and gradients flow through it in the latter case.
    """
    a = adj if isinstance(adj, Tensor) else Tensor(np.asarray(adj, dtype=np.float64))
    if a.ndim != 2 or a.shape[1] != x.shape[0]:
        raise ContractError(f"adjacency shape {a.shape} incompatible with {x.shape[0]} nodes")
    if np.any(a.data < 0.0):
        raise ContractError("adjacency entries must be non-negative")
    rowsum = ad.asum(a, axis=1, keepdims=True)
    a_hat = a / ad.maximum_scalar(rowsum, 1e-6)
    pre = ad.matmul(ad.matmul(a_hat, x), w)
    if activation == "sigmoid":
        return ad.sigmoid(pre)
    if activation == "silu":
        return silu(pre)
    raise ContractError(f"unknown gcn activation {activation!r}")


def distance_decay(d: np.ndarray, lam: Tensor, alpha: Tensor, sigma: float) -> Tensor:
    """Map raw distances to (0, 1] affinities with learnable decay rate and
    exponent: exp(-d**alpha / (lam * sigma)).

    ``d`` and ``sigma`` are treated as constants of the batch; gradients flow
    only into ``lam`` and ``alpha``. Both are clamped before evaluation
    (lam >= LAM_FLOOR, alpha within ALPHA_RANGE) and the clamp gates the
    gradient, matching the behavior of an explicit clip op.
    """
    d = np.asarray(d, dtype=np.float64)
    if lam.data.size != 1 or alpha.data.size != 1:
        raise ContractError("distance_decay expects scalar lam and alpha")
    lam_v = float(lam.data)
    alpha_v = float(alpha.data)
    if not (np.isfinite(lam_v) and np.isfinite(alpha_v)):
        raise DivergenceError("distance decay parameters became non-finite")
    lam_c = max(lam_v, LAM_FLOOR)
    alpha_c = min(max(alpha_v, ALPHA_RANGE[0]), ALPHA_RANGE[1])
    out, _, d_lam, d_alpha = f_map_partials(d, lam_c, alpha_c, sigma)
    lam_open = lam_v > LAM_FLOOR
    alpha_open = ALPHA_RANGE[0] < alpha_v < ALPHA_RANGE[1]

    def vjp(g):
        gl = np.sum(g * d_lam) if lam_open else 0.0
        ga = np.sum(g * d_alpha) if alpha_open else 0.0
        return (
            np.full(lam.shape, gl),
            np.full(alpha.shape, ga),
        )

    return Tensor(out, _parents=(lam, alpha), _vjp=vjp)


def assemble_joint_bias(m_pl: Tensor, m_ll: Tensor) -> Tensor:
    """Stack point-lane and lane-lane affinities into one joint bias::

        [ 0       M_pl ]
        [ M_pl^T  M_ll ]

    The point-point block is zero: points interact only through lanes.
    """
    n_p, n_l = m_pl.shape
    if m_ll.shape != (n_l, n_l):
        raise ContractError("lane-lane block shape mismatch")
    zeros_pp = Tensor(np.zeros((n_p, n_p)))
    top = ad.concat([zeros_pp, m_pl], axis=1)
    bottom = ad.concat([ad.transpose(m_pl), m_ll], axis=1)
    return ad.concat([top, bottom], axis=0)


def bilinear_gather(f: Tensor, pos: Tensor) -> Tensor:
    """Sample a (H, W, C) feature raster at continuous (row, col) positions.

    Positions are clamped to the raster bounds. Backward scatter-adds into
    the raster gradient; position gradients use the analytic slope of the
    bilinear surface and are zeroed where the clamp was active (moving a
    clamped point does not change the sample).
    """
    if f.ndim != 3:
        raise ContractError(f"feature raster must be (H, W, C), got {f.shape}")
    h, w_, c = f.shape
    if h < 2 or w_ < 2:
        raise ContractError("raster must be at least 2x2")
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ContractError(f"positions must be (n, 2), got {pos.shape}")

    r_raw = pos.data[:, 0]
    c_raw = pos.data[:, 1]
    r = np.clip(r_raw, 0.0, h - 1.0)
    cc = np.clip(c_raw, 0.0, w_ - 1.0)
    r0 = np.clip(np.floor(r).astype(np.intp), 0, h - 2)
    c0 = np.clip(np.floor(cc).astype(np.intp), 0, w_ - 2)
    r1 = r0 + 1
    c1 = c0 + 1
    wr = r - r0
    wc = cc - c0

    f00 = f.data[r0, c0]
    f01 = f.data[r0, c1]
    f10 = f.data[r1, c0]
    f11 = f.data[r1, c1]
    w00 = ((1 - wr) * (1 - wc))[:, None]
    w01 = ((1 - wr) * wc)[:, None]
    w10 = (wr * (1 - wc))[:, None]
    w11 = (wr * wc)[:, None]
    out = w00 * f00 + w01 * f01 + w10 * f10 + w11 * f11

    r_open = (r_raw > 0.0) & (r_raw < h - 1.0)
    c_open = (c_raw > 0.0) & (c_raw < w_ - 1.0)

    def vjp(g):
        gf = np.zeros_like(f.data)
        np.add.at(gf, (r0, c0), g * w00)
        np.add.at(gf, (r0, c1), g * w01)
        np.add.at(gf, (r1, c0), g * w10)
        np.add.at(gf, (r1, c1), g * w11)
        dr = ((f10 - f00) * (1 - wc)[:, None] + (f11 - f01) * wc[:, None])
        dc = ((f01 - f00) * (1 - wr)[:, None] + (f11 - f10) * wr[:, None])
        gp = np.zeros_like(pos.data)
        gp[:, 0] = np.sum(g * dr, axis=1) * r_open
        gp[:, 1] = np.sum(g * dc, axis=1) * c_open
        return gf, gp

    return Tensor(out, _parents=(f, pos), _vjp=vjp)


def project_to_raster(
    xy: np.ndarray, extent: tuple[float, float, float, float], shape: tuple[int, int]
) -> np.ndarray:
    """Map world (x, y) coordinates onto continuous (row, col) raster indices.

    Rows track x and columns track y across ``extent`` = (x_min, x_max,
    y_min, y_max). No clamping here; the sampler clamps.
    """
    x_min, x_max, y_min, y_max = extent
    h, w_ = shape
    if x_max <= x_min or y_max <= y_min:
        raise ContractError("degenerate raster extent")
    out = np.empty((xy.shape[0], 2), dtype=np.float64)
    out[:, 0] = (xy[:, 0] - x_min) / (x_max - x_min) * (h - 1)
    out[:, 1] = (xy[:, 1] - y_min) / (y_max - y_min) * (w_ - 1)
    return out


def bev_cross_attention(
    queries: Tensor,
    ref_points,
    f_bev: Tensor,
    offsets: Tensor,
    weights: Tensor,
    extent: tuple[float, float, float, float],
) -> Tensor:
    """Cross-attention from queries into a BEV raster via each query's own
    reference point.

    ``ref_points`` is (n, 3) in world coordinates (z ignored) and is treated
    as a constant: gradients flow through the query-derived ``offsets``
    ((n, s, 2), in raster cells, added after projection) and ``weights``
    ((n, s), softmaxed over s), and through ``f_bev``. Output is the weighted
    sum of bilinear samples, shape (n, channels).
    """
    n = queries.shape[0]
    if f_bev.ndim != 3 or f_bev.data.size == 0:
        raise ContractError("BEV raster must be a non-empty (H, W, C) grid")
    h, w_, c = f_bev.shape
    if offsets.ndim != 3 or offsets.shape[0] != n or offsets.shape[2] != 2:
        raise ContractError(f"offsets must be (n, s, 2), got {offsets.shape}")
    s = offsets.shape[1]
    if weights.shape != (n, s):
        raise ContractError(f"weights must be ({n}, {s}), got {weights.shape}")
    ref = ref_points.data if isinstance(ref_points, Tensor) else np.asarray(ref_points, dtype=np.float64)
    base = project_to_raster(ref[:, :2], extent, (h, w_))  # (n, 2)
    pos = ad.reshape(offsets, (n * s, 2)) + Tensor(np.repeat(base, s, axis=0))
    samples = ad.reshape(bilinear_gather(f_bev, pos), (n, s, c))
    wgt = softmax_rows(weights)
    return ad.asum(samples * ad.reshape(wgt, (n, s, 1)), axis=1)
