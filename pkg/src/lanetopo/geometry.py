"""Distance matrices between lanes and points, the learnable distance-decay
map used as an attention/adjacency bias, and the discrete Fréchet distance.

Conventions: lanes are (n_l, k, 3) arrays of ordered 3D polyline samples in a
metric BEV frame; points are (n_p, 3). Lane-to-lane and point-to-lane
distances are L1; the Fréchet distance uses the Euclidean point metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

SIGMA_FLOOR = 1e-3
ALPHA_RANGE = (0.1, 8.0)


@dataclass
class MapParams:
    """Parameters of the exponential distance-decay map.

    ``sigma_hat`` is the (floored) population standard deviation of the
    distance matrix being mapped; when ``None`` it is derived from the data.
    """

    lam: float = 0.2
    alpha: float = 2.0
    sigma_hat: float | None = None


def lane_lane_distance(lanes: np.ndarray) -> np.ndarray:
    """L1 distance from every lane's end point to every lane's start point.

    Entry [i, j] is sum(|end_i - start_j|) over the three axes; the matrix is
    not symmetric in general and the diagonal is each lane's own end-to-start
    span rather than zero.
    """
    lanes = np.asarray(lanes, dtype=np.float64)
    if lanes.ndim != 3 or lanes.shape[1] < 2:
        raise ContractError(f"lanes must be (n_l, k>=2, 3), got {lanes.shape}")
    ends = lanes[:, -1, :]
    starts = lanes[:, 0, :]
    return np.abs(ends[:, None, :] - starts[None, :, :]).sum(axis=2)


def point_lane_distance(points: np.ndarray, lanes: np.ndarray) -> np.ndarray:
    """min(L1(p, lane start), L1(p, lane end)) for every point/lane pair."""
    points = np.asarray(points, dtype=np.float64)
    lanes = np.asarray(lanes, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ContractError(f"points must be (n_p, 3), got {points.shape}")
    if lanes.ndim != 3 or lanes.shape[1] < 2:
        raise ContractError(f"lanes must be (n_l, k>=2, 3), got {lanes.shape}")
    d_start = np.abs(points[:, None, :] - lanes[None, :, 0, :]).sum(axis=2)
    d_end = np.abs(points[:, None, :] - lanes[None, :, -1, :]).sum(axis=2)
    return np.minimum(d_start, d_end)


def map_sigma(d: np.ndarray) -> float:
    """Population std of a distance matrix, floored to keep the map finite
    when the matrix is (nearly) constant."""
    return max(float(np.std(np.asarray(d, dtype=np.float64))), SIGMA_FLOOR)


def _check_map_args(d: np.ndarray, lam: float, alpha: float) -> None:
    if np.any(d < 0):
        raise ContractError("distances must be non-negative")
    if not (lam > 0):
        raise ContractError(f"lam must be positive, got {lam}")
    if not (alpha > 0):
        raise ContractError(f"alpha must be positive, got {alpha}")


def f_map(d: np.ndarray, params: MapParams | None = None) -> np.ndarray:
    """Map distances to affinities in (0, 1]: exp(-d**alpha / (lam * sigma)).

    Strictly decreasing in d for valid parameters; f_map(0) == 1 exactly.
    """
    if params is None:
        params = MapParams()
    d = np.asarray(d, dtype=np.float64)
    _check_map_args(d, params.lam, params.alpha)
    sigma = map_sigma(d) if params.sigma_hat is None else float(params.sigma_hat)
    if not (sigma > 0):
        raise ContractError(f"sigma_hat must be positive, got {sigma}")
    return np.exp(-np.power(d, params.alpha) / (params.lam * sigma))


def f_map_partials(
    d: np.ndarray, lam: float, alpha: float, sigma: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Value of the decay map and its analytic partials (d, lam, alpha).

    At d == 0 the d- and alpha-partials are taken as their limits (both 0 for
    alpha > 1; the alpha limit is 0 for every positive alpha). sigma is
    treated as a constant. Shared by the plain map and its autodiff wrapper
    so there is exactly one copy of the formula.
    """
    d = np.asarray(d, dtype=np.float64)
    _check_map_args(d, lam, alpha)
    denom = lam * sigma
    pos = d > 0
    d_safe = np.where(pos, d, 1.0)
    d_pow = np.where(pos, np.power(d_safe, alpha), 0.0)
    out = np.exp(-d_pow / denom)
    d_d = np.where(pos, -alpha * np.power(d_safe, alpha - 1.0) / denom * out, 0.0)
    if alpha == 1.0:
        # d^0 == 1 also at d == 0: the derivative is finite there.
        d_d = -out / denom
    d_lam = out * d_pow / (lam * denom)
    d_alpha = np.where(pos, -out * d_pow * np.log(d_safe) / denom, 0.0)
    return out, d_d, d_lam, d_alpha


def discrete_frechet(a: np.ndarray, b: np.ndarray) -> float:
    """Discrete Fréchet distance between two polylines (Euclidean metric).

    Standard O(n*m) dynamic program over monotone couplings. Accepts
    polylines of different lengths; single-point polylines degenerate to the
    plain point distance.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ContractError("polylines must be non-empty")
    diff = a[:, None, :] - b[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2)).tolist()
    n = len(dist)
    m = len(dist[0])
    row = [0.0] * m
    row[0] = dist[0][0]
    for j in range(1, m):
        row[j] = max(row[j - 1], dist[0][j])
    for i in range(1, n):
        di = dist[i]
        prev_diag = row[0]
        row[0] = max(row[0], di[0])
        for j in range(1, m):
            here = row[j]
            best = min(here, prev_diag, row[j - 1])
            row[j] = best if best > di[j] else di[j]
            prev_diag = here
    return row[m - 1]


def frechet_matrix(lanes_a, lanes_b) -> np.ndarray:
    """Pairwise discrete Fréchet distances between two lane sets.

    When both sets have uniform point counts the dynamic program runs
    batched over all pairs, sweeping anti-diagonals (cells on one diagonal
    have no mutual dependency). min/max are exact comparisons, so the result
    is bitwise identical to per-pair :func:`discrete_frechet` calls; ragged
    inputs fall back to exactly those.
    """
    if len(lanes_a) == 0 or len(lanes_b) == 0:
        return np.zeros((len(lanes_a), len(lanes_b)))
    try:
        arr_a = np.asarray(lanes_a, dtype=np.float64)
        arr_b = np.asarray(lanes_b, dtype=np.float64)
    except ValueError:
        arr_a = arr_b = None
    if arr_a is not None and arr_a.ndim == 3 and arr_b.ndim == 3:
        return _frechet_matrix_batched(arr_a, arr_b)
    out = np.zeros((len(lanes_a), len(lanes_b)))
    for i, la in enumerate(lanes_a):
        for j, lb in enumerate(lanes_b):
            out[i, j] = discrete_frechet(la, lb)
    return out


def _frechet_matrix_batched(arr_a: np.ndarray, arr_b: np.ndarray) -> np.ndarray:
    na, ka = arr_a.shape[:2]
    nb, kb = arr_b.shape[:2]
    diff = arr_a[:, None, :, None, :] - arr_b[None, :, None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1)).reshape(na * nb, ka, kb)
    prev = prev_lo = None
    cur = cur_lo = None
    for s in range(ka + kb - 1):
        lo = max(0, s - kb + 1)
        hi = min(ka - 1, s)
        ii = np.arange(lo, hi + 1)
        jj = s - ii
        dd = dist[:, ii, jj]
        if s == 0:
            nxt = dd
        else:
            best = np.full_like(dd, np.inf)
            up_ok = ii > 0  # predecessor (i-1, j) on the previous diagonal
            if up_ok.any():
                best[:, up_ok] = cur[:, ii[up_ok] - 1 - cur_lo]
            left_ok = jj > 0  # predecessor (i, j-1)
            if left_ok.any():
                vals = cur[:, ii[left_ok] - cur_lo]
                best[:, left_ok] = np.minimum(best[:, left_ok], vals)
            if s >= 2:
                diag_ok = up_ok & left_ok  # predecessor (i-1, j-1), two diagonals back
                if diag_ok.any():
                    vals = prev[:, ii[diag_ok] - 1 - prev_lo]
                    best[:, diag_ok] = np.minimum(best[:, diag_ok], vals)
            nxt = np.maximum(dd, best)
        prev, prev_lo = cur, cur_lo
        cur, cur_lo = nxt, lo
    return cur[:, 0].reshape(na, nb)
