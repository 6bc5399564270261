from __future__ import annotations

import numpy as np
import pytest

from lanetopo.errors import ContractError
from lanetopo.geometry import (
    MapParams,
    SIGMA_FLOOR,
    discrete_frechet,
    f_map,
    f_map_partials,
    frechet_matrix,
    lane_lane_distance,
    map_sigma,
    point_lane_distance,
)
from oracles import frechet_by_coupling


def _random_lanes(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    return rng.normal(scale=5.0, size=(n, k, 3))


# -- distance matrices -------------------------------------------------------


def test_lane_lane_distance_coincident_junction():
    lanes = np.zeros((2, 3, 3))
    lanes[0, -1] = (1.0, 2.0, 0.0)  # lane 0 ends where lane 1 starts
    lanes[1, 0] = (1.0, 2.0, 0.0)
    lanes[1, -1] = (4.0, 2.0, 0.0)
    d = lane_lane_distance(lanes)
    assert d[0, 1] == 0.0


def test_lane_lane_distance_hand_case():
    lanes = np.zeros((2, 2, 3))
    lanes[1, 0] = (1.0, 1.0, 1.0)
    d = lane_lane_distance(lanes)
    assert d[0, 1] == pytest.approx(3.0)


def test_lane_lane_distance_diagonal_is_own_span():
    lanes = np.zeros((1, 4, 3))
    lanes[0, :, 0] = np.linspace(0.0, 4.0, 4)
    d = lane_lane_distance(lanes)
    assert d[0, 0] == pytest.approx(4.0)


def test_lane_lane_distance_matches_loops():
    rng = np.random.default_rng(7)
    lanes = _random_lanes(rng, 6, 5)
    d = lane_lane_distance(lanes)
    for i in range(6):
        for j in range(6):
            want = np.abs(lanes[i, -1] - lanes[j, 0]).sum()
            assert d[i, j] == pytest.approx(want, abs=1e-12)


def test_point_lane_distance_at_start_is_zero():
    lanes = np.zeros((1, 3, 3))
    lanes[0, 0] = (2.0, -1.0, 0.5)
    lanes[0, -1] = (9.0, 9.0, 9.0)
    d = point_lane_distance(np.array([[2.0, -1.0, 0.5]]), lanes)
    assert d[0, 0] == 0.0


def test_point_lane_distance_takes_nearer_endpoint():
    lanes = np.zeros((1, 2, 3))
    lanes[0, 0] = (2.0, 0.0, 0.0)
    lanes[0, 1] = (0.0, 3.0, 0.0)
    d = point_lane_distance(np.zeros((1, 3)), lanes)
    assert d[0, 0] == pytest.approx(2.0)


def test_point_lane_distance_tie_is_harmless():
    lanes = np.zeros((1, 2, 3))
    lanes[0, 0] = (5.0, 0.0, 0.0)
    lanes[0, 1] = (0.0, 5.0, 0.0)
    d = point_lane_distance(np.zeros((1, 3)), lanes)
    assert d[0, 0] == pytest.approx(5.0)


def test_point_lane_distance_matches_loops():
    rng = np.random.default_rng(11)
    lanes = _random_lanes(rng, 4, 6)
    points = rng.normal(scale=5.0, size=(7, 3))
    d = point_lane_distance(points, lanes)
    for i in range(7):
        for j in range(4):
            want = min(
                np.abs(points[i] - lanes[j, 0]).sum(),
                np.abs(points[i] - lanes[j, -1]).sum(),
            )
            assert d[i, j] == pytest.approx(want, abs=1e-12)


def test_distances_non_negative():
    rng = np.random.default_rng(3)
    lanes = _random_lanes(rng, 5, 4)
    points = rng.normal(size=(6, 3))
    assert np.all(lane_lane_distance(lanes) >= 0)
    assert np.all(point_lane_distance(points, lanes) >= 0)


# -- decay map ----------------------------------------------------------------


def test_f_map_zero_distance_is_one():
    out = f_map(np.zeros((3, 3)), MapParams(sigma_hat=1.0))
    np.testing.assert_array_equal(out, 1.0)


def test_f_map_reference_value():
    """exp(-1**2 / (0.2 * 1)) == e**-5, to double precision."""
    out = f_map(np.array([[1.0]]), MapParams(lam=0.2, alpha=2.0, sigma_hat=1.0))
    assert abs(out[0, 0] - np.exp(-5.0)) < 1e-12


def test_f_map_strictly_decreasing():
    p = MapParams(sigma_hat=1.0)
    assert f_map(np.array([1.0]), p)[0] > f_map(np.array([2.0]), p)[0]
    rng = np.random.default_rng(5)
    d = np.sort(rng.uniform(0.0, 10.0, size=50))
    vals = f_map(d, MapParams(sigma_hat=2.0))
    assert np.all(np.diff(vals) < 0)


def test_f_map_range():
    rng = np.random.default_rng(9)
    d = rng.uniform(0.0, 30.0, size=(8, 8))
    out = f_map(d)
    assert np.all(out > 0.0) and np.all(out <= 1.0)


def test_map_sigma_floor_on_constant_matrix():
    assert map_sigma(np.full((4, 4), 2.5)) == SIGMA_FLOOR
    # and f_map still finite there
    out = f_map(np.full((4, 4), 2.5))
    assert np.all(np.isfinite(out))


def test_f_map_rejects_bad_params():
    with pytest.raises(ContractError):
        f_map(np.array([1.0]), MapParams(lam=0.0))
    with pytest.raises(ContractError):
        f_map(np.array([1.0]), MapParams(alpha=-1.0))
    with pytest.raises(ContractError):
        f_map(np.array([-0.5]))


def test_f_map_partials_match_finite_differences():
    rng = np.random.default_rng(13)
    d = rng.uniform(0.1, 8.0, size=(5, 5))
    lam, alpha, sigma = 0.2, 2.0, map_sigma(d)
    step = 1e-6
    out, d_d, d_lam, d_alpha = f_map_partials(d, lam, alpha, sigma)
    np.testing.assert_allclose(out, np.exp(-(d**alpha) / (lam * sigma)), rtol=1e-14)

    fd_lam = (
        f_map_partials(d, lam + step, alpha, sigma)[0]
        - f_map_partials(d, lam - step, alpha, sigma)[0]
    ) / (2 * step)
    fd_alpha = (
        f_map_partials(d, lam, alpha + step, sigma)[0]
        - f_map_partials(d, lam, alpha - step, sigma)[0]
    ) / (2 * step)
    fd_d = (
        f_map_partials(d + step, lam, alpha, sigma)[0]
        - f_map_partials(d - step, lam, alpha, sigma)[0]
    ) / (2 * step)
    np.testing.assert_allclose(d_lam, fd_lam, rtol=1e-6)
    np.testing.assert_allclose(d_alpha, fd_alpha, rtol=1e-6)
    np.testing.assert_allclose(d_d, fd_d, rtol=1e-6)


def test_f_map_partials_zero_distance_limits():
    d = np.array([0.0, 1.0])
    out, d_d, _, d_alpha = f_map_partials(d, 0.2, 2.0, 1.0)
    assert out[0] == 1.0
    assert d_d[0] == 0.0
    assert d_alpha[0] == 0.0
    # alpha == 1 keeps a finite, nonzero slope at the origin
    _, d_d1, _, _ = f_map_partials(d, 0.2, 1.0, 1.0)
    assert d_d1[0] == pytest.approx(-1.0 / 0.2)


# -- discrete Fréchet ----------------------------------------------------------


def test_frechet_identical_is_zero():
    rng = np.random.default_rng(17)
    a = rng.normal(size=(6, 3))
    assert discrete_frechet(a, a.copy()) == 0.0


def test_frechet_single_points():
    assert discrete_frechet(np.array([[0.0, 0.0, 0.0]]), np.array([[3.0, 4.0, 0.0]])) == pytest.approx(5.0)


def test_frechet_translation():
    a = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 1.0, 0.0], [3.0, 1.0, 0.0]])
    b = a + np.array([1.0, 0.0, 0.0])
    assert discrete_frechet(a, b) == pytest.approx(1.0)
    assert frechet_by_coupling(a, b) == pytest.approx(1.0)


def test_frechet_symmetric():
    rng = np.random.default_rng(19)
    for _ in range(20):
        a = rng.normal(size=(rng.integers(1, 7), 3))
        b = rng.normal(size=(rng.integers(1, 7), 3))
        assert discrete_frechet(a, b) == pytest.approx(discrete_frechet(b, a), abs=1e-12)


def test_frechet_endpoint_lower_bound():
    rng = np.random.default_rng(23)
    for _ in range(20):
        a = rng.normal(size=(rng.integers(2, 7), 3))
        b = rng.normal(size=(rng.integers(2, 7), 3))
        lower = max(np.linalg.norm(a[0] - b[0]), np.linalg.norm(a[-1] - b[-1]))
        assert discrete_frechet(a, b) >= lower - 1e-12


def test_frechet_positive_when_separated():
    rng = np.random.default_rng(29)
    a = rng.normal(size=(5, 3))
    b = a + np.array([0.25, 0.0, 0.0])
    assert discrete_frechet(a, b) > 0.0


def test_frechet_matches_coupling_enumeration():
    """DP result equals exhaustive enumeration of monotone couplings."""
    rng = np.random.default_rng(31)
    for _ in range(60):
        a = rng.normal(scale=3.0, size=(rng.integers(1, 6), 3))
        b = rng.normal(scale=3.0, size=(rng.integers(1, 6), 3))
        assert discrete_frechet(a, b) == pytest.approx(frechet_by_coupling(a, b), abs=1e-12)


def test_frechet_triangle_inequality():
    rng = np.random.default_rng(37)
    for _ in range(30):
        a = rng.normal(size=(rng.integers(2, 7), 3))
        b = rng.normal(size=(rng.integers(2, 7), 3))
        c = rng.normal(size=(rng.integers(2, 7), 3))
        ab = discrete_frechet(a, b)
        bc = discrete_frechet(b, c)
        ac = discrete_frechet(a, c)
        assert ac <= ab + bc + 1e-12


def test_frechet_rejects_empty():
    with pytest.raises(ContractError):
        discrete_frechet(np.zeros((0, 3)), np.zeros((2, 3)))


def test_frechet_matrix_agrees_with_pairwise_calls():
    rng = np.random.default_rng(41)
    la = [rng.normal(size=(4, 3)) for _ in range(3)]
    lb = [rng.normal(size=(5, 3)) for _ in range(2)]
    m = frechet_matrix(la, lb)
    assert m.shape == (3, 2)
    for i in range(3):
        for j in range(2):
            assert m[i, j] == discrete_frechet(la[i], lb[j])
