import math

import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from vphomeo.errors import BudgetError, DomainError
from vphomeo.kernel import BoxDomain
from vphomeo.packing import Ball, BallIndex, BallPacking, unit_ball_volume, vitali_pack


@pytest.mark.parametrize("d,ref", [(1, 2.0), (2, math.pi), (3, 4 * math.pi / 3)])
def test_unit_ball_volume(d, ref):
    assert unit_ball_volume(d) == pytest.approx(ref)


def test_ball_rejects_nonpositive_radius():
    with pytest.raises(DomainError):
        Ball((0.0, 0.0), 0.0)


def _brute_gap(pk):
    # all-pairs oracle
    D = squareform(pdist(pk.centers))
    gap = D - pk.radii[:, None] - pk.radii[None, :]
    np.fill_diagonal(gap, np.inf)
    return gap.min()


@pytest.fixture(scope="module")
def square_packing():
    return vitali_pack(BoxDomain.unit(2), 0.2, 0.1)


def test_packing_meets_budget(square_packing):
    pk = square_packing
    assert pk.residual_measure_estimate <= 0.1
    assert np.all(2 * pk.radii <= 0.2)


def test_packing_is_disjoint_by_brute_force(square_packing):
    pk = square_packing
    assert pk.min_gap() == pytest.approx(_brute_gap(pk), abs=1e-15)
    assert pk.is_disjoint() and _brute_gap(pk) > 0


def test_packing_contained(square_packing):
    assert square_packing.containment_violations() == 0


def test_grid_residual_agrees_with_exact(square_packing):
    pk = square_packing
    grid = pk.residual_by_grid(1024)
    assert grid == pytest.approx(pk.residual_measure_estimate, abs=5e-3)


def test_index_locate_matches_brute_force(square_packing):
    pk = square_packing
    x = np.random.default_rng(0).random((2000, 2))
    got = pk.index().locate(x)
    D = np.linalg.norm(x[:, None, :] - pk.centers[None], axis=2)
    inside = D < pk.radii[None]
    ref = np.where(inside.any(1), np.argmax(inside, 1), -1)
    assert np.array_equal(got, ref)


def test_surface_distance_matches_brute_force(square_packing):
    pk = square_packing
    x = np.random.default_rng(1).random((500, 2))
    g, arg = pk.index().surface_distance(x, 1.0)
    D = np.linalg.norm(x[:, None, :] - pk.centers[None], axis=2) - pk.radii[None]
    assert np.allclose(g, np.minimum(D.min(1), 1.0), atol=1e-14)
    assert np.array_equal(arg, np.argmin(D, 1))


def test_empty_index():
    idx = BallIndex(np.zeros((0, 3)), [])
    assert len(idx) == 0 and idx.d == 3
    assert np.array_equal(idx.locate(np.zeros((4, 3))), [-1] * 4)


def test_delta_above_measure_gives_empty_packing():
    pk = vitali_pack(BoxDomain.unit(2), 0.1, 1.5)
    assert len(pk) == 0 and pk.residual_measure_estimate == 1.0


def test_union_of_boxes_and_three_dimensions():
    dom = BoxDomain([((0, 0), (1, 0.5)), ((0, 0.5), (0.5, 1))])
    pk = vitali_pack(dom, 0.25, 0.1)
    assert pk.residual_measure_estimate <= 0.1
    assert pk.containment_violations() == 0 and _brute_gap(pk) > 0
    pk3 = vitali_pack(BoxDomain.unit(3), 0.5, 0.5)
    assert pk3.residual_measure_estimate <= 0.5 and _brute_gap(pk3) > 0


def test_budget_error_carries_best_packing():
    with pytest.raises(BudgetError) as exc:
        vitali_pack(BoxDomain.unit(2), 0.2, 0.01, refinements=1)
    best = exc.value.best
    assert isinstance(best, BallPacking) and best.is_disjoint()


@pytest.mark.parametrize("eps,delta", [(0.0, 0.1), (0.1, 0.0)])
def test_invalid_parameters(eps, delta):
    with pytest.raises(DomainError):
        vitali_pack(BoxDomain.unit(2), eps, delta)


def test_translated_packing_keeps_radii(square_packing):
    dom = BoxDomain([((1, 1), (2, 2))])
    moved = square_packing.translated([1, 1], dom)
    assert moved.containment_violations() == 0
    assert moved.residual_measure_estimate == pytest.approx(
        square_packing.residual_measure_estimate)
