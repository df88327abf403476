import math

import numpy as np
import pytest

from vphomeo.errors import DomainError, HypothesisError
from vphomeo.kernel import BoxDomain
from vphomeo.pipeline import (PastedRotations, RotationField, build_cell_diffeo,
                              dyadic_rotation_sample, dyadic_splits, rotation_about,
                              theorem_b_sequence, transfer_by_homeo)
from vphomeo.twist import AffineRotation, LocalizedRotation, plane_rotation, random_sod

UNIT = BoxDomain.unit(2)


def angle_field(domain=UNIT):
    return RotationField.planar_angle(domain, lambda x: math.pi * x[:, 0], name="pi x1")


@pytest.mark.parametrize("level,d,expected", [(0, 2, [1, 1]), (1, 2, [2, 1]), (3, 2, [4, 2]),
                                              (4, 3, [4, 2, 2])])
def test_dyadic_splits(level, d, expected):
    assert dyadic_splits(level, d) == expected


def test_dyadic_splits_rejects_negative():
    with pytest.raises(DomainError):
        dyadic_splits(-1, 2)


def test_rotation_field_values_are_rotations():
    assert angle_field().check()
    H = RotationField.constant(UNIT, plane_rotation(2, 0.4))
    assert np.allclose(H(np.array([[0.3, 0.3]]))[0], plane_rotation(2, 0.4))


def test_piecewise_field_needs_one_matrix_per_cell():
    with pytest.raises(DomainError):
        RotationField(UNIT, kind="piecewise-constant", splits=[2, 1], matrices=[np.eye(2)])


def test_dyadic_sample_uses_cell_centers_and_l1_distance():
    Hn, l1 = dyadic_rotation_sample(angle_field(), 1, resolution=256)
    assert np.allclose(Hn.matrices[0], plane_rotation(2, math.pi / 4))
    assert np.allclose(Hn.matrices[1], plane_rotation(2, 3 * math.pi / 4))
    # entry (0,0) against a fine one-dimensional average (the error depends on x1 only)
    x = (np.arange(200000) + 0.5) / 200000
    cen = np.where(x < 0.5, 0.25, 0.75)
    ref = np.mean(np.abs(np.cos(math.pi * x) - np.cos(math.pi * cen)))
    assert float(l1.entries[0, 0]) == pytest.approx(ref, rel=1e-4)


def test_pasted_identity_and_single_ball():
    F = PastedRotations.identity(2, UNIT)
    x = np.random.default_rng(0).random((10, 2))
    assert np.array_equal(F(x), x)
    H = plane_rotation(2, 1.0)
    P = PastedRotations([[0.5, 0.5]], [0.25], [0.125], [H], 2, UNIT)
    G = LocalizedRotation([0.5, 0.5], H, 0.25, 0.125)
    assert np.allclose(P(x), G(x), atol=1e-15)
    assert np.allclose(P.jacobian(x), G.jacobian(x), atol=1e-13)


def test_pasted_rejects_bad_radii():
    with pytest.raises(DomainError):
        PastedRotations([[0.5, 0.5]], [0.1], [0.2], [np.eye(2)], 2)


@pytest.fixture(scope="module")
def cell_map():
    return build_cell_diffeo(UNIT, plane_rotation(2, math.pi / 2), 0.25, 0.1, 0.5,
                             resolution=128, census=1000)


def test_cell_diffeo_report(cell_map):
    F, rep = cell_map
    assert rep.det_check_pass and rep.det_max_dev <= 1e-9
    assert rep.sup_distance_to_target <= 0.25
    assert rep.residual_measure <= 0.1
    assert 0 < rep.eta <= 0.5
    # measured error stays under the ball term plus the residual term
    assert rep.lp_derivative_error.power <= rep.bound_power + 2 * \
        rep.lp_derivative_error.power_error_estimate


def test_cell_diffeo_is_volume_preserving_in_annuli(cell_map):
    F, _ = cell_map
    x = F.annulus_samples(3, np.random.default_rng(5))
    assert np.max(np.abs(np.linalg.det(F.jacobian(x)) - 1)) <= 1e-9
    assert np.max(np.abs(F.inverse(F(x)) - x)) <= 1e-12


def test_cell_diffeo_hint_covers_annuli(cell_map):
    F, _ = cell_map
    x = F.annulus_samples(2, np.random.default_rng(1))
    assert F.hint(x, np.full(2, 1e-4)).all()


def test_cell_diffeo_identity_is_trivial():
    F, rep = build_cell_diffeo(UNIT, np.eye(2), 0.1, 0.05, 0.5)
    assert len(F) == 0 and rep.lp_derivative_error.value == 0.0


def test_cell_diffeo_three_dimensions():
    H = random_sod(3, np.random.default_rng(2))
    F, rep = build_cell_diffeo(BoxDomain.unit(3), H, 0.5, 0.5, 0.5, resolution=16, census=500)
    assert rep.det_check_pass
    assert rep.sup_distance_to_target <= 0.5


@pytest.fixture(scope="module")
def short_sequence():
    return theorem_b_sequence(angle_field(), 0.5, [1, 2], resolution=128, census=1000)


def test_sequence_levels(short_sequence):
    reports = [rep for _, rep in short_sequence]
    for rep in reports:
        assert rep.det_ok and rep.sup_ok and rep.inequality_ok
        assert set(rep.row()) == {"level", "sup_dist", "lp_err", "det_max_dev", "n_balls",
                                  "runtime_ms"}
    assert reports[1].lp_err < reports[0].lp_err


def test_sequence_constant_identity_field():
    seq = theorem_b_sequence(RotationField.constant(UNIT, np.eye(2)), 0.5, [1, 2],
                             resolution=64, census=100)
    assert all(rep.lp_err == 0.0 and rep.n_balls == 0 for _, rep in seq)


def test_transfer_by_identity_reduces_to_input(short_sequence):
    f = AffineRotation(np.eye(2))
    reps = transfer_by_homeo(f, [fn for fn, _ in short_sequence], angle_field(), 0.5, math.inf,
                             domain=UNIT, resolution=128)
    for rep, (_, level) in zip(reps, short_sequence):
        assert rep.lp.value == pytest.approx(level.lp_err, rel=1e-12)
        assert rep.sup_gn_f == level.sup_dist


def test_transfer_by_quarter_turn_is_change_of_variables(short_sequence):
    # the square is invariant and a quarter turn permutes matrix columns up to sign,
    # so the entrywise quasi-norm of (Df_n - H) o f . Df equals that of Df_n - H
    f = rotation_about([0.5, 0.5], math.pi / 2)
    reps = transfer_by_homeo(f, [fn for fn, _ in short_sequence], angle_field(), 0.5, math.inf,
                             domain=UNIT, resolution=128)
    for rep, (_, level) in zip(reps, short_sequence):
        assert rep.lp.value == pytest.approx(level.lp_err, rel=1e-9)


def test_transfer_by_rigid_rotation(short_sequence):
    f = rotation_about([0.5, 0.5], math.pi / 2)
    H = angle_field()
    reps = transfer_by_homeo(f, [fn for fn, _ in short_sequence], H, 0.5, math.inf,
                             domain=UNIT, resolution=128)
    for rep in reps:
        assert rep.sup_ok
        assert rep.within(1.1)


def test_transfer_by_localized_rotation(short_sequence):
    f = LocalizedRotation([0.5, 0.5], plane_rotation(2, 1.0), 0.5, 0.25)
    reps = transfer_by_homeo(f, [fn for fn, _ in short_sequence], angle_field(), 0.5, math.inf,
                             domain=UNIT, resolution=128)
    for rep in reps:
        assert rep.within(1.1)


def test_transfer_rejects_low_integrability():
    f = rotation_about([0.5, 0.5], 0.3)
    with pytest.raises(HypothesisError):
        transfer_by_homeo(f, [], angle_field(), 0.5, 0.9, domain=UNIT)


def test_transfer_rejects_non_volume_preserving():
    class Squash:
        def jacobian(self, x):
            return np.broadcast_to(np.diag([2.0, 1.0]), (len(x), 2, 2))

    with pytest.raises(HypothesisError):
        transfer_by_homeo(Squash(), [], angle_field(), 0.5, math.inf, domain=UNIT)
