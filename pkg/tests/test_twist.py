import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import special_ortho_group

from vphomeo.errors import DomainError
from vphomeo.kernel import fd_jacobian
from vphomeo.twist import (AffineRotation, LocalizedRotation, TwistProfile, bound_shape,
                           check_sod, fit_c1, jump_eval, localization_error,
                           localization_error_bound, plane_rotation, random_sod,
                           sod_block_decompose, twist_map)


def test_jump_values():
    assert jump_eval(0.0) == (1.0, 0.0)
    assert jump_eval(1.0) == (0.0, 0.0)
    J, dJ = jump_eval(0.5)
    assert J == pytest.approx(0.5) and dJ == pytest.approx(-2.0)
    t = np.linspace(-1, 2, 301)
    assert np.all(np.diff(jump_eval(t)[0]) <= 0)


def _points(d, n=200, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, (n, d))


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_random_twist_invariants(d):
    rng = np.random.default_rng(d)
    F = twist_map(TwistProfile.random(d // 2, rng), d)
    x = _points(d)
    y, J = F.value_and_jacobian(x)
    assert np.max(np.abs(np.linalg.norm(y, axis=1) - np.linalg.norm(x, axis=1))) <= 1e-12
    assert np.max(np.abs(np.linalg.det(J) - 1)) <= 1e-9
    assert np.max(np.abs(J - fd_jacobian(F.value, x, 1e-5))) <= 1e-5
    assert np.max(np.linalg.norm(F.inverse(y) - x, axis=1)) <= 1e-10


def test_zero_profile_is_identity():
    F = twist_map(TwistProfile.zero(2), 4)
    x = _points(4)
    y, J = F.value_and_jacobian(x)
    assert np.array_equal(y, x)
    assert np.array_equal(J, np.broadcast_to(np.eye(4), J.shape))


@pytest.mark.parametrize("thetas", [[0.3], [math.pi / 2, -1.0]])
def test_constant_profile_is_fixed_rotation(thetas):
    d = 2 * len(thetas) + 1
    F = twist_map(TwistProfile.constant(thetas), d)
    R = np.eye(d)
    for j, th in enumerate(thetas):
        R = R @ plane_rotation(d, th, 2 * j, 2 * j + 1)
    x = _points(d)
    assert np.allclose(F(x), x @ R.T, atol=1e-15)


def test_twist_rejects_too_many_planes():
    with pytest.raises(DomainError):
        twist_map(TwistProfile.zero(2), 3)


@pytest.mark.parametrize("d", [2, 3, 4, 6])
def test_random_sod_is_rotation(d):
    H = random_sod(d, np.random.default_rng(d))
    assert check_sod(H) is not None


def test_check_sod_rejects_reflection():
    with pytest.raises(DomainError):
        check_sod(np.diag([1.0, -1.0]))
    with pytest.raises(DomainError):
        check_sod(np.ones((2, 3)))


@pytest.mark.parametrize("d", [2, 3, 4, 5, 6])
def test_block_decomposition_reconstructs_scipy_rotations(d):
    # independent sampler for the inputs
    for H in special_ortho_group.rvs(d, size=20, random_state=d):
        dec = sod_block_decompose(H)
        assert dec.residual(H) <= 1e-8
        assert np.allclose(dec.Q.T @ dec.Q, np.eye(d), atol=1e-12)
        assert np.linalg.det(dec.Q) == pytest.approx(1.0)
        assert len(dec.padded_angles()) == d // 2


@given(theta=st.floats(-2 * math.pi, 2 * math.pi))
@settings(max_examples=50, deadline=None)
def test_planar_angle_recovered(theta):
    H = plane_rotation(2, theta)
    # Q lies in SO(2) and commutes with the block, so the angle is theta itself
    ang = sod_block_decompose(H).padded_angles()[0]
    assert math.remainder(ang - theta, 2 * math.pi) == pytest.approx(0.0, abs=1e-10)


def test_decompose_half_turns_and_identity():
    H = np.diag([-1.0, -1.0, 1.0, -1.0, -1.0])
    dec = sod_block_decompose(H)
    assert dec.residual(H) <= 1e-12
    assert np.allclose(sorted(dec.angles), [math.pi, math.pi])
    dec = sod_block_decompose(np.eye(3))
    assert dec.m == 0 and dec.identity_size == 3


def test_affine_rotation_inverse():
    H = random_sod(3, np.random.default_rng(1))
    F = AffineRotation(H, center=[0.5, 0.5, 0.5])
    x = _points(3)
    assert np.allclose(F.inverse(F(x)), x, atol=1e-14)


def test_localized_rotation_two_regions():
    a = np.array([0.5, 0.5])
    H = plane_rotation(2, math.pi / 2)
    G = LocalizedRotation(a, H, 0.25, 0.125)
    assert np.allclose(G(np.array([0.6, 0.5])), [0.5, 0.6], atol=1e-15)
    assert np.array_equal(G(np.array([0.8, 0.5])), [0.8, 0.5])
    rng = np.random.default_rng(0)
    u = rng.standard_normal((500, 2))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    inner = a + rng.uniform(0, 0.125, 500)[:, None] * u
    outer = a + rng.uniform(0.25, 1, 500)[:, None] * u
    assert np.max(np.abs(G(inner) - (a + (inner - a) @ H.T))) <= 1e-14
    assert np.array_equal(G(outer), outer)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_localized_rotation_annulus_invariants(d):
    rng = np.random.default_rng(10 + d)
    H = random_sod(d, rng)
    a = rng.random(d)
    G = LocalizedRotation(a, H, 0.3, 0.1)
    u = rng.standard_normal((400, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    x = a + rng.uniform(0.11, 0.29, 400)[:, None] * u
    y, J = G.value_and_jacobian(x)
    assert np.allclose(np.linalg.norm(y - a, axis=1), np.linalg.norm(x - a, axis=1),
                       atol=1e-14)
    assert np.max(np.abs(np.linalg.det(J) - 1)) <= 1e-9
    assert np.max(np.abs(J - fd_jacobian(G.value, x, 1e-6))) <= 1e-4
    assert np.max(np.abs(G.inverse(y) - x)) <= 1e-12


def test_localized_rotation_identity_matrix_is_identity():
    G = LocalizedRotation([0, 0], np.eye(2), 1.0, 0.5)
    x = _points(2)
    assert np.allclose(G(x), x, atol=1e-15)


def test_localization_error_polar_matches_grid():
    H = plane_rotation(2, math.pi / 2)
    polar = localization_error(H, 0.25, 0.125, 0.5, method="polar", resolution=128)
    grid = localization_error(H, 0.25, 0.125, 0.5, method="grid", resolution=256)
    assert polar.value == pytest.approx(grid.value, rel=1e-3)


def test_localization_error_scales_like_r_to_d_over_p():
    H = plane_rotation(2, 1.0)
    e1 = localization_error(H, 0.5, 0.25, 0.5, resolution=128).value
    e2 = localization_error(H, 0.25, 0.125, 0.5, resolution=128).value
    assert e1 / e2 == pytest.approx(2.0 ** 4, rel=1e-9)


def test_error_bound_shape_and_validation():
    assert localization_error_bound(2, 0.5, 0.5, 0.25, 2.0) == pytest.approx(
        2.0 * bound_shape(2, 0.5, 0.5, 0.25))
    with pytest.raises(DomainError):
        localization_error_bound(2, 1.0, 0.5, 0.25, 1.0)
    with pytest.raises(DomainError):
        localization_error_bound(2, 0.5, 0.5, 0.6, 1.0)


def test_fit_c1_is_max_ratio():
    C1, ratios = fit_c1(plane_rotation(2, math.pi / 2), 0.5, sigmas=(0.5, 0.75), resolution=64)
    assert C1 == ratios.max() and len(ratios) == 2
