import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from vphomeo.errors import DomainError, InfeasibleError
from vphomeo.homeo1d import (PairCandidate1D, RampSpec, StaircaseParams, StepFunction1D,
                             approximate_pair, blend_constant, build_from_json, feasible_pair,
                             from_callables, identity_homeo, make_ramp, make_staircase,
                             make_step_homeo, pipeline_step_error_bound, tensor_staircase,
                             transfer_compose)
from vphomeo.kernel import lp_norm_1d, sup_distance


@pytest.mark.parametrize("kind", ["poly", "smooth", "linear"])
def test_ramp_endpoints_and_monotone(kind):
    g = make_ramp(RampSpec(kind, 0.2, 0.5))
    x = np.linspace(0, 0.2, 1001)
    y = g(x)
    assert y[0] == 0.0 and y[-1] == pytest.approx(0.5, abs=1e-15)
    assert np.all(np.diff(y) >= 0)


@pytest.mark.parametrize("kind", ["poly", "smooth", "linear"])
def test_ramp_derivative_integrates_to_height(kind):
    g = make_ramp(RampSpec(kind, 0.2, 0.5))
    total, _ = integrate.quad(lambda x: float(g.deriv(np.array([x]))[0]), 0, 0.2, limit=200)
    assert total == pytest.approx(0.5, rel=1e-8)


def test_ramp_rejects_unknown_kind():
    with pytest.raises(DomainError):
        RampSpec("cosine", 1.0, 1.0)


def test_staircase_params_validation():
    with pytest.raises(DomainError):
        StaircaseParams(4, 0.25)
    with pytest.raises(DomainError):
        StaircaseParams(0)
    assert StaircaseParams(5).a_n == pytest.approx(1 / 25)


def test_staircase_single_cell():
    f = make_staircase(StaircaseParams(1, 0.5, "linear"))
    assert f(np.array([0.0, 0.25, 0.5, 1.0])) == pytest.approx([0, 0.25, 0.5, 1.0])
    assert f.is_increasing()


def test_poly_staircase_n3_closed_form_pieces():
    f = make_staircase(StaircaseParams(3, 1 / 9, "poly"))
    x1 = np.linspace(0, 1 / 9, 50)
    x2 = np.linspace(1 / 9, 1 / 3, 50)
    x3 = np.linspace(1 / 3, 4 / 9, 50)
    assert np.allclose(f(x1), 54 * x1**2 * (1 - 6 * x1), atol=1e-14)
    assert np.allclose(f(x2), -9 / 4 * x2 * (3 * x2 - 1) ** 2 + 1 / 3, atol=1e-14)
    assert np.allclose(f(x3), 6 * (3 * x3 - 1) ** 2 * (3 - 6 * x3) + 1 / 3, atol=1e-14)


@pytest.mark.parametrize("ramp", ["poly", "smooth", "linear"])
@pytest.mark.parametrize("n", [2, 5, 17])
def test_staircase_fixes_grid_and_stays_close(ramp, n):
    f = make_staircase(StaircaseParams(n, ramp=ramp))
    k = np.arange(n + 1) / n
    assert np.array_equal(f(k), k)
    assert sup_distance(f, lambda x: x, (0, 1), extra_points=f.breakpoints).value <= 1 / n
    assert f.is_increasing()


@pytest.mark.parametrize("n", [4, 16])
@pytest.mark.parametrize("p", [0.3, 0.5, 0.8])
def test_staircase_power_within_bound(n, p):
    params = StaircaseParams(n, ramp="smooth")
    f = make_staircase(params)
    res = lp_norm_1d(f.deriv, (0, 1), p, f.breakpoints)
    assert res.power <= params.bound_power(p) + 2 * res.power_error_estimate


def test_linear_staircase_power_is_exact():
    # piecewise-constant derivative: the bound is an identity
    params = StaircaseParams(8, 1 / 64, "linear")
    f = make_staircase(params)
    res = lp_norm_1d(f.deriv, (0, 1), 0.5, f.breakpoints)
    assert res.power == pytest.approx(params.bound_power(0.5), rel=1e-12)


def test_staircase_inverse_roundtrip():
    f = make_staircase(StaircaseParams(6, ramp="poly"))
    x = np.linspace(0, 1, 333)
    assert np.allclose(f.inverse(f(x)), x, atol=1e-10)


@given(c=st.floats(0, 1), n=st.integers(2, 40))
@settings(max_examples=30, deadline=None)
def test_blend_constant_sup_bound(c, n):
    h = blend_constant(c, make_staircase(StaircaseParams(n, ramp="linear")))
    sup = sup_distance(h, lambda x: x, (0, 1), extra_points=h.breakpoints).value
    assert sup <= (1 - c) / n + 1e-12


def test_blend_rejects_weight_outside_unit():
    with pytest.raises(DomainError):
        blend_constant(1.5, identity_homeo())


def test_step_function_validation_and_eval():
    H = StepFunction1D([0, 0.4, 0.6, 1], [0.25, 0.5, 1 / 6])
    assert H(np.array([0.1, 0.5, 0.9])) == pytest.approx([0.25, 0.5, 1 / 6])
    with pytest.raises(DomainError):
        StepFunction1D([0, 0.5, 0.4], [1, 1])
    with pytest.raises(DomainError):
        StepFunction1D([0, 1], [1, 2])


def test_step_homeo_fixes_partition_and_bounds_error():
    H = StepFunction1D([0, 0.4, 0.6, 1], [0.25, 0.5, 1 / 6])
    phi = make_step_homeo(H, 16, ramp="linear")
    assert np.array_equal(phi(H.partition), H.partition)
    res = lp_norm_1d(lambda x: phi.deriv(x) - H(x), (0, 1), 0.5, phi.breakpoints)
    bound = pipeline_step_error_bound(H, 16, 0.5, "linear")[0]
    assert res.power <= bound + 2 * res.power_error_estimate


def test_step_homeo_rejects_value_above_one():
    with pytest.raises(InfeasibleError) as exc:
        make_step_homeo(StepFunction1D([0, 0.5, 1], [0.5, 1.5]), 4)
    assert 0.5 <= exc.value.witness <= 1


def test_transfer_compose_transports_sup_distance():
    g = make_staircase(StaircaseParams(8, ramp="poly"))
    phi = from_callables(lambda x: x**2, lambda x: 2 * x, inverse=np.sqrt,
                         inverse_deriv=lambda y: 0.5 / np.sqrt(np.maximum(y, 1e-300)))
    h = transfer_compose(g, phi)
    y = np.linspace(0, 1, 2001)
    assert np.allclose(h(y), g(np.sqrt(y)), atol=1e-14)
    lhs = np.max(np.abs(h(y) - np.sqrt(y)))
    rhs = np.max(np.abs(g(np.sqrt(y)) - np.sqrt(y)))
    assert lhs == pytest.approx(rhs, abs=1e-14)


def test_feasibility_identity_pairs():
    f = identity_homeo()
    assert feasible_pair(PairCandidate1D(f, lambda x: np.ones_like(x)))
    bad = feasible_pair(PairCandidate1D(f, lambda x: np.full_like(x, 2.0)))
    assert not bad and 0 <= bad.witness <= 1


def test_approximate_pair_identity_one_is_trivial():
    h, rep = approximate_pair(PairCandidate1D(identity_homeo(), lambda x: np.ones_like(x)), 0.01)
    assert rep.converged and rep.sup_error == 0.0 and rep.lp_error.value == 0.0


def test_approximate_pair_rejects_identity_two():
    cand = PairCandidate1D(identity_homeo(), lambda x: np.full_like(x, 2.0))
    with pytest.raises(InfeasibleError) as exc:
        approximate_pair(cand, 0.05)
    assert exc.value.witness is not None


def test_approximate_pair_square_and_half():
    f = from_callables(lambda x: x**2, lambda x: 2 * x)
    cand = PairCandidate1D(f, lambda x: 0.5 * (2 * x))
    h, rep = approximate_pair(cand, 0.1, sup_eps=0.05)
    assert rep.converged
    assert rep.sup_error <= 0.05 and rep.lp_error.value <= 0.1
    # independent check of the reported errors
    assert sup_distance(h, f, (0, 1), extra_points=h.breakpoints).value == pytest.approx(
        rep.sup_error)


def test_pair_rejects_r_at_most_one():
    with pytest.raises(DomainError):
        PairCandidate1D(identity_homeo(), np.ones_like, r=1.0)


def test_tensor_staircase_diagonal_jacobian():
    F = tensor_staircase(StaircaseParams(4, ramp="poly"), 2)
    x = np.random.default_rng(0).random((20, 2))
    J = F.jacobian(x)
    assert np.allclose(J[:, 0, 1], 0) and np.allclose(J[:, 1, 0], 0)
    assert np.allclose(F(x)[:, 0], F.f(x[:, 0]))


def test_build_from_json_roundtrip():
    f = build_from_json(json.dumps({"n": 3, "a_n": 1 / 9, "ramp": "poly"}))
    g = make_staircase(StaircaseParams(3, 1 / 9, "poly"))
    x = np.linspace(0, 1, 101)
    assert np.array_equal(f(x), g(x))
    phi = build_from_json({"n": 4, "partition": [0, 0.5, 1], "values": [0.5, 1.0]})
    assert phi(np.array([0.5]))[0] == 0.5
    with pytest.raises(DomainError):
        build_from_json({"n": 3, "colour": "red"})
