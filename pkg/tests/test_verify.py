import json
import math

import numpy as np
import pytest

from vphomeo.errors import DomainError
from vphomeo.homeo1d import StaircaseParams, tensor_staircase
from vphomeo.kernel import BoxDomain, lp_norm_1d
from vphomeo.twist import TwistProfile, plane_rotation, twist_map
from vphomeo.verify import (CRITERIA, THREE_STEP, ConvergenceTable, convergence_table_1d,
                            fit_error_constant, inequality_audit, random_piecewise_polynomial,
                            run_acceptance, run_criterion, summary_json, volume_census)


def test_census_passes_for_twist():
    F = twist_map(TwistProfile.random(1, np.random.default_rng(0)), 2)
    rep = volume_census(F, 2000, seed=1)
    assert rep.passed and rep.mc_ok
    assert rep.max_dev <= 1e-9 and rep.frac_far == 0.0


def test_census_flags_tensor_staircase():
    F = tensor_staircase(StaircaseParams(16), 2)
    F.domain = BoxDomain.unit(2)
    rep = volume_census(F, 2000, seed=0)
    assert not rep.passed and rep.frac_far >= 0.5


@pytest.mark.parametrize("family", ["staircase", "blend", "step"])
def test_convergence_tables_pass_their_bounds(family):
    table = convergence_table_1d(family, 0.5, [4, 8, 16], ramp="poly")
    assert table.passed
    lp = table.column("lp_err")
    assert np.all(np.diff(lp) < 0)


def test_convergence_table_csv_is_stable(tmp_path):
    t1 = convergence_table_1d("staircase", 0.5, [2, 4])
    t2 = convergence_table_1d("staircase", 0.5, [2, 4])
    assert t1.to_csv() == t2.to_csv()
    assert t1.to_csv().splitlines()[0] == ",".join(ConvergenceTable.COLUMNS)


def test_convergence_table_requires_increasing_index():
    t = convergence_table_1d("staircase", 0.5, [4])
    lp = lp_norm_1d(lambda x: x, (0, 1), 0.5)
    with pytest.raises(DomainError):
        t.add(2, 0.0, lp)


def test_three_step_error_decreases():
    # partition (0, .4, .6, 1) with values 1/4, 1/2, 1/6
    assert THREE_STEP.N == 3
    table = convergence_table_1d("step", 0.5, [2, 4, 8, 16], ramp="smooth")
    assert table.passed and np.all(np.diff(table.column("lp_power")) < 0)


def test_fit_error_constant_slopes():
    fit = fit_error_constant([(0.25, 0.5), (0.125, 0.5)], 2, 0.5, H=plane_rotation(2, 1.0),
                             resolution=128)
    assert fit.slope_r == pytest.approx(4.0, rel=1e-6)
    assert fit.C1 == pytest.approx(fit.max_ratio)
    with pytest.raises(DomainError):
        fit_error_constant([(0.25, 1.0)])


def test_random_piecewise_polynomial_is_seeded():
    f1, b1 = random_piecewise_polynomial(np.random.default_rng(3))
    f2, b2 = random_piecewise_polynomial(np.random.default_rng(3))
    x = np.linspace(0, 1, 50)
    assert np.array_equal(f1(x), f2(x)) and np.array_equal(b1, b2)


def test_inequality_audit_small():
    rep = inequality_audit(5, seed=4)
    assert rep.passed and rep.n_checks == 30
    assert min(rep.min_slack.values()) >= -1e-9


def test_empty_acceptance_suite():
    assert run_acceptance([]) == []
    assert json.loads(summary_json([])) == {"criteria": [], "passed": True}


def test_summary_json_is_repeatable():
    a = summary_json([run_criterion(8, seed=2)])
    b = summary_json([run_criterion(8, seed=2)])
    assert a == b and "runtime_s" not in a
    assert "runtime_s" in summary_json([run_criterion(8, seed=2)], include_timings=True)


def test_criterion_table_is_complete():
    assert sorted(CRITERIA) == list(range(1, 10))
