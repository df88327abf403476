"""Verification harness: volume census, convergence tables, constant fits,
inequality audits and the acceptance criteria.

Every routine takes an explicit seed; with a fixed seed all reported
numbers are reproducible bit for bit (timings are reported separately).
"""

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import DomainError, InfeasibleError
from .homeo1d import (PairCandidate1D, StaircaseParams, StepFunction1D, approximate_pair,
                      blend_constant, feasible_pair, from_callables, identity_homeo,
                      make_staircase, make_step_homeo, pipeline_step_error_bound,
                      tensor_staircase)
from .kernel import (BoxDomain, as_exponent, check_quasinorm_inequalities, fd_jacobian,
                     lp_norm_1d, sup_distance)
from .packing import vitali_pack
from .pipeline import RotationField, theorem_b_sequence
from .twist import (TwistProfile, bound_shape, localization_error, plane_rotation,
                    random_sod, rotation2, sod_block_decompose, twist_map)

TWO_PI = 2 * math.pi

# three-valued step function: 1/4 on [0, 2/5], 1/2 on [2/5, 3/5], 1/6 on [3/5, 1]
THREE_STEP = StepFunction1D([0.0, 0.4, 0.6, 1.0], [0.25, 0.5, 1.0 / 6.0])

# default check tolerances per command; run specs may override any of them
DEFAULT_TOLERANCES = {
    "staircase": {"sup_slack": 1e-9, "bound_slack": 1e-6},
    "approx1d": {},
    "twist": {"norm": 1e-12, "det": 1e-9, "fd": 1e-5, "roundtrip": 1e-10},
    "localize": {"exact": 1e-14, "det": 1e-9},
    "theoremb": {"det": 1e-9},
    "verify": {},
}


# ---------------------------------------------------------------------------
# volume census

@dataclass
class CensusReport:
    n_points: int
    max_dev: float
    frac_far: float
    mc_box: tuple
    mc_before: float
    mc_after: float
    mc_sigma: float
    tol: float = 1e-9

    @property
    def passed(self):
        return self.max_dev <= self.tol

    @property
    def mc_ok(self):
        return abs(self.mc_after - self.mc_before) <= 5 * self.mc_sigma + 1e-15


def volume_census(F, n_points=10_000, seed=0, domain=None, *, tol=1e-9, far=0.5,
                  mc_points=20_000):
    """Determinant census of ``F`` at seeded random interior points.

    Also estimates ``lambda(F^{-1}(B))`` for a random box ``B`` inside the
    inscribed ball of the domain's bounding box by counting sample points
    whose image falls in ``B``, and compares it with the count before the
    map.  The comparison is meaningful when ``F`` maps the domain onto itself
    or preserves that ball (twist maps about its center).
    """
    d = F.d
    if domain is None:
        domain = getattr(F, "domain", None) or BoxDomain([(-np.ones(d), np.ones(d))])
    rng = np.random.default_rng(seed)
    lo, hi = domain.bounding_box()
    x = lo + (hi - lo) * rng.random((n_points, d))
    x = x[domain.contains(x)]
    det = np.linalg.det(F.jacobian(x)) if len(x) else np.ones(0)
    dev = np.abs(det - 1.0)
    c = (lo + hi) / 2
    R = float(np.min(hi - lo)) / 2
    half = R / math.sqrt(d)
    side = rng.uniform(0.25, 0.5, d) * half
    b_lo = c - half + rng.random(d) * (2 * half - side)
    b_hi = b_lo + side
    cloud = lo + (hi - lo) * rng.random((mc_points, d))
    cloud = cloud[domain.contains(cloud)]
    vol = float(np.prod(hi - lo))

    def frac(pts):
        return float(np.mean(np.all((pts >= b_lo) & (pts <= b_hi), axis=1)))

    before = frac(cloud) * vol
    after = frac(np.asarray(F(cloud)).reshape(len(cloud), d)) * vol
    pb = before / vol
    sigma = math.sqrt(2 * max(pb * (1 - pb), 1.0 / len(cloud)) / len(cloud)) * vol
    return CensusReport(len(x), float(dev.max()) if len(dev) else 0.0,
                        float(np.mean(dev > far)) if len(dev) else 0.0,
                        (b_lo.tolist(), b_hi.tolist()), before, after, sigma, tol)


# ---------------------------------------------------------------------------
# convergence tables

@dataclass
class ConvergenceTable:
    """Rows of ``index, sup_dist, sup_bound, lp_err, lp_power, bound_power,
    quad_err, pass`` for one family and exponent."""

    family: str
    p: float
    rows: list = field(default_factory=list)

    COLUMNS = ("index", "sup_dist", "sup_bound", "lp_err", "lp_power", "bound_power",
               "quad_err", "pass")

    def add(self, index, sup_dist, lp, bound_power=None, sup_bound=None):
        if self.rows and index <= self.rows[-1]["index"]:
            raise DomainError("table indices must be strictly increasing")
        ok = True
        if bound_power is not None:
            ok &= lp.power <= bound_power + 2 * lp.power_error_estimate
        if sup_bound is not None:
            ok &= sup_dist <= sup_bound + 1e-9
        self.rows.append({"index": index, "sup_dist": sup_dist, "sup_bound": sup_bound,
                          "lp_err": lp.value, "lp_power": lp.power, "bound_power": bound_power,
                          "quad_err": lp.power_error_estimate, "pass": bool(ok)})

    @property
    def passed(self):
        return all(r["pass"] for r in self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows], float)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in self.COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def convergence_table_1d(family, p, indices, *, ramp="smooth", c=0.5, step=None, a_rule=None):
    """Errors of a one-dimensional family against its derivative target.

    ``family`` is ``"staircase"`` (target 0, bound ``(na)^(1-p)(nb)^p +
    (nb)^(1-p)(na)^p``), ``"blend"`` (``c Id + (1-c) f_n``, target ``c``,
    bound scaled by ``(1-c)^p``) or ``"step"`` (:func:`make_step_homeo`
    of ``step``, default the three-valued THREE_STEP, target the step function).
    """
    p = float(as_exponent(p))
    table = ConvergenceTable(family, p)
    for n in indices:
        a_n = a_rule(n) if a_rule is not None else None
        params = StaircaseParams(n, a_n, ramp)
        sb = params.bound_power(p)
        if family == "staircase":
            h = make_staircase(params)
            target = lambda x: np.zeros_like(x)
            bound, sup_bound = sb, 1.0 / n
        elif family == "blend":
            h = blend_constant(c, make_staircase(params))
            target = lambda x, c=c: np.full_like(x, c)
            bound, sup_bound = (1 - c) ** p * sb, (1 - c) / n
        elif family == "step":
            H = THREE_STEP if step is None else step
            h = make_step_homeo(H, n, ramp=ramp, a_n=a_n)
            target = H
            bound = pipeline_step_error_bound(H, n, p, ramp)[0]
            sup_bound = float(np.max(np.diff(H.partition) * (1 - H.values))) / n
        else:
            raise DomainError(f"unknown family {family!r}")
        sup = sup_distance(h, lambda x: x, h.interval, extra_points=h.breakpoints).value
        lp = lp_norm_1d(lambda x, h=h, t=target: h.deriv(x) - t(x), h.interval, p,
                        h.breakpoints)
        table.add(n, sup, lp, bound, sup_bound)
    return table


# ---------------------------------------------------------------------------
# localization constant

@dataclass
class FitResult:
    C1: float
    configs: list
    values: list
    ratios: list
    slope_r: float = None
    slope_r_stderr: float = None
    slope_sigma: float = None
    slope_sigma_stderr: float = None

    @property
    def max_ratio(self):
        return max(self.ratios)


def _slope(xs, ys):
    if len(set(xs)) < 2:
        return None, None
    if len(xs) == 2:
        return float((ys[1] - ys[0]) / (xs[1] - xs[0])), 0.0
    res = stats.linregress(xs, ys)
    return float(res.slope), float(res.stderr)


def fit_error_constant(configs, d=2, p=0.5, *, H=None, theta=math.pi / 2, method=None,
                       resolution=None):
    """Measure ``||DG - H||_{L^p(B)}`` over ``(r, s/r)`` configurations.

    ``C1`` is the largest ratio to ``r^(d/p) (1 - s/r)^((1-p)/p)``.  Slopes of
    ``log error`` against ``log r`` (largest group sharing ``s/r``) and against
    ``log(1 - s/r)`` (largest group sharing ``r``) are fitted when available.
    """
    configs = [(float(r), float(sg)) for r, sg in configs]
    if not configs:
        raise DomainError("configuration grid is empty")
    for r, sg in configs:
        if not (r > 0 and 0 < sg < 1):
            raise DomainError(f"need r > 0 and 0 < s/r < 1, got {(r, sg)}")
    if H is None:
        H = plane_rotation(d, theta)
    vals, ratios = [], []
    for r, sg in configs:
        v = localization_error(H, r, r * sg, p, method=method, resolution=resolution).value
        vals.append(v)
        ratios.append(v / bound_shape(d, p, r, r * sg))
    fit = FitResult(float(max(ratios)), configs, vals, ratios)

    def group(key):
        groups = {}
        for (r, sg), v in zip(configs, vals):
            groups.setdefault(round(key(r, sg), 12), []).append((r, sg, v))
        return max(groups.values(), key=len)

    if min(vals) <= 0.0:
        # zero error (H = I): log-log slopes are undefined
        return fit
    g = group(lambda r, sg: sg)
    fit.slope_r, fit.slope_r_stderr = _slope([math.log(a) for a, _, _ in g],
                                             [math.log(v) for _, _, v in g])
    g = group(lambda r, sg: r)
    fit.slope_sigma, fit.slope_sigma_stderr = _slope([math.log(1 - b) for _, b, _ in g],
                                                     [math.log(v) for _, _, v in g])
    return fit


# ---------------------------------------------------------------------------
# inequality audit

def random_piecewise_polynomial(rng, pieces=(2, 5), degree=3, scale=2.0):
    """Seeded piecewise polynomial on [0, 1] (jumps allowed at breakpoints)."""
    k = int(rng.integers(pieces[0], pieces[1] + 1))
    bps = np.sort(rng.uniform(0.05, 0.95, k - 1))
    edges = np.concatenate([[0.0], bps, [1.0]])
    coefs = rng.uniform(-scale, scale, (k, degree + 1))

    def f(x):
        x = np.asarray(x, float)
        i = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, k - 1)
        out = np.zeros_like(x)
        for j in range(degree, -1, -1):
            out = out * x + coefs[i, j]
        return out

    return f, bps


@dataclass
class AuditReport:
    n_checks: int
    failures: list
    min_slack: dict

    @property
    def passed(self):
        return not self.failures


def inequality_audit(n_pairs=100, ps=(0.3, 0.5, 0.8), qs=(1.0, 2.0), seed=0):
    """Both quasi-triangle inequalities and the ``L^q -> L^p`` embedding on
    seeded random piecewise-polynomial pairs, for every ``(p, q)``."""
    rng = np.random.default_rng(seed)
    failures, n = [], 0
    min_slack = {"sum_power": math.inf, "quasi": math.inf, "embed": math.inf}
    for k in range(n_pairs):
        f, bf = random_piecewise_polynomial(rng)
        g, bg = random_piecewise_polynomial(rng)
        bps = np.union1d(bf, bg)
        for p in ps:
            for q in qs:
                rep = check_quasinorm_inequalities(f, g, (0.0, 1.0), p, q, bps)
                n += 1
                min_slack["sum_power"] = min(min_slack["sum_power"], rep.slack_sum_power)
                min_slack["quasi"] = min(min_slack["quasi"], rep.slack_quasi)
                min_slack["embed"] = min(min_slack["embed"], min(rep.slack_embed))
                if not rep.ok:
                    failures.append({"pair": k, "p": p, "q": q, "violations": rep.violations})
    return AuditReport(n, failures, min_slack)


# ---------------------------------------------------------------------------
# acceptance criteria

@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict
    runtime_s: float = 0.0
    budget_s: float = None

    @property
    def in_budget(self):
        return self.budget_s is None or self.runtime_s < self.budget_s

    def line(self):
        status = "PASS" if self.passed and self.in_budget else "FAIL"
        t = f"{self.runtime_s:.1f}s" + (f" / {self.budget_s:g}s" if self.budget_s else "")
        return f"[{status}] criterion {self.number}: {self.name} ({t})"


def criterion_staircase(seed=0):
    rows, ok = [], True
    for n in (4, 16, 64, 256):
        params = StaircaseParams(n, 1.0 / n ** 2, "smooth")
        f = make_staircase(params)
        sup = sup_distance(f, lambda x: x, f.interval, extra_points=f.breakpoints).value
        lp = lp_norm_1d(f.deriv, f.interval, 0.5, f.breakpoints)
        bound = params.bound_power(0.5)
        r_ok = sup <= 1.0 / n and lp.power <= bound + 1e-6
        if n == 256:
            r_ok &= lp.value <= 0.02
        ok &= r_ok
        rows.append({"n": n, "sup": sup, "power": lp.power, "bound": bound, "norm": lp.value,
                     "ok": bool(r_ok)})
    return ok, {"rows": rows}


def criterion_pair_1d(seed=0):
    f = from_callables(lambda x: np.asarray(x, float) ** 2, lambda x: 2 * np.asarray(x, float),
                       inverse=lambda y: np.sqrt(np.asarray(y, float)),
                       inverse_deriv=lambda y: 0.5 / np.sqrt(np.asarray(y, float)), name="x^2")
    cand = PairCandidate1D(f, lambda x: np.asarray(x, float), p=0.5)
    h, rep = approximate_pair(cand, 0.05, sup_eps=0.02)
    ok = rep.converged and rep.sup_error <= 0.02 and rep.lp_error.value <= 0.05
    bad = PairCandidate1D(identity_homeo(), lambda x: np.full_like(np.asarray(x, float), 2.0))
    feas = feasible_pair(bad)
    try:
        approximate_pair(bad, 0.05)
        rejected, witness = False, None
    except InfeasibleError as exc:
        rejected, witness = True, exc.witness
    ok &= (not feas.feasible) and rejected and witness is not None
    return ok, {"n": rep.n, "sup": rep.sup_error, "lp": rep.lp_error.value,
                "step_cells": rep.step.N, "infeasible_witness": witness,
                "ratio_max": feas.ratio_max}


def criterion_twist(seed=0):
    rng = np.random.default_rng(seed)
    worst = {"norm": 0.0, "det": 0.0, "fd": 0.0, "roundtrip": 0.0}
    for d in (2, 3, 4):
        F = twist_map(TwistProfile.random(d // 2, rng), d)
        x = rng.uniform(-1, 1, (1000, d))
        y, J = F.value_and_jacobian(x)
        worst["norm"] = max(worst["norm"], float(np.max(np.abs(
            np.linalg.norm(y, axis=1) - np.linalg.norm(x, axis=1)))))
        worst["det"] = max(worst["det"], float(np.max(np.abs(np.linalg.det(J) - 1))))
        worst["fd"] = max(worst["fd"], float(np.max(np.abs(J - fd_jacobian(F.value, x, 1e-5)))))
        worst["roundtrip"] = max(worst["roundtrip"], float(np.max(
            np.linalg.norm(F.inverse(y) - x, axis=1))))
    ok = (worst["norm"] <= 1e-12 and worst["det"] <= 1e-9 and worst["fd"] <= 1e-5
          and worst["roundtrip"] <= 1e-10)
    return ok, worst


def criterion_localization(seed=0):
    d, p = 2, 0.5
    H = rotation2(math.pi / 2)
    ref = fit_error_constant([(0.25, 0.5)], d, p, H=H)
    C1 = ref.C1
    checks = []
    for r in (0.125, 0.0625):
        for sg in (0.75, 0.9):
            m = localization_error(H, r, r * sg, p)
            bound = C1 * r ** 4 * (1 - sg)
            checks.append({"r": r, "s_over_r": sg, "measured": m.value, "bound": bound,
                           "ok": bool(m.value <= bound + 2 * m.quad_error_estimate)})
    rfit = fit_error_constant([(0.25, 0.5), (0.125, 0.5), (0.0625, 0.5)], d, p, H=H)
    sfit = fit_error_constant([(0.25, 0.5), (0.25, 0.75), (0.25, 0.9)], d, p, H=H)
    slope_r_ok = abs(rfit.slope_r - d / p) <= 0.1 * d / p
    slope_s_ok = abs(sfit.slope_sigma - (1 - p) / p) <= 0.2 * (1 - p) / p
    ok = all(c["ok"] for c in checks) and slope_r_ok and slope_s_ok
    return ok, {"C1": C1, "checks": checks, "slope_r": rfit.slope_r,
                "slope_sigma": sfit.slope_sigma, "slope_r_ok": bool(slope_r_ok),
                "slope_sigma_ok": bool(slope_s_ok), "ratios_sigma": sfit.ratios}


def criterion_rotation_field(seed=0, resolution=512):
    dom = BoxDomain.unit(2)
    H = RotationField.planar_angle(dom, lambda x: math.pi * x[:, 0], name="R(pi x1)")
    seq = theorem_b_sequence(H, 0.5, [2, 4, 6], resolution=resolution, seed=seed)
    rows = []
    for f, L in seq:
        rows.append({"level": L.level, "sup": L.sup_dist, "lp": L.lp_err, "lp_power": L.lp.power,
                     "rhs": L.rhs_power, "tol": L.tolerance, "det_max_dev": L.det_max_dev,
                     "n_balls": L.n_balls, "det_ok": bool(L.det_ok), "sup_ok": bool(L.sup_ok),
                     "ineq_ok": bool(L.inequality_ok)})
    lps = [r["lp"] for r in rows]
    decreasing = all(b < a for a, b in zip(lps, lps[1:]))
    ok = decreasing and all(r["det_ok"] and r["sup_ok"] and r["ineq_ok"] for r in rows)
    return ok, {"rows": rows, "strictly_decreasing": bool(decreasing)}


def criterion_packing(seed=0):
    pk = vitali_pack(BoxDomain.unit(2), 0.1, 0.05)
    gap = pk.min_gap()
    grid = pk.residual_by_grid(2048)
    ok = gap > 0 and grid <= 0.05 and pk.containment_violations() == 0 \
        and float(2 * pk.radii.max()) <= 0.1
    return ok, {"n_balls": len(pk), "min_gap": gap, "residual_exact": pk.residual_measure_estimate,
                "residual_grid": grid}


def criterion_audit(seed=0):
    rep = inequality_audit(100, seed=seed)
    return rep.passed, {"checks": rep.n_checks, "failures": rep.failures[:5],
                        "min_slack": rep.min_slack}


def criterion_decomposition(seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for d in (3, 4):
        for _ in range(100):
            H = random_sod(d, rng)
            worst = max(worst, sod_block_decompose(H).residual(H))
    theta_err = 0.0
    for th in rng.uniform(0, TWO_PI, 100):
        ang = sod_block_decompose(rotation2(th)).angles[0]
        theta_err = max(theta_err, abs((ang - th + math.pi) % TWO_PI - math.pi))
    return worst <= 1e-8 and theta_err <= 1e-10, {"max_residual": worst, "theta_err": theta_err}


def criterion_negative_control(seed=0):
    F = tensor_staircase(StaircaseParams(64), 2)
    F.domain = BoxDomain.unit(2)
    rep = volume_census(F, 10_000, seed)
    ok = (not rep.passed) and rep.frac_far >= 0.5
    return ok, {"max_dev": rep.max_dev, "frac_far": rep.frac_far}


CRITERIA = {
    1: ("staircase bounds", criterion_staircase, 10),
    2: ("1D approximation pipeline", criterion_pair_1d, 30),
    3: ("twist-map suite", criterion_twist, 5),
    4: ("localization bound", criterion_localization, 60),
    5: ("rotation-field sequence", criterion_rotation_field, 300),
    6: ("ball packing", criterion_packing, 30),
    7: ("inequality audit", criterion_audit, 10),
    8: ("SO(d) decomposition", criterion_decomposition, 2),
    9: ("tensor staircase negative control", criterion_negative_control, None),
}


def run_criterion(number, seed=0):
    name, fn, budget = CRITERIA[number]
    t0 = time.perf_counter()
    ok, details = fn(seed)
    return CriterionResult(number, name, bool(ok), _jsonable(details),
                           time.perf_counter() - t0, budget)


def run_acceptance(numbers=None, seed=0):
    numbers = sorted(CRITERIA) if numbers is None else numbers
    return [run_criterion(k, seed) for k in numbers]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def summary_json(results, include_timings=False):
    """JSON summary with one entry per criterion; timings only on request so
    that repeated runs with the same seed compare byte for byte."""
    out = []
    for r in results:
        item = {"criterion": r.number, "name": r.name, "passed": r.passed,
                "details": r.details}
        if include_timings:
            item["runtime_s"] = r.runtime_s
            item["budget_s"] = r.budget_s
        out.append(item)
    return json.dumps({"passed": all(r.passed for r in results), "criteria": out},
                      indent=2, sort_keys=True)


__all__ = [
    "THREE_STEP", "CensusReport", "volume_census", "ConvergenceTable", "convergence_table_1d",
    "FitResult", "fit_error_constant", "random_piecewise_polynomial", "AuditReport",
    "inequality_audit", "CriterionResult", "CRITERIA", "run_criterion", "run_acceptance",
    "summary_json",
]
