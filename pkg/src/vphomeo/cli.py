"""Command-line front end: build, verify and export from JSON run specs.

Every subcommand reads ``--spec`` (a JSON object; unknown keys are
rejected), writes its files into ``--out`` and a ``summary.json`` with one
entry per check.  The exit code is 0 exactly when every check passes.
Apart from wall-clock fields (``runtime_ms`` columns and ``timings.json``),
outputs are byte-identical for identical specs and seeds.
"""

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from .errors import InfeasibleError, VPHomeoError
from .homeo1d import (PairCandidate1D, StaircaseParams, approximate_pair, feasible_pair,
                      from_callables, make_staircase)
from .kernel import BoxDomain, SampledMap, fd_jacobian, sample_map
from .pipeline import RotationField, theorem_b_sequence
from .twist import (LocalizedRotation, TwistProfile, bound_shape, check_sod, localization_error,
                    localization_error_bound, plane_rotation, twist_map)
from .verify import (CRITERIA, DEFAULT_TOLERANCES, ConvergenceTable, convergence_table_1d,
                     fit_error_constant, run_acceptance, summary_json, volume_census)


class SpecError(VPHomeoError, ValueError):
    """Malformed run spec."""


COMMON_KEYS = {"seed", "tolerances"}


def _validate(spec, allowed, tol_defaults):
    if not isinstance(spec, dict):
        raise SpecError("run spec must be a JSON object")
    unknown = set(spec) - allowed - COMMON_KEYS
    if unknown:
        raise SpecError(f"unknown keys: {sorted(unknown)}")
    tols = dict(tol_defaults)
    over = spec.get("tolerances", {})
    bad = set(over) - set(tols)
    if bad:
        raise SpecError(f"unknown tolerances: {sorted(bad)}")
    tols.update({k: float(v) for k, v in over.items()})
    return tols


class Run:
    """Collects checks and output files for one command."""

    def __init__(self, command, out, emit):
        self.command = command
        self.out = out
        self.emit = emit
        self.checks = []
        self.extra = {}
        self.timings = {}
        os.makedirs(out, exist_ok=True)

    def check(self, name, value, limit, ok=None, relation="<="):
        if ok is None:
            ok = value <= limit if relation == "<=" else value >= limit
        self.checks.append({"name": name, "value": _plain(value), "limit": _plain(limit),
                            "relation": relation, "passed": bool(ok)})
        return ok

    def path(self, name):
        return os.path.join(self.out, name)

    def write_table(self, stem, columns, rows):
        """Rows as CSV (``--emit csv``) or a JSON list of objects."""
        if self.emit == "json":
            with open(self.path(stem + ".json"), "w") as fh:
                json.dump([dict(zip(columns, map(_plain, r))) for r in rows], fh, indent=2,
                          sort_keys=True)
                fh.write("\n")
            return
        with open(self.path(stem + ".csv"), "w") as fh:
            fh.write(",".join(columns) + "\n")
            for r in rows:
                fh.write(",".join(_cell(v) for v in r) + "\n")

    def write_convergence(self, stem, table):
        rows = [[r[c] for c in ConvergenceTable.COLUMNS] for r in table.rows]
        self.write_table(stem, ConvergenceTable.COLUMNS, rows)

    def finish(self):
        passed = all(c["passed"] for c in self.checks)
        summary = {"command": self.command, "passed": passed, "checks": self.checks,
                   "failures": [c["name"] for c in self.checks if not c["passed"]]}
        summary.update(self.extra)
        with open(self.path("summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if self.timings:
            with open(self.path("timings.json"), "w") as fh:
                json.dump(self.timings, fh, indent=2, sort_keys=True)
                fh.write("\n")
        return passed


def _plain(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _expr(text, names):
    """Vectorized numpy function from a sympy expression in ``names``."""
    import sympy

    syms = sympy.symbols(names)
    syms = syms if isinstance(syms, tuple) else (syms,)
    local = {n: s for n, s in zip(names.split(), syms)}
    try:
        e = sympy.sympify(text, locals=local)
    except (sympy.SympifyError, TypeError) as exc:
        raise SpecError(f"cannot parse expression {text!r}: {exc}") from exc
    extra = e.free_symbols - set(syms)
    if extra:
        raise SpecError(f"expression {text!r} uses unknown symbols {sorted(map(str, extra))}")
    return e, syms


def _lambdify(e, syms):
    import sympy

    fn = sympy.lambdify(syms, e, "numpy")

    def call(*args):
        out = fn(*args)
        return np.broadcast_to(np.asarray(out, float), np.broadcast(*args).shape).copy()

    return call


# ---------------------------------------------------------------------------
# subcommands

def cmd_staircase(spec, run, seed):
    tols = _validate(spec, {"n", "ns", "a_n", "ramp", "p", "samples"},
                     DEFAULT_TOLERANCES["staircase"])
    ramp = spec.get("ramp", "smooth")
    p = float(spec.get("p", 0.5))
    ns = [int(n) for n in spec.get("ns", [spec.get("n", 4)])]
    a_n = spec.get("a_n")
    samples = int(spec.get("samples", 257))
    for n in ns:
        params = StaircaseParams(n, a_n, ramp)
        f = make_staircase(params)
        x = np.union1d(np.linspace(0, 1, samples), f.breakpoints)
        sample_map(f, x, f.deriv).to_csv(run.path(f"staircase_n{n}.csv"))
    rule = (lambda n: float(a_n)) if a_n is not None else None
    table = convergence_table_1d("staircase", p, ns, ramp=ramp, a_rule=rule)
    run.write_convergence("table", table)
    for r in table.rows:
        run.check(f"sup_dist[n={r['index']}]", r["sup_dist"], r["sup_bound"] + tols["sup_slack"])
        run.check(f"lp_power[n={r['index']}]", r["lp_power"],
                  r["bound_power"] + 2 * r["quad_err"] + tols["bound_slack"])


def cmd_approx1d(spec, run, seed):
    _validate(spec, {"f", "F", "p", "r", "eps", "sup_eps", "n_start", "n_max", "ramp",
                            "samples", "expect"}, DEFAULT_TOLERANCES["approx1d"])
    ef, (x,) = _expr(spec.get("f", "x"), "x")
    eF, _ = _expr(str(spec.get("F", "1")), "x")
    import sympy

    f_val = _lambdify(ef, (x,))
    f_der = _lambdify(sympy.diff(ef, x), (x,))
    F_val = _lambdify(eF, (x,))
    f = from_callables(f_val, f_der, name=str(ef))
    cand = PairCandidate1D(f, F_val, p=float(spec.get("p", 0.5)), r=float(spec.get("r", 1.5)))
    expect = spec.get("expect", "feasible")
    if expect not in ("feasible", "infeasible"):
        raise SpecError("expect must be 'feasible' or 'infeasible'")
    feas = feasible_pair(cand)
    run.extra["feasibility"] = {"feasible": feas.feasible, "witness": feas.witness,
                                "ratio_min": feas.ratio_min, "ratio_max": feas.ratio_max}
    eps = float(spec.get("eps", 0.05))
    sup_eps = float(spec.get("sup_eps", eps))
    try:
        h, rep = approximate_pair(cand, eps, n_start=int(spec.get("n_start", 8)),
                                  n_max=int(spec.get("n_max", 4096)),
                                  ramp=spec.get("ramp", "smooth"), sup_eps=sup_eps)
    except InfeasibleError as exc:
        run.extra["rejection"] = {"reason": str(exc), "witness": exc.witness}
        run.check("rejected_as_expected", expect == "infeasible", True,
                  ok=expect == "infeasible", relation="==")
        return
    run.check("accepted_as_expected", expect == "feasible", True, ok=expect == "feasible",
              relation="==")
    xs = np.union1d(np.linspace(0, 1, int(spec.get("samples", 257))), h.breakpoints)
    sample_map(h, xs, h.deriv).to_csv(run.path("approximant.csv"))
    run.write_table("history", ("n", "sup_dist", "lp_err"), rep.history)
    run.extra["result"] = {"n": rep.n, "step_cells": rep.step.N, "step_l1": rep.step_l1_error}
    run.check("sup_dist", rep.sup_error, sup_eps)
    run.check("lp_err", rep.lp_error.value, eps)


def _profile(obj, d, rng):
    kind = obj.get("kind", "random")
    m = int(obj.get("m", d // 2))
    if kind == "zero":
        return TwistProfile.zero(m)
    if kind == "constant":
        return TwistProfile.constant(obj["thetas"])
    if kind == "localized":
        return TwistProfile.localized(obj["thetas"], float(obj["r"]), float(obj["s"]))
    if kind == "random":
        return TwistProfile.random(m, rng)
    raise SpecError(f"unknown profile kind {kind!r}")


def cmd_twist(spec, run, seed):
    tols = _validate(spec, {"d", "profile", "n_points", "box"}, DEFAULT_TOLERANCES["twist"])
    d = int(spec.get("d", 2))
    rng = np.random.default_rng(seed)
    prof_spec = spec.get("profile", {"kind": "random"})
    bad = set(prof_spec) - {"kind", "m", "thetas", "r", "s"}
    if bad:
        raise SpecError(f"unknown profile keys: {sorted(bad)}")
    F = twist_map(_profile(prof_spec, d, rng), d)
    n = int(spec.get("n_points", 1000))
    half = float(spec.get("box", 1.0))
    x = rng.uniform(-half, half, (n, d))
    y, J = F.value_and_jacobian(x)
    SampledMap(x, y, J).to_csv(run.path("samples.csv"))
    run.check("norm_preservation", float(np.max(np.abs(np.linalg.norm(y, axis=1)
                                                       - np.linalg.norm(x, axis=1)))),
              tols["norm"])
    run.check("det", float(np.max(np.abs(np.linalg.det(J) - 1))), tols["det"])
    run.check("fd_jacobian", float(np.max(np.abs(J - fd_jacobian(F.value, x, 1e-5)))), tols["fd"])
    run.check("roundtrip", float(np.max(np.linalg.norm(F.inverse(y) - x, axis=1))),
              tols["roundtrip"])
    if prof_spec.get("kind") == "constant":
        R = np.eye(d)
        for j, th in enumerate(prof_spec["thetas"]):
            R = R @ plane_rotation(d, float(th), 2 * j, 2 * j + 1)
        run.check("fixed_rotation", float(np.max(np.abs(y - x @ R.T))), tols["norm"] * 10)
    cen = volume_census(F, n, seed)
    run.extra["census"] = {"max_dev": cen.max_dev, "mc_before": cen.mc_before,
                           "mc_after": cen.mc_after, "mc_sigma": cen.mc_sigma}
    run.check("census_mc", abs(cen.mc_after - cen.mc_before), 5 * cen.mc_sigma, ok=cen.mc_ok)


def cmd_localize(spec, run, seed):
    tols = _validate(spec, {"d", "theta", "H", "center", "r", "s", "p", "fit", "checks",
                            "n_points"}, DEFAULT_TOLERANCES["localize"])
    d = int(spec.get("d", 2))
    H = (check_sod(np.array(spec["H"], float)) if "H" in spec
         else plane_rotation(d, float(spec.get("theta", math.pi / 2))))
    d = H.shape[0]
    a = np.asarray(spec.get("center", [0.0] * d), float)
    r, s = float(spec.get("r", 0.25)), float(spec.get("s", 0.1875))
    p = float(spec.get("p", 0.5))
    G = LocalizedRotation(a, H, r, s)
    rng = np.random.default_rng(seed)
    n = int(spec.get("n_points", 2000))
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rho = rng.uniform(0, 2 * r, n)
    x = a + rho[:, None] * u
    y, J = G.value_and_jacobian(x)
    SampledMap(x, y, J).to_csv(run.path("samples.csv"))
    inner, outer = rho <= s, rho >= r
    ring = ~inner & ~outer
    run.check("identity_outside", float(np.max(np.abs(y[outer] - x[outer]), initial=0.0)),
              tols["exact"])
    run.check("rotation_inside", float(np.max(np.abs(y[inner] - (a + (x[inner] - a) @ H.T)),
                                              initial=0.0)), tols["exact"])
    run.check("det_annulus", float(np.max(np.abs(np.linalg.det(J[ring]) - 1), initial=0.0)),
              tols["det"])
    fit_cfg = spec.get("fit", {"configs": [[0.25, 0.5]]})
    if set(fit_cfg) - {"configs"}:
        raise SpecError("fit accepts only 'configs'")
    fit = fit_error_constant(fit_cfg["configs"], d, p, H=H)
    rows = [(cr, cs, v, bound_shape(d, p, cr, cr * cs), rt)
            for (cr, cs), v, rt in zip(fit.configs, fit.values, fit.ratios)]
    run.write_table("fit", ("r", "s_over_r", "measured", "shape", "ratio"), rows)
    run.extra["fit"] = {"C1": fit.C1, "slope_r": fit.slope_r, "slope_sigma": fit.slope_sigma}
    checks = []
    for cr, cs in spec.get("checks", []):
        m = localization_error(H, float(cr), float(cr) * float(cs), p)
        b = localization_error_bound(d, p, float(cr), float(cr) * float(cs), fit.C1)
        checks.append((cr, cs, m.value, b, m.quad_error_estimate))
        run.check(f"bound[r={cr},s/r={cs}]", m.value, b + 2 * m.quad_error_estimate)
    if checks:
        run.write_table("checks", ("r", "s_over_r", "measured", "bound", "quad_err"), checks)


def _field(obj, domain):
    kind = obj.get("kind", "closed-form")
    if kind == "closed-form":
        bad = set(obj) - {"kind", "angle", "matrix"}
        if bad:
            raise SpecError(f"unknown field keys: {sorted(bad)}")
        if domain.d == 2 and "angle" in obj:
            e, syms = _expr(str(obj["angle"]), "x1 x2")
            fn = _lambdify(e, syms)
            return RotationField.planar_angle(domain, lambda x: fn(x[:, 0], x[:, 1]),
                                              name=str(obj["angle"]))
        if "matrix" in obj:
            return RotationField.constant(domain, np.array(obj["matrix"], float))
        raise SpecError("closed-form field needs 'angle' (d = 2) or a constant 'matrix'")
    if kind == "table":
        bad = set(obj) - {"kind", "splits", "angles", "matrices"}
        if bad:
            raise SpecError(f"unknown field keys: {sorted(bad)}")
        splits = obj["splits"]
        if "angles" in obj:
            mats = [plane_rotation(2, float(t)) for t in obj["angles"]]
        else:
            mats = obj["matrices"]
        return RotationField(domain, kind="piecewise-constant", splits=splits, matrices=mats)
    raise SpecError(f"unknown field kind {kind!r}")


def cmd_theoremb(spec, run, seed):
    tols = _validate(spec, {"domain", "field", "p", "levels", "epsilon", "delta", "resolution",
                            "census"}, DEFAULT_TOLERANCES["theoremb"])
    domain = BoxDomain.from_json(spec.get("domain", {"boxes": [[[0, 0], [1, 1]]]}))
    H = _field(spec.get("field", {"kind": "closed-form", "angle": "pi*x1"}), domain)
    p = float(spec.get("p", 0.5))
    levels = [int(v) for v in spec.get("levels", [2, 4])]
    scale = float(spec.get("epsilon", 1.0))
    seq = theorem_b_sequence(H, p, levels, resolution=int(spec.get("resolution", 512)),
                             census=int(spec.get("census", 10000)), seed=seed,
                             eps_of_level=lambda n: scale / n,
                             delta=spec.get("delta"))
    rows, chk = [], []
    for f, L in seq:
        rows.append([L.level, L.sup_dist, L.lp_err, L.det_max_dev, L.n_balls, L.runtime_ms])
        chk.append([L.level, L.l1.value, L.lp.power, L.rhs_power, L.tolerance, L.inequality_ok])
        run.check(f"det[level={L.level}]", L.det_max_dev, tols["det"])
        run.check(f"sup[level={L.level}]", L.sup_dist, L.eps)
        run.check(f"inequality[level={L.level}]", L.lp.power, L.rhs_power + L.tolerance)
        run.timings[f"level_{L.level}_ms"] = L.runtime_ms
    run.write_table("levels", ("level", "sup_dist", "lp_err", "det_max_dev", "n_balls",
                               "runtime_ms"), rows)
    run.write_table("checks", ("level", "l1_err", "lp_power", "rhs_power", "tolerance",
                               "inequality_ok"), chk)
    lps = [r[2] for r in rows]
    if len(lps) > 1:
        # exact zeros (H = I) cannot decrease further
        dec = all(b < a or a == b == 0.0 for a, b in zip(lps, lps[1:]))
        run.check("lp_err_strictly_decreasing", dec, True, ok=dec, relation="==")


def cmd_verify(spec, run, seed):
    _validate(spec, {"criteria"}, DEFAULT_TOLERANCES["verify"])
    nums = [int(k) for k in spec.get("criteria", sorted(CRITERIA))]
    bad = [k for k in nums if k not in CRITERIA]
    if bad:
        raise SpecError(f"unknown criteria {bad}")
    results = run_acceptance(nums, seed) if nums else []
    with open(run.path("acceptance.json"), "w") as fh:
        fh.write(summary_json(results) + "\n")
    for r in results:
        run.check(f"criterion_{r.number}", r.passed, True, ok=r.passed, relation="==")
        run.timings[f"criterion_{r.number}_s"] = r.runtime_s
        print(r.line())


COMMANDS = {
    "staircase": cmd_staircase,
    "approx1d": cmd_approx1d,
    "twist": cmd_twist,
    "localize": cmd_localize,
    "theoremb": cmd_theoremb,
    "verify": cmd_verify,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="vphomeo", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--spec", help="JSON run spec (file path); defaults apply when omitted")
        sp.add_argument("--out", default=f"out-{name}", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed")
        sp.add_argument("--emit", choices=("csv", "json"), default="csv",
                        help="format of tabular outputs")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    spec = {}
    if args.spec:
        with open(args.spec) as fh:
            spec = json.load(fh)
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0)) if isinstance(
        spec, dict) else 0
    if not 0 <= seed < 2 ** 64:
        print("error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    run = Run(args.command, args.out, args.emit)
    t0 = time.perf_counter()
    try:
        COMMANDS[args.command](spec, run, seed)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VPHomeoError as exc:
        run.check("completed", False, True, ok=False, relation="==")
        run.extra["error"] = f"{type(exc).__name__}: {exc}"
    run.timings["total_s"] = time.perf_counter() - t0
    passed = run.finish()
    failures = [c["name"] for c in run.checks if not c["passed"]]
    print(f"{args.command}: {'ok' if passed else 'FAILED ' + ','.join(failures)} -> {args.out}")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
