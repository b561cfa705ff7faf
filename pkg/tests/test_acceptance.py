"""End-to-end acceptance suite.

One test per acceptance criterion.  Each test prints a single pass/fail line
(visible even under pytest capture) and enforces the stated runtime budget.
Expensive sweeps are computed once and shared between the criteria that use
them.
"""

import json
import time

import numpy as np
import pytest

from hypoco.basis import BasisSpec, Potential, build_basis
from hypoco.cli import main
from hypoco.constants import (
    check_bochner,
    check_controlH2,
    check_villani_lemma,
    constants_summary,
    estimate_growth_constants,
    estimate_hessian_K,
    poincare_constant,
)
from hypoco.models import (
    PropositionCase,
    adl_AstarA_residual,
    adl_envelope,
    adl_envelope_fit,
    alpha_T,
    check_static_inequality,
    corollary_bound,
    fit_loglog_slope,
    model_bound_report,
    norm_X_hamiltonian_squared,
    prop_CCprime,
    static_poincare_constants,
)
from hypoco.operators import ModelSpec, assemble_model, verify_structural_assumptions
from hypoco.schur import block_resolvent, build_decomposition, exact_resolvent_norm

from conftest import COS_COS2, COS_Q

GAMMAS = (0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0)
STRUCTURAL_KEYS = ("pi0_A_pi0", "S_pi0", "pi0_S", "R_squared",
                   "R_S_R_minus_S", "R_A_R_plus_A")

# shared sweep caches (filled lazily so their cost lands inside the budget of
# the first criterion that needs them)
_SWEEPS: dict = {}


def _announce(capsys, num, name, ok, elapsed, detail):
    with capsys.disabled():
        status = "PASS" if ok else "FAIL"
        print(f"[criterion {num:02d}] {name}: {status} ({detail}) "
              f"[{elapsed:.1f}s]")


def _criterion(capsys, num, name, budget, fn):
    """Run one criterion body, print its line, enforce its runtime budget."""
    start = time.perf_counter()
    try:
        detail = fn()
    except BaseException as exc:
        elapsed = time.perf_counter() - start
        _announce(capsys, num, name, False, elapsed, exc)
        raise
    elapsed = time.perf_counter() - start
    within = budget is None or elapsed < budget
    _announce(capsys, num, name, within, elapsed, detail)
    if budget is not None:
        assert within, f"runtime {elapsed:.1f}s exceeded the {budget}s budget"


def _swept_report(model_name, pot, gamma, constants, n_q=8):
    """Bound report with the Hermite cutoff escalated until converged."""
    n_p = 8
    while True:
        spec = BasisSpec(d=1, n_q=n_q, n_p=n_p, beta=1.0, mass=1.0)
        model = ModelSpec(model=model_name, gamma=gamma, beta=1.0,
                          mass=1.0, d=1)
        report = model_bound_report(model, spec, pot, constants=constants)
        if report.converged or n_p >= 32:
            return report
        n_p *= 2


def _langevin_sweep():
    if "langevin" not in _SWEEPS:
        pots = {"flat": Potential.zero(1),
                "cos": Potential.from_string(COS_Q, d=1),
                "cos+cos2": Potential.from_string(COS_COS2, d=1)}
        rows = {}
        for pname, pot in pots.items():
            constants = constants_summary(pot, 1.0, 1.0, 1, n_q=32)
            for gamma in GAMMAS:
                rows[(pname, gamma)] = _swept_report("langevin", pot, gamma,
                                                     constants)
        _SWEEPS["langevin"] = rows
    return _SWEEPS["langevin"]


def _rhmc_sweep():
    if "rhmc" not in _SWEEPS:
        pot = Potential.from_string(COS_Q, d=1)
        constants = constants_summary(pot, 1.0, 1.0, 1, n_q=32)
        _SWEEPS["rhmc"] = {
            gamma: _swept_report("boltzmann_rhmc", pot, gamma, constants)
            for gamma in GAMMAS}
    return _SWEEPS["rhmc"]


def test_criterion_01_structural_identities(capsys):
    def body():
        worst = 0.0
        for model, has_xi in (("langevin", False), ("boltzmann_rhmc", False),
                              ("adaptive_langevin", True)):
            spec = BasisSpec(d=1, n_q=12, n_p=12, beta=1.0, mass=1.0,
                             has_xi=has_xi, n_xi=12 if has_xi else 0)
            basis = build_basis(spec, potential=Potential.from_string(COS_Q, d=1))
            ops = assemble_model(basis, ModelSpec(
                model=model, gamma=1.0, beta=1.0, mass=1.0, d=1,
                epsilon=1.0 if has_xi else None))
            report = verify_structural_assumptions(ops)
            assert report.passed, f"{model}: {report.table()}"
            for key in STRUCTURAL_KEYS:
                worst = max(worst, report.residuals[key])
        assert worst < 1e-10, worst
        return f"max residual {worst:.2e} over 3 models"
    _criterion(capsys, 1, "structural identities", 10.0, body)


def test_criterion_02_block_resolvent_matches_dense(capsys):
    def body():
        worst = 0.0
        pot = Potential.from_string(COS_Q, d=1)
        for model, has_xi, cut in (("langevin", False, 8),
                                   ("boltzmann_rhmc", False, 8),
                                   ("adaptive_langevin", True, 6)):
            spec = BasisSpec(d=1, n_q=cut, n_p=cut, beta=1.0, mass=1.0,
                             has_xi=has_xi, n_xi=cut if has_xi else 0)
            basis = build_basis(spec, potential=pot)
            ops = assemble_model(basis, ModelSpec(
                model=model, gamma=1.0, beta=1.0, mass=1.0, d=1,
                epsilon=1.0 if has_xi else None))
            dec = build_decomposition(ops)
            dense = ops.L.toarray()
            rng = np.random.default_rng(42)
            for _ in range(20):
                phi = rng.standard_normal(ops.dim)
                u0, u_plus = block_resolvent(dec, phi)
                u = np.empty(ops.dim)
                u[ops.idx0], u[ops.idx_plus] = u0, u_plus
                ref = np.linalg.solve(dense, phi)
                worst = max(worst, float(np.linalg.norm(u - ref)
                                         / np.linalg.norm(ref)))
        assert worst < 1e-8, worst
        return f"worst relative error {worst:.2e} on 20 rhs x 3 models"
    _criterion(capsys, 2, "block resolvent vs dense LU", 30.0, body)


def test_criterion_03_theorem_bound_soundness(capsys):
    def body():
        rows = _langevin_sweep()
        unconverged = [k for k, r in rows.items() if not r.converged]
        assert not unconverged, f"points never converged: {unconverged}"
        min_margin = min(r.margin for r in rows.values())
        assert min_margin >= 1.0, min_margin
        return (f"min margin {min_margin:.3f} over {len(rows)} converged "
                f"points (7 gammas x 3 potentials)")
    _criterion(capsys, 3, "resolvent bound soundness", 300.0, body)


def test_criterion_04_friction_scaling_slopes(capsys):
    def body():
        rows = _langevin_sweep()
        small, large = (0.01, 0.1), (10.0, 100.0)
        slopes = {}
        for wing, gammas, target in (("small", small, -1.0),
                                     ("large", large, 1.0)):
            for kind in ("corollary", "exact"):
                vals = []
                for gamma in gammas:
                    report = rows[("cos", gamma)]
                    vals.append(report.details["bound_corollary"]
                                if kind == "corollary" else report.exact)
                slope = fit_loglog_slope(gammas, vals)
                assert abs(slope - target) < 0.1, (wing, kind, slope)
                slopes[f"{kind}/{wing}"] = slope
        return ", ".join(f"{k}={v:+.3f}" for k, v in sorted(slopes.items()))
    _criterion(capsys, 4, "friction scaling", 300.0, body)


def test_criterion_05_hessian_control_cases(capsys):
    def body():
        spec = BasisSpec(d=1, n_q=8, n_p=8, beta=1.0, mass=1.0)
        details = []
        cos = Potential.from_string(COS_Q, d=1)
        growth = estimate_growth_constants(cos, 1.0, 1)
        cases = [
            ("flat/convex", Potential.zero(1), PropositionCase("convex")),
            ("cos/hessian", cos,
             PropositionCase("hessian_lower_bound", {"K": 1.0})),
            ("cos/general", cos,
             PropositionCase("general", {"c1": growth.c1, "c3": growth.c3,
                                         "beta": 1.0, "d": 1})),
        ]
        x_values = []
        for name, pot, case in cases:
            basis = build_basis(spec, potential=pot)
            ops = assemble_model(basis, ModelSpec(
                model="langevin", gamma=1.0, beta=1.0, mass=1.0, d=1))
            k2 = poincare_constant("nu", potential=pot, beta=1.0, d=1,
                                   n_q=32).constant
            # raises on violation; slack 1e-6 per the criterion
            x2 = norm_X_hamiltonian_squared(ops, check_case=case, K_nu2=k2,
                                            conv_tol=1e-6)
            c, cprime = prop_CCprime(case)
            limit = 2.0 * (c + cprime / k2)
            assert x2 <= limit + 1e-6, (name, x2, limit)
            x_values.append(x2)
            details.append(f"{name}: X^2={x2:.3f} <= {limit:.3f}")
        # the flat potential is the equality case of the convex bound
        assert abs(x_values[0] - 2.0) < 1e-6
        return "; ".join(details)
    _criterion(capsys, 5, "Hessian-control constants", 60.0, body)


def test_criterion_06_lemma_suite(capsys):
    def body():
        pot = Potential.from_string(COS_Q, d=1)
        growth = estimate_growth_constants(pot, 1.0, 1)
        k_hess = estimate_hessian_K(pot, 1)
        rng = np.random.default_rng(0)
        size = 2 * 8 + 1
        boch = vill = ctrl = 0.0
        for _ in range(50):
            boch = max(boch, check_bochner(rng.standard_normal(size), pot, 1.0))
        for _ in range(100):
            vill = max(vill, check_villani_lemma(
                rng.standard_normal(size), pot, 1.0, 1, growth.c1))
        for _ in range(100):
            ctrl = max(ctrl, check_controlH2(
                rng.standard_normal(size), pot, 1.0, "hessian_lower_bound",
                params={"K": k_hess}))
        assert boch < 1e-8, boch
        assert vill <= 1.0 and ctrl <= 1.0, (vill, ctrl)
        return (f"bochner residual {boch:.1e} (50 u), villani ratio "
                f"{vill:.3f}, controlH2 ratio {ctrl:.3f} (100 each)")
    _criterion(capsys, 6, "lemma suite", 60.0, body)


def test_criterion_07_collision_model(capsys):
    def body():
        rows = _rhmc_sweep()
        worst_s21 = worst_s11 = 0.0
        min_margin = float("inf")
        for gamma, report in rows.items():
            assert report.converged, f"gamma={gamma} never converged"
            worst_s21 = max(worst_s21, report.details["norm_S21"])
            worst_s11 = max(worst_s11,
                            abs(report.details["norm_S11"] - gamma)
                            / max(gamma, 1.0))
            min_margin = min(min_margin, report.margin)
        assert worst_s21 < 1e-10, worst_s21
        assert worst_s11 < 1e-10, worst_s11
        assert min_margin >= 1.0, min_margin
        return (f"|S21| <= {worst_s21:.1e}, |S11|-gamma <= {worst_s11:.1e} "
                f"rel, min margin {min_margin:.3f} over {len(rows)} gammas")
    _criterion(capsys, 7, "collision-model structure and bound", 120.0, body)


def test_criterion_08_thermostat_identity_and_envelope(capsys):
    def body():
        pot = Potential.from_string(COS_Q, d=1)
        spec = BasisSpec(d=1, n_q=8, n_p=8, beta=1.0, mass=1.0,
                         has_xi=True, n_xi=8)
        basis = build_basis(spec, potential=pot)
        worst_res = 0.0
        points = []
        for gamma in (0.25, 1.0, 4.0):
            for epsilon in (0.25, 1.0, 4.0):
                ops = assemble_model(basis, ModelSpec(
                    model="adaptive_langevin", gamma=gamma, beta=1.0,
                    mass=1.0, d=1, epsilon=epsilon))
                worst_res = max(worst_res, adl_AstarA_residual(ops))
                points.append((gamma, epsilon, exact_resolvent_norm(ops.L)))
        assert worst_res < 1e-10, worst_res
        c_fit, _ = adl_envelope_fit(points)
        # the scaling claim is an upper bound (a prefactor C exists), so the
        # fitted envelope must dominate the exact norm within the factor; it
        # legitimately over-predicts in the small-epsilon corner
        factor = max(exact / (c_fit * adl_envelope(g, e))
                     for g, e, exact in points)
        assert factor <= 3.0, factor
        return (f"A*A residual {worst_res:.1e}; C_fit={c_fit:.3f}, "
                f"envelope factor {factor:.2f} <= 3 over 9 grid points")
    _criterion(capsys, 8, "thermostat identity and scaling envelope",
               300.0, body)


def test_criterion_09_static_inequality_and_rate(capsys):
    def body():
        pot = Potential.from_string(COS_Q, d=1)
        spec = BasisSpec(d=1, n_q=8, n_p=8, beta=1.0, mass=1.0)
        basis = build_basis(spec, potential=pot)
        ops = assemble_model(basis, ModelSpec(
            model="langevin", gamma=1.0, beta=1.0, mass=1.0, d=1))
        dec = build_decomposition(ops)
        c1, c2 = static_poincare_constants(dec)
        worst = check_static_inequality(ops, c1, c2, n_samples=100, seed=0)
        assert worst <= 1.0, worst
        # contraction-rate asymptotics in the friction parameter
        s = poincare_constant("nu", potential=pot, beta=1.0, d=1,
                              n_q=32).constant
        t_period = 1.0
        lo = -np.log(alpha_T(1e-3, s, t_period, c1, c2))
        hi = -np.log(alpha_T(1e3, s, t_period, c1, c2))
        ratio_lo = lo / (1e-3 * s * t_period / c1**2)
        ratio_hi = hi / (t_period / (1e3 * c2**2))
        assert abs(ratio_lo - 1.0) < 0.01, ratio_lo
        assert abs(ratio_hi - 1.0) < 0.01, ratio_hi
        return (f"worst static ratio {worst:.3f} (100 f); rate asymptotic "
                f"ratios {ratio_lo:.4f}, {ratio_hi:.4f}")
    _criterion(capsys, 9, "static inequality and rate asymptotics", 60.0, body)


def test_criterion_10_dimension_robustness(capsys):
    def body():
        pot1 = Potential.from_string(COS_Q, d=1)
        pot2 = Potential.from_string("1 0:0.5,0;0 1:0.5,0", d=2)
        results = {}
        for d, pot in ((1, pot1), (2, pot2)):
            spec = BasisSpec(d=d, n_q=6, n_p=6, beta=1.0, mass=1.0)
            basis = build_basis(spec, potential=pot)
            ops = assemble_model(basis, ModelSpec(
                model="langevin", gamma=1.0, beta=1.0, mass=1.0, d=d))
            k2 = poincare_constant("nu", potential=pot, beta=1.0, d=d,
                                   n_q=32).constant
            x2 = norm_X_hamiltonian_squared(ops)
            results[d] = (k2, x2, corollary_bound(1.0, 1.0, 1.0, k2, x2))
        rel = [abs(a - b) / abs(a)
               for a, b in zip(results[1], results[2])]
        assert all(r < 0.05 for r in rel), rel
        return (f"d=2 vs d=1 relative differences: K^2 {rel[0]:.1e}, "
                f"X^2 {rel[1]:.1e}, bound {rel[2]:.1e}")
    _criterion(capsys, 10, "separable two-dimensional tensorization",
               180.0, body)


def test_criterion_11_reproducibility(capsys, tmp_path):
    def body():
        cfg = tmp_path / "repro.cfg"
        cfg.write_text(
            "model = langevin\nd = 1\nbeta = 1.0\nmass = 1.0\n"
            f"gamma = 1.0\npotential = {COS_Q}\nn_q = 8\nn_p = 8\nseed = 0\n")
        outputs = []
        for run in ("one", "two"):
            report = tmp_path / f"report_{run}.json"
            row = tmp_path / f"report_{run}.csv"
            sweep = tmp_path / f"sweep_{run}.csv"
            assert main(["report", "--config", str(cfg), "--json",
                         str(report), "--csv", str(row)]) == 0
            assert main(["sweep", "--config", str(cfg), "--gamma",
                         "0.5:2:log3", "--csv", str(sweep)]) == 0
            outputs.append((report.read_bytes(), row.read_bytes(),
                            sweep.read_bytes()))
        assert outputs[0] == outputs[1], "reruns differ"
        document = json.loads(outputs[0][0])
        assert document["seed"] == 0
        n_bytes = sum(len(part) for part in outputs[0])
        return f"report + row + sweep byte-identical across reruns ({n_bytes} bytes)"
    _criterion(capsys, 11, "seeded reproducibility", None, body)
