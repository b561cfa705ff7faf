"""Tests for the dynamics-specific resolvent bounds and rate machinery."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypoco.basis import BasisSpec, Potential, build_basis
from hypoco.constants import constants_summary, poincare_constant
from hypoco.errors import ConfigError, InvariantViolation
from hypoco.models import (
    PropositionCase,
    adl_AstarA_residual,
    adl_a_squared,
    adl_bound,
    adl_envelope,
    adl_envelope_fit,
    alpha_T,
    check_static_inequality,
    corollary_bound,
    fit_loglog_slope,
    langevin_bound_formula,
    langevin_bound_general,
    model_bound_report,
    norm_X_hamiltonian_squared,
    prop_CCprime,
    rhmc_bound,
    rhmc_bound_formula,
    static_poincare_constants,
    uij_moment,
)
from hypoco.operators import ModelSpec, assemble_model
from hypoco.schur import build_decomposition

from conftest import COS_Q


# ---------------------------------------------------------------------------
# proposition cases and Gaussian moments
# ---------------------------------------------------------------------------


def test_proposition_case_constants_frozen():
    assert prop_CCprime(PropositionCase("convex")) == (1.0, 0.0)
    general = PropositionCase(
        "general", {"c1": 1.0, "c3": 1.0, "beta": 1.0, "d": 1})
    c, cprime = prop_CCprime(general)
    assert c == 2.0 and cprime == 34.0, (c, cprime)
    lsi = PropositionCase(
        "lsi", {"c3": 1.0, "C_lsi": 1.0, "exp_moments": math.e})
    c, cprime = prop_CCprime(lsi)
    assert c == 2.0 and cprime == 3.0, (c, cprime)


def test_proposition_case_validates_eagerly():
    with pytest.raises(ConfigError, match="case parameters incomplete"):
        PropositionCase("general", {"c1": 1.0})
    with pytest.raises(ConfigError):
        PropositionCase("no_such_case")


@pytest.mark.parametrize("mass,beta", [(1.0, 1.0), (1.5, 2.0), (0.7, 0.3)])
def test_uij_moments(mass, beta):
    # E[(p_i^2/m^2 - 1/(m beta))^2] = 2/(m beta)^2 and
    # E[p_i^2 p_j^2]/m^4 = 1/(m beta)^2 for i != j.
    diag = uij_moment(mass, beta, diagonal=True)
    off = uij_moment(mass, beta, diagonal=False)
    ref = 1.0 / (mass * beta) ** 2
    assert abs(diag - 2.0 * ref) < 1e-12 * ref, (diag, 2.0 * ref)
    assert abs(off - ref) < 1e-12 * ref, (off, ref)


# ---------------------------------------------------------------------------
# the X norm and its proposition bound
# ---------------------------------------------------------------------------


def test_x_norm_flat_potential_is_two():
    # For V = 0 the commutator norm hits the proposition limit exactly.
    spec = BasisSpec(d=1, n_q=8, n_p=8, beta=1.0, mass=1.0)
    basis = build_basis(spec, potential=None)
    ops = assemble_model(basis, ModelSpec(model="langevin", gamma=1.0,
                                          beta=1.0, mass=1.0, d=1))
    x2 = norm_X_hamiltonian_squared(ops)
    assert abs(x2 - 2.0) < 1e-10, x2
    # equality case of the convex bound: X^2 = 2(C + C'/K^2) with C=1, C'=0,
    # so the declared check passes with zero slack to spare
    k2 = poincare_constant("nu", potential=None, beta=1.0, d=1, n_q=32).constant
    checked = norm_X_hamiltonian_squared(
        ops, check_case=PropositionCase("convex"), K_nu2=k2)
    assert abs(checked - 2.0) < 1e-10


def test_x_norm_accepts_decomposition_and_ops(langevin_ops):
    dec = build_decomposition(langevin_ops)
    assert norm_X_hamiltonian_squared(dec) == norm_X_hamiltonian_squared(
        langevin_ops)


def test_x_norm_case_check_requires_k(langevin_ops):
    with pytest.raises(ConfigError, match="K_nu2"):
        norm_X_hamiltonian_squared(langevin_ops,
                                   check_case=PropositionCase("convex"))


def test_x_norm_proposition_violation(langevin_ops):
    # declaring the cosine potential convex understates the limit:
    # X^2(cos q) > 2 = 2(C + C'/K^2) for the convex case
    k2 = poincare_constant("nu", potential=langevin_ops.basis.potential,
                           beta=1.0, d=1, n_q=32).constant
    with pytest.raises(InvariantViolation, match="proposition violation"):
        norm_X_hamiltonian_squared(langevin_ops,
                                   check_case=PropositionCase("convex"),
                                   K_nu2=k2)


def test_x_norm_within_general_case_limit(langevin_ops):
    pot = langevin_ops.basis.potential
    k2 = poincare_constant("nu", potential=pot, beta=1.0, d=1, n_q=32).constant
    case = PropositionCase("general",
                           {"c1": 1.0, "c3": 1.0, "beta": 1.0, "d": 1})
    x2 = norm_X_hamiltonian_squared(langevin_ops, check_case=case, K_nu2=k2)
    c, cprime = prop_CCprime(case)
    assert x2 <= 2.0 * (c + cprime / k2) + 1e-8


def test_x_norm_dimension_two_close_to_one_dimensional(langevin_ops):
    # the separable two-dimensional problem reproduces the one-dimensional
    # norm; cutoffs are small here, so allow a generous tolerance
    x1 = norm_X_hamiltonian_squared(langevin_ops)
    spec2 = BasisSpec(d=2, n_q=4, n_p=4, beta=1.0, mass=1.0)
    pot2 = Potential.from_string("1 0:0.5,0;0 1:0.5,0", d=2)
    basis2 = build_basis(spec2, potential=pot2)
    ops2 = assemble_model(basis2, ModelSpec(model="langevin", gamma=1.0,
                                            beta=1.0, mass=1.0, d=2))
    x2 = norm_X_hamiltonian_squared(ops2)
    assert abs(x2 - x1) < 0.15 * x1, (x1, x2)


# ---------------------------------------------------------------------------
# closed-form bounds
# ---------------------------------------------------------------------------


def test_bound_formula_unit_substitutions():
    # unit parameters with X = 0 collapse both closed forms to 5
    assert abs(corollary_bound(1.0, 1.0, 1.0, 1.0, 0.0) - 5.0) < 1e-15
    assert abs(rhmc_bound_formula(1.0, 1.0, 1.0, 1.0, 0.0) - 5.0) < 1e-15
    # general form with quadratic kinetic energy (unit mass: |Pi1 LFD Pi1| =
    # lambda_min = 1, K_kappa^2 = beta) matches the corollary
    assert abs(langevin_bound_formula(2.0, 1.0, 1.0, 1.0, 1.5, 1.0, 0.3)
               - corollary_bound(2.0, 1.0, 1.0, 1.5, 0.3)) < 1e-14


def test_langevin_general_matches_corollary(langevin_ops):
    # quadratic kinetic energy: the fluctuation-dissipation block acts as
    # -1/m on H1 and the cross term X_S vanishes, so the general bound
    # collapses to the closed-form corollary
    dec = build_decomposition(langevin_ops)
    pot = langevin_ops.basis.potential
    constants = constants_summary(pot, 1.0, 1.0, 1, n_q=32)
    bound, norms = langevin_bound_general(dec, constants)
    assert abs(norms["norm_pi1_lfd_pi1"] - 1.0) < 1e-12
    assert norms["norm_XS"] < 1e-12, norms["norm_XS"]
    assert abs(bound - norms["bound_corollary"]) < 1e-10 * bound


def test_langevin_general_rejects_other_models(rhmc_ops):
    dec = build_decomposition(rhmc_ops)
    with pytest.raises(ConfigError, match="langevin"):
        langevin_bound_general(dec, {})


def test_rhmc_bound_structural_facts(rhmc_ops):
    dec = build_decomposition(rhmc_ops)
    pot = rhmc_ops.basis.potential
    constants = constants_summary(pot, 1.0, 1.0, 1, n_q=32)
    bound, norms = rhmc_bound(dec, constants)
    assert abs(norms["norm_S11"] - 1.0) < 1e-10
    assert norms["norm_S21"] < 1e-10
    expected = rhmc_bound_formula(1.0, 1.0, constants["lambda_min_M"],
                                  constants["K_nu2"], norms["X2"])
    assert bound == expected


def test_rhmc_bound_rejects_other_models(langevin_ops):
    dec = build_decomposition(langevin_ops)
    with pytest.raises(ConfigError, match="boltzmann_rhmc"):
        rhmc_bound(dec, {})


# ---------------------------------------------------------------------------
# thermostated model
# ---------------------------------------------------------------------------


def test_adl_astara_identity(adl_ops):
    residual = adl_AstarA_residual(adl_ops)
    assert residual < 1e-10, residual


def test_adl_astara_rejects_other_models(langevin_ops):
    with pytest.raises(ConfigError, match="adaptive_langevin"):
        adl_AstarA_residual(langevin_ops)


def test_adl_a_squared_branches():
    # unit parameters sit exactly at the branch point min(2, 1) = 1
    assert adl_a_squared(1.0, 1, 1.0, 1.0) == 1.0
    # small epsilon: the thermostat branch 2d/(m^2 eps^2) stops binding
    assert adl_a_squared(1.0, 1, 0.1, 1.0) == 1.0
    # large epsilon: the thermostat branch binds
    assert abs(adl_a_squared(1.0, 1, 10.0, 1.0) - 0.02) < 1e-15
    # beta rescales the whole gap
    assert abs(adl_a_squared(2.0, 1, 1.0, 1.0) - 0.5) < 1e-15


def test_adl_envelope_values():
    assert adl_envelope(1.0, 1.0) == 1.0
    assert adl_envelope(4.0, 1.0) == 4.0
    assert adl_envelope(0.25, 1.0) == 4.0
    assert adl_envelope(0.25, 0.25) == 64.0
    assert adl_envelope(4.0, 4.0) == 64.0


def test_adl_envelope_fit_recovers_exact_prefactor():
    gammas = [0.25, 1.0, 4.0]
    epsilons = [0.5, 1.0, 2.0]
    points = [(g, e, 3.7 * adl_envelope(g, e))
              for g in gammas for e in epsilons]
    c_fit, factor = adl_envelope_fit(points)
    assert abs(c_fit - 3.7) < 1e-12
    assert abs(factor - 1.0) < 1e-12
    with pytest.raises(ConfigError):
        adl_envelope_fit([])


def test_adl_bound_end_to_end(adl_ops):
    dec = build_decomposition(adl_ops)
    pot = adl_ops.basis.potential
    constants = constants_summary(pot, 1.0, 1.0, 1, n_q=32)
    bound, details = adl_bound(dec, constants)
    assert details["AstarA_residual"] < 1e-10
    assert details["envelope"] == 1.0
    assert bound > 0
    # the saddle-point bound built from the numerical blocks dominates the
    # truth for this configuration
    from hypoco.schur import exact_resolvent_norm
    assert bound >= exact_resolvent_norm(adl_ops.L)


def test_adl_bound_rejects_mismatched_epsilon(adl_ops):
    dec = build_decomposition(adl_ops)
    pot = adl_ops.basis.potential
    constants = constants_summary(pot, 1.0, 1.0, 1, n_q=32)
    with pytest.raises(ConfigError, match="epsilon"):
        adl_bound(dec, constants, epsilon=2.0)


# ---------------------------------------------------------------------------
# static inequality and semigroup rate
# ---------------------------------------------------------------------------


def test_static_poincare_constants_definition(langevin_ops):
    dec = build_decomposition(langevin_ops)
    c1, c2 = static_poincare_constants(dec)
    x2 = norm_X_hamiltonian_squared(langevin_ops)
    assert abs(c1 - (1.0 + np.sqrt(x2))) < 1e-12
    assert c2 > 0


def test_static_inequality_holds_on_random_suite(langevin_ops):
    dec = build_decomposition(langevin_ops)
    c1, c2 = static_poincare_constants(dec)
    worst = check_static_inequality(langevin_ops, c1, c2,
                                    n_samples=50, seed=3)
    assert worst <= 1.0


def test_static_inequality_detects_false_constants(langevin_ops):
    with pytest.raises(InvariantViolation, match="static inequality"):
        check_static_inequality(langevin_ops, 1e-6, 1e-6, n_samples=5)


def test_alpha_t_frozen_value_and_shape():
    assert abs(alpha_T(1.0, 1.0, 1.0, 1.0, 1.0) - 2.0 / 3.0) < 1e-15
    # contraction factor lies in (0, 1) and improves with longer periods
    vals = [alpha_T(1.0, 1.0, t, 1.0, 1.0) for t in (0.5, 1.0, 2.0, 8.0)]
    assert all(0.0 < v < 1.0 for v in vals)
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_alpha_t_friction_asymptotics():
    # -log alpha ~ gamma s T / C1^2 for small gamma and ~ T / (gamma C2^2)
    # for large gamma
    s, t, c1t, c2t = 1.3, 0.7, 1.1, 0.9
    small, large = 1e-3, 1e3
    lo = -math.log(alpha_T(small, s, t, c1t, c2t))
    hi = -math.log(alpha_T(large, s, t, c1t, c2t))
    assert abs(lo / (small * s * t / c1t**2) - 1.0) < 0.01
    assert abs(hi / (t / (large * c2t**2)) - 1.0) < 0.01


def test_alpha_t_rejects_nonpositive_inputs():
    with pytest.raises(ConfigError, match="invalid rate inputs"):
        alpha_T(-1.0, 1.0, 1.0, 1.0, 1.0)
    try:
        alpha_T(0.0, -2.0, 1.0, 1.0, 1.0)
    except ConfigError as exc:
        assert len(exc.problems) == 2, exc.problems
    else:
        raise AssertionError("expected ConfigError for two bad inputs")


def test_fit_loglog_slope_recovers_power():
    x = np.geomspace(0.01, 100.0, 13)
    assert abs(fit_loglog_slope(x, 3.0 * x**2) - 2.0) < 1e-12
    assert abs(fit_loglog_slope(x, 0.5 / x) + 1.0) < 1e-12


# ---------------------------------------------------------------------------
# report orchestration
# ---------------------------------------------------------------------------


def test_model_bound_report_fields_and_margin():
    spec = BasisSpec(d=1, n_q=6, n_p=6, beta=1.0, mass=1.0)
    model = ModelSpec(model="langevin", gamma=1.0, beta=1.0, mass=1.0, d=1)
    pot = Potential.from_string(COS_Q, d=1)
    report = model_bound_report(model, spec, pot, check_convergence=False)
    assert report.model == "langevin"
    assert report.bound >= report.exact > 0
    assert report.margin >= 1.0
    assert report.n_xi == 0
    assert abs(report.a**2 - report.details["constants"]["K_nu2"]) < 1e-8
    payload = report.to_json_dict()
    assert payload["bound"] == report.bound
    assert isinstance(payload["converged"], bool)


def test_model_bound_report_convergence_flags():
    # with a tight relative tolerance at a coarse truncation the doubling
    # test must report non-convergence rather than a silent pass
    spec = BasisSpec(d=1, n_q=2, n_p=2, beta=1.0, mass=1.0)
    model = ModelSpec(model="langevin", gamma=1.0, beta=1.0, mass=1.0, d=1)
    pot = Potential.from_string(COS_Q, d=1)
    report = model_bound_report(model, spec, pot, rel_tol=1e-12)
    assert not report.converged


# ---------------------------------------------------------------------------
# property-based checks
# ---------------------------------------------------------------------------


@given(gamma=st.floats(0.05, 20.0), beta=st.floats(0.2, 5.0),
       x2=st.floats(0.0, 10.0))
@settings(max_examples=50, deadline=None)
def test_corollary_bound_positive_and_monotone_in_x(gamma, beta, x2):
    base = corollary_bound(gamma, beta, 1.0, 1.0, x2)
    assert base > 0
    assert corollary_bound(gamma, beta, 1.0, 1.0, x2 + 1.0) > base


@given(gamma=st.floats(0.01, 100.0), epsilon=st.floats(0.05, 20.0))
@settings(max_examples=100, deadline=None)
def test_adl_envelope_at_least_one(gamma, epsilon):
    # max(x, 1/x, ...) >= 1 always, and the envelope is symmetric under
    # (gamma eps^2) -> 1/(gamma eps^2) with gamma -> 1/gamma
    env = adl_envelope(gamma, epsilon)
    assert env >= 1.0
    swapped = adl_envelope(1.0 / gamma, epsilon)
    assert math.isclose(env, adl_envelope(gamma, epsilon))
    assert swapped >= 1.0
