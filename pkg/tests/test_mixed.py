"""Mixed logit: Halton draws, mixing transforms, simulated likelihood."""

import numpy as np
import pytest
import scipy.special
import scipy.stats
from numpy.polynomial.hermite import hermgauss

from crashmle.dataset import CONSTANT, ModelSpec, ObservationTable, Term, build_design
from crashmle.mixed import (
    DrawMatrix,
    Mixing,
    first_primes,
    fit_mixed_mnl,
    halton,
    is_prime,
    make_objective,
    mixed_effects,
    mixed_loglik,
    natural_from_internal,
    sign_share,
    simulated_prob,
    simulated_probs,
    transform_draws,
)
from crashmle.mnl import elasticities, fit_mnl, mnl_probs


def mixed_table(n=60, seed=3):
    rng = np.random.default_rng(seed)
    cols = {"x1": rng.normal(size=n), "x2": rng.normal(size=n)}
    labels = np.array(["a", "b", "base"])
    return ObservationTable(cols, labels[rng.integers(0, 3, size=n)], "severity")


MIXED_SPEC = ModelSpec("mixed_mnl", (
    Term(CONSTANT, ("a",)), Term(CONSTANT, ("b",)),
    Term("x1", ("a",), "random_normal"), Term("x2", ("b",), "random_uniform")),
    ("a", "b", "base"), "base")


# ------------------------------------------------------------------ halton

def test_halton_base2_first_values():
    np.testing.assert_allclose(
        halton(2, 8),
        [1 / 2, 1 / 4, 3 / 4, 1 / 8, 5 / 8, 3 / 8, 7 / 8, 1 / 16], rtol=1e-15)


def test_halton_base3_first_values():
    np.testing.assert_allclose(
        halton(3, 6), [1 / 3, 2 / 3, 1 / 9, 4 / 9, 7 / 9, 2 / 9], rtol=1e-15)


def test_halton_skip_matches_slicing():
    np.testing.assert_array_equal(halton(2, 5, skip=10), halton(2, 15)[10:])
    np.testing.assert_array_equal(halton(5, 7, skip=3), halton(5, 10)[3:])


def test_halton_values_strictly_inside_unit_interval():
    for base in (2, 3, 5):
        u = halton(base, 2000)
        assert u.min() > 0.0 and u.max() < 1.0


def test_halton_low_discrepancy_mean():
    assert abs(halton(2, 1000).mean() - 0.5) < 5e-3
    assert abs(halton(3, 1000).mean() - 0.5) < 5e-3


def test_halton_input_validation():
    with pytest.raises(ValueError, match="prime"):
        halton(4, 10)
    with pytest.raises(ValueError, match="count"):
        halton(2, 0)
    with pytest.raises(ValueError, match="skip"):
        halton(2, 10, skip=-1)


def test_prime_helpers():
    assert first_primes(6) == (2, 3, 5, 7, 11, 13)
    assert [n for n in range(20) if is_prime(n)] == [2, 3, 5, 7, 11, 13, 17, 19]


# ------------------------------------------------------------------ mixing

def test_transform_draws_normal_inverse_cdf():
    u = np.array([0.5, 0.975, 0.025])
    mix = Mixing("normal", 1.0, 2.0)
    out = transform_draws(u, mix)
    assert out[0] == pytest.approx(1.0)
    np.testing.assert_allclose(out, 1.0 + 2.0 * scipy.stats.norm.ppf(u), rtol=1e-12)


def test_transform_draws_uniform_support():
    mix = Mixing("uniform", 1.0, 0.5)
    out = transform_draws(np.array([0.5, 1e-9, 1.0 - 1e-9]), mix)
    assert out[0] == pytest.approx(1.0)
    assert out[1] == pytest.approx(0.5, abs=1e-6)
    assert out[2] == pytest.approx(1.5, abs=1e-6)


def test_transform_draws_rejects_boundary():
    with pytest.raises(ValueError, match="strictly inside"):
        transform_draws(np.array([0.0, 0.5]), Mixing("normal", 0.0, 1.0))


def test_mixing_validation():
    with pytest.raises(ValueError, match="dist"):
        Mixing("triangular", 0.0, 1.0)
    with pytest.raises(ValueError, match="non-negative"):
        Mixing("normal", 0.0, -1.0)


def test_sign_share_closed_forms():
    assert sign_share(Mixing("normal", -1.85, 2.65)) == pytest.approx(
        scipy.stats.norm.cdf(1.85 / 2.65), rel=1e-12)
    assert sign_share(Mixing("normal", 0.0, 1.0)) == pytest.approx(0.5)
    # uniform on [-1, 3]: a quarter of the support is negative
    assert sign_share(Mixing("uniform", 1.0, 2.0)) == pytest.approx(0.25)
    assert sign_share(Mixing("uniform", 5.0, 1.0)) == 0.0
    assert sign_share(Mixing("uniform", -5.0, 1.0)) == 1.0
    # degenerate scale collapses to a point mass
    assert sign_share(Mixing("normal", -2.0, 0.0)) == 1.0
    assert sign_share(Mixing("normal", 2.0, 0.0)) == 0.0


# ------------------------------------------------------------- draw matrix

def test_draw_matrix_blocks_come_from_the_dimension_sequence():
    dm = DrawMatrix(n_obs=3, n_draws=25, dists=("normal", "uniform"))
    u2 = halton(2, 3 * 25, skip=10).reshape(3, 25)
    u3 = halton(3, 3 * 25, skip=10).reshape(3, 25)
    np.testing.assert_allclose(dm.std[0], scipy.special.ndtri(u2), rtol=1e-12)
    np.testing.assert_allclose(dm.std[1], 2.0 * u3 - 1.0, rtol=1e-12)
    assert dm.primes == (2, 3)


def test_draw_matrix_minimum_draws_enforced():
    with pytest.raises(ValueError, match="at least 25"):
        DrawMatrix(n_obs=2, n_draws=24, dists=("normal",))


def test_draw_matrix_shift_is_seeded_and_deterministic():
    a = DrawMatrix(4, 25, ("normal",), seed=7, shift=True)
    b = DrawMatrix(4, 25, ("normal",), seed=7, shift=True)
    c = DrawMatrix(4, 25, ("normal",), seed=8, shift=True)
    plain = DrawMatrix(4, 25, ("normal",))
    np.testing.assert_array_equal(a.std[0], b.std[0])
    assert not np.array_equal(a.std[0], c.std[0])
    assert not np.array_equal(a.std[0], plain.std[0])


def test_draw_matrix_for_design():
    table = mixed_table(10)
    design = build_design(table, MIXED_SPEC)
    dm = DrawMatrix.for_design(design, 30)
    assert dm.dists == ("normal", "uniform")
    assert dm.n_obs == 10 and dm.n_draws == 30
    plain = build_design(table, ModelSpec(
        "mnl", (Term("x1", ("a",)),), ("a", "b", "base"), "base"))
    with pytest.raises(ValueError, match="no random terms"):
        DrawMatrix.for_design(plain, 30)


# ----------------------------------------------------- simulated likelihood

def theta_mixed(loc_x1=1.0, sd_x1=0.5, loc_x2=-0.6, spread_x2=0.8):
    # packing: constant[a], constant[b], x1 loc, x1 log sd, x2 loc, x2 log spread
    return np.array([0.3, 0.2, loc_x1, np.log(sd_x1), loc_x2, np.log(spread_x2)])


def test_simulated_probs_rows_sum_to_one():
    design = build_design(mixed_table(20), MIXED_SPEC)
    draws = DrawMatrix.for_design(design, 50)
    p = simulated_probs(theta_mixed(), design, draws)
    assert p.shape == (20, 3)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)
    for row in (0, 7, 19):
        np.testing.assert_allclose(simulated_prob(theta_mixed(), design, row, draws),
                                   p[row], rtol=1e-12)


def test_simulated_probs_collapse_to_mnl_at_tiny_scale():
    table = mixed_table(25)
    design = build_design(table, MIXED_SPEC)
    draws = DrawMatrix.for_design(design, 50)
    theta = theta_mixed(sd_x1=np.exp(-30), spread_x2=np.exp(-30))
    theta[3] = theta[5] = -30.0

    plain_spec = ModelSpec("mnl", (
        Term(CONSTANT, ("a",)), Term(CONSTANT, ("b",)),
        Term("x1", ("a",)), Term("x2", ("b",))), ("a", "b", "base"), "base")
    plain = build_design(table, plain_spec)
    p_plain = mnl_probs(np.array([0.3, 0.2, 1.0, -0.6]), plain)
    p_mixed = simulated_probs(theta, design, draws)
    np.testing.assert_allclose(p_mixed, p_plain, atol=1e-12)


def test_simulated_prob_matches_gauss_hermite_oracle():
    # one normal random coefficient: the mixture integral has a GH form
    spec = ModelSpec("mixed_mnl", (
        Term(CONSTANT, ("a",)), Term(CONSTANT, ("b",)),
        Term("x1", ("a",), "random_normal")), ("a", "b", "base"), "base")
    table = ObservationTable({"x1": [1.3, -0.7]}, np.array(["a", "b"]), "severity")
    design = build_design(table, spec)
    theta = np.array([0.3, 0.2, 1.0, np.log(2.0)])
    draws = DrawMatrix.for_design(design, 20000)
    p = simulated_prob(theta, design, 0, draws)

    nodes, weights = hermgauss(64)
    expected = np.zeros(3)
    for node, w in zip(nodes, weights):
        beta = 1.0 + 2.0 * np.sqrt(2.0) * node
        v = np.array([0.3 + beta * 1.3, 0.2, 0.0])
        e = np.exp(v - v.max())
        expected += w * e / e.sum()
    expected /= np.sqrt(np.pi)
    np.testing.assert_allclose(p, expected, atol=2e-4)


def test_mixed_gradient_matches_central_differences():
    design = build_design(mixed_table(30), MIXED_SPEC)
    draws = DrawMatrix.for_design(design, 40)
    objective = make_objective(design, draws)
    rng = np.random.default_rng(4)
    for _ in range(3):
        theta = theta_mixed(*rng.uniform(0.3, 1.2, size=4))
        _, grad = objective(theta)
        h = 1e-6
        fd = np.empty_like(grad)
        for k in range(theta.size):
            up, dn = theta.copy(), theta.copy()
            up[k] += h
            dn[k] -= h
            fd[k] = (objective(up)[0] - objective(dn)[0]) / (2.0 * h)
        np.testing.assert_allclose(grad, fd, rtol=2e-6, atol=1e-8)


def test_mixed_loglik_wrapper_returns_objective_value():
    design = build_design(mixed_table(15), MIXED_SPEC)
    draws = DrawMatrix.for_design(design, 30)
    ll, grad = mixed_loglik(theta_mixed(), design, draws)
    assert np.isfinite(ll) and grad.shape == (6,)
    p = simulated_probs(theta_mixed(), design, draws)
    chosen = p[np.arange(15), design.y_index]
    assert ll == pytest.approx(np.log(chosen).sum(), rel=1e-12)


def test_natural_from_internal_applies_delta_method():
    spec = ModelSpec("mixed_mnl", (Term("x1", ("a",), "random_normal"),),
                     ("a", "b"), "b")
    design = build_design(
        ObservationTable({"x1": [0.5]}, np.array(["a"]), "severity"), spec)
    internal = np.array([1.0, np.log(0.5)])
    cov = np.diag([0.04, 0.09])
    natural, cov_nat = natural_from_internal(internal, design, cov)
    np.testing.assert_allclose(natural, [1.0, 0.5])
    # se of s = exp(log s) is s * se(log s)
    np.testing.assert_allclose(np.sqrt(np.diag(cov_nat)), [0.2, 0.5 * 0.3])


# ---------------------------------------------------------------- fitting

def test_fit_mixed_reports_natural_scales():
    table = mixed_table(150, seed=8)
    fit = fit_mixed_mnl(table, MIXED_SPEC, n_draws=25)
    assert fit.param_names == ("constant[a]", "constant[b]",
                               "x1[a]", "x1[a]:sd", "x2[b]", "x2[b]:spread")
    assert fit.coef("x1[a]:sd") > 0
    assert fit.coef("x2[b]:spread") > 0
    idx = fit.param_names.index("x1[a]:sd")
    assert fit.coef("x1[a]:sd") == pytest.approx(np.exp(fit.theta_internal[idx]))
    assert fit.n_draws == 25 and fit.seed == 0
    assert fit.ll_restricted == pytest.approx(150 * np.log(1 / 3))


def test_fit_mixed_requires_mixed_family():
    table = mixed_table(30)
    plain = ModelSpec("mnl", (Term("x1", ("a",)),), ("a", "b", "base"), "base")
    with pytest.raises(ValueError, match="mixed_mnl"):
        fit_mixed_mnl(table, plain, n_draws=25)


# ----------------------------------------------------------------- effects

def test_mixed_effects_match_plain_elasticities_at_tiny_scale():
    rng = np.random.default_rng(12)
    n = 80
    table = ObservationTable({"x1": rng.normal(size=n), "x2": rng.normal(size=n)},
                             np.array(["a", "b", "base"])[rng.integers(0, 3, n)],
                             "severity")
    plain_spec = ModelSpec("mnl", (
        Term(CONSTANT, ("a",)), Term("x1", ("a",)), Term("x2", ("b",))),
        ("a", "b", "base"), "base")
    plain_fit = fit_mnl(table, plain_spec)

    from crashmle.optimize import summarize
    mixed_spec = ModelSpec("mixed_mnl", (
        Term(CONSTANT, ("a",)), Term("x1", ("a",), "random_normal"),
        Term("x2", ("b",))), ("a", "b", "base"), "base")
    beta = plain_fit.theta_internal
    internal = np.array([beta[0], beta[1], -30.0, beta[2]])
    natural = np.array([beta[0], beta[1], np.exp(-30.0), beta[2]])
    frozen = summarize(natural, None, plain_fit.ll_converged,
                       plain_fit.ll_restricted,
                       param_names=("constant[a]", "x1[a]", "x1[a]:sd", "x2[b]"),
                       converged=True, iterations=0, n_obs=n, family="mixed_mnl",
                       theta_internal=internal, spec=mixed_spec,
                       n_draws=60, seed=0)

    mixed_report = mixed_effects(frozen, table, ["x1", "x2"])
    plain_report = elasticities(plain_fit, table, ["x1", "x2"])
    mixed_vals = {(r.variable, r.target, r.outcome): r.value
                  for r in mixed_report.rows}
    for r in plain_report.rows:
        assert mixed_vals[(r.variable, r.target, r.outcome)] == pytest.approx(
            r.value, abs=1e-9)


def test_mixed_effects_requires_mixed_fit():
    table = mixed_table(40)
    plain_spec = ModelSpec("mnl", (Term("x1", ("a",)),), ("a", "b", "base"), "base")
    fit = fit_mnl(table, plain_spec)
    with pytest.raises(ValueError, match="mixed"):
        mixed_effects(fit, table)
