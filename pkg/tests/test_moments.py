import math

import numpy as np
import pytest

from branchtail.law import closed_mu, closed_rho, parse_law
from branchtail.moments import (NoRootError, NonPositiveMuError, mu_estimate, moment_report,
                                pi_moment_check, rho_estimate, solve_alpha, wn_bound_check)
from branchtail.oracle import pi_moment_exact, wn_abs_moment_exact
from branchtail.treesim import batch_R, pick_depth

import laws


def det_law(n, c, q=1.0):
    return parse_law({"n": {"kind": "det", "value": n}, "c": {"magnitude": {"kind": "det", "value": c}},
                      "q": {"kind": "det", "value": q}})


def poisson_law():
    return parse_law({"n": {"kind": "poisson", "lam": 2}, "c": {"magnitude": {"kind": "det", "value": 1}},
                      "q": {"kind": "det", "value": 1}})


# -- rho and mu ---------------------------------------------------------------

def test_rho_exact_one():
    e = rho_estimate(det_law(2, 2**-0.5), 2.0)
    assert e.exact and e.estimate == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("beta", [0.5, 1.0, 3.0])
def test_rho_poisson_mc(beta):
    e = rho_estimate(poisson_law(), beta, count=10**6, seed=3, exact=False)
    assert e.covers(2.0)
    assert e.ci_low <= e.estimate <= e.ci_high


def test_rho_beta_zero_counts_children():
    e = rho_estimate(laws.small_discrete(), 0.0, count=10**6, seed=4, exact=False)
    assert e.covers(1.3)
    assert closed_rho(laws.small_discrete(), 0.0) == pytest.approx(1.3)


def test_mu_examples():
    assert mu_estimate(laws.two_point_lattice(), 1.0).estimate == pytest.approx(math.log(2) / 3, rel=1e-14)
    assert mu_estimate(laws.lognormal(), 2.0).estimate == pytest.approx(0.65343, abs=1e-5)
    assert mu_estimate(det_law(1, 1.0), 1.3).estimate == 0.0


def test_mu_mc_matches_closed_form():
    e = mu_estimate(laws.lognormal(), 2.0, count=10**6, seed=5, exact=False)
    assert not e.exact
    assert abs(e.estimate - closed_mu(laws.lognormal(), 2.0)) <= 1.3 * e.half_width


def test_moment_report_rows():
    rep = moment_report(laws.small_discrete(), [0.5, 1.0, 2.0])
    rows = list(rep.rows())
    assert [r[0] for r in rows] == [0.5, 1.0, 2.0]
    for beta, rho, lo, hi, flag in rows:
        assert lo <= rho <= hi and flag


# -- solve_alpha --------------------------------------------------------------

def test_alpha_two_point():
    r = solve_alpha(laws.two_point_lattice(), bracket=(0.1, 4))
    assert r.alpha == pytest.approx(1.0, abs=1e-10)
    assert r.mu == pytest.approx(math.log(2) / 3, rel=1e-9)


def test_alpha_lognormal():
    r = solve_alpha(laws.lognormal())
    assert abs(r.alpha - 2.0) < 1e-10
    assert r.mu > 0


def test_alpha_no_root():
    with pytest.raises(NoRootError, match="no root"):
        solve_alpha(det_law(1, 0.5))


def test_alpha_down_crossing_reported():
    # rho = 2 * 0.5**a crosses 1 downward at a = 1 where mu < 0
    with pytest.raises(NonPositiveMuError, match="mu <= 0") as info:
        solve_alpha(det_law(2, 0.5))
    assert info.value.alpha == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("bracket", [(0.1, 4), (0.5, 3), (1.5, 2.5), (1e-3, 16)])
def test_alpha_bracket_invariance(bracket):
    assert solve_alpha(laws.small_discrete(), bracket=bracket).alpha == pytest.approx(
        solve_alpha(laws.small_discrete()).alpha, abs=1e-10)


def test_alpha_mc_mode():
    law = laws.lognormal()
    r = solve_alpha(law, mode="mc", count=10**6, seed=2)
    assert r.method == "mc"
    assert abs(r.alpha - 2.0) <= max(r.diagnostics["alpha_half_width"] * 3, 0.02)
    lo, hi = r.diagnostics["mu_ci"]
    assert lo > 0


def test_mu_positive_with_margin():
    for make in (laws.small_discrete, laws.lognormal, laws.two_point_lattice):
        law = make()
        r = solve_alpha(law)
        e = mu_estimate(law, r.alpha, count=10**6, seed=9, exact=False)
        assert e.estimate - e.half_width > 0


# -- generation moments ---------------------------------------------------------

def test_pi_check_unit_rho():
    for law, beta in ((det_law(2, 2**-0.5), 2.0), (det_law(2, 0.5), 1.0)):
        rows = pi_moment_check(law, beta, 6, count=1000)
        assert all(r.passed for r in rows)
        assert all(abs(r.estimate - 1) < 1e-12 for r in rows)


def test_pi_check_mc_discrete():
    rows = pi_moment_check(laws.small_discrete(), 1.0, 5, count=10**5, seed=1)
    assert all(r.passed for r in rows)


def test_pi_exact_oracle():
    law = laws.small_discrete()
    for beta in (0.5, 1.0, 1.7):
        rho = closed_rho(law, beta)
        for n in range(5):
            assert pi_moment_exact(law, beta, n) == pytest.approx(rho**n, rel=1e-12)


def test_wn_geometric_tight():
    rows = wn_bound_check(laws.geometric_path(), 1.0, 8, count=100)
    for r in rows:
        assert r.estimate == 2.0**-r.n == r.reference
        assert r.passed


def test_wn_exact_bound_two_point():
    law = laws.two_point_lattice(0.3)
    qb, rho = law.q_abs_moment(0.5), closed_rho(law, 0.5)
    for n in range(7):
        assert wn_abs_moment_exact(law, 0.5, n) <= qb * rho**n * (1 + 1e-12)


def test_wn_check_beta_above_one_rate():
    law = parse_law({"n": {"kind": "table", "values": [1, 2], "probs": [0.5, 0.5]},
                     "c": {"magnitude": {"kind": "two_point", "values": [0.5, 0.2], "p": 0.5}, "q_neg": 0.5},
                     "q": {"kind": "two_point", "values": [1, -1], "p": 0.5}})
    rows = wn_bound_check(law, 1.5, 6, count=10**5, seed=3)
    assert all(r.passed for r in rows)


@pytest.mark.parametrize("make", [laws.lognormal, laws.symmetric_lognormal])
def test_r_moments_stable_in_depth(make):
    law = make()
    gamma = solve_alpha(law).alpha / 3
    n = pick_depth(law)
    a = np.abs(batch_R(law, n, 10**5, seed=1, method="pool").values) ** gamma
    b = np.abs(batch_R(law, 2 * n, 10**5, seed=2, method="pool").values) ** gamma
    se = math.hypot(a.std() / math.sqrt(len(a)), b.std() / math.sqrt(len(b)))
    assert np.isfinite(a.mean()) and abs(a.mean() - b.mean()) <= 3 * se
