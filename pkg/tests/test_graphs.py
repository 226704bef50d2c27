import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chlimit import graphs
from chlimit.graphs import (
    GraphError,
    PiSpec,
    beta_interval,
    hat_beta,
    hat_pi_eps,
    moreau_yosida,
    parse_graph,
    pi_eps,
    resolvent,
    yosida,
    yosida_prime,
)

CATALOG = list(graphs.graph_catalog().values())
IDS = [g.id for g in CATALOG]

graph_st = st.sampled_from(CATALOG)
lam_st = st.floats(-4, 0).map(lambda e: 10.0**e)
r_st = st.floats(-10, 10, allow_nan=False)


def _bisect(fun, lo, hi, n=200):
    for _ in range(n):
        mid = 0.5 * (lo + hi)
        if fun(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# -- examples ----------------------------------------------------------------

def test_hat_beta_examples():
    assert hat_beta(graphs.Identity(), 2.0) == 2.0
    obstacle = parse_graph("double_obstacle:0,1")
    assert hat_beta(obstacle, 0.5) == 0.0
    assert hat_beta(obstacle, 1.7) == math.inf
    assert hat_beta(parse_graph("porous:2"), -2.0) == pytest.approx(8.0 / 3.0, rel=1e-15)


def test_resolvent_examples():
    assert resolvent(graphs.Identity(), 1.0, 2.0) == pytest.approx(1.0, abs=1e-15)
    assert resolvent(graphs.Cubic(), 1.0, 2.0) == pytest.approx(1.0, abs=1e-12)
    assert resolvent(parse_graph("double_obstacle:0,1"), 0.5, 1.7) == 1.0


def test_penrose_fife_resolvent_matches_bisection():
    expected = _bisect(lambda s: s - 0.1 / s - 0.5, 1e-16, 0.5 + 0.1 * 1e3)
    s = resolvent(graphs.PenroseFife(), 0.1, 0.5)
    assert s > 0
    assert s == pytest.approx(expected, rel=1e-12)


def test_yosida_examples():
    assert yosida(graphs.Identity(), 1.0, 2.0) == pytest.approx(1.0, abs=1e-15)
    assert yosida(parse_graph("stefan:1,1,1"), 0.3, 0.5) == 0.0


def test_porous_yosida_quadratic_formula():
    # s + 0.5 s^2 = 3 has positive root -1 + sqrt(7)
    s = -1.0 + math.sqrt(1.0 + 2.0 * 3.0)
    expected = (3.0 - s) / 0.5
    g = parse_graph("porous:2")
    assert resolvent(g, 0.5, 3.0) == pytest.approx(s, rel=1e-12)
    assert yosida(g, 0.5, 3.0) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(2.708497377870819, rel=1e-12)


def test_moreau_yosida_examples():
    assert moreau_yosida(graphs.Identity(), 1.0, 2.0) == pytest.approx(1.0, abs=1e-15)
    stefan = parse_graph("stefan:1,1,1")
    assert moreau_yosida(stefan, 0.3, 0.5) == hat_beta(stefan, 0.5)
    assert moreau_yosida(parse_graph("double_obstacle:0,1"), 0.5, 1.7) == pytest.approx(0.49, abs=1e-15)


def test_pi_examples():
    assert pi_eps(PiSpec("sqrt", 1.0), 0.04, 2.0) == pytest.approx(-0.4, abs=1e-15)
    assert pi_eps(PiSpec("linear", 2.5), 0.3, 0.0) == 0.0
    assert pi_eps(PiSpec("linear", 1.0), 0.1, -3.0) == pytest.approx(0.3, abs=1e-15)
    assert hat_pi_eps(PiSpec("linear", 1.0), 0.5, 2.0) == pytest.approx(-1.0)


def test_sigma_shape():
    for kind in ("sqrt", "linear"):
        p = PiSpec(kind)
        assert p.sigma(1.0) == 1.0
        e = np.linspace(1e-6, 1, 50)
        s = np.array([p.sigma(x) for x in e])
        assert np.all(np.diff(s) > 0)
        assert p.sigma(1e-300) < 1e-100


def test_pi_rejects_eps_out_of_range():
    with pytest.raises(GraphError):
        pi_eps(PiSpec(), 0.0, 1.0)
    with pytest.raises(GraphError):
        pi_eps(PiSpec(), 1.5, 1.0)


def test_lambda_must_be_positive():
    with pytest.raises(GraphError):
        resolvent(graphs.Identity(), 0.0, 1.0)


# -- catalog and parsing ------------------------------------------------------

@pytest.mark.parametrize("text", [
    "identity", "cubic", "stefan:1,2,3", "porous:2", "fast:0.5", "double_obstacle:-1,1", "penrose_fife",
])
def test_parse_roundtrip(text):
    g = parse_graph(text)
    assert parse_graph(g.id) == g


@pytest.mark.parametrize("text", [
    "hele_shaw", "porous:0.5", "fast:2", "stefan:1,1", "identity:1", "porous:x", "double_obstacle:1,2",
])
def test_parse_rejects(text):
    with pytest.raises(GraphError):
        parse_graph(text)


def test_metadata():
    assert not parse_graph("fast:0.5").a2_holds
    assert not graphs.PenroseFife().a2_holds
    assert graphs.PenroseFife().domain == (0.0, math.inf)
    assert parse_graph("double_obstacle:0,1").multivalued
    assert all(g.a2_holds for g in CATALOG if g.kind not in ("fast", "penrose_fife"))


@pytest.mark.parametrize("g", [g for g in CATALOG if g.kind != "penrose_fife"], ids=lambda g: g.id)
def test_normalisation(g):
    assert hat_beta(g, 0.0) == 0.0
    lo, hi = beta_interval(g, 0.0)
    assert lo <= 0.0 <= hi
    r = np.linspace(-10, 10, 2001)
    assert np.all(hat_beta(g, r) >= 0)


def test_penrose_fife_normalised_at_one():
    g = graphs.PenroseFife()
    assert hat_beta(g, 1.0) == 0.0
    assert hat_beta(g, 0.0) == math.inf
    assert hat_beta(g, -1.0) == math.inf


@pytest.mark.parametrize("g", [g for g in CATALOG if g.a2_holds], ids=lambda g: g.id)
def test_growth_condition(g):
    r = np.linspace(-20, 20, 4001)
    assert np.all(hat_beta(g, r) >= g.c1 * r * r - g.c2 - 1e-12)


def test_obstacle_interval_at_endpoints():
    g = parse_graph("double_obstacle:0,1")
    assert beta_interval(g, 0.0) == (-math.inf, 0.0)
    assert beta_interval(g, 1.0) == (0.0, math.inf)
    lo, hi = beta_interval(g, 2.0)
    assert math.isnan(lo) and math.isnan(hi)


def test_vectorised_matches_scalar():
    g = parse_graph("fast:0.5")
    r = np.linspace(-5, 5, 11)
    vec = resolvent(g, 0.1, r)
    assert np.array_equal(vec, np.array([resolvent(g, 0.1, x) for x in r]))


# -- properties ---------------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(g=graph_st, r1=r_st, r2=r_st)
def test_beta_monotone(g, r1, r2):
    lo1, hi1 = beta_interval(g, r1)
    lo2, hi2 = beta_interval(g, r2)
    if any(math.isnan(v) for v in (lo1, hi1, lo2, hi2)):
        return
    if r1 < r2:
        assert hi1 <= lo2
    elif r2 < r1:
        assert hi2 <= lo1


@settings(max_examples=400, deadline=None)
@given(g=graph_st, lam=lam_st, r=r_st)
def test_resolvent_identity_and_selection(g, lam, r):
    s = resolvent(g, lam, r)
    y = yosida(g, lam, r)
    assert abs(r - s - lam * y) <= 1e-10 * max(1.0, abs(r))
    lo, hi = beta_interval(g, s)
    if g.multivalued and (s == lo or s == hi or lo != hi):
        assert lo - 1e-8 <= y <= hi + 1e-8
    else:
        assert y == pytest.approx(lo, abs=1e-8, rel=1e-8)


@settings(max_examples=400, deadline=None)
@given(g=graph_st, lam=lam_st, r1=r_st, r2=r_st)
def test_nonexpansive_and_lipschitz(g, lam, r1, r2):
    d = abs(r1 - r2)
    assert abs(resolvent(g, lam, r1) - resolvent(g, lam, r2)) <= d * (1 + 1e-12) + 1e-12
    assert abs(yosida(g, lam, r1) - yosida(g, lam, r2)) <= d / lam * (1 + 1e-9) + 1e-9 / lam


@settings(max_examples=300, deadline=None)
@given(g=graph_st, lam=lam_st, r=r_st)
def test_envelope_below_potential_and_monotone_in_lambda(g, lam, r):
    hb = hat_beta(g, r)
    my = moreau_yosida(g, lam, r)
    assert math.isfinite(my)
    if math.isfinite(hb):
        assert my <= hb + 1e-12 * max(1.0, abs(hb))
    assert moreau_yosida(g, 2 * lam, r) <= my + 1e-12 * max(1.0, abs(my))


@settings(max_examples=300, deadline=None)
@given(g=graph_st, lam=lam_st, r=r_st)
def test_envelope_derivative(g, lam, r):
    h = 1e-6
    js = resolvent(g, lam, np.array([r - h, r + h]))
    if any(min(js) - 1e-9 <= k <= max(js) + 1e-9 for k in g.kinks):
        return
    fd = (moreau_yosida(g, lam, r + h) - moreau_yosida(g, lam, r - h)) / (2 * h)
    assert abs(fd - yosida(g, lam, r)) <= 1e-4


@settings(max_examples=200, deadline=None)
@given(g=st.sampled_from([g for g in CATALOG if g.a2_holds]), lam=lam_st, r=r_st)
def test_growth_chain(g, lam, r):
    s = resolvent(g, lam, r)
    lower = (r - s) ** 2 / (2 * lam) + g.c1 * s * s - g.c2
    assert moreau_yosida(g, lam, r) >= lower - 1e-9 * max(1.0, abs(lower))


@settings(max_examples=200, deadline=None)
@given(kind=st.sampled_from(["sqrt", "linear"]), c3=st.floats(0.1, 5), eps=st.floats(1e-8, 1.0), r=r_st)
def test_pi_bounds(kind, c3, eps, r):
    p = PiSpec(kind, c3)
    bound = c3 * p.sigma(eps)
    assert abs(pi_eps(p, eps, 0.0)) + abs(graphs.pi_eps_prime(p, eps)) <= bound * (1 + 1e-15)
    assert abs(pi_eps(p, eps, r)) <= bound * (1 + abs(r)) * (1 + 1e-15)
    assert abs(hat_pi_eps(p, eps, r)) <= bound * (1 + r * r) * (1 + 1e-15)


@settings(max_examples=200, deadline=None)
@given(g=graph_st, lam=lam_st, r=r_st)
def test_yosida_prime_matches_difference(g, lam, r):
    h = 1e-7 * max(1.0, abs(r))
    js = resolvent(g, lam, np.array([r - h, r + h]))
    if any(min(js) - 1e-9 <= k <= max(js) + 1e-9 for k in g.kinks):
        return
    fd = (yosida(g, lam, r + h) - yosida(g, lam, r - h)) / (2 * h)
    assert yosida_prime(g, lam, r) == pytest.approx(fd, rel=1e-4, abs=1e-4 / lam)
    assert 0.0 <= yosida_prime(g, lam, r) <= 1.0 / lam * (1 + 1e-12)
