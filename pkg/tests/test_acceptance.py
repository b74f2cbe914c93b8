"""One test per acceptance criterion; each prints a pass/fail line with its runtime."""
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branchwalk import ctbrw, genfun, mc, registry, spectral
from conftest import ACCEPTANCE_LINES
from strategies import explicit_models

import test_genfun
import test_project
import test_spectral


@pytest.fixture
def criterion(request):
    """Times the test body and records one summary line for it."""
    state = {}

    def start(number, title, budget):
        state.update(number=number, title=title, budget=budget, t0=time.perf_counter())

    yield start
    seconds = time.perf_counter() - state["t0"]
    rep = getattr(request.node, "rep_call", None)
    ok = rep is not None and rep.passed and seconds < state["budget"]
    line = (f"criterion {state['number']}: {'PASS' if ok else 'FAIL'}  {state['title']}  "
            f"({seconds:.1f} s, budget {state['budget']:.0f} s)")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert seconds < state["budget"], line


def _points(fps):
    return sorted(tuple(float(v) for v in f.values) for f in fps)


def _close_sets(found, expected, tol):
    return len(found) == len(expected) and all(
        max(abs(a - b) for a, b in zip(f, e)) <= tol for f, e in zip(found, sorted(expected)))


def test_criterion_1_two_site_fixed_points_and_UG(criterion):
    criterion(1, "two-site fixed points, convexity witness, U_G grid", 5)
    m = registry.counterexample1()
    fps = _points(genfun.enumerate_fixed_points(m))
    assert _close_sets(fps, [(0.0, 0.5), (1.0, 1.0)], 1e-8)
    w = genfun.convexity_witness(m)
    assert w is not None
    t = w.t
    lhs = genfun.apply_G(m, t * w.z + (1 - t) * w.w).values
    rhs = t * genfun.apply_G(m, w.z).values + (1 - t) * genfun.apply_G(m, w.w).values
    assert np.any(lhs > rhs)
    bad, total = genfun.ug_grid_check(m, lambda z: 2 * z[1] >= z[0] + 1, 200, 1e-10)
    assert bad == 0 and total == 200 * 200


def test_criterion_2_symmetric_fixed_points(criterion):
    criterion(2, "two fixed points on the bisector, no witness in 1e5 samples", 5)
    m = registry.counterexample2()
    # eliminate y from x = 1/4 + 3/4 y^2, y = 1/4 + 3/4 x^2
    quartic = np.polynomial.Polynomial([-0.25 - 3 / 64, 1.0, -9 / 32, 0.0, -27 / 64])
    xs = sorted(r.real for r in quartic.roots() if abs(r.imag) < 1e-9 and -1e-9 <= r.real <= 1 + 1e-9)
    oracle = [(x, 0.25 + 0.75 * x * x) for x in xs]
    assert np.allclose(oracle, [(1 / 3, 1 / 3), (1.0, 1.0)], rtol=0, atol=1e-8)
    fps = _points(genfun.enumerate_fixed_points(m))
    assert _close_sets(fps, oracle, 1e-8)
    assert genfun.convexity_witness(m, samples=100_000) is None


def test_criterion_3_three_site_example(criterion):
    criterion(3, "three-site corners, U_G points, non-convex segment, M_s = 2", 5)
    m = registry.counterexample3()
    fixed = [c for c in np.ndindex(2, 2, 2)
             if np.array_equal(genfun.apply_G(m, np.array(c, float)).values, np.array(c, float))]
    assert sorted(fixed) == [(0, 0, 0), (1, 1, 1)]
    a, b = np.array([0.5, 0.5, 1.0]), np.array([0.5, 1.0, 0.5])
    assert genfun.is_in_UG(m, a)[0] and genfun.is_in_UG(m, b)[0]
    for t in np.arange(1, 10) / 10:
        ok, site = genfun.is_in_UG(m, t * a + (1 - t) * b)
        assert not ok and site == 1
    assert spectral.estimate_Ms(m, 1).value == pytest.approx(2.0, abs=1e-8)


def _backward_recursion(p, N):
    z, nxt = np.empty(N + 1), 0.0
    for n in range(N, -1, -1):
        z[n] = nxt = 1 - p + p * nxt * nxt
    return z


def test_criterion_4_line_extinction(criterion):
    criterion(4, "line extinction: 3/7 against recursion, 0.6, policy bracketing", 10)
    p, N = 0.7, 100
    m = registry.reducible_n(p, N)
    qs = genfun.global_extinction(m, 1e-13, policy="ghost-survive").values
    qd = genfun.global_extinction(m, 1e-13, policy="ghost-die").values
    oracle = _backward_recursion(p, N)
    assert np.abs(qs - oracle).max() <= 1e-9
    interior = np.abs(oracle - 3 / 7) <= 1e-9
    assert interior[: N // 2].all()
    assert np.abs(qs[interior] - 3 / 7).max() <= 1e-9
    assert np.all(qs <= qd + 1e-12)

    irr = registry.irreducible_n(2 / 3, 1 / 9, 200)
    qs = genfun.global_extinction(irr, 1e-13, policy="ghost-survive").values
    qd = genfun.global_extinction(irr, 1e-13, policy="ghost-die").values
    assert qs[0] == pytest.approx(0.6, abs=1e-6)
    assert np.all(qs <= qd + 1e-12)


def test_criterion_5_first_return_series_and_families(criterion):
    criterion(5, "first-return series, M_s <= 1 with margin, fixed-point families", 30)
    p, eps = 2 / 3, 1 / 9
    m = registry.irreducible_n(p, eps, 200)
    series = spectral.phi_series(m, 0, 0, 400)
    cf = spectral.phi_closed_form_irreducible_n(p, eps, 1.0)
    assert cf == pytest.approx(eps + (1 - math.sqrt(41) / 9) / 2, abs=1e-15)
    assert abs(cf - 0.255385) <= 1e-5
    assert abs(series(1.0) - cf) <= 1e-4
    margin = spectral.LOCAL_MARGIN
    assert spectral.Ms_from_phi(m, 0, series=series).value <= 1 - margin
    assert spectral.estimate_Ms(m, 0).value <= 1 - margin
    for z0 in (0.65, 0.8, 0.95):
        fam = genfun.fixedpoint_family("irreducible", p, eps, z0, 500)
        assert fam.valid, fam.first_failure
        assert fam.residual < 1e-12
        assert len(fam.z) == 501


def test_criterion_6_phase_diagram(criterion):
    criterion(6, "tree phase diagram with a root loop", 600)
    d = 4
    cp = ctbrw.critical_params(ctbrw.tree_ct(d, 20), 0)
    assert cp.exact_w and cp.lambda_w == 0.25
    assert abs(1 / cp.K_s - 0.288675) <= 5e-3
    ct = ctbrw.tree_ct(d, 200)
    pd = ctbrw.classify_phase(ct, ctbrw.add_loop(ct, 0, 5.0), [0], 0)
    assert len(pd.rows) == 60
    assert pd.sequence() == ["global-extinction", "strong-local", "non-strong-local",
                             "strong-local"]
    assert not pd.unflagged_disagreements()
    for r in pd.rows:
        assert abs(r.q_bar_original - min(1.0, 1 / (d * r.lam))) <= 1e-6


def _analytic(model):
    grown, _ = genfun.grow_window(model, 0, [0])
    return genfun.classify(grown, 0, [0])


def test_criterion_7_monte_carlo(criterion):
    criterion(7, "Monte Carlo cross-validation at 1e5 replicates", 900)
    n = 100_000
    bp = mc.simulate(registry.binary_bp(0.7), 0, mc.SimConfig(seed=1, replicates=n, horizon=200))
    assert abs(bp.q_bar.value - 3 / 7) <= 3 * bp.q_bar.se

    tree = mc.simulate(registry.tree_edge(4, 0.3, radius=250), 0,
                       mc.SimConfig(seed=2, replicates=n, horizon=200))
    survival = 1 - tree.q_bar.value
    assert abs(survival - (1 - 1 / 1.2)) <= 3 * tree.q_bar.se

    for lam, expect, seed in ((0.22, "strong-local", 3), (0.27, "non-strong-local", 4)):
        model = registry.tree_edge_loop(4, 5.0, lam, radius=250)
        analytic = _analytic(model)
        assert analytic.regime == expect
        r = mc.estimate_regime(model, 0, [0], mc.SimConfig(seed=seed, replicates=n, horizon=200),
                               analytic=analytic)
        assert r.regime == expect and r.agrees and not r.inconclusive


@settings(max_examples=15, deadline=None)
@given(explicit_models(min_sites=1, max_sites=4), st.integers(0, 2**32), st.integers(2, 6))
def _mc_bit_exact(m, seed, threads):
    cfg = dict(seed=seed, replicates=64, horizon=15, A=[m.sites[0]])
    a = mc.simulate(m, m.sites[0], mc.SimConfig(threads=1, **cfg))
    b = mc.simulate(m, m.sites[0], mc.SimConfig(threads=threads, **cfg))
    for f in ("alive", "visited", "last_visit", "local", "censored", "generations"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_criterion_8_property_suites(criterion):
    criterion(8, "property suites", 300)
    test_genfun.test_G_monotone()
    test_genfun.test_qbar_below_every_subsolution()
    test_genfun.test_extinction_ordering_in_A()
    test_project.test_fixed_points_pull_back()
    test_spectral.test_perron_scaling_equivariance()
    test_spectral.test_counterpart_estimates_scale_with_lambda()
    _mc_bit_exact()
