import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from branchwalk import genfun, registry
from branchwalk.model import ModelError
from strategies import explicit_models

P, EPS = 2 / 3, 1 / 9


def vec(data, n):
    return np.array(data.draw(st.lists(st.floats(0, 1), min_size=n, max_size=n)))


# -- G --------------------------------------------------------------------

def test_apply_G_counterexample1():
    assert np.allclose(genfun.apply_G(registry.counterexample1(), [0.5, 0.5]).values,
                       [0.25, 0.75], atol=1e-15)


@pytest.mark.parametrize("make", [registry.counterexample2, registry.counterexample3,
                                  lambda: registry.irreducible_n(N=50),
                                  lambda: registry.tree_edge_loop(radius=50)])
def test_apply_G_at_ones_is_ones(make):
    m = make()
    assert np.array_equal(genfun.apply_G(m, np.ones(m.n), "ghost-die").values, np.ones(m.n))


@given(explicit_models(), st.data())
def test_G_monotone(m, data):
    z = vec(data, m.n)
    w = np.maximum(z, vec(data, m.n))
    assert (genfun.apply_G(m, z).values <= genfun.apply_G(m, w).values + 1e-15).all()


@given(explicit_models(), st.data())
def test_G_batch_matches_single(m, data):
    Z = np.array([vec(data, m.n) for _ in range(3)])
    batch = genfun.apply_G_batch(m, Z)
    for k in range(3):
        assert np.allclose(batch[k], genfun.apply_G(m, Z[k]).values, atol=1e-15)


# -- extinction -----------------------------------------------------------

def test_reducible_n_ghost_survive_interior_and_oracle():
    p, N = 0.7, 100
    q = genfun.global_extinction(registry.reducible_n(p, N), 1e-13, policy="ghost-survive")
    z, nxt = np.empty(N + 1), 0.0
    for n in range(N, -1, -1):
        z[n] = nxt = 1 - p + p * nxt * nxt
    assert np.abs(q.values - z).max() <= 1e-9
    assert np.abs(q.values[:50] - 3 / 7).max() <= 1e-9
    assert q.converged and q.monotone


def test_irreducible_n_global_extinction():
    m = registry.irreducible_n(P, EPS, 200)
    q = genfun.global_extinction(m, 1e-13, policy="ghost-survive")
    assert np.abs(q.values[:100] - 0.6).max() <= 1e-6
    qd = genfun.global_extinction(m, 1e-13, policy="ghost-die")
    assert (q.values <= qd.values + 1e-12).all()


def test_subcritical_extinct():
    q = genfun.global_extinction(registry.binary_bp(0.4))
    assert q[0] == pytest.approx(1.0, abs=1e-9)


def test_never_visit_examples():
    m = registry.reducible_n(0.7, 40)
    q0 = genfun.never_visit_prob(m, [0])
    assert q0[0] == 0.0
    assert q0[1] == 1.0


def test_local_extinction_reducible_n():
    m = registry.reducible_n(0.7, 60).with_policy("ghost-survive")
    # finite A: escapees never return, so ghost-die is the converging policy
    assert np.allclose(genfun.local_extinction(m, [0, 1, 2], policy="ghost-die").values, 1.0)
    whole = genfun.local_extinction(m, list(m.sites), 1e-12)
    glob = genfun.global_extinction(m, 1e-12)
    assert np.abs(whole.values - glob.values).max() <= 1e-9


def test_local_extinction_tree_strong():
    m, _ = genfun.grow_window(registry.tree_edge(4, 0.3, radius=100), 0, [0])
    q = genfun.local_extinction(m, [0], policy="ghost-die")
    assert q[0] == pytest.approx(1 / 1.2, abs=1e-8)
    assert q[3] == pytest.approx(1 / 1.2, abs=1e-8)


def test_q0_below_qbar_in_strong_loop_regime():
    m = registry.tree_edge_loop(4, 5.0, 0.22, radius=200)
    q0 = genfun.never_visit_prob(m, [0], policy="ghost-die").values
    qb = genfun.global_extinction(m, policy="ghost-survive").values
    assert (q0[:100] <= qb[:100] + 1e-9).all()


@given(explicit_models(min_sites=2, max_sites=4), st.data())
def test_extinction_ordering_in_A(m, data):
    sites = list(m.sites)
    B = data.draw(st.lists(st.sampled_from(sites), min_size=1, unique=True))
    A = data.draw(st.lists(st.sampled_from(B), min_size=1, unique=True))
    qA = genfun.local_extinction(m, A, 1e-12).values
    qB = genfun.local_extinction(m, B, 1e-12).values
    qb = genfun.global_extinction(m, 1e-12).values
    slack = 1e-7
    assert (qB <= qA + slack).all()
    assert (qb <= qB + slack).all()


@given(explicit_models(min_sites=1, max_sites=3), st.data())
def test_qbar_below_every_subsolution(m, data):
    qb = genfun.global_extinction(m, 1e-13).values
    z = vec(data, m.n)
    for _ in range(3):
        z = np.maximum(z, genfun.apply_G(m, z).values)
    ok, _ = genfun.is_in_UG(m, z)
    assume(ok)
    assert (qb <= z + 1e-8).all()


def test_tol_validation():
    with pytest.raises(ValueError):
        genfun.global_extinction(registry.counterexample1(), tol=0.0)


# -- classification -------------------------------------------------------

def test_classify_examples():
    tree = registry.tree_edge(4, 0.27, radius=400)
    assert genfun.classify(tree, 0, [0]).regime == "pure-global"
    loop, _ = genfun.grow_window(registry.tree_edge_loop(4, 5.0, 0.27, radius=200), 0, [0])
    assert genfun.classify(loop, 0, [0]).regime == "non-strong-local"
    assert genfun.classify(registry.binary_bp(0.4), 0, [0]).regime == "global-extinction"
    with pytest.raises(ModelError):
        genfun.classify(registry.counterexample1(), 7, [1])


def test_check_strong_condition_examples():
    tree = registry.tree_edge(4, 0.27, radius=200)
    res = genfun.check_strong_condition(tree, [0])
    assert not res.holds and res.witness is not None
    assert genfun.check_strong_condition(registry.counterexample1(), [1, 2]).holds
    loop = registry.tree_edge_loop(4, 5.0, 0.22, radius=200)
    assert genfun.check_strong_condition(loop, [0]).holds


# -- sub-solutions, fixed points, convexity -------------------------------

def test_is_in_UG_examples():
    m = registry.counterexample3()
    assert genfun.is_in_UG(m, [0.5, 0.5, 1.0])[0]
    ok, site = genfun.is_in_UG(m, [0.5, 0.75, 0.75])
    assert not ok and site == 1
    assert genfun.is_in_UG(m, [1, 1, 1])[0]


@pytest.mark.parametrize("make,expected", [
    (registry.counterexample1, [(0.0, 0.5), (1.0, 1.0)]),
    (registry.counterexample2, [(1 / 3, 1 / 3), (1.0, 1.0)]),
])
def test_enumerate_fixed_points(make, expected):
    fps = sorted(tuple(f.values) for f in genfun.enumerate_fixed_points(make()))
    assert len(fps) == len(expected)
    assert np.abs(np.array(fps) - np.array(expected)).max() <= 1e-8


def test_counterexample3_corner_fixed_points():
    fps = genfun.enumerate_fixed_points(registry.counterexample3(), resolution=41)
    corners = sorted(tuple(np.round(f.values, 8)) for f in fps
                     if np.all(np.isclose(f.values, np.round(f.values), atol=1e-8)))
    assert corners == [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0)]


def test_convexity_witness_examples():
    w = genfun.convexity_witness(registry.counterexample1())
    assert w is not None
    assert np.array_equal(w.z, [1.0, 0.0]) and np.array_equal(w.w, [0.0, 1.0])
    assert w.t == 0.5 and w.component == 1 and w.gap == pytest.approx(0.25)
    assert genfun.convexity_witness(registry.counterexample2(), samples=20_000) is None


@given(explicit_models(min_sites=1, max_sites=3), st.data())
def test_comparable_segments_never_witness(m, data):
    z = vec(data, m.n)
    w = np.minimum(1.0, z + vec(data, m.n))
    t = np.array([data.draw(st.floats(0, 1))])
    assert genfun._convexity_check(m, z[None], w[None], t, 1e-10, None) is None


def test_ug_grid_counterexample1():
    bad, total = genfun.ug_grid_check(registry.counterexample1(),
                                      lambda z: 2 * z[1] >= z[0] + 1, 200)
    assert bad == 0 and total == 40_000


def test_ug_mesh_shape():
    rows = genfun.ug_mesh(registry.counterexample3(), resolution=5, samples=21)
    assert len(rows) == 3 * 25
    assert all(r[0] in (1, 2, 3) for r in rows)


# -- families -------------------------------------------------------------

@pytest.mark.parametrize("z0", [0.65, 0.8, 0.95])
def test_irreducible_family(z0):
    fam = genfun.fixedpoint_family("irreducible", P, EPS, z0, 500)
    assert fam.valid and fam.residual < 1e-12
    assert np.all(np.diff(fam.z[:60]) > 0)


def test_family_constants_and_gates():
    assert genfun.fixedpoint_family("reducible", 0.7, 0.0, 3 / 7, 50).constant
    assert np.all(genfun.fixedpoint_family("irreducible", P, EPS, 1.0, 50).z == 1.0)
    with pytest.raises(genfun.FamilyError):
        genfun.fixedpoint_family("irreducible", 0.8, 0.1, 0.8)
    with pytest.raises(genfun.FamilyError):
        genfun.fixedpoint_family("reducible", 0.7, 0.0, 0.2)


def test_family_solves_truncated_model():
    fam = genfun.fixedpoint_family("irreducible", P, EPS, 0.8, 60)
    m = registry.irreducible_n(P, EPS, 59)
    g = genfun.apply_G(m, fam.z[:60], ghost_overrides={60: fam.z[60]}).values
    assert np.abs(g - fam.z[:60]).max() <= 1e-12


def test_translates_report():
    fam = genfun.quasitransitive_translates(P, EPS, 0.8, range(1, 41), range(-10, 11))
    col0 = fam.values[:, fam.i_values.index(0)]
    assert np.allclose(col0, 0.8, atol=1e-12)
    assert set(fam.trend.values()) <= {"increasing", "decreasing", "constant", "mixed"}
    const = genfun.quasitransitive_translates(P, EPS, 0.6, range(1, 5), range(0, 4))
    assert np.allclose(const.values, 0.6)


# -- certificate and windows ----------------------------------------------

def test_survival_certificate_examples():
    m = registry.tree_edge(4, 0.3, radius=30).with_policy("ghost-survive")
    c = genfun.survival_certificate(m, np.full(m.n, 1 / 6))
    assert c.holds and c.certifies and c.min_slack == pytest.approx(0.0, abs=1e-12)
    assert not genfun.survival_certificate(m, np.zeros(m.n)).certifies
    sub = registry.tree_edge(4, 0.2, radius=30).with_policy("ghost-survive")
    assert not genfun.survival_certificate(sub, np.full(sub.n, 0.05)).holds
    with pytest.raises(ModelError):
        genfun.survival_certificate(registry.counterexample1(), [0.1, 0.1])


def test_grow_window_reaches_closed_form():
    m, hist = genfun.grow_window(registry.tree_edge(4, 0.251, radius=50), 0)
    assert hist[-1][0] > 50
    assert hist[-1][1] == pytest.approx(1 / (4 * 0.251), abs=1e-8)
    same, h = genfun.grow_window(registry.counterexample1(), 1)
    assert same.n == 2 and len(h) == 1
