import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import sparse

from branchwalk import ctbrw, registry, spectral
from branchwalk.model import BRWModel, OffspringDistribution, SiteSpace
from strategies import explicit_models

P, EPS = 2 / 3, 1 / 9


def single_site(mean_two_prob):
    law = OffspringDistribution.from_pairs([(1 - mean_two_prob, {}), (mean_two_prob, {0: 2})])
    return BRWModel(SiteSpace.explicit((0,)), {0: law})


@given(st.integers(1, 6), st.data())
def test_perron_root_matches_dense_eigenvalues(n, data):
    vals = data.draw(st.lists(st.sampled_from([0.0, 0.0, 0.5, 1.0, 2.5]),
                              min_size=n * n, max_size=n * n))
    M = np.array(vals).reshape(n, n)
    res = spectral.perron_root(sparse.csr_matrix(M), tol=1e-13)
    oracle = max(abs(np.linalg.eigvals(M))) if n else 0.0
    assert res.value == pytest.approx(oracle, rel=1e-9, abs=1e-12)


def test_estimate_Ms_examples():
    assert spectral.estimate_Ms(registry.counterexample3(), 1).value == pytest.approx(2, abs=1e-10)
    assert spectral.estimate_Ms(single_site(0.6), 0).value == pytest.approx(1.2)
    unit = ctbrw.discrete_counterpart(ctbrw.tree_ct(4, 20), 1.0)
    est = spectral.estimate_Ms(unit, 0, radii=[2, 5, 10, 20])
    values = [v for _, v in est.history]
    assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
    assert abs(est.value - 2 * math.sqrt(3)) <= 0.05


def test_estimate_Mw_examples():
    m = registry.irreducible_n(P, EPS, 100)
    est = spectral.estimate_Mw(m, 0)
    assert est.value == pytest.approx(2 * P - EPS, abs=1e-15) and est.bound == "exact"
    assert spectral.estimate_Mw(single_site(0.7), 0).value == pytest.approx(1.4)
    unit = ctbrw.discrete_counterpart(ctbrw.tree_ct(4, 30), 1.0)
    assert spectral.estimate_Mw(unit, 0).value == pytest.approx(4.0)
    raw = spectral.estimate_Mw(unit, 0, use_shortcut=False)
    assert raw.bound == "lower" and raw.value <= 4.0 + 1e-9


def test_phi_series_examples():
    m = registry.irreducible_n(P, EPS, 200)
    s = spectral.phi_series(m, 0, 0, 400)
    cf = spectral.phi_closed_form_irreducible_n(P, EPS, 1.0)
    assert cf == pytest.approx(0.25538198680928614, abs=1e-15)
    assert abs(s(1.0) - cf) <= 1e-4
    from branchwalk.model import first_moment
    M = first_moment(m).matrix
    assert s.coef[0] == pytest.approx(M[0, 0])
    assert spectral.phi_series(m, 0, 1, 5).coef[0] == pytest.approx(M[0, 1])
    red = spectral.phi_series(registry.reducible_n(0.7, 50), 0, 0, 50)
    assert np.all(red.coef == 0)


def test_Ms_from_phi_examples():
    cx3 = spectral.Ms_from_phi(registry.counterexample3(), 1, N=200)
    assert 1 / cx3.value == pytest.approx(0.5, abs=1e-6)
    irr = spectral.Ms_from_phi(registry.irreducible_n(P, EPS, 200), 0)
    assert irr.value <= 1.0
    assert spectral.Ms_from_phi(single_site(0.6), 0).value == pytest.approx(1.2, rel=1e-10)


def test_local_survival_test_examples():
    assert spectral.local_survival_test(registry.counterexample3(), 1).survives
    irr = spectral.local_survival_test(registry.irreducible_n(P, EPS, 200), 0)
    assert not irr.survives
    near = spectral.local_survival_test(registry.tree_edge(4, 0.29, radius=20), 0)
    assert near.survives and near.near_critical
    assert near.estimate == pytest.approx(0.29 * 2 * math.sqrt(3))


@given(explicit_models(min_sites=1, max_sites=4), st.floats(0.1, 10.0))
def test_perron_scaling_equivariance(m, c):
    from branchwalk.model import first_moment
    M = first_moment(m).matrix
    a = spectral.perron_root(M, tol=1e-13).value
    b = spectral.perron_root(c * M, tol=1e-13).value
    assert b == pytest.approx(c * a, rel=1e-9, abs=1e-12)


@given(st.floats(0.05, 2.0), st.floats(1.1, 3.0))
def test_counterpart_estimates_scale_with_lambda(lam, c):
    ct = ctbrw.tree_ct(4, 15, loop=2.0)
    a = ctbrw.discrete_counterpart(ct, lam)
    b = ctbrw.discrete_counterpart(ct, c * lam)
    assert spectral.estimate_Ms(b, 0).value == pytest.approx(
        c * spectral.estimate_Ms(a, 0).value, rel=1e-9)
    assert spectral.estimate_Mw(b, 0, n_max=60).value == pytest.approx(
        c * spectral.estimate_Mw(a, 0, n_max=60).value, rel=1e-9)
