import math

import numpy as np
import pytest
from scipy.optimize import brentq

from branchwalk import ctbrw, genfun
from branchwalk.model import ModelError, first_moment


def test_counterpart_tree_edge():
    ct = ctbrw.tree_ct(4, 2, radial=False)
    m = ctbrw.discrete_counterpart(ct, 0.3)
    root = ()
    law = m.law(root)
    assert law.mean == pytest.approx(1.2)
    assert sorted(p for _, p in law.diffusion) == [0.25] * 4
    M = first_moment(m).matrix
    i = m.index[root]
    for t in ((0,), (1,), (2,), (3,)):
        assert M[i, m.index[t]] == pytest.approx(0.3)


def test_counterpart_mean_is_lambda_k():
    ct = ctbrw.tree_ct(4, 10, loop=5.0)
    m = ctbrw.discrete_counterpart(ct, 0.2)
    for s in (0, 1, 5):
        assert m.law(s).mean == pytest.approx(0.2 * ct.k(s))
    M = first_moment(m).matrix
    assert M[0, 0] == pytest.approx(5 * 0.2)
    assert M[0, 1] == pytest.approx(4 * 0.2)


def test_critical_params_tree():
    cp = ctbrw.critical_params(ctbrw.tree_ct(4, 20), 0)
    assert cp.lambda_w == 0.25 and cp.exact_w
    assert cp.lambda_s == pytest.approx(1 / (2 * math.sqrt(3)))
    assert abs(1 / cp.K_s - 0.288675) <= 5e-3


def _loop_threshold_oracle(d=4, loop=5.0):
    # first-return equation at the root: loop z + d z R(z) = 1, with R the
    # first-passage function of a branch: R = z + (d - 1) z R^2
    def R(z):
        return (1 - math.sqrt(max(0.0, 1 - 4 * (d - 1) * z * z))) / (2 * (d - 1) * z)
    return brentq(lambda z: loop * z + d * z * R(z) - 1, 1e-6, 1 / (2 * math.sqrt(d - 1)),
                  xtol=1e-15)


def test_loop_local_threshold():
    ct = ctbrw.add_loop(ctbrw.tree_ct(4, 200), 0, 5.0)
    cp = ctbrw.critical_params(ct, 0)
    oracle = _loop_threshold_oracle()
    assert oracle == pytest.approx(0.17330032543, abs=1e-10)
    assert cp.lambda_s == pytest.approx(oracle, abs=1e-9)
    assert cp.lambda_s <= 1 / 5


def test_single_site_params():
    cp = ctbrw.critical_params(ctbrw.single_site_ct(2.5), 0)
    assert cp.lambda_s == pytest.approx(0.4) and cp.lambda_w == pytest.approx(0.4)


def test_modify_local():
    ct = ctbrw.tree_ct(4, 10)
    same = ctbrw.modify_local(ct, {0}, {0: ct.rows[0]})
    assert same.rows == ct.rows and same.tag == ct.tag and same.bp_like
    with pytest.raises(ModelError):
        ctbrw.modify_local(ct, {0}, {0: ct.rows[0], 1: ct.rows[1]})
    loop = ctbrw.add_loop(ct, 0, 5.0)
    assert loop.k(0) == 9 and not loop.bp_like


def test_tree_global_extinction():
    assert ctbrw.tree_global_extinction(4, 0.3) == pytest.approx(1 / 1.2)
    assert ctbrw.tree_global_extinction(4, 0.2) == 1.0
    assert ctbrw.tree_global_extinction(4, 0.25) == 1.0


def test_classify_phase_cases():
    ct = ctbrw.tree_ct(4, 200)
    pd = ctbrw.classify_phase(ct, ctbrw.add_loop(ct, 0, 5.0), [0], 0, [0.15, 0.22, 0.27, 0.30])
    got = [(r.case, r.regime, r.direct) for r in pd.rows]
    assert got == [("i", "global-extinction", "global-extinction"),
                   ("ii", "strong-local", "strong-local"),
                   ("iv", "non-strong-local", "non-strong-local"),
                   ("v", "strong-local", "strong-local")]
    assert pd.hypothesis
    for r in pd.rows:
        assert r.q_bar_original == pytest.approx(ctbrw.tree_global_extinction(4, r.lam), abs=1e-8)


def test_classify_phase_needs_modification():
    ct = ctbrw.tree_ct(4, 20)
    with pytest.raises(ModelError):
        ctbrw.classify_phase(ct, ct, [0], 0, [0.3])


def test_survives_globally_brackets():
    ct = ctbrw.tree_ct(4, 100)
    assert ctbrw.survives_globally(ct, 0.3, 0, "ghost-die")
    assert not ctbrw.survives_globally(ct, 0.2, 0, "ghost-survive")


def test_classify_phase_rejects_cofinite_targets():
    ct = ctbrw.tree_ct(4, 20)
    with pytest.raises(ModelError):
        ctbrw.classify_phase(ct, ctbrw.add_loop(ct, 0, 5.0), genfun.CoFinite(frozenset()), 0,
                             [0.3])
