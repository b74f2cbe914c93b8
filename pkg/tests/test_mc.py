import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from branchwalk import genfun, mc, registry
from branchwalk.model import ModelError


def _fields(out):
    return (out.alive, out.visited, out.last_visit, out.local, out.censored, out.generations)


def test_reproducible_across_threads_and_backends():
    m = registry.irreducible_n(N=60)
    base = mc.simulate(m, 0, mc.SimConfig(seed=7, replicates=400, horizon=40, A=[0], threads=1))
    for threads, numba in ((4, None), (3, False), (1, True)):
        cfg = mc.SimConfig(seed=7, replicates=400, horizon=40, A=[0], threads=threads,
                           numba=numba)
        other = mc.simulate(m, 0, cfg)
        for a, b in zip(_fields(base), _fields(other)):
            assert np.array_equal(a, b)


def test_different_seeds_differ():
    m = registry.binary_bp(0.7)
    a = mc.simulate(m, 0, mc.SimConfig(seed=1, replicates=300, horizon=30))
    b = mc.simulate(m, 0, mc.SimConfig(seed=2, replicates=300, horizon=30))
    assert not np.array_equal(a.generations, b.generations)


def test_horizon_zero_all_alive():
    out = mc.simulate(registry.binary_bp(0.3), 0, mc.SimConfig(replicates=50, horizon=0))
    assert out.alive.all() and out.q_bar.value == 0.0


def test_never_visit_implies_local_extinction():
    m = registry.tree_edge_loop(lam=0.27, radius=80)
    out = mc.simulate(m, 0, mc.SimConfig(seed=3, replicates=500, horizon=60, A=[0]))
    assert not np.any(out.local & ~out.visited)
    assert out.q0.value <= out.q_local.value
    assert out.visited.all()


def test_censoring_is_monotone_in_cap():
    m = registry.binary_bp(0.8)
    big = mc.simulate(m, 0, mc.SimConfig(seed=5, replicates=300, horizon=60, cap=500))
    small = mc.simulate(m, 0, mc.SimConfig(seed=5, replicates=300, horizon=60, cap=50))
    assert np.all(small.censored | ~big.censored)
    assert small.n_censored > 0 and small.warnings
    assert np.all(small.alive[small.censored])


def test_subcritical_dies_out():
    out = mc.simulate(registry.tree_edge(lam=0.2, radius=120), 0,
                      mc.SimConfig(seed=11, replicates=2000, horizon=100))
    assert out.n_censored <= 3
    assert out.q_bar.value == 1.0
    bp = mc.simulate(registry.binary_bp(0.4), 0, mc.SimConfig(replicates=500, horizon=200))
    assert bp.q_bar.value == 1.0


def test_sim_config_validation():
    for kw in ({"replicates": 0}, {"horizon": -1}, {"cap": 0}, {"seed": -1}):
        with pytest.raises(ModelError):
            mc.SimConfig(**kw)
    with pytest.raises(ModelError):
        mc.simulate(registry.binary_bp(), 5, mc.SimConfig(replicates=1))


def test_estimate_regime_small():
    m = registry.tree_edge_loop(lam=0.22, radius=120)
    r = mc.estimate_regime(m, 0, [0], mc.SimConfig(seed=0, replicates=3000, horizon=100))
    assert r.regime == "strong-local" and r.agrees
    assert r.inside["q_bar"]
    sub = mc.estimate_regime(registry.binary_bp(0.3), 0, [0],
                             mc.SimConfig(replicates=500, horizon=100))
    assert sub.regime == "global-extinction" and sub.agrees


@settings(max_examples=10)
@given(st.integers(0, 2**64 - 1), st.integers(0, 10**6))
def test_replicate_stream_is_keyed(seed, index):
    a = mc.replicate_stream(seed, index).random(4)
    b = mc.replicate_stream(seed, index).random(4)
    c = mc.replicate_stream(seed, index + 1).random(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_never_visit_matches_analytic():
    m = registry.irreducible_n(N=40).with_policy("ghost-die")
    exact = genfun.never_visit_prob(m, [0], 1e-13)[3]
    out = mc.simulate(m, 3, mc.SimConfig(seed=9, replicates=20_000, horizon=400, A=[0]))
    assert abs(out.q0.value - exact) <= 3 * out.q0.se
