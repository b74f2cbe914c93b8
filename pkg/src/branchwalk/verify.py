"""Check suites for the registered examples.

Each suite rebuilds its example, runs the analyses and returns a
:class:`VerifyReport` of named assertions plus the tables behind them.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from branchwalk import ctbrw, genfun, mc, project, registry, spectral
from branchwalk.model import ModelError


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: object = None
    expected: object = None
    tol: float | None = None
    detail: str = ""


@dataclass
class VerifyReport:
    tag: str
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, passed, value=None, expected=None, tol=None, detail=""):
        self.checks.append(Check(name, bool(passed), value, expected, tol, detail))

    def close(self, name, value, expected, tol, detail=""):
        value = np.asarray(value, dtype=float)
        expected_a = np.asarray(expected, dtype=float)
        gap = float(np.max(np.abs(value - expected_a))) if value.size else 0.0
        self.add(name, gap <= tol, _plain(value), _plain(expected_a), tol,
                 detail or f"max gap {gap:.3g}")

    def table(self) -> list:
        return [(c.name, "pass" if c.passed else "FAIL", _short(c.value), _short(c.expected),
                 "" if c.tol is None else f"{c.tol:g}", c.detail) for c in self.checks]


def _plain(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a.tolist()


def _short(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, list) and len(v) > 6:
        return f"[{len(v)} values]"
    return str(v)


def _points(fps):
    return sorted(tuple(float(x) for x in f.values) for f in fps)


def _same_sets(found, expected, tol):
    if len(found) != len(expected):
        return False
    return all(max(abs(a - b) for a, b in zip(f, e)) <= tol for f, e in zip(found, sorted(expected)))


# --------------------------------------------------------------------------
# Suites
# --------------------------------------------------------------------------

def suite_counterexample1(rep: VerifyReport):
    m = registry.counterexample1()
    fps = _points(genfun.enumerate_fixed_points(m))
    rep.add("fixed points = {(0, 1/2), (1, 1)}", _same_sets(fps, [(0.0, 0.5), (1.0, 1.0)], 1e-8),
            fps, [(0.0, 0.5), (1.0, 1.0)], 1e-8)
    w = genfun.convexity_witness(m)
    rep.add("convexity witness found", w is not None,
            None if w is None else f"z={w.z.tolist()} w={w.w.tolist()} t={w.t}",
            detail="" if w is None else f"component {w.component}, gap {w.gap:.3g}")
    bad, total = genfun.ug_grid_check(m, lambda z: 2 * z[1] >= z[0] + 1, 200, 1e-10)
    rep.add("U_G = {2y >= x + 1} on 200^2 midpoints", bad == 0, bad, 0,
            detail=f"{total} points checked")
    q = genfun.global_extinction(m)
    rep.close("global extinction = (0, 1/2)", q.values, [0.0, 0.5], 1e-8)


def suite_counterexample2(rep: VerifyReport):
    m = registry.counterexample2()
    fps = _points(genfun.enumerate_fixed_points(m))
    exp = [(1 / 3, 1 / 3), (1.0, 1.0)]
    rep.add("exactly two fixed points at 1/3 and 1 on the bisector",
            _same_sets(fps, exp, 1e-8), fps, exp, 1e-8)
    w = genfun.convexity_witness(m, samples=100_000)
    rep.add("no convexity witness in 1e5 samples", w is None,
            None if w is None else w.gap)


def suite_counterexample3(rep: VerifyReport):
    m = registry.counterexample3()
    corners = [c for c in np.ndindex(2, 2, 2)]
    fixed = [c for c in corners
             if np.allclose(genfun.apply_G(m, np.array(c, float)).values, c, atol=0)]
    rep.add("fixed corners = {(0,0,0), (1,1,1)}", sorted(fixed) == [(0, 0, 0), (1, 1, 1)],
            [list(c) for c in fixed])
    for z in ((0.5, 0.5, 1.0), (0.5, 1.0, 0.5)):
        ok, _ = genfun.is_in_UG(m, z)
        rep.add(f"{z} in U_G", ok)
    a, b = np.array([0.5, 0.5, 1.0]), np.array([0.5, 1.0, 0.5])
    fails = []
    for t in np.round(np.arange(1, 10) / 10, 1):
        ok, site = genfun.is_in_UG(m, t * a + (1 - t) * b)
        if ok or site != 1:
            fails.append(float(t))
    rep.add("convex combinations leave U_G through component 1", not fails, fails, [])
    est = spectral.estimate_Ms(m, 1)
    rep.close("M_s = 2", est.value, 2.0, 1e-8, f"bound {est.bound}")


def _reducible_oracle(p, N):
    z = np.empty(N + 1)
    nxt = 0.0
    for n in range(N, -1, -1):
        z[n] = 1 - p + p * nxt * nxt
        nxt = z[n]
    return z


def suite_reducible_n(rep: VerifyReport, p: float = 0.7, N: int = 100):
    m = registry.reducible_n(p, N)
    qs = genfun.global_extinction(m, 1e-13, policy="ghost-survive")
    qd = genfun.global_extinction(m, 1e-13, policy="ghost-die")
    oracle = _reducible_oracle(p, N)
    rep.close("ghost-survive = backward recursion at every site", qs.values, oracle, 1e-9)
    interior = int(np.flatnonzero(np.abs(oracle - (1 - p) / p) <= 1e-9).max()) + 1
    rep.close(f"= (1-p)/p on sites 0..{interior - 1}", qs.values[:interior],
              np.full(interior, (1 - p) / p), 1e-9,
              "sites within 1e-9 of the constant; boundary layer above")
    rep.close("ghost-die gives all ones", qd.values, np.ones(m.n), 1e-12)
    rep.add("ghost-survive <= ghost-die everywhere", bool((qs.values <= qd.values + 1e-12).all()))
    rep.tables["extinction"] = (["site", "ghost_survive", "ghost_die", "oracle"],
                                [(s, a, b, c) for s, a, b, c in
                                 zip(m.sites, qs.values, qd.values, oracle)])
    fam = genfun.fixedpoint_family("reducible", p, 0.0, 0.8, 500)
    rep.add("fixed-point family from z0=0.8 valid", fam.valid and fam.residual < 1e-12,
            fam.residual, detail=f"first failure {fam.first_failure}")


def suite_irreducible_n(rep: VerifyReport, p: float = 2 / 3, eps: float = 1 / 9, N: int = 200):
    m = registry.irreducible_n(p, eps, N)
    qs = genfun.global_extinction(m, 1e-13, policy="ghost-survive")
    qd = genfun.global_extinction(m, 1e-13, policy="ghost-die")
    rep.close("ghost-survive q_bar(0) = 0.6", qs[0], (1 - p) / (p - eps), 1e-6)
    rep.add("ghost-survive <= ghost-die everywhere", bool((qs.values <= qd.values + 1e-12).all()))
    series = spectral.phi_series(m, 0, 0, 400)
    cf = spectral.phi_closed_form_irreducible_n(p, eps, 1.0)
    rep.close("Phi(0,0|1) with 400 terms = closed form", series(1.0), cf, 1e-4)
    ph = spectral.Ms_from_phi(m, 0, series=series)
    pe = spectral.estimate_Ms(m, 0)
    margin = spectral.LOCAL_MARGIN
    rep.add("Phi bisection: M_s <= 1 - margin", ph.value <= 1 - margin, ph.value, f"<= {1 - margin}")
    rep.add("Perron truncation: M_s <= 1 - margin", pe.value <= 1 - margin, pe.value,
            f"<= {1 - margin}")
    rows = []
    for z0 in (0.65, 0.8, 0.95):
        fam = genfun.fixedpoint_family("irreducible", p, eps, z0, 500)
        rep.add(f"fixed-point family z0={z0}: increasing, in (q_bar, 1), ratio bound",
                fam.valid, detail=f"first failure {fam.first_failure}")
        rep.add(f"fixed-point family z0={z0}: residual < 1e-12", fam.residual < 1e-12,
                fam.residual, 1e-12)
        rows += [(z0, n, float(z)) for n, z in enumerate(fam.z)]
    rep.tables["family"] = (["z0", "n", "z"], rows)


def suite_binary_bp(rep: VerifyReport, p: float = 0.7, replicates: int = 20_000, seed: int = 0):
    m = registry.binary_bp(p)
    q = genfun.global_extinction(m, 1e-13)
    rep.close("q_bar = (1-p)/p", q[0], (1 - p) / p, 1e-10)
    h = project.detect_bp_like(m)
    rep.close("branching-process fixed points", project.bp_fixed_points(h), [(1 - p) / p, 1.0],
              1e-12)
    out = mc.simulate(m, 0, mc.SimConfig(seed=seed, replicates=replicates, horizon=200))
    rep.add("Monte Carlo within 3 SE", abs(out.q_bar.value - (1 - p) / p) <= 3 * out.q_bar.se,
            out.q_bar.value, (1 - p) / p, detail=f"SE {out.q_bar.se:.3g}")


def suite_tree_edge(rep: VerifyReport, d: int = 4, lam: float = 0.3):
    model, hist = genfun.grow_window(registry.tree_edge(d, lam, radius=200), 0, [0])
    q = hist[-1][1]
    rep.close("q_bar = 1/(d lambda)", q, ctbrw.tree_global_extinction(d, lam), 1e-8)
    cls = genfun.classify(model, 0, [0])
    expect = "strong-local" if lam > 1 / (2 * math.sqrt(d - 1)) else (
        "pure-global" if lam > 1 / d else "global-extinction")
    rep.add("regime", cls.regime == expect and not cls.inconclusive, cls.regime, expect)


def suite_tree_edge_loop(rep: VerifyReport, d: int = 4, loop: float = 5.0):
    for lam, expect in ((0.22, "strong-local"), (0.27, "non-strong-local")):
        model, _ = genfun.grow_window(registry.tree_edge_loop(d, loop, lam, radius=200), 0, [0])
        cls = genfun.classify(model, 0, [0])
        rep.add(f"lambda={lam}: {expect}", cls.regime == expect and not cls.inconclusive,
                cls.regime, expect, detail=f"q_bar {cls.q_bar:.10f}, q_local {cls.q_local:.10f}")


def suite_tree_phase(rep: VerifyReport, d: int = 4, loop: float = 5.0, lambdas=None):
    ct20 = ctbrw.tree_ct(d, 20)
    cp = ctbrw.critical_params(ct20, 0)
    rep.add("lambda_w = 1/d exact", cp.exact_w and cp.lambda_w == 1 / d, cp.lambda_w, 1 / d)
    lam_s = 1.0 / cp.K_s
    rep.close("lambda_s estimate at radius 20", lam_s, 1 / (2 * math.sqrt(d - 1)), 5e-3)
    ct = ctbrw.tree_ct(d, 200)
    pd = ctbrw.classify_phase(ct, ctbrw.add_loop(ct, 0, loop), [0], 0, lambdas)
    seq = pd.sequence()
    expect = ["global-extinction", "strong-local", "non-strong-local", "strong-local"]
    rep.add("regime sequence", seq == expect, seq, expect)
    bad = pd.unflagged_disagreements()
    rep.add("no unflagged disagreements", not bad, [r.lam for r in bad], [])
    gap = max(abs(r.q_bar_original - ctbrw.tree_global_extinction(d, r.lam)) for r in pd.rows)
    rep.add("original q_bar = min(1, 1/(d lambda)) on the grid", gap <= 1e-6, gap, 0.0, 1e-6)
    rep.tables["phase"] = (["lambda", "regime", "q_bar", "q_local"],
                           [(r.lam, r.regime, r.q_bar, r.q_local) for r in pd.rows])
    rep.tables["phase_detail"] = (
        ["lambda", "case", "regime", "direct", "q_bar", "q_local", "q_bar_original", "agree",
         "flagged", "note"],
        [(r.lam, r.case, r.regime, r.direct, r.q_bar, r.q_local, r.q_bar_original, r.agree,
          r.flagged, r.note) for r in pd.rows])


def suite_translate_z(rep: VerifyReport, p: float = 2 / 3, eps: float = 1 / 9,
                      alpha: float = 0.8):
    """Exploration report only: the trends are tabulated, not asserted."""
    fam = genfun.quasitransitive_translates(p, eps, alpha, range(1, 41), range(-10, 11))
    rep.add("translate exploration ran", not fam.failures, len(fam.failures), 0)
    rep.tables["translates"] = (["n"] + [f"z({i})" for i in fam.i_values],
                                [(n, *row) for n, row in zip(fam.n_list, fam.values)])
    rep.tables["trend"] = (["i", "trend", "expected_direction"],
                           [(i, fam.trend[i], fam.matches_expected[i]) for i in fam.i_values])
    m = registry.translate_z(p, eps, 100)
    q = genfun.global_extinction(m, 1e-13, policy="ghost-survive")
    rep.close("q_bar(0) on the integer line", q[0], (1 - p) / (p - eps), 1e-6)


SUITES = {
    "counterexample1": suite_counterexample1,
    "counterexample2": suite_counterexample2,
    "counterexample3": suite_counterexample3,
    "reducible-N": suite_reducible_n,
    "irreducible-N": suite_irreducible_n,
    "binary-bp": suite_binary_bp,
    "tree-edge": suite_tree_edge,
    "tree-edge-loop": suite_tree_edge_loop,
    "tree-phase": suite_tree_phase,
    "translate-Z": suite_translate_z,
}


def verify_example(tag: str, **kw) -> VerifyReport:
    try:
        suite = SUITES[tag]
    except KeyError:
        raise ModelError(f"no check suite for {tag!r}; known: {', '.join(SUITES)}") from None
    rep = VerifyReport(tag)
    t0 = time.perf_counter()
    suite(rep, **kw)
    rep.seconds = time.perf_counter() - t0
    return rep
