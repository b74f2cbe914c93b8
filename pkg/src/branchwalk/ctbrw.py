"""Continuous-time BRWs through their discrete-time counterparts.

A particle at ``x`` breeds into ``y`` at rate ``lam * k_xy`` and dies at rate
``d(x)`` (1 by default). Its discrete counterpart has a geometric number of
children with mean ``lam * k(x) / d(x)``, placed independently with
probabilities ``k_xy / k(x)``; both processes share all survival properties.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from branchwalk import genfun, spectral
from branchwalk.model import (
    BRWModel,
    GeometricLaw,
    ModelError,
    SiteSpace,
    tree_neighbors,
)

THRESHOLD_MARGIN = 0.02


@dataclass(frozen=True, eq=False)
class CTModel:
    """Rate rows ``x -> ((y, k_xy), ...)`` on the window of ``space``.

    ``rule`` gives the row of any site of the full space; ``death`` optional
    per-site death rates; ``absorbing`` lists sites allowed to have no
    reproduction. ``bp_like`` marks models whose total rate ``k(x) / d(x)``
    is known to be the same at every site of the full space.
    """

    space: SiteSpace
    rows: Mapping
    rule: Callable | None = None
    death: Mapping | None = None
    absorbing: frozenset = frozenset()
    tag: str | None = None
    params: Mapping = field(default_factory=dict)
    bp_like: bool = False
    modification: tuple | None = None

    def __post_init__(self):
        for s in self.space.window:
            row = self.rows.get(s)
            if row is None:
                raise ModelError(f"site {s!r} has no rate row")
            if any(k < 0 or not math.isfinite(k) for _, k in row):
                raise ModelError(f"rates at {s!r} must be finite and nonnegative")
            if sum(k for _, k in row) <= 0 and s not in self.absorbing:
                raise ModelError(f"site {s!r} has no reproduction and is not absorbing")
            if self.death is not None and not self.death.get(s, 1.0) > 0:
                raise ModelError(f"death rate at {s!r} must be positive")

    def row(self, x) -> tuple:
        if x in self.rows:
            return self.rows[x]
        if self.rule is None:
            raise ModelError(f"no rate row for site {x!r}")
        return self.rule(x)

    def k(self, x) -> float:
        return float(sum(v for _, v in self.row(x)))

    def death_rate(self, x) -> float:
        return 1.0 if self.death is None else float(self.death.get(x, 1.0))

    def rate_dict(self) -> dict:
        out = {}
        for s in self.space.window:
            for t, v in self.rows[s]:
                out[(s, t)] = out.get((s, t), 0.0) + v
        return out

    def normalized(self) -> "CTModel":
        """Same model with death rate 1 and rates ``k_xy / d(x)``."""
        if self.death is None:
            return self
        rows = {s: tuple((t, v / self.death_rate(s)) for t, v in r) for s, r in self.rows.items()}
        rule = None
        if self.rule is not None:
            base, death = self.rule, self.death

            def rule(x):
                d = float(death.get(x, 1.0))
                return tuple((t, v / d) for t, v in base(x))
        return CTModel(self.space, rows, rule, None, self.absorbing, self.tag,
                       dict(self.params), self.bp_like, self.modification)


def _merge_row(row):
    acc: dict = {}
    for t, v in row:
        acc[t] = acc.get(t, 0.0) + v
    return tuple((t, v) for t, v in acc.items() if v != 0)


def tree_ct(d: int, radius: int, loop: float = 0.0, radial: bool = True) -> CTModel:
    """Edge breeding on the ``d``-regular tree (``k_xy = 1`` on edges), with an
    optional loop of rate ``loop`` at the root.

    ``radial`` returns the distance-from-root quotient: level ``j`` breeds to
    ``j + 1`` at rate ``d`` (root) or ``d - 1`` and to ``j - 1`` at rate 1.
    """
    if radial:
        space = SiteSpace.tree_radial(d, radius)

        def rule(j):
            if j == 0:
                return _merge_row(((1, float(d)), (0, float(loop))))
            return ((j + 1, float(d - 1)), (j - 1, 1.0))
    else:
        space = SiteSpace.tree_ball(d, radius)

        def rule(s):
            row = [(t, 1.0) for t in tree_neighbors(s, d)]
            if s == () and loop:
                row.append(((), float(loop)))
            return tuple(row)

    rows = {s: rule(s) for s in space.window}
    tag = "tree-edge-loop-ct" if loop else "tree-edge-ct"
    return CTModel(space, rows, rule, tag=tag,
                   params={"d": d, "loop": loop, "radius": radius, "radial": radial},
                   bp_like=not loop)


def single_site_ct(rate: float) -> CTModel:
    """One site breeding onto itself at rate ``rate``."""
    return CTModel(SiteSpace.explicit((0,)), {0: ((0, float(rate)),)}, tag="single-site-ct",
                   params={"rate": rate}, bp_like=True)


def discrete_counterpart(ct: CTModel, lam: float) -> BRWModel:
    """Discrete-time BRW with geometric totals of mean ``lam k(x) / d(x)`` and
    independent diffusion ``k_xy / k(x)``; first moments are ``lam k_xy / d(x)``."""
    if not lam > 0:
        raise ModelError("lambda must be positive")

    def law(x):
        row = ct.row(x)
        kx = sum(v for _, v in row)
        dx = ct.death_rate(x)
        if kx <= 0:
            if x not in ct.absorbing:
                raise ModelError(f"site {x!r} has no reproduction")
            return GeometricLaw(0.0, ())
        diff = tuple((t, v / kx) for t, v in row)
        mom = tuple((t, lam * v / dx) for t, v in row)
        return GeometricLaw(lam * kx / dx, diff, mom)

    laws = {s: law(s) for s in ct.space.window}
    rule = law if ct.rule is not None else None
    return BRWModel(ct.space, laws, tag="counterpart", params={"lam": lam},
                    rule=rule, counterpart=(ct, lam))


def tree_global_extinction(d: int, lam: float) -> float:
    """``min(1, 1 / (d lam))``, the global extinction probability of edge
    breeding on the ``d``-regular tree."""
    if d < 3 or not lam > 0:
        raise ValueError("need d >= 3 and lam > 0")
    return min(1.0, 1.0 / (d * lam))


# --------------------------------------------------------------------------
# Critical parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CriticalParams:
    lambda_s: float
    lambda_w: float
    lambda_w_bracket: tuple
    K_s: float
    K_w: float
    exact_s: bool
    exact_w: bool
    note: str = ""


def closed_form_Ks(ct: CTModel):
    if ct.tag == "tree-edge-ct":
        return 2.0 * math.sqrt(ct.params["d"] - 1)
    if ct.tag == "single-site-ct":
        return float(ct.params["rate"])
    return None


def critical_params(ct: CTModel, x, radii=None, refine_w: bool = False,
                    tol: float = 1e-10) -> CriticalParams:
    """``lambda_s = 1 / K_s(x, x)`` and ``lambda_w``.

    ``K_s`` comes from Perron roots of the rate matrix (a closed form is used
    as well when registered; the numeric value is kept in ``K_s``). ``lambda_w``
    is exact (``d(x) / k(x)``) for BP-like models; otherwise it is bracketed
    by ``[1 / K_w, lambda_s]``, optionally narrowed by bisection on global
    extinction outcomes under both boundary policies.
    """
    unit = discrete_counterpart(ct, 1.0)
    est = spectral.estimate_Ms(unit, x, radii)
    K_s = est.value
    cf = closed_form_Ks(ct)
    exact_s = est.bound == "exact"
    lam_s = 1.0 / K_s if K_s > 0 else math.inf
    note = ""
    if cf is not None:
        lam_s = 1.0 / cf
        exact_s = True
        note = f"closed-form K_s = {cf:.12g}; Perron estimate {K_s:.12g}"
    if ct.bp_like:
        K_w = ct.k(x) / ct.death_rate(x)
        lam_w = 1.0 / K_w
        return CriticalParams(lam_s, lam_w, (lam_w, lam_w), K_s, K_w, exact_s, True, note)
    mw = spectral.estimate_Mw(unit, x, use_shortcut=False)
    K_w = mw.value
    lo = 1.0 / K_w if K_w > 0 else 0.0
    hi = lam_s
    if refine_w:
        lo, hi = _refine_lambda_w(ct, x, max(lo, 1e-9), hi, tol)
    lam_w = hi if hi - lo <= 1e-9 else 0.5 * (lo + hi)
    return CriticalParams(lam_s, lam_w, (lo, hi), K_s, K_w, exact_s, False, note)


def survives_globally(ct: CTModel, lam: float, x, policy: str, tol: float = 1e-10) -> bool:
    model = discrete_counterpart(ct, lam)
    q = genfun.global_extinction(model, tol, policy=policy)
    return q[x] < 1.0 - 10 * tol


def _refine_lambda_w(ct, x, lo, hi, tol, steps=40):
    # ghost-survive survival is necessary for true survival, ghost-die sufficient
    a, b = lo, hi
    for _ in range(steps):
        mid = 0.5 * (a + b)
        if survives_globally(ct, mid, x, "ghost-survive", tol):
            b = mid
        else:
            a = mid
    lower = a
    a, b = lo, hi
    for _ in range(steps):
        mid = 0.5 * (a + b)
        if survives_globally(ct, mid, x, "ghost-die", tol):
            b = mid
        else:
            a = mid
    return lower, max(b, lower)


# --------------------------------------------------------------------------
# Local modifications and the phase classifier
# --------------------------------------------------------------------------

def modify_local(ct: CTModel, A, new_rows: Mapping) -> CTModel:
    """Replace the rate rows of the sites in ``A``.

    The result records ``(A, original rows)``; rows may only change inside A.
    """
    A = frozenset(A if isinstance(A, (list, tuple, set, frozenset)) else [A])
    if not A:
        raise ModelError("modification set must be nonempty")
    for s in new_rows:
        if s not in A:
            raise ModelError(f"modification touches {s!r} outside A")
    for s in A:
        if s not in ct.space.index:
            raise ModelError(f"site {s!r} of A is not in the window")
    rows = dict(ct.rows)
    original = {s: ct.rows[s] for s in A}
    for s, r in new_rows.items():
        rows[s] = _merge_row(tuple(r))
    base_rule = ct.rule
    rule = None
    if base_rule is not None:
        fixed = {s: rows[s] for s in A}

        def rule(y):
            return fixed[y] if y in fixed else base_rule(y)
    same = all(_merge_row(rows[s]) == _merge_row(original[s]) for s in A)
    return CTModel(ct.space, rows, rule, ct.death, ct.absorbing, ct.tag if same else None,
                   dict(ct.params), ct.bp_like and same, (tuple(sorted(A, key=repr)), original))


def add_loop(ct: CTModel, y, rate: float) -> CTModel:
    """Modification adding a loop of rate ``rate`` at ``y``."""
    return modify_local(ct, {y}, {y: tuple(ct.rows[y]) + ((y, float(rate)),)})


@dataclass(frozen=True)
class PhaseRow:
    lam: float
    regime: str
    case: str
    direct: str
    q_bar: float
    q_local: float
    q_bar_original: float
    agree: bool
    flagged: bool
    note: str = ""


@dataclass(frozen=True)
class PhaseDiagram:
    rows: tuple
    params_original: CriticalParams
    lambda_mod: float
    hypothesis: bool
    note: str = ""

    def regimes(self) -> list:
        return [r.regime for r in self.rows]

    def sequence(self) -> list:
        out = []
        for r in self.regimes():
            if not out or out[-1] != r:
                out.append(r)
        return out

    def unflagged_disagreements(self) -> list:
        return [r for r in self.rows if not r.agree and not r.flagged]


def default_grid(lam_mod: float, lam_s: float, points: int = 60) -> np.ndarray:
    return np.geomspace(0.5 * lam_mod, 1.5 * lam_s, points)


def classify_phase(ct: CTModel, ct_mod: CTModel, B, x, lambdas=None,
                   tol: float = 1e-10, radii=None, margin: float = THRESHOLD_MARGIN,
                   max_radius: int = 20_000) -> PhaseDiagram:
    """Regime of ``ct_mod`` at ``(x, B)`` along a grid of breeding rates.

    Labels follow the case analysis for local modifications: (i) extinct up to
    the modified critical value, (ii) strong up to the original global
    threshold, (iii) the threshold itself, (iv) non-strong up to the original
    local threshold, (v) inherited from the original model above it. Each
    label is compared with a direct classification of the counterpart;
    disagreements are flagged when the direct result is inconclusive or the
    rate lies within ``margin`` (relative) of a threshold. Windows of
    rule-based models are doubled per rate until the estimates settle.
    """
    if ct_mod.modification is None:
        raise ModelError("second model must come from modify_local")
    if isinstance(B, genfun.CoFinite):
        raise ModelError("the case analysis is checked for finite target sets only")
    A = ct_mod.modification[0]
    cp = critical_params(ct, x, radii)
    unit_mod = discrete_counterpart(ct_mod, 1.0)
    Ks_mod = spectral.estimate_Ms(unit_mod, x, radii).value
    lam_mod = 1.0 / Ks_mod
    hypothesis = lam_mod < cp.lambda_w
    note = "" if hypothesis else "modified local threshold not below original global one"
    if lambdas is None:
        lambdas = default_grid(lam_mod, cp.lambda_s)
    thresholds = [lam_mod, cp.lambda_w, cp.lambda_s]
    rows = []
    for lam in lambdas:
        lam = float(lam)
        model, _ = genfun.grow_window(discrete_counterpart(ct_mod, lam), x, B, tol,
                                      max_size=max_radius)
        direct = genfun.classify(model, x, B, tol)
        orig_model, hist = genfun.grow_window(discrete_counterpart(ct, lam), x, None, tol,
                                              max_size=max_radius)
        q_orig = hist[-1][1]
        near = any(abs(lam - t) <= margin * t for t in thresholds)
        if hypothesis:
            case, label = _case_label(lam, lam_mod, cp, ct, x, B, tol, orig_model, A)
        else:
            case, label = "direct", direct.regime
        agree = label == direct.regime
        flagged = (not agree) and (direct.inconclusive or near)
        rows.append(PhaseRow(lam, label, case, direct.regime, direct.q_bar, direct.q_local,
                             float(q_orig), agree, flagged,
                             direct.note + ("; near threshold" if near else "")))
    return PhaseDiagram(tuple(rows), cp, lam_mod, hypothesis, note)


def _case_label(lam, lam_mod, cp, ct, x, B, tol, orig_model, A):
    if lam <= lam_mod:
        return "i", "global-extinction"
    if lam < cp.lambda_w:
        return "ii", "strong-local"
    if lam == cp.lambda_w:
        if cp.exact_w:
            return "iii", "strong-local"
        return "iii", "boundary-indeterminate"
    if lam <= cp.lambda_s:
        return "iv", "non-strong-local"
    orig = genfun.classify(orig_model, x, B, tol)
    return "v", orig.regime
