"""Projections between BRWs and reductions to branching processes.

A surjective site map ``g`` projects ``(X, mu)`` onto ``(Y, nu)`` when the
pushforward of every ``mu_x`` under ``g`` is ``nu_{g(x)}``. Then
``G_X(z o g | x) = G_Y(z | g(x))``, fixed points of ``G_Y`` pull back to fixed
points of ``G_X``, and the global extinction probabilities satisfy
``q_X = q_Y o g``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from branchwalk import genfun
from branchwalk.kernels import ATOMS
from branchwalk.model import (
    BRWModel,
    GeometricLaw,
    IndependentDiffusionLaw,
    ModelError,
    OffspringDistribution,
    ScalarGenFun,
    SiteSpace,
)

__all__ = [
    "ProjectionMap", "ProjectionReport", "ScalarGenFun", "validate_projection",
    "detect_bp_like", "bp_fixed_points", "bp_target", "pushforward_extinction_check",
    "pullback",
]

LAW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ProjectionMap:
    """Site map ``g``: a dict or a callable on the source space."""

    g: Mapping | Callable

    def __call__(self, x):
        if callable(self.g):
            return self.g(x)
        try:
            return self.g[x]
        except KeyError:
            raise ModelError(f"projection is undefined at {x!r}") from None

    @staticmethod
    def identity() -> "ProjectionMap":
        return ProjectionMap(lambda x: x)

    @staticmethod
    def constant(label="*") -> "ProjectionMap":
        return ProjectionMap(lambda x: label)

    def surjective_onto(self, src: BRWModel, dst: BRWModel) -> bool:
        return set(self(x) for x in src.sites) >= set(dst.sites)


@dataclass(frozen=True)
class ProjectionReport:
    valid: bool
    surjective: bool
    mismatches: tuple
    max_identity_gap: float


def _law_signature(law):
    """Comparable form: (kind, total law / mean, diffusion or atoms)."""
    if isinstance(law, GeometricLaw):
        return ("geometric", law.mean, dict(law.diffusion))
    if isinstance(law, IndependentDiffusionLaw):
        return ("independent", law.total_law(), dict(law.diffusion))
    return ("atoms", {f: w for w, f in law.atoms()})


def _close(a, b, tol=LAW_TOL):
    if isinstance(a, dict) and isinstance(b, dict):
        keys = set(a) | set(b)
        return all(abs(a.get(k, 0.0) - b.get(k, 0.0)) <= tol for k in keys)
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(_close(x, y, tol) for x, y in zip(a, b))
    if isinstance(a, str) or isinstance(b, str):
        return a == b
    return abs(a - b) <= tol


def laws_match(pushed, target) -> bool:
    sa, sb = _law_signature(pushed), _law_signature(target)
    if sa[0] == sb[0]:
        return _close(sa[1:], sb[1:])
    if sa[0] == "atoms" or sb[0] == "atoms":
        # compare atom expansions (geometric laws are truncated at 1e-14)
        a = {f: w for w, f in pushed.atoms()}
        b = {f: w for w, f in target.atoms()}
        return _close(a, b, 1e-12)
    return False


def validate_projection(src: BRWModel, dst: BRWModel, g, samples: int = 20,
                        seed: int = 0) -> ProjectionReport:
    """Exact pushforward check at every source window site, plus random
    spot checks of ``G_X(z o g) = G_Y(z) o g``.

    Children of boundary sites that leave the source window are mapped by
    ``g`` as well; the spot checks give those ghost slots the value of ``z``
    at their image.
    """
    g = g if isinstance(g, ProjectionMap) else ProjectionMap(g)
    mismatches = []
    for x in src.sites:
        y = g(x)
        if y not in dst.index:
            mismatches.append((x, f"image {y!r} is outside the target window"))
            continue
        pushed = src.law(x).map_sites(g)
        if not laws_match(pushed, dst.law(y)):
            mismatches.append((x, "pushforward differs from the target law"))
    surj = g.surjective_onto(src, dst)
    gap = 0.0
    if not mismatches and samples:
        rng = np.random.default_rng(seed)
        gidx = np.array([dst.index[g(x)] for x in src.sites])
        tab = src.table()
        ghost_img = [g(s) for s in tab.ghost_sites]
        for _ in range(samples):
            z = rng.random(dst.n)
            over = {s: z[dst.index[t]] for s, t in zip(tab.ghost_sites, ghost_img)
                    if t in dst.index}
            left = genfun.apply_G(src, z[gidx], ghost_overrides=over).values
            right = genfun.apply_G(dst, z).values[gidx]
            gap = max(gap, float(np.abs(left - right).max()))
    valid = not mismatches and surj and gap <= 1e-12
    return ProjectionReport(valid, surj, tuple(mismatches), gap)


def detect_bp_like(model: BRWModel) -> ScalarGenFun | None:
    """Common total-offspring law of all window sites, or None."""
    laws = [model.law(s) for s in model.sites]
    if all(isinstance(l_, GeometricLaw) for l_ in laws):
        m0 = laws[0].mean
        if all(abs(l_.mean - m0) <= LAW_TOL for l_ in laws):
            return ScalarGenFun.geometric(m0)
        return None
    if any(isinstance(l_, GeometricLaw) for l_ in laws):
        return None
    first = laws[0].total_law()
    for l_ in laws[1:]:
        if not _close(first, l_.total_law()):
            return None
    top = max(first)
    return ScalarGenFun(tuple(first.get(n, 0.0) for n in range(top + 1)))


def bp_target(h: ScalarGenFun, label="*") -> BRWModel:
    """Single-site BRW with offspring law ``h``."""
    space = SiteSpace.explicit((label,))
    if h.geometric_mean is not None:
        law = GeometricLaw(h.geometric_mean, ((label, 1.0),), ((label, h.geometric_mean),))
    else:
        law = OffspringDistribution.from_pairs(
            [(r, {label: n} if n else {}) for n, r in enumerate(h.rho) if r > 0])
    return BRWModel(space, {label: law}, tag="branching-process")


def bp_fixed_points(h: ScalarGenFun, tol: float = 1e-15, max_iter: int = 10**6) -> list:
    """Fixed points of ``H`` in ``[0, 1]``: ``[q_bar, 1]``, or ``[1]``.

    ``q_bar`` is the increasing limit of ``H^n(0)``, polished by bisection on
    ``H(z) - z`` when the iteration stalls near criticality.
    """
    rho1 = h.rho[1] if len(h.rho) > 1 and h.geometric_mean is None else 0.0
    if rho1 >= 1.0:
        raise ValueError("degenerate law with one child almost surely")
    z = 0.0
    prev_step = np.inf
    for _ in range(max_iter):
        nz = float(h(z))
        step = nz - z
        z = nz
        if step <= tol:
            break
        r = step / prev_step
        if r < 1.0 and step * r / (1.0 - r) <= tol:
            break
        prev_step = step
    if h.mean() <= 1.0:
        return [1.0]
    # bracket the smallest root: f = H - z is >= 0 at z_iter and < 0 just below 1
    lo = z
    hi = None
    for d in (1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8):
        c = 1.0 - d
        if c > lo and float(h(c)) - c < 0:
            hi = c
            break
    if hi is not None and float(h(lo)) - lo >= 0:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if float(h(mid)) - mid >= 0:
                lo = mid
            else:
                hi = mid
        z = 0.5 * (lo + hi)
    if abs(z - 1.0) <= 1e-12:
        return [1.0]
    return [z, 1.0]


def pullback(model: BRWModel, z, g) -> np.ndarray:
    """``z o g`` on the window of ``model`` (``z`` a dict or ProbVector)."""
    g = g if isinstance(g, ProjectionMap) else ProjectionMap(g)
    get = z.__getitem__
    return np.array([get(g(x)) for x in model.sites])


@dataclass(frozen=True)
class PushforwardCheck:
    ok: bool
    gap: float
    boundary_gap: float


def pushforward_extinction_check(src: BRWModel, dst: BRWModel, g, tol: float = 1e-9,
                                 policy: str | None = None) -> PushforwardCheck:
    """Compare the source global extinction vector with the pulled-back target.

    The target is solved on its own window; the source is solved with its
    out-of-window slots held at the pulled-back target values, so the
    comparison is free of truncation effects. ``boundary_gap`` records the
    gap obtained with the plain boundary policy instead.
    """
    g = g if isinstance(g, ProjectionMap) else ProjectionMap(g)
    qy = genfun.global_extinction(dst, tol=min(tol, 1e-12) / 10, policy=policy)
    target = qy.result
    pulled = pullback(src, target, g)
    tab = src.table()
    over = {}
    for s in tab.ghost_sites:
        t = g(s)
        if t in dst.index:
            over[s] = target[t]
    qx = genfun.global_extinction(src, tol=min(tol, 1e-12) / 10, policy=policy,
                                  ghost_overrides=over)
    gap = float(np.abs(qx.values - pulled).max())
    plain = genfun.global_extinction(src, tol=min(tol, 1e-12) / 10, policy=policy)
    bgap = float(np.abs(plain.values - pulled).max())
    return PushforwardCheck(gap <= tol, gap, bgap)
