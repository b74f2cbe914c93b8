"""Generating-function machinery: evaluation of G, monotone fixed-point
iterations for extinction probabilities, survival classification, sub-solution
membership, fixed-point enumeration and convexity searches, and the explicit
fixed-point families of the nearest-neighbour walks on the integers.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import sparse

from branchwalk import kernels
from branchwalk.kernels import ATOMS, GEOMETRIC, POLYNOMIAL
from branchwalk.model import BRWModel, ModelError, ghost_constant, truncate

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10**6
UG_TOL = 1e-12
CONVEXITY_TOL = 1e-10
TREND_TOL = 1e-14

INCREASING = "increasing-from-below"
DECREASING = "decreasing-from-above"


# --------------------------------------------------------------------------
# Vectors and reports
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProbVector:
    """Values on the window sites plus the constant used outside the window."""

    sites: tuple
    values: np.ndarray
    boundary: float = 1.0

    def __post_init__(self):
        v = self.values
        if v.shape != (len(self.sites),):
            raise ValueError("one value per window site expected")
        if v.size and (v.min() < 0.0 or v.max() > 1.0 or np.isnan(v).any()):
            raise ValueError("probability vector entries must lie in [0, 1]")

    def __getitem__(self, site) -> float:
        return float(self.values[self.sites.index(site)])

    def __len__(self):
        return len(self.sites)

    def as_dict(self) -> dict:
        return {s: float(v) for s, v in zip(self.sites, self.values)}


@dataclass(frozen=True, eq=False)
class IterationReport:
    result: ProbVector
    iterations: int
    residual: float
    direction: str
    converged: bool
    monotone: bool
    policy: str

    @property
    def values(self) -> np.ndarray:
        return self.result.values

    def __getitem__(self, site) -> float:
        return self.result[site]


@dataclass(frozen=True)
class CoFinite:
    """The window minus a finite set of sites."""

    exclude: tuple = ()


def _as_array(model: BRWModel, z) -> np.ndarray:
    if isinstance(z, ProbVector):
        if z.sites != model.sites:
            return np.array([z[s] for s in model.sites])
        return np.asarray(z.values, dtype=float)
    if isinstance(z, dict):
        return np.array([float(z[s]) for s in model.sites])
    arr = np.asarray(z, dtype=float)
    if arr.ndim == 0:
        return np.full(model.n, float(arr))
    if arr.shape != (model.n,):
        raise ValueError(f"expected {model.n} values, got shape {arr.shape}")
    return arr


def site_mask(model: BRWModel, A) -> np.ndarray:
    """Boolean mask of ``A`` over the window (sites, a single site, or CoFinite)."""
    idx = model.index
    mask = np.zeros(model.n, dtype=np.bool_)
    if isinstance(A, CoFinite):
        mask[:] = True
        for s in A.exclude:
            if s in idx:
                mask[idx[s]] = False
    else:
        if not isinstance(A, (list, tuple, set, frozenset)):
            A = [A]
        for s in A:
            if s not in idx:
                raise ModelError(f"site {s!r} of A is not in the window")
            mask[idx[s]] = True
    if not mask.any():
        raise ModelError("A must be a nonempty subset of the window")
    return mask


# --------------------------------------------------------------------------
# G evaluation
# --------------------------------------------------------------------------

def apply_G(model: BRWModel, z, policy: str | None = None, *, closed_form: bool = True,
            ghost_overrides=None, numba: bool | None = None) -> ProbVector:
    """``G(z|x) = sum_f mu_x(f) prod_y z(y)^f(y)`` on the window.

    Out-of-window factors take the policy constant. Counterpart models use the
    closed form ``1 / (1 + M(1 - z))`` unless ``closed_form`` is False, in
    which case the truncated atom expansion is summed instead.
    """
    policy = policy or model.policy
    tab = model.table(closed_form)
    ghost = model.ghost_values(policy, ghost_overrides, closed_form)
    out = kernels.g_apply(tab, _as_array(model, z), ghost, numba=numba)
    return ProbVector(model.sites, out, ghost_constant(policy))


def apply_G_batch(model: BRWModel, Z: np.ndarray, policy: str | None = None) -> np.ndarray:
    """G evaluated on each row of ``Z`` (shape ``(batch, n)``)."""
    policy = policy or model.policy
    tab = model.table(True)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    B, n = Z.shape
    ghost = model.ghost_values(policy)
    Zext = np.concatenate([Z, np.broadcast_to(ghost, (B, ghost.size))], axis=1)
    out = np.empty((B, n))
    if tab.atom_w.size:
        pw = Zext[:, tab.child_idx] ** tab.child_cnt
        prod = np.ones((B, tab.atom_w.size))
        nonempty = np.diff(tab.child_ptr) > 0
        if pw.shape[1]:
            prod[:, nonempty] = np.multiply.reduceat(pw, tab.child_ptr[:-1][nonempty], axis=1)
        S = sparse.csr_matrix((tab.atom_w, (np.arange(tab.atom_w.size), tab.atom_site)),
                              shape=(tab.atom_w.size, n))
        acc = np.asarray((S.T @ (1.0 - prod).T).T)
        mask = tab.kind == ATOMS
        out[:, mask] = 1.0 - acc[:, mask]
    if tab.diff_p.size:
        P = sparse.csr_matrix((tab.diff_p, (tab.diff_site, tab.diff_idx)),
                              shape=(n, Zext.shape[1]))
        s = np.asarray((P @ Zext.T).T)
        mask = tab.kind == GEOMETRIC
        out[:, mask] = 1.0 / (1.0 + tab.mean[mask] * (1.0 - s[:, mask]))
        for x in np.flatnonzero(tab.kind == POLYNOMIAL):
            rho = tab.coef[tab.coef_ptr[x]:tab.coef_ptr[x + 1]]
            acc = np.zeros(B)
            sp = np.ones(B)
            for r in rho:
                acc += r * (1.0 - sp)
                sp = sp * s[:, x]
            out[:, x] = 1.0 - acc
    return np.clip(out, 0.0, 1.0)


# --------------------------------------------------------------------------
# Extinction probabilities
# --------------------------------------------------------------------------

def _run(model, z0, zero_mask, tol, max_iter, direction, policy, ghost_overrides, numba):
    policy = policy or model.policy
    tab = model.table(True)
    ghost = model.ghost_values(policy, ghost_overrides)
    z, it, _, mono, conv = kernels.iterate(
        tab, z0, ghost, zero_mask, tol=tol, max_iter=max_iter,
        direction=1 if direction == INCREASING else -1, numba=numba)
    gz = kernels.g_apply(tab, z, ghost, numba=numba)
    if zero_mask is not None:
        gz[zero_mask] = 0.0
    residual = float(np.abs(gz - z).max())
    return IterationReport(ProbVector(model.sites, z, ghost_constant(policy)), int(it),
                           residual, direction, bool(conv), bool(mono), policy)


def global_extinction(model: BRWModel, tol: float = DEFAULT_TOL,
                      max_iter: int = DEFAULT_MAX_ITER, policy: str | None = None, *,
                      ghost_overrides=None, numba: bool | None = None) -> IterationReport:
    """Smallest fixed point of G, as the increasing limit of ``G^n(0)``."""
    _check_tol(tol)
    return _run(model, np.zeros(model.n), None, tol, max_iter, INCREASING, policy,
                ghost_overrides, numba)


def never_visit_prob(model: BRWModel, A, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER, policy: str | None = None, *,
                     numba: bool | None = None) -> IterationReport:
    """Probability that no particle ever occupies ``A``.

    Iterates ``T(z)(x) = 0`` on ``A`` and ``G(z|x)`` elsewhere, starting from
    the indicator of the complement of ``A``; iterate ``k`` is the probability
    of avoiding ``A`` during generations ``0..k``.
    """
    _check_tol(tol)
    mask = site_mask(model, A)
    z0 = (~mask).astype(float)
    return _run(model, z0, mask, tol, max_iter, DECREASING, policy, None, numba)


def local_extinction(model: BRWModel, A, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER, policy: str | None = None, *,
                     q0: IterationReport | None = None,
                     numba: bool | None = None) -> IterationReport:
    """Extinction probability in ``A``: increasing limit of ``G^n(q_0(., A))``."""
    _check_tol(tol)
    policy = policy or model.policy
    if q0 is None:
        q0 = never_visit_prob(model, A, tol, max_iter, policy, numba=numba)
    return _run(model, q0.values.copy(), None, tol, max_iter, INCREASING, policy, None, numba)


def _check_tol(tol):
    if not tol > 0:
        raise ValueError("tol must be positive")


# --------------------------------------------------------------------------
# Classification
# --------------------------------------------------------------------------

REGIMES = ("global-extinction", "pure-global", "non-strong-local", "strong-local")


@dataclass(frozen=True)
class SurvivalClassification:
    regime: str
    x: object
    A: object
    q_bar: float
    q_local: float
    inconclusive: bool = False
    note: str = ""
    brackets: dict = field(default_factory=dict)


def regime_label(q_bar: float, q_local: float, threshold: float) -> str:
    if q_bar >= 1.0 - threshold:
        return "global-extinction"
    if q_local >= 1.0 - threshold:
        return "pure-global"
    if abs(q_bar - q_local) <= threshold:
        return "strong-local"
    return "non-strong-local"


def half_window(model: BRWModel) -> BRWModel | None:
    """The same model on a window of half the size, when it can be rebuilt."""
    kind = model.space.kind
    if model.rule is None or kind == "explicit":
        return None
    if kind == "nonneg-integers":
        return truncate(model, max(1, max(model.sites) // 2))
    if kind == "integers":
        return truncate(model, max(1, max(model.sites) // 2))
    if kind == "tree-radial":
        return truncate(model, max(1, max(model.sites) // 2))
    if kind == "tree":
        return truncate(model, max(1, max(len(s) for s in model.sites) // 2))
    return None


def _window_size(model):
    kind = model.space.kind
    if kind == "tree":
        return max(len(s) for s in model.sites)
    return max(abs(s) for s in model.sites)


def grow_window(model: BRWModel, x, A=None, tol: float = DEFAULT_TOL,
                stable: float | None = None, max_size: int = 20_000,
                numba: bool | None = None):
    """Double the window of a rule-based model until the point estimates at
    ``x`` (ghost-survive global extinction and, if ``A`` is given, ghost-die
    extinction in ``A``) move by at most ``stable`` (default ``10 tol``).

    Returns ``(model, history)`` with history rows ``(size, q_bar, q_local)``.
    Models without a rule, or whose window has no ghost slots, are returned
    unchanged.
    """
    stable = 10.0 * tol if stable is None else stable
    history = []

    def values(m):
        i = m.index[x]
        qb = float(global_extinction(m, tol, policy="ghost-survive", numba=numba).values[i])
        ql = math.nan
        if A is not None:
            ql = float(local_extinction(m, A, tol, policy="ghost-die", numba=numba).values[i])
        return qb, ql

    cur = model
    prev = values(cur)
    history.append((_window_size(cur) if cur.rule else len(cur.sites), *prev))
    if cur.rule is None or cur.space.kind == "explicit" or cur.table().n_ghost == 0:
        return cur, tuple(history)
    while True:
        size = _window_size(cur)
        if 2 * size > max_size:
            break
        nxt = truncate(cur, 2 * size)
        vals = values(nxt)
        history.append((2 * size, *vals))
        moved = abs(vals[0] - prev[0])
        if A is not None:
            moved = max(moved, abs(vals[1] - prev[1]))
        cur, prev = nxt, vals
        if moved <= stable:
            break
    return cur, tuple(history)


def _point_estimates(model, x, A, tol, max_iter, numba):
    i = model.index[x]
    qbar = global_extinction(model, tol, max_iter, "ghost-survive", numba=numba)
    qloc = local_extinction(model, A, tol, max_iter, "ghost-die", numba=numba)
    return float(qbar.values[i]), float(qloc.values[i]), qbar, qloc


def classify(model: BRWModel, x, A, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER, *, numba: bool | None = None) -> SurvivalClassification:
    """Survival regime at ``(x, A)``.

    Point estimates use the boundary policy that converges to the true value
    as the window grows: ghost-survive for the global extinction probability,
    ghost-die for extinction in ``A``. If the two single-policy brackets give
    different labels, the point label is recomputed on a window of half the
    size; a change there makes the result inconclusive.
    """
    thr = 10.0 * tol
    if x not in model.index:
        raise ModelError(f"site {x!r} is not in the window")
    if model.table().n_ghost == 0:
        qb = global_extinction(model, tol, max_iter, numba=numba)
        ql = local_extinction(model, A, tol, max_iter, numba=numba)
        i = model.index[x]
        qb_x, ql_x = float(qb.values[i]), float(ql.values[i])
        return SurvivalClassification(regime_label(qb_x, ql_x, thr), x, A, qb_x, ql_x)

    qb_x, ql_x, _, _ = _point_estimates(model, x, A, tol, max_iter, numba)
    label = regime_label(qb_x, ql_x, thr)
    i = model.index[x]
    brackets = {}
    labels = {label}
    for pol in ("ghost-survive", "ghost-die"):
        b = global_extinction(model, tol, max_iter, pol, numba=numba).values[i]
        l_ = local_extinction(model, A, tol, max_iter, pol, numba=numba).values[i]
        brackets[pol] = (float(b), float(l_))
        labels.add(regime_label(b, l_, thr))
    if len(labels) == 1:
        return SurvivalClassification(label, x, A, qb_x, ql_x, brackets=brackets)

    small = half_window(model)
    note = "boundary policies disagree"
    if small is not None and x in small.index and _subset_in(small, A):
        hb, hl, _, _ = _point_estimates(small, x, A, tol, max_iter, numba)
        if regime_label(hb, hl, thr) == label:
            return SurvivalClassification(label, x, A, qb_x, ql_x,
                                          note=note + "; label stable under window halving",
                                          brackets=brackets)
        note += "; label changes under window halving"
    return SurvivalClassification(label, x, A, qb_x, ql_x, inconclusive=True, note=note,
                                  brackets=brackets)


def _subset_in(model, A):
    if isinstance(A, CoFinite):
        return True
    if not isinstance(A, (list, tuple, set, frozenset)):
        A = [A]
    return all(s in model.index for s in A)


@dataclass(frozen=True)
class StrongCheck:
    holds: bool
    witness: object = None
    gap: float = 0.0


def check_strong_condition(model: BRWModel, A, tol: float = DEFAULT_TOL,
                           max_iter: int = DEFAULT_MAX_ITER, *,
                           numba: bool | None = None) -> StrongCheck:
    """Does ``q_0(x, A) <= q_bar(x) + tol`` hold at every window site?

    On a failure the witness is a site from which the process can survive
    globally without ever visiting ``A``. For truncated infinite models a
    witness must also show up on the half-size window, which keeps boundary
    artefacts out.
    """
    def gaps(m):
        qbar = global_extinction(m, tol, max_iter, "ghost-survive", numba=numba).values
        q0 = never_visit_prob(m, A, tol, max_iter, "ghost-die", numba=numba).values
        return q0 - qbar

    g = gaps(model)
    cand = g > tol
    if model.table().n_ghost and cand.any():
        small = half_window(model)
        if small is None or not _subset_in(small, A):
            keep = np.zeros_like(cand)
        else:
            gs = gaps(small)
            keep = np.zeros_like(cand)
            for j, s in enumerate(small.sites):
                i = model.index[s]
                keep[i] = cand[i] and gs[j] > tol
        cand = keep
    if not cand.any():
        return StrongCheck(True, None, float(g.max()))
    i = int(np.argmax(np.where(cand, g, -np.inf)))
    return StrongCheck(False, model.sites[i], float(g[i]))


# --------------------------------------------------------------------------
# Sub-solutions, fixed points, convexity
# --------------------------------------------------------------------------

def is_in_UG(model: BRWModel, z, tol: float = UG_TOL, policy: str | None = None):
    """``(G(z) <= z + tol componentwise, first violating site or None)``."""
    zv = _as_array(model, z)
    gz = apply_G(model, zv, policy).values
    bad = np.flatnonzero(gz > zv + tol)
    if bad.size:
        return False, model.sites[int(bad[0])]
    return True, None


def _lipschitz(model):
    from branchwalk.model import first_moment

    return float(first_moment(model).row_sums().max())


def _jacobian(model, z, policy, h=1e-7):
    n = model.n
    J = np.empty((n, n))
    for j in range(n):
        lo = max(0.0, z[j] - h)
        hi = min(1.0, z[j] + h)
        zl = z.copy()
        zh = z.copy()
        zl[j] = lo
        zh[j] = hi
        J[:, j] = (apply_G_batch(model, zh[None], policy)[0]
                   - apply_G_batch(model, zl[None], policy)[0]) / (hi - lo)
    return J


def _refine(model, z, policy, tol, max_steps=200, damping=0.5):
    """Damped Newton on ``G(z) - z = 0`` inside the unit box."""
    def res(v):
        return apply_G_batch(model, v[None], policy)[0] - v

    r = res(z)
    nr = np.abs(r).max()
    for _ in range(max_steps):
        if nr < tol:
            break
        A = _jacobian(model, z, policy) - np.eye(model.n)
        step = np.linalg.lstsq(A, -r, rcond=None)[0]
        t = 1.0
        improved = False
        for _ in range(60):
            cand = np.clip(z + t * step, 0.0, 1.0)
            rc = res(cand)
            nc = np.abs(rc).max()
            if nc < nr:
                z, r, nr = cand, rc, nc
                improved = True
                break
            t *= damping
        if not improved:
            break
    return z, float(nr)


def enumerate_fixed_points(model: BRWModel, resolution: int | None = None,
                           refine_tol: float = 1e-12, policy: str | None = None,
                           budget: int = 2_000_000) -> list:
    """Fixed points of G on a small explicit model.

    Scans a regular grid (``resolution`` points per axis, chosen from
    ``budget`` when omitted) for points whose residual is small enough that a
    fixed point may lie within half a grid cell, refines one representative
    per cluster by damped Newton, and returns the distinct points whose
    residual is below ``refine_tol``.
    """
    n = model.n
    if n > 6:
        raise ValueError("fixed-point enumeration is limited to 6 sites")
    if resolution is None:
        resolution = max(5, int(round(budget ** (1.0 / n))))
    axis = np.linspace(0.0, 1.0, resolution)
    h = axis[1] - axis[0]
    thresh = (1.0 + _lipschitz(model)) * h / 2.0 * 1.0000001
    cands, resid = [], []
    total = resolution ** n
    chunk = 200_000
    for start in range(0, total, chunk):
        ids = np.arange(start, min(total, start + chunk))
        Z = np.empty((ids.size, n))
        rem = ids.copy()
        for k in range(n - 1, -1, -1):
            Z[:, k] = axis[rem % resolution]
            rem //= resolution
        r = np.abs(apply_G_batch(model, Z, policy) - Z).max(axis=1)
        keep = r <= thresh
        cands.append(Z[keep])
        resid.append(r[keep])
    Z = np.concatenate(cands) if cands else np.empty((0, n))
    r = np.concatenate(resid) if resid else np.empty(0)
    order = np.argsort(r, kind="stable")
    reps: list = []
    for k in order:
        if all(np.abs(Z[k] - q).max() > 3 * h for q in reps):
            reps.append(Z[k])
    found: list = []
    for z0 in reps:
        z, nr = _refine(model, z0.copy(), policy, refine_tol)
        if nr < refine_tol and all(np.abs(z - f).max() >= h for f in found):
            found.append(z)
    found.sort(key=tuple)
    return [ProbVector(model.sites, np.clip(f, 0.0, 1.0),
                       ghost_constant(policy or model.policy)) for f in found]


@dataclass(frozen=True)
class ConvexityWitness:
    z: np.ndarray
    w: np.ndarray
    t: float
    component: object
    gap: float


def convexity_witness(model: BRWModel, samples: int = 100_000, seed: int = 0,
                      tol: float = CONVEXITY_TOL, policy: str | None = None,
                      batch: int = 20_000):
    """Search for ``G(tz + (1-t)w) > tG(z) + (1-t)G(w) + tol``.

    Corner pairs at ``t = 1/2`` are tried first, then ``samples`` uniform
    random triples. Returns the first witness found or None.
    """
    n = model.n
    corners = [np.array(c, dtype=float) for c in itertools.product((0.0, 1.0), repeat=n)]
    pairs = [(corners[j], corners[i]) for j in range(len(corners)) for i in range(j)]
    if pairs:
        Zc = np.array([p[0] for p in pairs])
        Wc = np.array([p[1] for p in pairs])
        hit = _convexity_check(model, Zc, Wc, np.full(len(pairs), 0.5), tol, policy)
        if hit is not None:
            return hit
    rng = np.random.default_rng(seed)
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        Z = rng.random((b, n))
        W = rng.random((b, n))
        t = rng.random(b)
        hit = _convexity_check(model, Z, W, t, tol, policy)
        if hit is not None:
            return hit
        done += b
    return None


def _convexity_check(model, Z, W, t, tol, policy):
    mid = t[:, None] * Z + (1.0 - t[:, None]) * W
    lhs = apply_G_batch(model, mid, policy)
    rhs = t[:, None] * apply_G_batch(model, Z, policy) + (1.0 - t[:, None]) * apply_G_batch(model, W, policy)
    gap = lhs - rhs
    bad = np.argwhere(gap > tol)
    if bad.size == 0:
        return None
    k, c = bad[0]
    return ConvexityWitness(Z[k].copy(), W[k].copy(), float(t[k]), model.sites[int(c)],
                            float(gap[k, c]))


def ug_grid_check(model: BRWModel, predicate, resolution: int = 200, tol: float = 1e-10):
    """Compare U_G membership with ``predicate(z)`` at the cell midpoints of a
    ``resolution``-per-axis grid of a two-site model. Returns the number of
    disagreements and the number of points checked."""
    if model.n != 2:
        raise ValueError("grid check is for two-site models")
    ax = (np.arange(resolution) + 0.5) / resolution
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    Z = np.stack([X.ravel(), Y.ravel()], axis=1)
    inside = (apply_G_batch(model, Z) <= Z + tol).all(axis=1)
    expected = np.array([bool(predicate(z)) for z in Z])
    return int((inside != expected).sum()), int(Z.shape[0])


def ug_mesh(model: BRWModel, resolution: int = 200, samples: int = 401):
    """Height bounds of U_G for a three-site model.

    For each axis ``k`` and each point ``(a, b)`` of a ``resolution``-per-axis
    grid on the other two coordinates, returns the smallest and largest value
    ``c`` of coordinate ``k`` (among ``samples`` equally spaced values) for
    which the point lies in U_G; NaN where the fibre is empty. Rows are
    ``(axis, a, b, c_low, c_high)``.
    """
    if model.n != 3:
        raise ValueError("U_G mesh is for three-site models")
    ax = np.linspace(0.0, 1.0, resolution)
    cs = np.linspace(0.0, 1.0, samples)
    rows = []
    for k in range(3):
        others = [j for j in range(3) if j != k]
        A, B = np.meshgrid(ax, ax, indexing="ij")
        a = A.ravel()
        b = B.ravel()
        for start in range(0, a.size, 400):
            sl = slice(start, start + 400)
            m = a[sl].size
            Z = np.empty((m, samples, 3))
            Z[:, :, others[0]] = a[sl, None]
            Z[:, :, others[1]] = b[sl, None]
            Z[:, :, k] = cs[None, :]
            flat = Z.reshape(-1, 3)
            ok = (apply_G_batch(model, flat) <= flat + UG_TOL).all(axis=1).reshape(m, samples)
            any_ok = ok.any(axis=1)
            lo = np.where(any_ok, cs[np.argmax(ok, axis=1)], np.nan)
            hi = np.where(any_ok, cs[samples - 1 - np.argmax(ok[:, ::-1], axis=1)], np.nan)
            for j in range(m):
                rows.append((k + 1, float(a[sl][j]), float(b[sl][j]), float(lo[j]), float(hi[j])))
    return rows


# --------------------------------------------------------------------------
# Explicit fixed-point families on the integers
# --------------------------------------------------------------------------

class FamilyError(ValueError):
    """Parameter gate or domain violation in the fixed-point recursions."""


@dataclass(frozen=True, eq=False)
class FamilyResult:
    """``z(0..n_max)`` together with ``u = 1 - z`` (kept separately for precision)."""

    kind: str
    z: np.ndarray
    u: np.ndarray
    constant: bool
    increasing: bool
    in_interval: bool
    ratio_bound: bool
    residual: float
    first_failure: int | None = None

    @property
    def valid(self) -> bool:
        return self.constant or (self.increasing and self.in_interval and self.ratio_bound)


def family_qbar(kind: str, p: float, eps: float = 0.0) -> float:
    return (1.0 - p) / p if kind == "reducible" else (1.0 - p) / (p - eps)


def _family_gate(kind, p, eps):
    if kind == "reducible":
        if not 0.5 < p <= 1.0:
            raise FamilyError("reducible family needs p > 1/2")
    elif kind == "irreducible":
        if not (eps > 0 and 2 * p - eps > 1 and p < 1 / math.sqrt(2)
                and eps * (p - eps) <= 1 / 8):
            raise FamilyError("irreducible family needs eps > 0, 2p - eps > 1, "
                              "p < 1/sqrt(2) and eps (p - eps) <= 1/8")
    else:
        raise FamilyError(f"unknown family kind {kind!r}")


def fixedpoint_family(kind: str, p: float, eps: float = 0.0, z0: float = 0.8,
                      n_max: int = 200) -> FamilyResult:
    """The unique fixed point with prescribed ``z(0)`` of the walks that send
    two children one step to the right (and, for ``irreducible``, one child one
    step to the left w.p. ``eps``).

    The recursion is run on ``u = 1 - z`` so that terms very close to 1 keep
    full relative precision.
    """
    _family_gate(kind, p, eps)
    e = eps if kind == "irreducible" else 0.0
    a = p - e
    qbar = family_qbar(kind, p, e)
    if not qbar - 1e-15 <= z0 <= 1.0:
        raise FamilyError(f"z0 must lie in [{qbar}, 1]")
    if z0 == 1.0 or abs(z0 - qbar) <= 1e-15:
        c = 1.0 if z0 == 1.0 else qbar
        z = np.full(n_max + 1, c)
        return FamilyResult(kind, z, 1.0 - z, True, False, False, False, 0.0)

    u = np.empty(n_max + 1)
    z = np.empty(n_max + 1)
    u[0] = 1.0 - z0
    z[0] = z0
    for n in range(n_max):
        if kind == "reducible":
            d = u[n] / a
        elif n == 0:
            d = (1.0 - e) * u[0] / a
        else:
            d = (u[n] - e * u[n - 1]) / a
        if d > 1.0:
            raise FamilyError(f"negative radicand at n={n + 1}; z0 outside the valid interval")
        zn = math.sqrt(1.0 - d)
        z[n + 1] = zn
        u[n + 1] = d / (1.0 + zn)

    inc = in_int = ratio = True
    first = None
    lo = 1.0 - qbar
    for n in range(1, n_max + 1):
        ok_inc = u[n] < u[n - 1]
        ok_int = 0.0 < u[n] < lo
        # 2p u(n) - u(n-1) rewritten through the recursion to avoid cancellation
        back = u[0] if n == 1 else u[n - 2]
        slack = 2.0 * e * u[n - 1] - 2.0 * p * e * back + a * u[n] * u[n - 1]
        ok_ratio = slack > 0.0
        inc &= ok_inc
        in_int &= ok_int
        ratio &= ok_ratio
        if first is None and not (ok_inc and ok_int and ok_ratio):
            first = n
    res = family_residual(kind, p, e, u)
    return FamilyResult(kind, z, u, False, bool(inc), bool(in_int), bool(ratio), res, first)


def family_residual(kind: str, p: float, eps: float, u: np.ndarray) -> float:
    """``max_n |G(z|n) - z(n)|`` over the prefix where ``z(n+1)`` is known,
    evaluated in ``u = 1 - z`` form."""
    e = eps if kind == "irreducible" else 0.0
    a = p - e
    nxt = a * u[1:] * (2.0 - u[1:])
    back = np.empty(u.size - 1)
    back[0] = u[0]
    back[1:] = u[:-2]
    r = u[:-1] - nxt - e * back
    return float(np.abs(r).max()) if r.size else 0.0


@dataclass(frozen=True, eq=False)
class TranslateFamily:
    """Vectors ``z^(n)(i)`` (rows: ``n_list``, columns: ``i_range``)."""

    alpha: float
    n_list: tuple
    i_values: tuple
    values: np.ndarray
    trend: dict
    matches_expected: dict
    failures: tuple = ()


def _phi_sequence(delta0, n_total, p, eps, qbar):
    """``phi_0..phi_n_total`` at ``qbar + delta0``, in ``delta = z - qbar`` form."""
    a = p - eps
    d = np.empty(n_total + 1)
    d[0] = delta0
    for n in range(n_total):
        prev = d[n - 1] if n >= 1 else d[0]
        D = d[n] - eps * prev
        s = qbar * qbar + D / a
        if s > 1.0 + 1e-15:
            d[n + 1:] = np.inf
            break
        d[n + 1] = D / (a * (qbar + math.sqrt(max(s, 0.0))))
    return d


def _invert_phi(n, alpha, p, eps, qbar, iters=400):
    """``phi_n^{-1}(alpha) - qbar`` by bisection on ``log(delta0)``."""
    target = alpha - qbar
    lo, hi = math.log(1e-300), math.log(1.0 - qbar)
    if _phi_sequence(math.exp(hi), n, p, eps, qbar)[n] < target:
        raise FamilyError("bisection bracket does not contain the target")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _phi_sequence(math.exp(mid), n, p, eps, qbar)[n] < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return math.exp(0.5 * (lo + hi))


def quasitransitive_translates(p: float, eps: float, alpha: float,
                               n_list: Iterable[int], i_range: Iterable[int]) -> TranslateFamily:
    """Left translates ``z^(n)(i) = phi_{n+i}(phi_n^{-1}(alpha))`` (0 for ``i < -n``).

    ``phi_n`` maps ``z(0)`` to ``z(n)`` along the irreducible family. The
    report lists, per coordinate ``i``, whether ``n -> z^(n)(i)`` is
    (weakly, up to ``TREND_TOL``) increasing, decreasing, constant or neither
    over the ``n`` with ``n + i >= 0``; nothing about the limit is asserted.
    """
    _family_gate("irreducible", p, eps)
    qbar = family_qbar("irreducible", p, eps)
    if abs(alpha - qbar) <= 1e-14:
        alpha = qbar
    if not qbar <= alpha < 1.0:
        raise FamilyError("alpha must lie in [qbar, 1)")
    n_list = tuple(int(n) for n in n_list)
    i_vals = tuple(int(i) for i in i_range)
    vals = np.zeros((len(n_list), len(i_vals)))
    failures = []
    for r, n in enumerate(n_list):
        if alpha == qbar:
            d0 = 0.0
        else:
            try:
                d0 = _invert_phi(n, alpha, p, eps, qbar)
            except FamilyError as exc:
                failures.append((n, str(exc)))
                vals[r, :] = np.nan
                continue
        top = n + max(i_vals) if i_vals else n
        d = _phi_sequence(d0, max(top, 0), p, eps, qbar)
        for c, i in enumerate(i_vals):
            vals[r, c] = qbar + d[n + i] if i >= -n else 0.0
    trend, match = {}, {}
    for c, i in enumerate(i_vals):
        # trend over the translates defined at i, ignoring rounding-level steps
        col = vals[[r for r, n in enumerate(n_list) if n + i >= 0], c]
        diffs = np.diff(col)
        diffs = diffs[np.isfinite(diffs)]
        diffs[np.abs(diffs) <= TREND_TOL] = 0.0
        if np.all(diffs == 0):
            t = "constant"
        elif np.all(diffs >= 0):
            t = "increasing"
        elif np.all(diffs <= 0):
            t = "decreasing"
        else:
            t = "mixed"
        trend[i] = t
        if i > 0:
            match[i] = t == "increasing"
        elif i < 0:
            match[i] = t == "decreasing"
        else:
            match[i] = True
    return TranslateFamily(alpha, n_list, i_vals, vals, trend, match, tuple(failures))


# --------------------------------------------------------------------------
# Survival certificate for counterparts
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Certificate:
    holds: bool
    certifies: bool
    valid_for_space: bool
    min_slack: float
    note: str = ""


def survival_certificate(model: BRWModel, v, policy: str | None = None,
                         tol: float = 1e-12) -> Certificate:
    """Check ``Mv >= v / (1 - v)`` componentwise for a counterpart model.

    When it holds, every site with ``v(x) > 0`` survives globally with positive
    probability. Out-of-window sites carry ``v = 1 - c`` with ``c`` the policy
    constant; only ghost-die (``v = 0`` outside) makes the check a statement
    about the untruncated model.
    """
    if model.counterpart is None:
        raise ModelError("survival certificate needs a counterpart model")
    policy = policy or model.policy
    vv = _as_array(model, v)
    if (vv >= 1.0).any() or (vv < 0).any():
        raise ValueError("v must lie in [0, 1) componentwise")
    ghost_v = 1.0 - ghost_constant(policy)
    idx = model.index
    Mv = np.zeros(model.n)
    for i, s in enumerate(model.sites):
        for t, m in model.laws[s].moments().items():
            j = idx.get(t)
            Mv[i] += m * (vv[j] if j is not None else ghost_v)
    slack = Mv - vv / (1.0 - vv)
    holds = bool((slack >= -tol).all())
    nonzero = bool((vv > 0).any())
    valid = model.table().n_ghost == 0 or policy == "ghost-die"
    note = "" if nonzero else "v = 0 certifies nothing"
    return Certificate(holds, holds and nonzero, valid, float(slack.min()), note)
