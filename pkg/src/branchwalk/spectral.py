"""Growth parameters of the first-moment matrix.

* ``M_s(x, x)`` -- local growth rate, estimated by Perron roots of the matrix
  restricted to balls around ``x`` inside its irreducible class (nondecreasing
  in the radius), or by the first-return series ``Phi(x, x | z)``.
* ``M_w(x)`` -- global growth rate of the row sums of ``M^n``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from branchwalk.model import BRWModel, first_moment, irreducible_classes

PERRON_TOL = 1e-12
LOCAL_MARGIN = 1e-3
NEAR_CRITICAL = 1e-2


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    method: str
    window: object
    bound: str
    history: tuple = ()
    residual: float = 0.0
    converged: bool = True
    note: str = ""


# --------------------------------------------------------------------------
# Perron roots
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PerronResult:
    value: float
    vector: np.ndarray
    lower: float
    upper: float
    iterations: int
    converged: bool


def perron_root(mat, tol: float = PERRON_TOL, max_iter: int = 200_000) -> PerronResult:
    """Spectral radius of a nonnegative matrix by power iteration.

    Each strongly connected block is solved separately (power iteration on
    ``B + I`` so that periodic blocks converge) and stopped once the
    Collatz-Wielandt bounds ``min (Bv)/v <= rho <= max (Bv)/v`` are within
    ``tol`` relative. The largest block root is returned.
    """
    mat = sparse.csr_matrix(mat, dtype=float)
    n = mat.shape[0]
    if n == 0:
        return PerronResult(0.0, np.zeros(0), 0.0, 0.0, 0, True)
    ncomp, labels = connected_components(mat, directed=True, connection="strong")
    best = PerronResult(0.0, np.zeros(n), 0.0, 0.0, 0, True)
    for c in range(ncomp):
        idx = np.flatnonzero(labels == c)
        sub = mat[idx][:, idx]
        if sub.nnz == 0:
            continue
        res = _perron_irreducible(sub, tol, max_iter)
        if res.value > best.value:
            vec = np.zeros(n)
            vec[idx] = res.vector
            best = PerronResult(res.value, vec, res.lower, res.upper, res.iterations,
                                res.converged)
    return best


def _perron_irreducible(sub, tol, max_iter):
    m = sub.shape[0]
    if m == 1:
        v = float(sub[0, 0])
        return PerronResult(v, np.ones(1), v, v, 0, True)
    shifted = (sub + sparse.identity(m, format="csr")).tocsr()
    v = np.full(m, 1.0 / m)
    lo = hi = 0.0
    for it in range(1, max_iter + 1):
        w = shifted @ v
        ratio = w / v
        lo, hi = float(ratio.min()) - 1.0, float(ratio.max()) - 1.0
        v = w / w.sum()
        if hi - lo <= tol * max(hi, 1e-300):
            return PerronResult(0.5 * (lo + hi), v, lo, hi, it, True)
    return PerronResult(0.5 * (lo + hi), v, lo, hi, max_iter, False)


def ball(model: BRWModel, x, radius: int) -> list:
    """Window sites within graph distance ``radius`` of ``x`` (undirected support)."""
    mat = first_moment(model).matrix
    und = (mat + mat.T).tocsr()
    idx = model.index
    start = idx[x]
    dist = {start: 0}
    queue = deque([start])
    while queue:
        i = queue.popleft()
        if dist[i] == radius:
            continue
        for j in und.indices[und.indptr[i]:und.indptr[i + 1]]:
            if j not in dist:
                dist[j] = dist[i] + 1
                queue.append(j)
    return sorted(dist)


def estimate_Ms(model: BRWModel, x, radii=None, tol: float = PERRON_TOL) -> SpectralEstimate:
    """Lower bound for ``M_s(x, x)`` from Perron roots on growing balls.

    The bound is exact when the irreducible class of ``x`` lies inside the
    largest ball and no first moment leaves the window from that class.
    """
    fm = first_moment(model)
    classes = irreducible_classes(model)
    i = model.index[x]
    cls_idx = np.flatnonzero(classes.labels == classes.labels[i])
    cls_set = set(cls_idx.tolist())
    if radii is None:
        radii = [_eccentricity(model, x)]
    history = []
    best = 0.0
    converged = True
    residual = 0.0
    for r in sorted(radii):
        members = [j for j in ball(model, x, r) if j in cls_set]
        sub = fm.matrix[members][:, members]
        res = perron_root(sub, tol)
        converged &= res.converged
        residual = max(residual, res.upper - res.lower)
        best = max(best, res.value)
        history.append((r, res.value))
    covered = len(members) == len(cls_idx)
    exact = covered and not np.any(fm.escape[cls_idx] > 0)
    return SpectralEstimate(best, "perron-truncation", max(radii), "exact" if exact else "lower",
                            tuple(history), residual, converged)


def _eccentricity(model, x):
    return max(1, len(model.sites))


# --------------------------------------------------------------------------
# M_w
# --------------------------------------------------------------------------

def estimate_Mw(model: BRWModel, x, n_max: int = 400, use_shortcut: bool = True) -> SpectralEstimate:
    """Growth rate of ``sum_y m^(n)_xy``.

    BP-like models (same total-offspring law everywhere) return the common
    mean exactly. Otherwise row sums of ``M^n`` are accumulated in log form;
    the returned value is the two-step ratio ``sqrt(S_n / S_{n-2})``, with the
    plain root ``S_n^{1/n}`` kept in the history. On truncated windows mass
    leaving the window is lost, so the estimate is biased downward.
    """
    if use_shortcut:
        from branchwalk.project import detect_bp_like

        h = detect_bp_like(model)
        if h is not None:
            return SpectralEstimate(h.mean(), "closed-form", None, "exact")
    fm = first_moment(model)
    mt = fm.matrix.T.tocsr()
    w = np.zeros(model.n)
    w[model.index[x]] = 1.0
    log_scale = 0.0
    logs = [0.0]
    for _ in range(n_max):
        w = mt @ w
        s = w.sum()
        if s <= 0:
            return SpectralEstimate(0.0, "power-root", n_max, "exact",
                                    note="row sums vanish")
        log_scale += math.log(s)
        w /= s
        logs.append(log_scale)
    root = math.exp(logs[-1] / n_max)
    ratio = math.exp(0.5 * (logs[-1] - logs[-3])) if n_max >= 2 else root
    bound = "lower" if model.table().n_ghost else "exact"
    hist = ((n_max, root),)
    return SpectralEstimate(ratio, "power-root", n_max, bound, hist,
                            abs(ratio - root),
                            note="truncation biases downward" if bound == "lower" else "")


# --------------------------------------------------------------------------
# First-return series
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PhiSeries:
    """Coefficients ``phi^n(x, y)``, ``n = 1..N`` (``coef[n - 1]``)."""

    x: object
    y: object
    coef: np.ndarray
    overflow: bool = False

    def __call__(self, z: float) -> float:
        acc = 0.0
        for c in self.coef[::-1]:
            acc = acc * z + c
            if acc > 1e300:
                return math.inf
        return acc * z


def phi_series(model: BRWModel, x, y, N: int = 400) -> PhiSeries:
    """Expected progeny at ``y`` along trails from ``x`` that hit ``y`` for the
    first time at step ``n``: ``f^n = M' f^{n-1}``, ``f^1 = M[:, y]``, where
    ``M'`` is ``M`` with column ``y`` removed."""
    mat = first_moment(model).matrix.tocsc()
    j = model.index[y]
    i = model.index[x]
    f = np.asarray(mat[:, j].todense()).ravel()
    cut = mat.tolil()
    cut[:, j] = 0
    cut = cut.tocsr()
    coef = np.empty(N)
    overflow = False
    for n in range(N):
        coef[n] = f[i]
        if n + 1 < N:
            f = cut @ f
            if not np.isfinite(f).all() or f.max(initial=0.0) > 1e300:
                overflow = True
                coef[n + 1:] = np.inf
                break
    return PhiSeries(x, y, coef, overflow)


def Ms_from_phi(model: BRWModel, x, N: int = 400, tol: float = 1e-13,
                series: PhiSeries | None = None, z_cap: float = 1e6) -> SpectralEstimate:
    """``1 / M_s = max{z >= 0 : Phi(x, x | z) <= 1}`` on the truncated series.

    Truncation understates Phi, so the root found is an upper bound for
    ``1 / M_s`` and the returned ``M_s`` a lower bound.
    """
    s = series or phi_series(model, x, x, N)
    if s.overflow:
        return SpectralEstimate(math.nan, "phi-bisection", N, "lower", converged=False,
                                note="series coefficients overflow")
    hi = 1.0
    while s(hi) <= 1.0:
        hi *= 2.0
        if hi > z_cap:
            return SpectralEstimate(0.0, "phi-bisection", N, "lower",
                                    note="Phi stays below 1: no return mass")
    lo = 0.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if s(mid) <= 1.0:
            lo = mid
        else:
            hi = mid
    return SpectralEstimate(1.0 / lo if lo > 0 else math.inf, "phi-bisection", N, "lower",
                            history=(("inverse", lo),))


# --------------------------------------------------------------------------
# Closed forms and the local survival test
# --------------------------------------------------------------------------

def phi_closed_form_irreducible_n(p: float, eps: float, z: float) -> float:
    """``Phi(0, 0 | z)`` of the nearest-neighbour walk on the nonnegative integers."""
    a = p - eps
    disc = 1.0 - 8.0 * eps * z * z * a
    if disc < 0:
        return math.inf
    return eps * z + (1.0 - math.sqrt(disc)) / 2.0


def closed_form_Ms(model: BRWModel):
    """Known ``M_s`` for registered examples, else None."""
    prm = model.params
    if model.tag == "tree-edge":
        return prm["lam"] * 2.0 * math.sqrt(prm["d"] - 1)
    if model.tag == "irreducible-N":
        p, eps = prm["p"], prm["eps"]
        if eps <= 0:
            return None
        zc = 1.0 / math.sqrt(8.0 * eps * (p - eps))
        if phi_closed_form_irreducible_n(p, eps, zc) <= 1.0:
            return 1.0 / zc
        lo, hi = 0.0, zc
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if phi_closed_form_irreducible_n(p, eps, mid) <= 1.0:
                lo = mid
            else:
                hi = mid
        return 1.0 / lo
    if model.tag == "reducible-N":
        return 0.0
    return None


@dataclass(frozen=True)
class LocalSurvivalResult:
    survives: bool
    indeterminate: bool
    near_critical: bool
    estimate: float
    method: str
    margin: float = LOCAL_MARGIN


def local_survival_test(model: BRWModel, x, margin: float = LOCAL_MARGIN,
                        radii=None) -> LocalSurvivalResult:
    """Is ``M_s(x, x) > 1``?

    Registered closed forms decide directly. Otherwise the best lower bound
    (Perron truncation and first-return series) must exceed ``1 + margin``;
    values within ``margin`` of 1, or below 1 when only a lower bound is
    known, are reported as indeterminate.
    """
    cf = closed_form_Ms(model)
    if cf is not None:
        return LocalSurvivalResult(cf > 1.0, abs(cf - 1.0) <= margin,
                                   abs(cf - 1.0) <= NEAR_CRITICAL, cf, "closed-form", margin)
    est = estimate_Ms(model, x, radii)
    value, method = est.value, est.method
    exact = est.bound == "exact"
    if not exact:
        ph = Ms_from_phi(model, x)
        if math.isfinite(ph.value) and ph.value > value:
            value, method = ph.value, ph.method
    survives = value > 1.0 + margin
    indeterminate = abs(value - 1.0) <= margin or (not exact and not survives)
    return LocalSurvivalResult(survives, indeterminate, abs(value - 1.0) <= NEAR_CRITICAL,
                               value, method, margin)
