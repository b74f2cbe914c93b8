"""Hot loops: generating-function evaluation, monotone fixed-point iteration
and one Monte Carlo replicate.

Every kernel exists twice, a numba version (``*_nb``) and a numpy / pure
Python version (``*_np``). The public names dispatch on
:data:`branchwalk._accel.USE_NUMBA`. Both versions consume the flat arrays of
a :class:`LawTable`.

Law kinds per site:

* 0 -- explicit atoms, ``G = 1 - sum_a w_a (1 - prod_c z[c]^k_c)``
* 1 -- geometric total with independent diffusion, ``G = 1 / (1 + m P(1-z))``
* 2 -- finite total law with independent diffusion, ``G = H(Pz)``
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from branchwalk._accel import USE_NUMBA, njit

ATOMS, GEOMETRIC, POLYNOMIAL = 0, 1, 2


@dataclass(eq=False)
class LawTable:
    """Flattened offspring laws of a windowed model.

    Child and diffusion indices address the *extended* vector
    ``z_ext = concat(z, ghost_values)``: indices ``>= n`` are ghost slots for
    out-of-window sites (``ghost_sites[i - n]``).
    """

    kind: np.ndarray
    atom_ptr: np.ndarray
    atom_w: np.ndarray
    child_ptr: np.ndarray
    child_idx: np.ndarray
    child_cnt: np.ndarray
    diff_ptr: np.ndarray
    diff_idx: np.ndarray
    diff_p: np.ndarray
    mean: np.ndarray
    coef_ptr: np.ndarray
    coef: np.ndarray
    ghost_sites: tuple = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return int(self.kind.shape[0])

    @property
    def n_ghost(self) -> int:
        return len(self.ghost_sites)

    def arrays(self):
        return (self.kind, self.atom_ptr, self.atom_w, self.child_ptr,
                self.child_idx, self.child_cnt, self.diff_ptr, self.diff_idx,
                self.diff_p, self.mean, self.coef_ptr, self.coef)

    # segment owners, only needed by the vectorised fallback
    @cached_property
    def atom_site(self):
        return np.repeat(np.arange(self.n), np.diff(self.atom_ptr))

    @cached_property
    def child_atom(self):
        return np.repeat(np.arange(self.atom_w.shape[0]), np.diff(self.child_ptr))

    @cached_property
    def diff_site(self):
        return np.repeat(np.arange(self.n), np.diff(self.diff_ptr))

    @cached_property
    def coef_site(self):
        return np.repeat(np.arange(self.n), np.diff(self.coef_ptr))

    @cached_property
    def coef_pow(self):
        starts = np.repeat(self.coef_ptr[:-1], np.diff(self.coef_ptr))
        return np.arange(self.coef.shape[0]) - starts


# --------------------------------------------------------------------------
# G evaluation
# --------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _g_apply_nb(z_ext, kind, atom_ptr, atom_w, child_ptr, child_idx, child_cnt,
                diff_ptr, diff_idx, diff_p, mean, coef_ptr, coef, out):
    n = kind.shape[0]
    for x in range(n):
        k = kind[x]
        if k == 0:
            acc = 0.0
            for a in range(atom_ptr[x], atom_ptr[x + 1]):
                prod = 1.0
                for c in range(child_ptr[a], child_ptr[a + 1]):
                    prod *= z_ext[child_idx[c]] ** child_cnt[c]
                acc += atom_w[a] * (1.0 - prod)
            v = 1.0 - acc
        elif k == 1:
            u = 0.0
            for j in range(diff_ptr[x], diff_ptr[x + 1]):
                u += diff_p[j] * (1.0 - z_ext[diff_idx[j]])
            v = 1.0 / (1.0 + mean[x] * u)
        else:
            s = 0.0
            for j in range(diff_ptr[x], diff_ptr[x + 1]):
                s += diff_p[j] * z_ext[diff_idx[j]]
            acc = 0.0
            sp = 1.0
            for j in range(coef_ptr[x], coef_ptr[x + 1]):
                acc += coef[j] * (1.0 - sp)
                sp *= s
            v = 1.0 - acc
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        out[x] = v


def _g_apply_np(table: LawTable, z_ext: np.ndarray) -> np.ndarray:
    n = table.n
    out = np.empty(n)
    kind = table.kind

    if table.atom_w.size:
        pw = z_ext[table.child_idx] ** table.child_cnt
        prod = np.ones(table.atom_w.shape[0])
        nonempty = np.diff(table.child_ptr) > 0
        if pw.size:
            prod[nonempty] = np.multiply.reduceat(pw, table.child_ptr[:-1][nonempty])
        acc = np.bincount(table.atom_site, weights=table.atom_w * (1.0 - prod),
                          minlength=n)
        mask = kind == ATOMS
        out[mask] = 1.0 - acc[mask]

    if table.diff_p.size:
        zd = z_ext[table.diff_idx]
        mask = kind == GEOMETRIC
        if mask.any():
            u = np.bincount(table.diff_site, weights=table.diff_p * (1.0 - zd),
                            minlength=n)
            out[mask] = 1.0 / (1.0 + table.mean[mask] * u[mask])
        mask = kind == POLYNOMIAL
        if mask.any():
            s = np.bincount(table.diff_site, weights=table.diff_p * zd, minlength=n)
            terms = table.coef * (1.0 - s[table.coef_site] ** table.coef_pow)
            acc = np.bincount(table.coef_site, weights=terms, minlength=n)
            out[mask] = 1.0 - acc[mask]
    return np.clip(out, 0.0, 1.0)


def g_apply(table: LawTable, z: np.ndarray, ghost: np.ndarray, *, numba: bool | None = None):
    """One generation of the generating function on window vector ``z``."""
    z_ext = np.concatenate([np.asarray(z, dtype=float), np.asarray(ghost, dtype=float)])
    if USE_NUMBA if numba is None else numba:
        out = np.empty(table.n)
        _g_apply_nb(z_ext, *table.arrays(), out)
        return out
    return _g_apply_np(table, z_ext)


# --------------------------------------------------------------------------
# Monotone fixed-point iteration
# --------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _iterate_nb(kind, atom_ptr, atom_w, child_ptr, child_idx, child_cnt,
                diff_ptr, diff_idx, diff_p, mean, coef_ptr, coef,
                z0, ghost, zero_mask, tol, max_iter, direction):
    n = z0.shape[0]
    z_ext = np.empty(n + ghost.shape[0])
    z_ext[:n] = z0
    z_ext[n:] = ghost
    out = np.empty(n)
    prev = np.inf
    diff = np.inf
    monotone = True
    converged = False
    it = 0
    while it < max_iter:
        _g_apply_nb(z_ext, kind, atom_ptr, atom_w, child_ptr, child_idx, child_cnt,
                    diff_ptr, diff_idx, diff_p, mean, coef_ptr, coef, out)
        diff = 0.0
        for x in range(n):
            if zero_mask[x]:
                out[x] = 0.0
            d = out[x] - z_ext[x]
            if direction * d < -1e-12:
                monotone = False
            if abs(d) > diff:
                diff = abs(d)
            z_ext[x] = out[x]
        it += 1
        if diff <= tol:
            if diff == 0.0:
                converged = True
                break
            r = diff / prev
            if r < 1.0 and diff * r / (1.0 - r) <= tol:
                converged = True
                break
        prev = diff
    return z_ext[:n].copy(), it, diff, monotone, converged


def _iterate_np(table, z0, ghost, zero_mask, tol, max_iter, direction):
    n = z0.shape[0]
    z_ext = np.concatenate([z0, ghost])
    prev = np.inf
    diff = np.inf
    monotone = True
    converged = False
    it = 0
    while it < max_iter:
        out = _g_apply_np(table, z_ext)
        out[zero_mask] = 0.0
        d = out - z_ext[:n]
        if (direction * d < -1e-12).any():
            monotone = False
        diff = float(np.abs(d).max()) if n else 0.0
        z_ext[:n] = out
        it += 1
        if diff <= tol:
            if diff == 0.0:
                converged = True
                break
            r = diff / prev
            if r < 1.0 and diff * r / (1.0 - r) <= tol:
                converged = True
                break
        prev = diff
    return z_ext[:n].copy(), it, diff, monotone, converged


def iterate(table: LawTable, z0, ghost, zero_mask=None, *, tol=1e-10,
            max_iter=10**6, direction=1, numba: bool | None = None):
    """Iterate ``z <- G(z)`` (entries in ``zero_mask`` pinned to 0).

    Stops once the step is below ``tol`` and the geometric tail estimate
    ``step * r / (1 - r)`` (``r`` the observed contraction ratio) is too.
    Returns ``(z, iterations, last_step, monotone, converged)``.
    """
    z0 = np.array(z0, dtype=float)
    ghost = np.asarray(ghost, dtype=float)
    if zero_mask is None:
        zero_mask = np.zeros(z0.shape[0], dtype=np.bool_)
    zero_mask = np.asarray(zero_mask, dtype=np.bool_)
    if USE_NUMBA if numba is None else numba:
        return _iterate_nb(*table.arrays(), z0, ghost, zero_mask, float(tol),
                           int(max_iter), float(direction))
    return _iterate_np(table, z0, ghost, zero_mask, float(tol), int(max_iter),
                       float(direction))


# --------------------------------------------------------------------------
# Monte Carlo: one replicate, counts per site
# --------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _replicate_nb(gen, kind, atom_ptr, atom_w, child_ptr, child_idx, child_cnt,
                  diff_ptr, diff_idx, diff_p, mean, coef_ptr, coef,
                  start, horizon, cap, in_a, half, ghost_survive):
    n = kind.shape[0]
    cur = np.zeros(n, np.int64)
    nxt = np.zeros(n, np.int64)
    occ = np.empty(n, np.int64)
    nocc = np.empty(n, np.int64)
    cur[start] = 1
    occ[0] = start
    n_occ = 1
    cum = 1
    last_visit = 0 if in_a[start] else -1
    visited = in_a[start]
    extinct = False
    censored = False
    escaped = False
    g = 0
    while g < horizon:
        order = np.sort(occ[:n_occ])
        m_next = 0
        for i in range(n_occ):
            x = order[i]
            c = cur[x]
            cur[x] = 0
            k = kind[x]
            if k == 0:
                rem = c
                rem_w = 1.0
                a1 = atom_ptr[x + 1]
                for a in range(atom_ptr[x], a1):
                    if rem == 0:
                        break
                    if a == a1 - 1:
                        na = rem
                    else:
                        pa = atom_w[a] / rem_w
                        pa = min(1.0, max(0.0, pa))
                        na = gen.binomial(rem, pa)
                    rem -= na
                    rem_w -= atom_w[a]
                    if na > 0:
                        for j in range(child_ptr[a], child_ptr[a + 1]):
                            y = child_idx[j]
                            if y >= n:
                                if ghost_survive:
                                    escaped = True
                                    break
                                continue
                            if nxt[y] == 0:
                                nocc[m_next] = y
                                m_next += 1
                            nxt[y] += na * child_cnt[j]
                    if escaped:
                        break
            else:
                if k == 1:
                    total = gen.negative_binomial(c, 1.0 / (1.0 + mean[x]))
                else:
                    total = 0
                    rem = c
                    rem_w = 1.0
                    j1 = coef_ptr[x + 1]
                    for j in range(coef_ptr[x], j1):
                        if rem == 0:
                            break
                        if j == j1 - 1:
                            nk = rem
                        else:
                            pj = coef[j] / rem_w
                            pj = min(1.0, max(0.0, pj))
                            nk = gen.binomial(rem, pj)
                        rem -= nk
                        rem_w -= coef[j]
                        total += nk * (j - coef_ptr[x])
                rem = total
                rem_w = 1.0
                j1 = diff_ptr[x + 1]
                for j in range(diff_ptr[x], j1):
                    if rem == 0:
                        break
                    if j == j1 - 1:
                        nj = rem
                    else:
                        pj = diff_p[j] / rem_w
                        pj = min(1.0, max(0.0, pj))
                        nj = gen.binomial(rem, pj)
                    rem -= nj
                    rem_w -= diff_p[j]
                    if nj > 0:
                        y = diff_idx[j]
                        if y >= n:
                            if ghost_survive:
                                escaped = True
                                break
                            continue
                        if nxt[y] == 0:
                            nocc[m_next] = y
                            m_next += 1
                        nxt[y] += nj
            if escaped:
                break
        if escaped:
            break
        g += 1
        tmp = cur
        cur = nxt
        nxt = tmp
        tmp2 = occ
        occ = nocc
        nocc = tmp2
        n_occ = m_next
        pop = 0
        in_now = False
        for i in range(n_occ):
            pop += cur[occ[i]]
            if in_a[occ[i]]:
                in_now = True
        if in_now:
            visited = True
            last_visit = g
        if pop == 0:
            extinct = True
            break
        cum += pop
        if cum > cap:
            censored = True
            break
    if escaped:
        return 1, 1, horizon, 1, 0, 1, g
    alive = 0 if extinct else 1
    local = 0
    if alive == 1 and last_visit >= min(half, g):
        local = 1
    return alive, 1 if visited else 0, last_visit, local, 1 if censored else 0, 0, g


def _replicate_py(gen, table: LawTable, start, horizon, cap, in_a, half, ghost_survive):
    # mirrors _replicate_nb draw for draw
    n = table.n
    kind, atom_ptr, atom_w, child_ptr, child_idx, child_cnt = (
        table.kind, table.atom_ptr, table.atom_w, table.child_ptr,
        table.child_idx, table.child_cnt)
    diff_ptr, diff_idx, diff_p, mean, coef_ptr, coef = (
        table.diff_ptr, table.diff_idx, table.diff_p, table.mean,
        table.coef_ptr, table.coef)
    cur = np.zeros(n, np.int64)
    nxt = np.zeros(n, np.int64)
    cur[start] = 1
    occ = [start]
    cum = 1
    last_visit = 0 if in_a[start] else -1
    visited = bool(in_a[start])
    extinct = censored = escaped = False
    g = 0
    while g < horizon:
        nocc = []
        for x in np.sort(np.array(occ, dtype=np.int64)):
            c = int(cur[x])
            cur[x] = 0
            if kind[x] == ATOMS:
                rem, rem_w = c, 1.0
                a1 = atom_ptr[x + 1]
                for a in range(atom_ptr[x], a1):
                    if rem == 0:
                        break
                    if a == a1 - 1:
                        na = rem
                    else:
                        pa = min(1.0, max(0.0, atom_w[a] / rem_w))
                        na = int(gen.binomial(rem, pa))
                    rem -= na
                    rem_w -= atom_w[a]
                    if na > 0:
                        for j in range(child_ptr[a], child_ptr[a + 1]):
                            y = child_idx[j]
                            if y >= n:
                                if ghost_survive:
                                    escaped = True
                                    break
                                continue
                            if nxt[y] == 0:
                                nocc.append(y)
                            nxt[y] += na * child_cnt[j]
                    if escaped:
                        break
            else:
                if kind[x] == GEOMETRIC:
                    total = int(gen.negative_binomial(c, 1.0 / (1.0 + mean[x])))
                else:
                    total, rem, rem_w = 0, c, 1.0
                    j1 = coef_ptr[x + 1]
                    for j in range(coef_ptr[x], j1):
                        if rem == 0:
                            break
                        if j == j1 - 1:
                            nk = rem
                        else:
                            pj = min(1.0, max(0.0, coef[j] / rem_w))
                            nk = int(gen.binomial(rem, pj))
                        rem -= nk
                        rem_w -= coef[j]
                        total += nk * (j - coef_ptr[x])
                rem, rem_w = total, 1.0
                j1 = diff_ptr[x + 1]
                for j in range(diff_ptr[x], j1):
                    if rem == 0:
                        break
                    if j == j1 - 1:
                        nj = rem
                    else:
                        pj = min(1.0, max(0.0, diff_p[j] / rem_w))
                        nj = int(gen.binomial(rem, pj))
                    rem -= nj
                    rem_w -= diff_p[j]
                    if nj > 0:
                        y = diff_idx[j]
                        if y >= n:
                            if ghost_survive:
                                escaped = True
                                break
                            continue
                        if nxt[y] == 0:
                            nocc.append(y)
                        nxt[y] += nj
            if escaped:
                break
        if escaped:
            break
        g += 1
        cur, nxt = nxt, cur
        occ = nocc
        pop = int(sum(cur[y] for y in occ))
        if any(in_a[y] for y in occ):
            visited = True
            last_visit = g
        if pop == 0:
            extinct = True
            break
        cum += pop
        if cum > cap:
            censored = True
            break
    if escaped:
        return 1, 1, horizon, 1, 0, 1, g
    alive = 0 if extinct else 1
    local = 1 if (alive and last_visit >= min(half, g)) else 0
    return alive, int(visited), last_visit, local, int(censored), 0, g


def replicate(gen, table: LawTable, start: int, horizon: int, cap: int, in_a,
              half: int, ghost_survive: bool, *, numba: bool | None = None):
    """Run one replicate. Returns
    ``(alive, visited, last_visit, local, censored, escaped, generations)``."""
    in_a = np.asarray(in_a, dtype=np.bool_)
    if USE_NUMBA if numba is None else numba:
        return _replicate_nb(gen, *table.arrays(), int(start), int(horizon), int(cap),
                             in_a, int(half), bool(ghost_survive))
    return _replicate_py(gen, table, int(start), int(horizon), int(cap), in_a,
                         int(half), bool(ghost_survive))
