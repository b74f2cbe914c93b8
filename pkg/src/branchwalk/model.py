"""Branching random walk instances: site spaces, offspring laws, first
moments, irreducible classes and finite working windows.

A model is a site space with a finite *window* plus an offspring law for each
window site. Children sent outside the window land in ghost slots whose value
is fixed by a boundary policy:

* ``ghost-survive`` -- escaped particles live forever (extinction value 0)
* ``ghost-die`` -- escaped particles vanish (extinction value 1)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Hashable, Iterable, Mapping

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from branchwalk.kernels import ATOMS, GEOMETRIC, POLYNOMIAL, LawTable

WEIGHT_TOL = 1e-12
GEOMETRIC_TAIL = 1e-14
POLICIES = ("ghost-survive", "ghost-die")


class ModelError(ValueError):
    """Invalid model description."""


def ghost_constant(policy: str) -> float:
    if policy == "ghost-survive":
        return 0.0
    if policy == "ghost-die":
        return 1.0
    raise ModelError(f"unknown boundary policy {policy!r}")


def _site_key(s):
    return (type(s).__name__, repr(s))


# --------------------------------------------------------------------------
# Site spaces
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SiteSpace:
    """Countable site set together with the finite window used for computing.

    ``kind`` is one of ``explicit``, ``nonneg-integers``, ``integers``,
    ``tree`` (full ball, sites are paths from the root) and ``tree-radial``
    (distance-from-root quotient of a ball, sites are levels).
    """

    kind: str
    window: tuple
    degree: int | None = None
    all_sites: tuple | None = None

    def __post_init__(self):
        if not self.window:
            raise ModelError("window must be nonempty")
        if len(set(self.window)) != len(self.window):
            raise ModelError("window sites must be distinct")
        if self.kind in ("tree", "tree-radial") and (self.degree is None or self.degree < 3):
            raise ModelError("homogeneous trees need degree >= 3")
        if self.kind in ("nonneg-integers", "integers"):
            w = sorted(self.window)
            if w != list(range(w[0], w[-1] + 1)) or not w[0] <= 0 <= w[-1]:
                raise ModelError("integer windows must be intervals containing 0")

    @cached_property
    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.window)}

    def __len__(self):
        return len(self.window)

    def contains(self, site) -> bool:
        """Membership in the full (possibly infinite) space."""
        if self.kind == "explicit":
            return site in (self.all_sites or self.window)
        if self.kind == "nonneg-integers":
            return isinstance(site, (int, np.integer)) and site >= 0
        if self.kind == "integers":
            return isinstance(site, (int, np.integer))
        if self.kind == "tree-radial":
            return isinstance(site, (int, np.integer)) and site >= 0
        if self.kind == "tree":
            return isinstance(site, tuple)
        return False

    @staticmethod
    def explicit(sites: Iterable[Hashable]) -> "SiteSpace":
        sites = tuple(sites)
        return SiteSpace("explicit", sites, all_sites=sites)

    @staticmethod
    def nonneg_integers(n: int) -> "SiteSpace":
        return SiteSpace("nonneg-integers", tuple(range(int(n) + 1)))

    @staticmethod
    def integers(n: int) -> "SiteSpace":
        return SiteSpace("integers", tuple(range(-int(n), int(n) + 1)))

    @staticmethod
    def tree_radial(degree: int, radius: int) -> "SiteSpace":
        return SiteSpace("tree-radial", tuple(range(int(radius) + 1)), degree=int(degree))

    @staticmethod
    def tree_ball(degree: int, radius: int) -> "SiteSpace":
        return SiteSpace("tree", tuple(tree_ball_sites(degree, radius)), degree=int(degree))


def tree_ball_sites(degree: int, radius: int) -> list:
    """Sites of the ball of radius ``radius`` in the ``degree``-regular tree.

    A site is the tuple of branch labels along the path from the root; the
    root is ``()``. The root has ``degree`` branches, every other vertex
    ``degree - 1`` forward branches.
    """
    out = [()]
    layer = [()]
    for r in range(radius):
        nxt = []
        for s in layer:
            nb = degree if r == 0 else degree - 1
            nxt.extend(s + (b,) for b in range(nb))
        out.extend(nxt)
        layer = nxt
    return out


def tree_neighbors(site: tuple, degree: int) -> list:
    nb = degree if len(site) == 0 else degree - 1
    out = [site + (b,) for b in range(nb)]
    if site:
        out.append(site[:-1])
    return out


# --------------------------------------------------------------------------
# Placements and laws
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Placement:
    """Finitely supported child placement: ``counts`` holds (site, count>0)."""

    counts: tuple = ()

    def __post_init__(self):
        for _, c in self.counts:
            if int(c) != c or c <= 0:
                raise ModelError(f"placement counts must be positive integers, got {c!r}")

    @staticmethod
    def of(mapping: Mapping | None = None) -> "Placement":
        merged: dict = {}
        for s, c in (mapping or {}).items():
            c = int(c)
            if c < 0:
                raise ModelError("negative placement count")
            if c:
                merged[s] = merged.get(s, 0) + c
        return Placement(tuple(sorted(merged.items(), key=lambda t: _site_key(t[0]))))

    @property
    def total(self) -> int:
        return sum(c for _, c in self.counts)

    def as_dict(self) -> dict:
        return dict(self.counts)

    def map_sites(self, g: Callable) -> "Placement":
        out: dict = {}
        for s, c in self.counts:
            t = g(s)
            out[t] = out.get(t, 0) + c
        return Placement.of(out)


class Law:
    """Offspring law of one site. Subclasses fix the representation."""

    kind = ATOMS

    def moments(self) -> dict:
        raise NotImplementedError

    def mean_total(self) -> float:
        raise NotImplementedError

    def total_law(self) -> dict:
        raise NotImplementedError

    def atoms(self) -> tuple:
        raise NotImplementedError

    def targets(self) -> list:
        return list(self.moments())

    def map_sites(self, g: Callable) -> "Law":
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class OffspringDistribution(Law):
    """Finite list of (weight, Placement) atoms."""

    atom_list: tuple

    def __post_init__(self):
        if not self.atom_list:
            raise ModelError("offspring distribution has no atoms")
        total = 0.0
        seen = set()
        for w, f in self.atom_list:
            if not (w > 0 and math.isfinite(w)):
                raise ModelError(f"atom weight must be positive, got {w!r}")
            if f in seen:
                raise ModelError("duplicate placement in offspring distribution")
            seen.add(f)
            total += w
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ModelError(f"atom weights sum to {total!r}, not 1")

    @staticmethod
    def from_pairs(pairs, normalize: bool = False) -> "OffspringDistribution":
        """Build from ``[(weight, {site: count}), ...]`` merging equal placements.

        ``normalize`` rescales weights that sum to 1 within 1e-9 (text round
        trips); larger deviations are always an error.
        """
        merged: dict = {}
        for w, f in pairs:
            w = float(w)
            if w == 0.0:
                continue
            p = f if isinstance(f, Placement) else Placement.of(f)
            merged[p] = merged.get(p, 0.0) + w
        if not merged:
            raise ModelError("offspring distribution has no atoms")
        if normalize:
            s = sum(merged.values())
            if abs(s - 1.0) > 1e-9:
                raise ModelError(f"atom weights sum to {s!r}, not 1")
            merged = {p: w / s for p, w in merged.items()}
        return OffspringDistribution(tuple((w, p) for p, w in merged.items()))

    def atoms(self):
        return self.atom_list

    def moments(self):
        m: dict = {}
        for w, f in self.atom_list:
            for s, c in f.counts:
                m[s] = m.get(s, 0.0) + w * c
        return m

    def mean_total(self):
        return sum(w * f.total for w, f in self.atom_list)

    def total_law(self):
        out: dict = {}
        for w, f in self.atom_list:
            out[f.total] = out.get(f.total, 0.0) + w
        return dict(sorted(out.items()))

    def map_sites(self, g):
        return OffspringDistribution.from_pairs(
            [(w, f.map_sites(g)) for w, f in self.atom_list])


@dataclass(frozen=True, eq=False)
class IndependentDiffusionLaw(Law):
    """Total offspring drawn from ``rho``, each child placed independently
    according to ``diffusion`` (site -> probability)."""

    rho: tuple
    diffusion: tuple

    def __post_init__(self):
        if any(r < 0 for r in self.rho) or abs(sum(self.rho) - 1.0) > WEIGHT_TOL:
            raise ModelError("total-offspring law must be a probability vector")
        if self.diffusion:
            if any(p < 0 for _, p in self.diffusion) or abs(sum(p for _, p in self.diffusion) - 1.0) > WEIGHT_TOL:
                raise ModelError("diffusion must be a probability vector")
        elif any(self.rho[1:]):
            raise ModelError("children need a diffusion")

    kind = POLYNOMIAL

    def moments(self):
        m = self.mean_total()
        return {s: m * p for s, p in self.diffusion}

    def mean_total(self):
        return float(sum(n * r for n, r in enumerate(self.rho)))

    def total_law(self):
        return {n: r for n, r in enumerate(self.rho) if r > 0}

    def atoms(self):
        return _expand_independent(self.total_law(), self.diffusion)

    def map_sites(self, g):
        return IndependentDiffusionLaw(self.rho, _map_diffusion(self.diffusion, g))


@dataclass(frozen=True, eq=False)
class GeometricLaw(Law):
    """Geometric total offspring with mean ``mean`` and independent diffusion.

    ``moment_table`` optionally stores exact first moments (e.g. ``lam * k_xy``)
    so that rounding in ``mean * p`` does not leak into moment checks.
    """

    mean: float
    diffusion: tuple
    moment_table: tuple | None = None

    kind = GEOMETRIC

    def __post_init__(self):
        if not (self.mean >= 0 and math.isfinite(self.mean)):
            raise ModelError("geometric mean must be finite and nonnegative")
        if self.mean > 0:
            if not self.diffusion:
                raise ModelError("children need a diffusion")
            if abs(sum(p for _, p in self.diffusion) - 1.0) > WEIGHT_TOL:
                raise ModelError("diffusion must be a probability vector")

    def moments(self):
        if self.moment_table is not None:
            return dict(self.moment_table)
        return {s: self.mean * p for s, p in self.diffusion}

    def mean_total(self):
        return float(self.mean)

    def total_law(self, tail: float = GEOMETRIC_TAIL):
        """Truncated geometric law; the residual tail mass goes to 0 children."""
        m = self.mean
        if m == 0:
            return {0: 1.0}
        r = m / (1.0 + m)
        out = {}
        pn = 1.0 / (1.0 + m)
        n = 0
        rest = 1.0
        while rest > tail:
            out[n] = pn
            rest -= pn
            n += 1
            pn *= r
        out[0] += max(rest, 0.0)
        return out

    def atoms(self):
        return _expand_independent(self.total_law(), self.diffusion)

    def map_sites(self, g):
        mt = None
        if self.moment_table is not None:
            acc: dict = {}
            for s, v in self.moment_table:
                acc[g(s)] = acc.get(g(s), 0.0) + v
            mt = tuple(acc.items())
        return GeometricLaw(self.mean, _map_diffusion(self.diffusion, g), mt)


def _map_diffusion(diffusion, g):
    acc: dict = {}
    for s, p in diffusion:
        t = g(s)
        acc[t] = acc.get(t, 0.0) + p
    return tuple(sorted(acc.items(), key=lambda t: _site_key(t[0])))


def _expand_independent(total_law: dict, diffusion) -> tuple:
    """Atoms of an independent-diffusion law (multinomial expansion)."""
    sites = [s for s, _ in diffusion]
    probs = np.array([p for _, p in diffusion])
    out: dict = {}
    for n, r in total_law.items():
        if n == 0:
            f = Placement()
            out[f] = out.get(f, 0.0) + r
            continue
        for combo in _compositions(n, len(sites)):
            w = r * _multinomial(n, combo)
            for c, p in zip(combo, probs):
                w *= p ** c
            if w == 0.0:
                continue
            f = Placement.of({s: c for s, c in zip(sites, combo)})
            out[f] = out.get(f, 0.0) + w
    s = sum(out.values())
    return tuple((w / s, f) for f, w in out.items())


def _compositions(n, k):
    if k == 1:
        yield (n,)
        return
    for i in range(n + 1):
        for rest in _compositions(n - i, k - 1):
            yield (i,) + rest


def _multinomial(n, combo):
    out = math.factorial(n)
    for c in combo:
        out //= math.factorial(c)
    return out


# --------------------------------------------------------------------------
# One-dimensional generating functions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarGenFun:
    """Offspring law of a branching process, ``H(z) = sum_n rho[n] z**n``.

    ``geometric_mean`` marks the (untruncated) geometric law of that mean, in
    which case ``rho`` is only a truncated display copy.
    """

    rho: tuple
    geometric_mean: float | None = None

    def __post_init__(self):
        if any(r < 0 for r in self.rho) or abs(sum(self.rho) - 1.0) > WEIGHT_TOL:
            raise ModelError("scalar offspring law must be a probability vector")

    @staticmethod
    def geometric(mean: float) -> "ScalarGenFun":
        law = GeometricLaw(float(mean), ((0, 1.0),)).total_law()
        rho = tuple(law.get(n, 0.0) for n in range(max(law) + 1))
        return ScalarGenFun(rho, float(mean))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.geometric_mean is not None:
            return 1.0 / (1.0 + self.geometric_mean * (1.0 - z))
        acc = np.zeros_like(z)
        zp = np.ones_like(z)
        for r in self.rho:
            acc = acc + r * (1.0 - zp)
            zp = zp * z
        return 1.0 - acc

    def mean(self) -> float:
        if self.geometric_mean is not None:
            return self.geometric_mean
        return float(sum(n * r for n, r in enumerate(self.rho)))

    def as_dict(self) -> dict:
        return {n: r for n, r in enumerate(self.rho) if r > 0}


# --------------------------------------------------------------------------
# Models
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BRWModel:
    """A BRW restricted to a finite window.

    ``laws`` maps every window site to its :class:`Law`; ``rule``, when
    given, produces the law of any site of the full space (used to re-window).
    ``counterpart`` holds ``(rates, lam)`` for discrete counterparts of
    continuous-time models, which evaluate G in closed form.
    """

    space: SiteSpace
    laws: Mapping
    tag: str | None = None
    params: Mapping = field(default_factory=dict)
    rule: Callable | None = None
    policy: str = "ghost-die"
    counterpart: tuple | None = None

    def __post_init__(self):
        ghost_constant(self.policy)
        for s in self.space.window:
            if s not in self.laws:
                raise ModelError(f"site {s!r} has no offspring law")
            for t in self.laws[s].targets():
                if not self.space.contains(t):
                    raise ModelError(f"site {s!r} places children at {t!r} outside the space")

    @property
    def sites(self) -> tuple:
        return self.space.window

    @property
    def n(self) -> int:
        return len(self.space.window)

    @property
    def index(self) -> dict:
        return self.space.index

    def law(self, x) -> Law:
        return self.laws[x]

    def with_policy(self, policy: str) -> "BRWModel":
        return BRWModel(self.space, self.laws, self.tag, self.params, self.rule,
                        policy, self.counterpart)

    def mean_offspring(self) -> np.ndarray:
        return np.array([self.laws[s].mean_total() for s in self.sites])

    def table(self, closed_form: bool = True) -> LawTable:
        """Flat arrays for the kernels (cached)."""
        cache = self.__dict__.setdefault("_tables", {})
        if closed_form not in cache:
            cache[closed_form] = compile_laws(self, closed_form)
        return cache[closed_form]

    def ghost_values(self, policy: str | None = None, overrides: Mapping | None = None,
                     closed_form: bool = True) -> np.ndarray:
        """Values of the ghost slots: the policy constant unless overridden per site."""
        tab = self.table(closed_form)
        c = ghost_constant(policy or self.policy)
        out = np.full(tab.n_ghost, c)
        if overrides:
            for i, s in enumerate(tab.ghost_sites):
                if s in overrides:
                    out[i] = overrides[s]
        return out


def compile_laws(model: BRWModel, closed_form: bool = True) -> LawTable:
    idx = dict(model.index)
    n = model.n
    ghosts: dict = {}

    def slot(s):
        i = idx.get(s)
        if i is not None:
            return i
        if s not in ghosts:
            ghosts[s] = len(ghosts)
        return n + ghosts[s]

    kind = np.zeros(n, np.int8)
    atom_ptr, atom_w, child_ptr, child_idx, child_cnt = [0], [], [0], [], []
    diff_ptr, diff_idx, diff_p = [0], [], []
    mean = np.zeros(n)
    coef_ptr, coef = [0], []
    for i, s in enumerate(model.sites):
        law = model.laws[s]
        # without the closed form, geometric totals are evaluated from their
        # truncated law: sum_n rho(n) (P z)^n, the atom sum in factored form
        k = law.kind if (closed_form or law.kind != GEOMETRIC) else POLYNOMIAL
        kind[i] = k
        if k == ATOMS:
            for w, f in law.atoms():
                atom_w.append(w)
                for t, c in f.counts:
                    child_idx.append(slot(t))
                    child_cnt.append(c)
                child_ptr.append(len(child_idx))
        else:
            for t, p in law.diffusion:
                diff_idx.append(slot(t))
                diff_p.append(p)
            if k == GEOMETRIC:
                mean[i] = law.mean
            elif law.kind == GEOMETRIC:
                tl = law.total_law()
                coef.extend(tl.get(j, 0.0) for j in range(max(tl) + 1))
            else:
                coef.extend(law.rho)
        atom_ptr.append(len(atom_w))
        diff_ptr.append(len(diff_idx))
        coef_ptr.append(len(coef))
    # ghost slots are ordered by first reference; adjust them to absolute order
    ghost_sites = tuple(sorted(ghosts, key=lambda s: ghosts[s]))
    return LawTable(
        kind=kind,
        atom_ptr=np.array(atom_ptr, np.int64),
        atom_w=np.array(atom_w, float),
        child_ptr=np.array(child_ptr, np.int64),
        child_idx=np.array(child_idx, np.int64),
        child_cnt=np.array(child_cnt, np.int64),
        diff_ptr=np.array(diff_ptr, np.int64),
        diff_idx=np.array(diff_idx, np.int64),
        diff_p=np.array(diff_p, float),
        mean=mean,
        coef_ptr=np.array(coef_ptr, np.int64),
        coef=np.array(coef, float),
        ghost_sites=ghost_sites,
    )


# --------------------------------------------------------------------------
# First moments and class structure
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FirstMomentMatrix:
    """Expected offspring counts ``m_xy`` between window sites.

    ``escape[x]`` is the expected number of children sent out of the window,
    so ``matrix.sum(axis=1) + escape`` is the mean offspring per site.
    """

    sites: tuple
    matrix: sparse.csr_matrix
    escape: np.ndarray

    def entry(self, x, y) -> float:
        idx = {s: i for i, s in enumerate(self.sites)}
        return float(self.matrix[idx[x], idx[y]])

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel() + self.escape


def first_moment(model: BRWModel) -> FirstMomentMatrix:
    idx = model.index
    rows, cols, vals = [], [], []
    escape = np.zeros(model.n)
    for i, s in enumerate(model.sites):
        for t, m in model.laws[s].moments().items():
            if m == 0:
                continue
            j = idx.get(t)
            if j is None:
                escape[i] += m
            else:
                rows.append(i)
                cols.append(j)
                vals.append(m)
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(model.n, model.n))
    mat.sum_duplicates()
    return FirstMomentMatrix(model.sites, mat, escape)


@dataclass(frozen=True)
class ClassStructure:
    """Strongly connected components of the window's moment graph."""

    labels: np.ndarray
    classes: tuple

    @property
    def irreducible(self) -> bool:
        return len(self.classes) == 1

    def class_of(self, sites, x) -> tuple:
        i = list(sites).index(x)
        return self.classes[self.labels[i]]


def irreducible_classes(model: BRWModel) -> ClassStructure:
    mat = first_moment(model).matrix
    ncomp, raw = connected_components(mat, directed=True, connection="strong")
    # relabel by first appearance so labels follow window order
    order: dict = {}
    for lab in raw:
        if lab not in order:
            order[lab] = len(order)
    labels = np.array([order[lab] for lab in raw], dtype=np.int64)
    groups: list = [[] for _ in range(ncomp)]
    for s, lab in zip(model.sites, labels):
        groups[lab].append(s)
    return ClassStructure(labels, tuple(tuple(g) for g in groups))


def check_assumption1(model: BRWModel, classes: ClassStructure | None = None) -> list:
    """Per class: does some site have positive probability of a within-class
    child count different from 1?"""
    classes = classes or irreducible_classes(model)
    out = []
    for cls in classes.classes:
        members = set(cls)
        ok = False
        for s in cls:
            law = model.laws[s]
            if law.kind == ATOMS:
                for _, f in law.atoms():
                    if sum(c for t, c in f.counts if t in members) != 1:
                        ok = True
                        break
            else:
                inside = sum(p for t, p in law.diffusion if t in members)
                for n, r in law.total_law().items():
                    if r <= 0:
                        continue
                    if n == 0 or (n >= 2 and inside > 0) or inside < 1.0:
                        ok = True
                        break
            if ok:
                break
        out.append(ok)
    return out


# --------------------------------------------------------------------------
# Windows
# --------------------------------------------------------------------------

def truncate(model: BRWModel, window, policy: str | None = None) -> BRWModel:
    """Restrict (or re-extend) ``model`` to ``window``.

    ``window`` is a list of sites of the space, or an integer: ``N`` for
    ``[0, N]`` / ``[-N, N]`` windows and the radius for trees. Re-extension
    beyond the current window needs the model's ``rule``.
    """
    space = model.space
    if isinstance(window, (int, np.integer)) and not isinstance(window, bool):
        if space.kind == "nonneg-integers":
            new = SiteSpace.nonneg_integers(window)
        elif space.kind == "integers":
            new = SiteSpace.integers(window)
        elif space.kind == "tree-radial":
            new = SiteSpace.tree_radial(space.degree, window)
        elif space.kind == "tree":
            new = SiteSpace.tree_ball(space.degree, window)
        else:
            raise ModelError("integer windows need an integer-line or tree space")
    else:
        sites = tuple(window)
        if not sites:
            raise ModelError("window must be nonempty")
        for s in sites:
            if not space.contains(s):
                raise ModelError(f"window site {s!r} is not in the space")
        new = SiteSpace(space.kind, sites, space.degree, space.all_sites)
    laws = {}
    for s in new.window:
        if s in model.laws:
            laws[s] = model.laws[s]
        elif model.rule is not None:
            laws[s] = model.rule(s)
        else:
            raise ModelError(f"no law available for site {s!r}")
    return BRWModel(new, laws, model.tag, dict(model.params), model.rule,
                    policy or model.policy, model.counterpart)


def from_rule(space: SiteSpace, rule: Callable, **kw) -> BRWModel:
    return BRWModel(space, {s: rule(s) for s in space.window}, rule=rule, **kw)


def build_from_spec(spec) -> BRWModel:
    """Validated model from a structured description (dict, JSON text or tag).

    See :mod:`branchwalk.io` for the schema; registered tags are expanded by
    :mod:`branchwalk.registry`.
    """
    from branchwalk import io

    return io.model_from_spec(spec)
