"""Named example models.

Each builder returns a validated :class:`~branchwalk.model.BRWModel` whose
``tag`` and ``params`` record how it was made. Tree examples are discrete
counterparts of continuous-time edge-breeding walks; by default they live on
the radial quotient (sites are distances from the root), which carries the
same extinction probabilities as the full ball.
"""
from __future__ import annotations

from branchwalk.model import (
    BRWModel,
    ModelError,
    OffspringDistribution,
    SiteSpace,
    from_rule,
)


def counterexample1() -> BRWModel:
    """Two sites, ``G(x, y) = (xy, (1 + x) / 2)``."""
    laws = {
        1: OffspringDistribution.from_pairs([(1.0, {1: 1, 2: 1})]),
        2: OffspringDistribution.from_pairs([(0.5, {}), (0.5, {1: 1})]),
    }
    return BRWModel(SiteSpace.explicit((1, 2)), laws, tag="counterexample1")


def counterexample2() -> BRWModel:
    """Two sites, no children w.p. 1/4, two children on the other site w.p. 3/4."""
    laws = {
        1: OffspringDistribution.from_pairs([(0.25, {}), (0.75, {2: 2})]),
        2: OffspringDistribution.from_pairs([(0.25, {}), (0.75, {1: 2})]),
    }
    return BRWModel(SiteSpace.explicit((1, 2)), laws, tag="counterexample2")


def counterexample3() -> BRWModel:
    """Three sites, each particle puts one child on each other site."""
    sites = (1, 2, 3)
    laws = {j: OffspringDistribution.from_pairs([(1.0, {k: 1 for k in sites if k != j})])
            for j in sites}
    return BRWModel(SiteSpace.explicit(sites), laws, tag="counterexample3")


def binary_bp(p: float = 0.7) -> BRWModel:
    """Single site branching process: two children w.p. ``p``, none otherwise."""
    _check_prob(p, "p")
    pairs = [(1.0 - p, {}), (p, {0: 2})]
    law = OffspringDistribution.from_pairs([t for t in pairs if t[0] > 0])
    return BRWModel(SiteSpace.explicit((0,)), {0: law}, tag="binary-bp", params={"p": p})


def reducible_n(p: float = 0.7, N: int = 100) -> BRWModel:
    """On the nonnegative integers: two children at ``n + 1`` w.p. ``p``."""
    _check_prob(p, "p")

    def rule(n):
        return OffspringDistribution.from_pairs([(1.0 - p, {}), (p, {n + 1: 2})])

    return from_rule(SiteSpace.nonneg_integers(N), rule, tag="reducible-N",
                     params={"p": p, "N": N})


def irreducible_n(p: float = 2 / 3, eps: float = 1 / 9, N: int = 200) -> BRWModel:
    """On the nonnegative integers: two children at ``n + 1`` w.p. ``p - eps``,
    one child at ``max(0, n - 1)`` w.p. ``eps``, none w.p. ``1 - p``."""
    _check_prob(p, "p")
    if not 0 <= eps <= p:
        raise ModelError("need 0 <= eps <= p")

    def rule(n):
        return OffspringDistribution.from_pairs(
            [(1.0 - p, {}), (p - eps, {n + 1: 2}), (eps, {max(0, n - 1): 1})])

    return from_rule(SiteSpace.nonneg_integers(N), rule, tag="irreducible-N",
                     params={"p": p, "eps": eps, "N": N})


def translate_z(p: float = 2 / 3, eps: float = 1 / 9, N: int = 100) -> BRWModel:
    """Same law as :func:`irreducible_n` on the whole integer line."""
    _check_prob(p, "p")

    def rule(n):
        return OffspringDistribution.from_pairs(
            [(1.0 - p, {}), (p - eps, {n + 1: 2}), (eps, {n - 1: 1})])

    return from_rule(SiteSpace.integers(N), rule, tag="translate-Z",
                     params={"p": p, "eps": eps, "N": N})


def tree_edge(d: int = 4, lam: float = 0.3, radius: int = 200, radial: bool = True) -> BRWModel:
    """Counterpart of edge breeding at rate ``lam`` on the ``d``-regular tree."""
    from branchwalk import ctbrw

    ct = ctbrw.tree_ct(d, radius, loop=0.0, radial=radial)
    model = ctbrw.discrete_counterpart(ct, lam)
    return _retag(model, "tree-edge", {"d": d, "lam": lam, "radius": radius, "radial": radial})


def tree_edge_loop(d: int = 4, loop: float = 5.0, lam: float = 0.27, radius: int = 200,
                   radial: bool = True) -> BRWModel:
    """:func:`tree_edge` with an extra loop of rate ``loop`` at the root."""
    from branchwalk import ctbrw

    ct = ctbrw.tree_ct(d, radius, loop=loop, radial=radial)
    model = ctbrw.discrete_counterpart(ct, lam)
    return _retag(model, "tree-edge-loop",
                  {"d": d, "loop": loop, "lam": lam, "radius": radius, "radial": radial})


def _retag(model: BRWModel, tag: str, params: dict) -> BRWModel:
    return BRWModel(model.space, model.laws, tag, params, model.rule, model.policy,
                    model.counterpart)


def _check_prob(p, name):
    if not 0 <= p <= 1:
        raise ModelError(f"{name} must lie in [0, 1]")


BUILDERS = {
    "counterexample1": counterexample1,
    "counterexample2": counterexample2,
    "counterexample3": counterexample3,
    "binary-bp": binary_bp,
    "reducible-N": reducible_n,
    "irreducible-N": irreducible_n,
    "translate-Z": translate_z,
    "tree-edge": tree_edge,
    "tree-edge-loop": tree_edge_loop,
}


def build(tag: str, **params) -> BRWModel:
    try:
        builder = BUILDERS[tag]
    except KeyError:
        raise ModelError(f"unknown model tag {tag!r}; known: {', '.join(BUILDERS)}") from None
    return builder(**params)
