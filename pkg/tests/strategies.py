"""Hypothesis strategies for small explicit models."""
from hypothesis import strategies as st

from branchwalk.model import BRWModel, OffspringDistribution, SiteSpace


@st.composite
def placements(draw, sites, max_children=3):
    counts = {}
    for s in sites:
        c = draw(st.integers(0, max_children))
        if c:
            counts[s] = c
    return counts


@st.composite
def distributions(draw, sites, max_atoms=3):
    k = draw(st.integers(1, max_atoms))
    places = []
    for _ in range(k):
        p = draw(placements(sites))
        if p not in places:
            places.append(p)
    w = [draw(st.floats(0.05, 1.0)) for _ in places]
    tot = sum(w)
    return OffspringDistribution.from_pairs([(x / tot, p) for x, p in zip(w, places)],
                                            normalize=True)


@st.composite
def explicit_models(draw, min_sites=1, max_sites=4):
    n = draw(st.integers(min_sites, max_sites))
    sites = tuple(range(n))
    laws = {s: draw(distributions(sites)) for s in sites}
    return BRWModel(SiteSpace.explicit(sites), laws)


def prob_vectors(n):
    return st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n)
