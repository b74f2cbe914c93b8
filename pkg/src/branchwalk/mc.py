"""Seeded Monte Carlo simulation of discrete-time BRWs.

Each replicate draws from its own counter-based stream
``Philox(key = index << 64 | seed)``, so outcomes depend only on
``(seed, replicate index)`` and not on thread count or scheduling.
Continuous-time models are simulated through their discrete counterparts.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from branchwalk import genfun, kernels
from branchwalk.model import BRWModel, ModelError

DEFAULT_CAP = 10**7
SE_FACTOR = 3.0
NEAR_CRITICAL_WARNING = (
    "near-critical parameters: finite horizons bias extinction estimates upward")

__all__ = ["SimConfig", "SimOutcome", "Estimate", "simulate", "estimate_regime",
           "RegimeEstimate", "replicate_stream"]


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings. ``policy`` None uses the model's boundary policy;
    ``threads`` None uses all cores (results do not depend on it)."""

    seed: int = 0
    replicates: int = 10_000
    horizon: int = 200
    cap: int = DEFAULT_CAP
    policy: str | None = None
    A: object = None
    track_visits: bool = True
    threads: int | None = None
    numba: bool | None = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ModelError("replicates must be >= 1")
        if self.horizon < 0:
            raise ModelError("horizon must be >= 0")
        if self.cap < 1:
            raise ModelError("population cap must be positive")
        if not 0 <= self.seed < 2**64:
            raise ModelError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float
    n: int

    @staticmethod
    def of(hits: np.ndarray) -> "Estimate":
        n = int(hits.size)
        p = float(hits.mean())
        return Estimate(p, math.sqrt(p * (1.0 - p) / n), n)

    def interval(self, k: float = SE_FACTOR) -> tuple:
        return (self.value - k * self.se, self.value + k * self.se)


@dataclass(frozen=True, eq=False)
class SimOutcome:
    """Per-replicate arrays and aggregate extinction estimates.

    ``q_bar``: not alive at the horizon. ``q_local``: no particle in ``A``
    at or after generation ``horizon // 2`` (or after the last simulated
    generation for capped runs). ``q0``: ``A`` never visited.
    """

    config: SimConfig
    start: object
    alive: np.ndarray
    visited: np.ndarray
    last_visit: np.ndarray
    local: np.ndarray
    censored: np.ndarray
    escaped: np.ndarray
    generations: np.ndarray
    q_bar: Estimate
    q_local: Estimate | None
    q0: Estimate | None
    warnings: tuple = ()

    @property
    def n_censored(self) -> int:
        return int(self.censored.sum())

    @property
    def n_escaped(self) -> int:
        return int(self.escaped.sum())

    def summary(self) -> dict:
        out = {
            "start": repr(self.start),
            "seed": self.config.seed,
            "replicates": self.config.replicates,
            "horizon": self.config.horizon,
            "cap": self.config.cap,
            "q_bar": self.q_bar.value,
            "q_bar_se": self.q_bar.se,
            "censored": self.n_censored,
            "escaped": self.n_escaped,
            "warnings": list(self.warnings),
        }
        if self.q_local is not None:
            out.update(q_local=self.q_local.value, q_local_se=self.q_local.se,
                       q0=self.q0.value, q0_se=self.q0.se)
        return out


def replicate_stream(seed: int, index: int) -> np.random.Generator:
    """Generator for replicate ``index``: Philox keyed by ``(index, seed)``."""
    return np.random.Generator(np.random.Philox(key=(int(index) << 64) | int(seed)))


def _chunks(n, parts):
    step = -(-n // parts)
    return [(i, min(n, i + step)) for i in range(0, n, step)]


def simulate(model: BRWModel, start, config: SimConfig = SimConfig()) -> SimOutcome:
    """Run ``config.replicates`` independent copies started from one particle
    at ``start``.

    Under ghost-survive a replicate with a child leaving the window counts as
    surviving (globally and locally); under ghost-die such children are
    discarded. Replicates whose cumulative population exceeds the cap stop
    early, count as surviving and are flagged as censored.
    """
    if start not in model.index:
        raise ModelError(f"start site {start!r} is not in the window")
    policy = config.policy or model.policy
    table = model.table()
    in_a = np.zeros(model.n, dtype=np.bool_)
    if config.A is not None:
        in_a = genfun.site_mask(model, config.A)
    s = model.index[start]
    half = config.horizon // 2
    survive = policy == "ghost-survive"
    n = config.replicates
    res = np.zeros((n, 7), dtype=np.int64)

    def work(lo, hi):
        for i in range(lo, hi):
            res[i] = kernels.replicate(replicate_stream(config.seed, i), table, s,
                                       config.horizon, config.cap, in_a, half, survive,
                                       numba=config.numba)

    threads = config.threads or os.cpu_count() or 1
    threads = max(1, min(threads, n))
    if threads == 1:
        work(0, n)
    else:
        with ThreadPoolExecutor(threads) as ex:
            for f in [ex.submit(work, lo, hi) for lo, hi in _chunks(n, 4 * threads)]:
                f.result()

    alive, visited, last_visit, local, censored, escaped, gens = (res[:, k] for k in range(7))
    q_bar = Estimate.of(alive == 0)
    q_local = q0 = None
    if config.A is not None and config.track_visits:
        q_local = Estimate.of(local == 0)
        q0 = Estimate.of(visited == 0)
    warnings = []
    if int(censored.sum()):
        warnings.append(f"{int(censored.sum())} replicates hit the population cap "
                        "and were counted as surviving")
    return SimOutcome(config, start, alive.astype(bool), visited.astype(bool), last_visit,
                      local.astype(bool), censored.astype(bool), escaped.astype(bool), gens,
                      q_bar, q_local, q0, tuple(warnings))


# --------------------------------------------------------------------------
# Empirical regime
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RegimeEstimate:
    """Empirical regime with ``SE_FACTOR``-sigma intervals and the comparison
    against an analytic label. ``gap`` estimates ``q_local - q_bar``."""

    regime: str
    inconclusive: bool
    q_bar: Estimate
    q_local: Estimate
    q0: Estimate
    gap: Estimate
    analytic: genfun.SurvivalClassification | None
    agrees: bool | None
    inside: dict = field(default_factory=dict)
    warnings: tuple = ()
    outcome: SimOutcome | None = None


def _empirical_label(out: SimOutcome, k: float):
    """Label from ``k``-sigma intervals; returns (label, inconclusive, gap).

    Both extinction estimates come from the same replicates and
    ``q_local - q_bar`` is the fraction alive at the horizon but without a
    late visit to ``A``, so the strong/non-strong decision tests that paired
    fraction against 0 (standard error floored at ``1 / n``).
    """
    qb, ql = out.q_bar, out.q_local
    n = qb.n
    gap = Estimate.of(out.alive & ~out.local)
    floor = 1.0 / n
    if qb.value >= 1.0 - k * max(qb.se, floor):
        return "global-extinction", qb.value < 1.0, gap
    if ql.value >= 1.0 - k * max(ql.se, floor):
        return "pure-global", ql.value < 1.0, gap
    if gap.value > k * max(gap.se, floor):
        return "non-strong-local", False, gap
    return "strong-local", False, gap


def estimate_regime(model: BRWModel, x, A, config: SimConfig = SimConfig(), *,
                    analytic: genfun.SurvivalClassification | None = None,
                    near_critical: bool = False, tol: float = 1e-10) -> RegimeEstimate:
    """Empirical survival regime at ``(x, A)`` compared with ``analytic``
    (computed with :func:`genfun.classify` if not given).

    ``inside`` records whether each analytic probability lies inside the
    ``SE_FACTOR``-sigma interval of its estimate; the local estimate is a
    finite-horizon proxy biased toward extinction.
    """
    cfg = SimConfig(config.seed, config.replicates, config.horizon, config.cap,
                    config.policy, A, True, config.threads, config.numba)
    out = simulate(model, x, cfg)
    label, inconclusive, gap = _empirical_label(out, SE_FACTOR)
    if analytic is None:
        analytic = genfun.classify(model, x, A, tol)
    inside = {}
    for key, est, val in (("q_bar", out.q_bar, analytic.q_bar),
                          ("q_local", out.q_local, analytic.q_local)):
        lo, hi = est.interval()
        inside[key] = bool(lo <= val <= hi)
    agrees = None if inconclusive else label == analytic.regime
    warnings = list(out.warnings)
    if near_critical:
        warnings.append(NEAR_CRITICAL_WARNING)
    if inconclusive:
        warnings.append("interval overlaps the extinction boundary: label inconclusive")
    return RegimeEstimate(label, inconclusive, out.q_bar, out.q_local, out.q0, gap, analytic,
                          agrees, inside, tuple(warnings), out)
