"""Random match probability of a query print by Monte Carlo over the
posterior predictive, with an exact binomial interval."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial import cKDTree
from scipy.stats import binomtest

from .core import FULL, ModelVariant, apply_variant
from .generative import expand_w
from .grid import REACH, _unfold

MODES = ("cover", "bipartite")
MIN_REPLICATES = 100


@dataclass(frozen=True)
class MatchPredicateConfig:
    """When two accidental sets count as matching.

    ``cover``: every query accidental lies within ``radius`` of some sampled
    accidental, allowing ``count_tolerance`` uncovered query accidentals.
    ``bipartite``: a one-to-one matching within ``radius`` leaves at most
    ``count_tolerance`` accidentals unmatched on either side.
    """

    radius: float = 3.0
    count_tolerance: int = 0
    mode: str = "cover"

    def __post_init__(self):
        if self.radius < 0 or self.count_tolerance < 0:
            raise ValueError("radius and count_tolerance must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


def matches(query, sample, cfg: MatchPredicateConfig = MatchPredicateConfig()) -> bool:
    query = np.asarray(query, dtype=float).reshape(-1, 2)
    sample = np.asarray(sample, dtype=float).reshape(-1, 2)
    tol = cfg.count_tolerance
    if len(query) == 0:
        return cfg.mode == "cover" or len(sample) <= tol
    if len(sample) == 0:
        return len(query) <= tol
    tree = cKDTree(sample)
    if cfg.mode == "cover":
        d, _ = tree.query(query, k=1)
        return int((d > cfg.radius).sum()) <= tol
    pairs = tree.query_ball_point(query, r=cfg.radius)
    rows = np.repeat(np.arange(len(query)), [len(p) for p in pairs])
    cols = np.concatenate([np.asarray(p, dtype=int) for p in pairs]) if len(rows) else np.zeros(0, int)
    graph = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(query), len(sample)))
    m = int((maximum_bipartite_matching(graph, perm_type="column") >= 0).sum())
    return len(query) - m <= tol and len(sample) - m <= tol


def binomial_ci(k: int, n: int, level=0.95):
    """Exact (Clopper-Pearson) interval for a binomial proportion."""
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


@dataclass
class RMPResult:
    matches: int
    replicates: int
    ci_low: float
    ci_high: float
    level: float = 0.95

    @property
    def estimate(self) -> float:
        return self.matches / self.replicates


def rmp_from_counts(k: int, n: int, level=0.95) -> RMPResult:
    if n < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} replicates")
    if not 0 <= k <= n:
        raise ValueError("match count out of range")
    return RMPResult(int(k), int(n), *binomial_ci(k, n, level), level)


def sample_predictive_points(theta, surface, cm, n, rng, variant: ModelVariant = FULL) -> np.ndarray:
    """``n`` accidentals for ``surface`` from fresh scores: atoms drawn from
    the normalized weights, then displaced by the kernel."""
    if n == 0:
        return np.zeros((0, 2))
    eff = apply_variant(theta, variant)
    act = np.flatnonzero(cm.active.ravel())
    c = (expand_w(eff.w_E, cm) * eff.phi[surface.shape_codes - 1]).ravel()[act]
    mass = c * rng.gamma(eff.q, 1.0, len(act)) if eff.scores else c
    cdf = np.cumsum(mass)
    atom = act[np.minimum(np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right"), len(act) - 1)]
    i1, i2 = np.unravel_index(atom, cm.shape)
    off = []
    for kappa in (eff.kernel.kappa_h, eff.kernel.kappa_v):
        k1 = np.cumsum(_unfold(kappa))
        off.append(np.minimum(np.searchsorted(k1, rng.random(n) * k1[-1], side="right"), 2 * REACH) - REACH)
    cells = np.stack([i1 + off[0], i2 + off[1]], axis=1)
    return cells + 1 - rng.random((n, 2))


def random_match_probability(draws, surface, query_points, cm, count_sampler, rng,
                             replicates=10000, predicate=None,
                             match_cfg: MatchPredicateConfig = MatchPredicateConfig(),
                             variant: ModelVariant = FULL, level=0.95) -> RMPResult:
    """Fraction of simulated prints on ``surface`` that match the query.

    Each replicate picks a posterior draw uniformly and a count from
    ``count_sampler(rng)``, then simulates fresh accidentals. A custom
    ``predicate(query, sample)`` replaces the configured matcher.
    """
    if replicates < MIN_REPLICATES:
        raise ValueError(f"need at least {MIN_REPLICATES} replicates")
    thetas = list(draws)
    if not thetas:
        raise ValueError("no posterior draws")
    pred = predicate or (lambda q, s: matches(q, s, match_cfg))
    k = 0
    for _ in range(replicates):
        theta = thetas[int(rng.integers(len(thetas)))]
        pts = sample_predictive_points(theta, surface, cm, int(count_sampler(rng)), rng, variant)
        k += bool(pred(query_points, pts))
    return rmp_from_counts(k, replicates, level)


def empirical_count_sampler(counts):
    """Sample accidental counts from an observed list (with replacement)."""
    counts = np.asarray(counts, dtype=int)
    if len(counts) == 0:
        raise ValueError("empty count list")
    return lambda rng: int(counts[rng.integers(len(counts))])


__all__ = [
    "MatchPredicateConfig", "RMPResult", "binomial_ci", "empirical_count_sampler", "matches",
    "random_match_probability", "rmp_from_counts", "sample_predictive_points",
]
