"""Prior, forward simulation of accidentals, and synthetic datasets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.signal import convolve2d

from .core import (FULL, DegenerateModelError, EffectiveParams, GlobalParams,
                   ModelVariant, PriorConfig, Shoe, apply_variant)
from .grid import (N_SHAPES, N_TIERS, REACH, CoarseMap, ContactSurface, Kernel,
                   KernelParams, default_coarse_map)


def precision_cholesky(cm: CoarseMap, cfg: PriorConfig = PriorConfig()) -> np.ndarray:
    """Upper Cholesky factor ``U`` of the log-weight precision (``P = U.T @ U``)."""
    P = cm.precision(cfg.w_precision_diag, cfg.w_precision_adj)
    try:
        return cholesky(P, lower=False)
    except np.linalg.LinAlgError as exc:
        raise ValueError("coarse-weight precision is not positive definite") from exc


def sample_log_w(rng, chol_upper) -> np.ndarray:
    """Draw from N(0, P^-1) given the upper Cholesky factor of P."""
    z = rng.standard_normal(chol_upper.shape[0])
    return solve_triangular(chol_upper, z, lower=False)


def sample_prior(rng, cfg: PriorConfig = PriorConfig(), cm: CoarseMap = None,
                 chol_upper=None) -> GlobalParams:
    if chol_upper is None:
        chol_upper = precision_cholesky(cm, cfg)
    q = rng.gamma(cfg.q_shape, 1.0 / cfg.q_rate)
    log_w = sample_log_w(rng, chol_upper)
    phi = rng.uniform(0.0, cfg.phi_upper, N_SHAPES)
    sd = np.sqrt(cfg.p_variance)
    kp = KernelParams(rng.normal(0, sd, N_TIERS), rng.normal(0, sd, N_TIERS))
    return GlobalParams(q=q, w_E=np.exp(log_w), phi=phi, kparams=kp)


def expand_w(w_E, cm: CoarseMap) -> np.ndarray:
    """Per-cell spatial weight; zero off the active set."""
    w_ext = np.concatenate([[0.0], np.asarray(w_E, dtype=float)])
    return w_ext[cm.region_of]


def cell_weights(theta, surface: ContactSurface, cm: CoarseMap) -> np.ndarray:
    """``w_a * phi_{r(a)}`` on the grid."""
    eff = apply_variant(theta)
    return expand_w(eff.w_E, cm) * eff.phi[surface.shape_codes - 1]


def sample_scores(rng, q, cm: CoarseMap) -> np.ndarray:
    nu = np.zeros(cm.shape)
    nu[cm.active] = rng.gamma(q, 1.0, cm.n_active)
    return nu


def mu_weights(theta, nu, surface: ContactSurface, cm: CoarseMap) -> np.ndarray:
    """Normalized atom weights of one shoe (zero off the active set)."""
    m = cell_weights(theta, surface, cm) * np.asarray(nu)
    total = m.sum()
    if not total > 0:
        raise DegenerateModelError("every atom weight is zero")
    return m / total


@dataclass(frozen=True, eq=False)
class IntensityField:
    """Cell probabilities on the grid padded by the kernel reach on every side."""

    lam: np.ndarray
    pad: int = REACH

    @property
    def grid(self) -> np.ndarray:
        p = self.pad
        return self.lam[p:-p, p:-p] if p else self.lam

    @property
    def mass_off_grid(self) -> float:
        return float(self.lam.sum() - self.grid.sum())


def lambda_field(mu, k: Kernel) -> IntensityField:
    return IntensityField(convolve2d(mu, k.weights(), mode="full"))


def sample_accidentals(L: IntensityField, n: int, rng) -> np.ndarray:
    """``n`` cell draws from ``L``, each placed uniformly inside its cell."""
    if n == 0:
        return np.zeros((0, 2))
    p = L.lam.ravel()
    cdf = np.cumsum(p)
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    idx = np.minimum(idx, p.size - 1)
    i1, i2 = np.unravel_index(idx, L.lam.shape)
    cells = np.stack([i1, i2], axis=1) - L.pad + 1
    return cells - rng.random((n, 2))


def shoe_intensity(theta, surface, cm, rng, variant: ModelVariant = FULL,
                   confine_to_active=False) -> IntensityField:
    eff = apply_variant(theta, variant)
    nu = sample_scores(rng, eff.q, cm) if eff.scores else cm.active.astype(float)
    L = lambda_field(mu_weights(eff, nu, surface, cm), eff.kernel)
    if confine_to_active:
        lam = np.zeros_like(L.lam)
        p = L.pad
        lam[p:-p, p:-p] = np.where(cm.active, L.grid, 0.0)
        L = IntensityField(lam / lam.sum(), p)
    return L


# --- synthetic masks and datasets -----------------------------------------

def synthetic_mask(rng, cm: CoarseMap, coverage=0.6, shoe_id="") -> ContactSurface:
    """Random tread: horizontal bars and discs, clipped to the active set,
    grown until ``coverage`` of the active cells are in contact."""
    active = cm.active
    n1, n2 = active.shape
    i1, i2 = np.nonzero(active)
    lo1, hi1, lo2, hi2 = i1.min(), i1.max(), i2.min(), i2.max()
    bits = np.zeros_like(active)
    g1, g2 = np.mgrid[0:n1, 0:n2]
    target = coverage * active.sum()
    while (bits & active).sum() < target:
        if rng.random() < 0.6:
            c2 = rng.integers(lo2, hi2 + 1)
            h = rng.integers(2, 7)
            a, b = sorted(rng.integers(lo1, hi1 + 1, 2))
            bits[a:b + 1, c2:c2 + h] = True
        else:
            c1, c2 = rng.integers(lo1, hi1 + 1), rng.integers(lo2, hi2 + 1)
            r = rng.uniform(2, 8)
            bits |= (g1 - c1) ** 2 + (g2 - c2) ** 2 <= r * r
    return ContactSurface((bits & active).astype(np.uint8), shoe_id)


def skewed_counts(rng, n, median=20, sigma=1.0, max_count=268) -> np.ndarray:
    """Right-skewed accidental counts: log-normal with the given median."""
    return np.clip(np.round(median * np.exp(sigma * rng.standard_normal(n))), 1, max_count).astype(int)


@dataclass
class SimConfig:
    n_shoes: int = 386
    counts: object = None          # None (log-normal), an int, or a per-shoe list
    median_count: int = 20
    masks: list = None             # explicit ContactSurface list; None = synthetic
    shared_mask: bool = False
    mask_coverage: float = 0.6
    coarse: CoarseMap = None
    truth: GlobalParams = None
    prior: PriorConfig = field(default_factory=PriorConfig)
    variant: ModelVariant = FULL
    confine_to_active: bool = False


@dataclass
class SyntheticDataset:
    shoes: list
    truth: GlobalParams
    coarse: CoarseMap
    seed: int = None


def simulate_dataset(cfg: SimConfig, rng=None, seed=None) -> SyntheticDataset:
    if rng is None:
        rng = np.random.default_rng(seed)
    cm = cfg.coarse if cfg.coarse is not None else default_coarse_map()
    if cfg.masks is not None and len(cfg.masks) == 0:
        raise ValueError("mask source is empty")
    theta = cfg.truth if cfg.truth is not None else sample_prior(rng, cfg.prior, cm)

    n = cfg.n_shoes
    if cfg.counts is None:
        counts = skewed_counts(rng, n, cfg.median_count)
    elif np.isscalar(cfg.counts):
        counts = np.full(n, int(cfg.counts))
    else:
        counts = np.asarray(cfg.counts, dtype=int)
        if len(counts) != n:
            raise ValueError("need one accidental count per shoe")

    shoes = []
    shared = None
    for s in range(n):
        sid = f"shoe{s:04d}"
        if cfg.masks is not None:
            surf = cfg.masks[0 if cfg.shared_mask else s % len(cfg.masks)]
        elif cfg.shared_mask:
            if shared is None:
                shared = synthetic_mask(rng, cm, cfg.mask_coverage)
            surf = shared
        else:
            surf = synthetic_mask(rng, cm, cfg.mask_coverage)
        surf = ContactSurface(surf.bits, sid)
        L = shoe_intensity(theta, surf, cm, rng, cfg.variant, cfg.confine_to_active)
        shoes.append(Shoe(surf, sample_accidentals(L, int(counts[s]), rng), sid))
    return SyntheticDataset(shoes, theta, cm, seed)


def sample_shoe_points(theta, surface, cm, n, rng, variant: ModelVariant = FULL,
                       confine_to_active=False) -> np.ndarray:
    """Posterior-predictive style draw of ``n`` accidentals for one surface."""
    return sample_accidentals(shoe_intensity(theta, surface, cm, rng, variant, confine_to_active), n, rng)


__all__ = [
    "EffectiveParams", "IntensityField", "SimConfig", "SyntheticDataset",
    "cell_weights", "expand_w", "lambda_field", "mu_weights", "precision_cholesky",
    "sample_accidentals", "sample_log_w", "sample_prior", "sample_scores",
    "sample_shoe_points", "shoe_intensity", "simulate_dataset", "synthetic_mask",
]
