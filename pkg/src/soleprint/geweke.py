"""Joint-distribution check of the sampler on a tiny model.

Marginal ("forward") draws of the parameters come straight from the prior.
Successive-conditional draws alternate one sampler sweep with a fresh draw
of the accidentals given the parameters and the current atom cells (a
kernel displacement of each atom). Both moves leave the joint of
(parameters, atoms, gamma auxiliaries, accidentals) invariant when the
sampler is correct, so both sets of parameter draws share the prior as
their distribution. The atoms and auxiliaries are only ever moved by the
sampler, which is what lets the check see the assignment update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .core import PriorConfig, Shoe
from .generative import expand_w, precision_cholesky, sample_prior
from .grid import Kernel, _unfold
from .likelihood import WIN, Problem
from .mcmc import Sampler, SliceConfig
from .toy import random_surface, tiny_coarse_map

STAT_NAMES = ("q", "w_E[1]", "phi_32", "kappa_h_1")


def _stats(theta) -> np.ndarray:
    return np.array([theta.q, theta.w_E[0], theta.phi[-1], theta.kernel.kappa_h[0]])


def _kernel_offsets(theta, n, rng) -> np.ndarray:
    k: Kernel = theta.kernel
    cdf_h = np.cumsum(_unfold(k.kappa_h))
    cdf_v = np.cumsum(_unfold(k.kappa_v))
    d = np.stack([np.searchsorted(cdf_h, rng.random(n) * cdf_h[-1], side="right"),
                  np.searchsorted(cdf_v, rng.random(n) * cdf_v[-1], side="right")], axis=1)
    return np.minimum(d, WIN - 1) - WIN // 2


def sample_latents(theta, masks, cm, n_acc, rng):
    """Draw atom cells (0-based, one row per accidental) and gamma auxiliaries
    of every shoe given theta, with the scores integrated out."""
    w = expand_w(theta.w_E, cm)
    act = np.flatnonzero(cm.active.ravel())
    cells, u = [], []
    for surf in masks:
        c = (w * theta.phi[surf.shape_codes - 1]).ravel()[act]
        # log Gamma(q, 1) draws; small q would underflow in the linear domain
        log_nu = np.log(rng.gamma(theta.q + 1.0, 1.0, len(act))) + np.log(rng.random(len(act))) / theta.q
        with np.errstate(divide="ignore"):
            log_mass = np.log(c) + log_nu
        m = log_mass.max()
        log_tot = m + math.log(np.exp(log_mass - m).sum())
        cdf = np.cumsum(np.exp(log_mass - log_tot))
        pick = np.minimum(np.searchsorted(cdf, rng.random(n_acc) * cdf[-1], side="right"), len(act) - 1)
        cells.append(np.stack(np.unravel_index(act[pick], cm.shape), axis=1))
        u.append(math.exp(math.log(rng.gamma(n_acc)) - log_tot))
    return cells, np.array(u)


def sample_points(theta, masks, cells, cm, rng):
    """Accidentals displaced from their atom cells by the kernel; returns the
    shoes and the window index of every atom."""
    shoes, Z = [], []
    for surf, z in zip(masks, cells):
        x = z + _kernel_offsets(theta, len(z), rng)
        if (x < 0).any() or (x >= np.array(cm.shape)).any():
            raise ValueError("tiny grid too small for the kernel reach")
        shoes.append(Shoe(surf, x + 1 - rng.random(x.shape), surf.shoe_id))
        off = z - x + WIN // 2
        Z.append(off[:, 0] * WIN + off[:, 1])
    return shoes, np.concatenate(Z)


def regenerate(theta, masks, cm, n_acc, rng):
    """Draw accidentals, window assignments and gamma auxiliaries given theta."""
    cells, u = sample_latents(theta, masks, cm, n_acc, rng)
    shoes, Z = sample_points(theta, masks, cells, cm, rng)
    return shoes, Z, u


@dataclass
class GewekeConfig:
    n_samples: int = 10000
    thin: int = 5
    burn: int = 200
    n_shoes: int = 2
    n_acc: int = 5
    n_active: int = 4
    size: int = 12
    spacing: int = 2
    prior: PriorConfig = field(default_factory=PriorConfig)
    sampler_prior: PriorConfig = None      # what the sampler assumes; None = prior
    sampler_cls: type = Sampler
    # wider phi steps than the fitting default: the tiny model's phi
    # posteriors are close to the flat prior
    slice: SliceConfig = field(default_factory=lambda: SliceConfig(phi=0.25))


@dataclass
class GewekeReport:
    names: tuple
    ks_stat: np.ndarray
    p_value: np.ndarray
    forward: np.ndarray
    chain: np.ndarray

    def passed(self, alpha=0.01) -> bool:
        return bool((self.p_value > alpha).all())

    def __str__(self):
        return "\n".join(f"{n:>10s}  KS={d:.4f}  p={p:.3g}"
                         for n, d, p in zip(self.names, self.ks_stat, self.p_value))


def joint_distribution_check(cfg: GewekeConfig = GewekeConfig(), rng=None) -> GewekeReport:
    rng = rng if rng is not None else np.random.default_rng()
    cm = tiny_coarse_map(cfg.n_active, cfg.size, cfg.spacing)
    masks = [random_surface(rng, cm.shape, shoe_id=f"g{s}") for s in range(cfg.n_shoes)]
    chol = precision_cholesky(cm, cfg.prior)

    forward = np.array([_stats(sample_prior(rng, cfg.prior, cm, chol)) for _ in range(cfg.n_samples)])

    theta = sample_prior(rng, cfg.prior, cm, chol)
    shoes, Z, u = regenerate(theta, masks, cm, cfg.n_acc, rng)
    smp = cfg.sampler_cls(Problem(shoes, cm), prior=cfg.sampler_prior or cfg.prior,
                          slice_cfg=cfg.slice, rng=rng, theta0=theta)
    smp.set_data(smp.pb, Z, u)
    chain = np.empty((cfg.n_samples, len(STAT_NAMES)))
    for k in range(cfg.burn + cfg.n_samples * cfg.thin):
        smp.sweep()
        theta = smp.theta
        pb = smp.pb
        flat = pb.win_cell[np.arange(pb.G), smp.Z]
        cells = np.split(np.stack(np.unravel_index(flat, cm.shape), axis=1), np.cumsum(pb.N)[:-1])
        shoes, Z = sample_points(theta, masks, cells, cm, rng)
        smp.set_data(Problem(shoes, cm), Z, smp.u)
        j = k - cfg.burn
        if j >= 0 and j % cfg.thin == 0:
            chain[j // cfg.thin] = _stats(theta)

    res = [stats.ks_2samp(forward[:, i], chain[:, i]) for i in range(len(STAT_NAMES))]
    return GewekeReport(STAT_NAMES, np.array([r.statistic for r in res]),
                        np.array([r.pvalue for r in res]), forward, chain)


class BrokenZSampler(Sampler):
    """Mutation: drops the ``q + C`` factor from the assignment update."""

    def _z_factor(self, C_minus, c, u, K):
        return c / (u * c + 1.0) * K


def broken_q_config(base: GewekeConfig = GewekeConfig(), rate=1.0) -> GewekeConfig:
    """Mutation: the sampler uses the wrong prior rate for ``q``."""
    return replace(base, sampler_prior=replace(base.prior, q_rate=rate))


def broken_z_config(base: GewekeConfig = GewekeConfig()) -> GewekeConfig:
    return replace(base, sampler_cls=BrokenZSampler)
