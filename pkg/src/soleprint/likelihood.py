"""Augmented likelihood, brute-force marginal-likelihood oracles and the
lookup tables shared by the sampler and the held-out evaluator.

Per shoe, the sums over all active cells that appear in the augmented
likelihood depend on a cell only through its coarse region ``e`` and shape
code ``r``. ``Problem`` therefore stores, for every shoe, how many active
cells fall in each ``(e, r)`` pair ("the table") and handles the occupied
cells (those with a nonzero auxiliary count) separately.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp

from .core import (FULL, EffectiveParams, ImpossibleAssignmentError, ModelVariant,
                   Shoe, apply_variant)
from .grid import N_SHAPES, REACH, CoarseMap

WIN = 2 * REACH + 1
DI = np.repeat(np.arange(-REACH, REACH + 1), WIN)
DJ = np.tile(np.arange(-REACH, REACH + 1), WIN)
CENTER = WIN * WIN // 2
TIER_H = np.abs(DI)
TIER_V = np.abs(DJ)


class Problem:
    """Lookup tables for a list of shoes on one coarse map.

    Shoes without accidentals carry no information about the parameters and
    are dropped (their ids are kept in ``dropped``).
    """

    def __init__(self, shoes, cm: CoarseMap, kernel_on=True):
        self.cm = cm
        self.n1, self.n2 = cm.shape
        self.ncell = self.n1 * self.n2
        self.R = cm.n_regions
        self.region_flat = cm.region_of.ravel().astype(np.int64)
        self.active_idx = np.flatnonzero(self.region_flat)
        self.n_active = len(self.active_idx)

        kept = [s for s in shoes if s.n > 0]
        self.dropped = [s.shoe_id for s in shoes if s.n == 0]
        self.shoes = kept
        self.shoe_ids = [s.shoe_id for s in kept]
        self.S = S = len(kept)
        self.N = np.array([s.n for s in kept], dtype=np.int64)
        for s in kept:
            if s.surface.shape != cm.shape:
                raise ValueError(f"shoe {s.shoe_id!r}: mask shape {s.surface.shape} != {cm.shape}")
        self.codes = (np.stack([s.surface.shape_codes.ravel() for s in kept]).astype(np.int64)
                      if S else np.zeros((0, self.ncell), dtype=np.int64))

        # cell table: number of active cells per (shoe, region, code)
        e_act = self.region_flat[self.active_idx] - 1
        nkey = self.R * N_SHAPES
        if S:
            key = (np.arange(S)[:, None] * nkey + e_act[None, :] * N_SHAPES
                   + self.codes[:, self.active_idx] - 1)
            tab = np.bincount(key.ravel(), minlength=S * nkey)
            nz = np.flatnonzero(tab)
        else:
            tab = nz = np.zeros(0, dtype=np.int64)
        self.tab_s = nz // nkey
        self.tab_e = (nz % nkey) // N_SHAPES
        self.tab_r = nz % N_SHAPES
        self.tab_n = tab[nz].astype(float)
        self.tab_ptr = np.searchsorted(self.tab_s, np.arange(S + 1))
        self.tab_by_code = [np.flatnonzero(self.tab_r == i) for i in range(N_SHAPES)]

        # accidentals and their 7x7 windows
        cells = (np.concatenate([s.cells for s in kept]) if S
                 else np.zeros((0, 2), dtype=np.int64))
        self.G = G = len(cells)
        self.acc_shoe = np.repeat(np.arange(S), self.N)
        self.acc_pos = (np.concatenate([np.arange(n) for n in self.N]) if S
                        else np.zeros(0, dtype=np.int64))
        i1, i2 = cells[:, 0], cells[:, 1]
        self.acc_cell = i1 * self.n2 + i2
        z1 = i1[:, None] + DI[None, :]
        z2 = i2[:, None] + DJ[None, :]
        inb = (z1 >= 0) & (z1 < self.n1) & (z2 >= 0) & (z2 < self.n2)
        self.win_cell = np.where(inb, z1 * self.n2 + z2, 0)
        reg = np.where(inb, self.region_flat[self.win_cell], 0)
        self.win_ok = reg > 0
        self.win_e = np.where(self.win_ok, reg - 1, self.R)
        self.win_r = np.where(self.win_ok, self.codes[self.acc_shoe[:, None], self.win_cell] - 1, 0)

        reachable = self.win_ok.any(axis=1) if kernel_on else self.win_ok[:, CENTER]
        if G and not reachable.all():
            g = int(np.flatnonzero(~reachable)[0])
            sid = self.shoe_ids[self.acc_shoe[g]]
            raise ImpossibleAssignmentError(
                f"shoe {sid!r}, accidental {int(self.acc_pos[g])}: no active cell within "
                f"{'kernel reach' if kernel_on else 'its own cell'}; data and active set disagree",
                shoe=sid, accidental=int(self.acc_pos[g]))

        self.batches = [np.flatnonzero(self.acc_pos == n) for n in range(int(self.N.max()) if S else 0)]

    def initial_z(self, kernel_weights=None) -> np.ndarray:
        """Each accidental's own cell when active, else the reachable cell
        with the largest kernel weight."""
        K = np.ones(WIN * WIN) if kernel_weights is None else kernel_weights.ravel()
        score = np.where(self.win_ok, K[None, :] * (1.0 + 1e-9 * (np.arange(WIN * WIN) == CENTER)), -1.0)
        return np.argmax(score, axis=1)

    def occupancy(self, Z):
        """Occupied cells of ``Z``: shoe, flat cell, count, region and code."""
        cell = self.win_cell[np.arange(self.G), Z]
        key = self.acc_shoe * self.ncell + cell
        uk, cnt = np.unique(key, return_counts=True)
        s = uk // self.ncell
        c = uk % self.ncell
        return s, c, cnt.astype(float), self.region_flat[c] - 1, self.codes[s, c] - 1

    def counts(self, Z) -> np.ndarray:
        """Dense per-shoe count array ``(S, ncell)``."""
        C = np.zeros((self.S, self.ncell), dtype=np.int32)
        cell = self.win_cell[np.arange(self.G), Z]
        np.add.at(C, (self.acc_shoe, cell), 1)
        return C

    def total_weight(self, eff: EffectiveParams) -> np.ndarray:
        """Per shoe, the sum of ``w_a phi_a`` over the active set."""
        c = eff.w_E[self.tab_e] * eff.phi[self.tab_r]
        return np.bincount(self.tab_s, weights=self.tab_n * c, minlength=self.S)


@dataclass
class AuxiliaryState:
    """Auxiliary kernel assignments (window index 0..48 per accidental) and
    per-shoe gamma variables."""

    Z: np.ndarray
    u: np.ndarray

    def cells(self, pb: Problem):
        """1-based grid index of every assignment."""
        flat = pb.win_cell[np.arange(pb.G), self.Z]
        return np.stack([flat // pb.n2 + 1, flat % pb.n2 + 1], axis=1)

    def offsets(self):
        return np.stack([DI[self.Z], DJ[self.Z]], axis=1)


def log_kernel_flat(kernel) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(kernel.weights().ravel())


def augmented_loglik(theta, aux: AuxiliaryState, pb: Problem, variant: ModelVariant = FULL) -> float:
    """Log of the augmented likelihood of all shoes in ``pb``."""
    eff = apply_variant(theta, variant)
    u = np.asarray(aux.u, dtype=float)
    if pb.S == 0:
        return 0.0
    if (u <= 0).any():
        return -math.inf
    q = eff.q
    ll = float(np.sum((pb.N - 1) * np.log(u) - gammaln(pb.N)))
    lk = log_kernel_flat(eff.kernel)[aux.Z]
    ll += float(lk.sum())
    s, _, C, e, r = pb.occupancy(aux.Z)
    if (e < 0).any():
        return -math.inf
    c_occ = eff.w_E[e] * eff.phi[r]
    c_tab = eff.w_E[pb.tab_e] * eff.phi[pb.tab_r]
    with np.errstate(divide="ignore"):
        log_c = np.log(c_occ)
    if not np.isfinite(log_c).all() or not np.isfinite(ll):
        return -math.inf
    ll += float(np.dot(C, log_c))
    if eff.scores:
        ll += float(np.sum(gammaln(q + C) - gammaln(q)))
        ll -= float(np.dot(C, np.log1p(u[s] * c_occ)))
        ll -= q * float(np.dot(pb.tab_n, np.log1p(u[pb.tab_s] * c_tab)))
    else:
        ll -= float(np.dot(pb.tab_n, u[pb.tab_s] * c_tab))
    return ll


# --- brute-force oracles ----------------------------------------------------

def _single_shoe_arrays(theta, shoe: Shoe, cm: CoarseMap, variant):
    eff = apply_variant(theta, variant)
    pb = Problem([shoe], cm, kernel_on=variant.kernel)
    w_ext = np.append(eff.w_E, 0.0)
    c_grid = np.zeros(pb.ncell)
    c_grid[pb.active_idx] = (eff.w_E[pb.region_flat[pb.active_idx] - 1]
                             * eff.phi[pb.codes[0, pb.active_idx] - 1])
    K = eff.kernel.weights().ravel()
    c_win = w_ext[pb.win_e] * eff.phi[pb.win_r]
    return eff, pb, c_grid, K, c_win


def marginal_bruteforce_Z(theta, shoe: Shoe, cm: CoarseMap, variant: ModelVariant = FULL,
                          max_configs=200_000, rtol=1e-12, return_log=False):
    """Marginal likelihood of one shoe by exhaustive enumeration of the
    kernel assignments and 1-d quadrature over the gamma auxiliary.

    The quadrature runs on ``t = log u`` over a bracket grown until the
    integrand falls below ``1e-14`` of its peak.
    """
    if shoe.n == 0:
        return 0.0 if return_log else 1.0
    eff, pb, c_grid, K, c_win = _single_shoe_arrays(theta, shoe, cm, variant)
    N = pb.G
    choices = []
    for g in range(N):
        ok = np.flatnonzero((K > 0) & (c_win[g] > 0))
        choices.append(ok)
    n_cfg = math.prod(len(c) for c in choices)
    if n_cfg > max_configs:
        raise ValueError(f"instance too large for exhaustive enumeration ({n_cfg} configurations)")
    if n_cfg == 0:
        return -math.inf if return_log else 0.0

    cfgs = np.array(list(itertools.product(*choices)))           # (n_cfg, N)
    cells = pb.win_cell[np.arange(N)[None, :], cfgs]               # (n_cfg, N)
    used, inv = np.unique(cells, return_inverse=True)
    inv = inv.reshape(cells.shape)
    Cm = np.zeros((n_cfg, len(used)))
    for g in range(N):
        np.add.at(Cm, (np.arange(n_cfg), inv[:, g]), 1.0)
    c_used = c_grid[used]
    q = eff.q
    base = np.log(K[cfgs]).sum(axis=1) + Cm @ np.log(c_used)
    if eff.scores:
        base += (gammaln(q + Cm) - gammaln(q)).sum(axis=1)
    c_act = c_grid[pb.active_idx]
    c_act = c_act[c_act > 0]
    lgN = gammaln(N)

    def log_integrand(t):
        u = math.exp(t)
        if eff.scores:
            common = N * t - lgN - q * np.log1p(u * c_act).sum()
            cfg_term = base - Cm @ np.log1p(u * c_used)
        else:
            common = N * t - lgN - u * c_act.sum()
            cfg_term = base
        return common + logsumexp(cfg_term)

    grid = np.arange(-60.0, 60.0, 0.25)
    vals = np.array([log_integrand(t) for t in grid])
    t_star = grid[np.argmax(vals)]
    peak = vals.max()
    cut = peak + math.log(1e-14)
    a = t_star
    while log_integrand(a) > cut:
        a -= 0.5
    b = t_star
    while log_integrand(b) > cut:
        b += 0.5

    val, _ = integrate.quad(lambda t: math.exp(log_integrand(t) - peak), a, b,
                            points=[t_star], limit=500, epsabs=0.0, epsrel=rtol)
    out = peak + math.log(val)
    return out if return_log else math.exp(out)


def marginal_bruteforce_nu(theta, shoe: Shoe, cm: CoarseMap, M: int, rng,
                           variant: ModelVariant = FULL, chunk=100_000):
    """Naive Monte Carlo over the per-cell scores of the raw likelihood.

    Returns ``(estimate, standard_error)``.
    """
    if M < 100:
        raise ValueError("need at least 100 Monte Carlo draws")
    if shoe.n == 0:
        return 1.0, 0.0
    eff, pb, c_grid, K, _ = _single_shoe_arrays(theta, shoe, cm, variant)
    if pb.n_active > 64:
        raise ValueError("active set too large for the naive oracle")
    act = pb.active_idx
    pos = {int(a): i for i, a in enumerate(act)}
    W = np.zeros((len(act), pb.G))                # kernel weight from atom to accidental
    for g in range(pb.G):
        for j in range(WIN * WIN):
            if pb.win_ok[g, j]:
                W[pos[int(pb.win_cell[g, j])], g] += K[j]
    c = c_grid[act]
    if not eff.scores:
        lam = (c / c.sum()) @ W
        return float(np.prod(lam)), 0.0
    total = 0.0
    total2 = 0.0
    done = 0
    while done < M:
        m = min(chunk, M - done)
        nu = rng.gamma(eff.q, 1.0, (m, len(act)))
        mass = nu * c
        mu = mass / mass.sum(axis=1, keepdims=True)
        vals = np.prod(mu @ W, axis=1)
        total += vals.sum()
        total2 += np.dot(vals, vals)
        done += m
    mean = total / M
    var = max(total2 / M - mean * mean, 0.0)
    return mean, math.sqrt(var / (M - 1))


def direct_loglik_no_scores(theta, shoe: Shoe, cm: CoarseMap, kernel_on=True) -> float:
    """Log likelihood of the score-free model as a product of kernel-smoothed
    categorical probabilities."""
    from .generative import lambda_field, mu_weights
    v = ModelVariant(scores=False, kernel=kernel_on)
    eff = apply_variant(theta, v)
    mu = mu_weights(eff, np.ones(cm.shape), shoe.surface, cm)
    L = lambda_field(mu, eff.kernel)
    cells = shoe.cells + L.pad
    with np.errstate(divide="ignore"):
        return float(np.log(L.lam[cells[:, 0], cells[:, 1]]).sum())
