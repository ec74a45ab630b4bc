"""Competitor densities: uniform over the active set, a pooled grid KDE,
and a log-linear contact model fitted by maximum likelihood."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d
from scipy.special import logsumexp

from .grid import N_SHAPES, REACH, KernelParams, kernel_from_params

log = logging.getLogger(__name__)


def _cells(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.maximum(np.ceil(pts).astype(np.int64) - 1, 0)


# --- uniform ----------------------------------------------------------------

def uniform_log_density(active: np.ndarray, points) -> float:
    """``N * log(1/|A|)``, or ``-inf`` if an accidental falls outside ``A``."""
    active = np.asarray(active, dtype=bool)
    c = _cells(points)
    if len(c) == 0:
        return 0.0
    if not active[c[:, 0], c[:, 1]].all():
        return -math.inf
    return -len(c) * math.log(active.sum())


def uniform_density(active, points) -> float:
    return math.exp(uniform_log_density(active, points))


# --- KDE --------------------------------------------------------------------

REFERENCE_KERNEL = kernel_from_params(KernelParams(np.zeros(4), np.zeros(4)))


@dataclass(frozen=True, eq=False)
class KDEFit:
    """Cell probabilities on the grid padded by the kernel reach."""

    lam: np.ndarray
    pad: int = REACH

    def cell_density(self, cells) -> np.ndarray:
        c = np.asarray(cells) + self.pad
        return self.lam[c[:, 0], c[:, 1]]


def kde_fit(points, shape=(100, 200), restrict_to=None) -> KDEFit:
    """Pool all training accidentals, histogram them to the grid and smooth
    with the tiered-cake kernel at ``p = 0``.

    By default the result is normalized over the padded support. With
    ``restrict_to`` (a boolean active mask) the density is set to zero off
    that mask and renormalized over it.
    """
    c = _cells(points)
    if len(c) == 0:
        raise ValueError("need at least one training accidental")
    hist = np.zeros(shape)
    np.add.at(hist, (c[:, 0], c[:, 1]), 1.0)
    lam = convolve2d(hist, REFERENCE_KERNEL.weights(), mode="full")
    if restrict_to is not None:
        keep = np.zeros_like(lam, dtype=bool)
        keep[REACH:-REACH, REACH:-REACH] = np.asarray(restrict_to, dtype=bool)
        lam = np.where(keep, lam, 0.0)
    tot = lam.sum()
    if not tot > 0:
        raise ValueError("no training mass on the evaluation support")
    return KDEFit(lam / tot)


def kde_log_density(fit: KDEFit, points) -> float:
    c = _cells(points)
    if len(c) == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        return float(np.log(fit.cell_density(c)).sum())


# --- contact model ----------------------------------------------------------

@dataclass(frozen=True)
class ContactModelParams:
    alpha: np.ndarray           # 32 log weights, alpha[0] == ANCHOR

    ANCHOR = 1.0

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.shape != (N_SHAPES,):
            raise ValueError(f"alpha must have {N_SHAPES} entries")
        if a[0] != self.ANCHOR:
            raise ValueError("alpha_1 is the identifiability anchor and must equal 1")
        object.__setattr__(self, "alpha", a)


def _code_tables(shoes, active):
    """Per-shoe active-cell code histograms and observed accidental codes."""
    active = np.asarray(active, dtype=bool)
    hists = np.zeros((len(shoes), N_SHAPES))
    obs = np.zeros((len(shoes), N_SHAPES))
    dropped = 0
    for s, shoe in enumerate(shoes):
        codes = shoe.surface.shape_codes
        hists[s] = np.bincount(codes[active] - 1, minlength=N_SHAPES)
        c = shoe.cells
        ok = active[c[:, 0], c[:, 1]]
        dropped += int((~ok).sum())
        obs[s] = np.bincount(codes[c[ok, 0], c[ok, 1]] - 1, minlength=N_SHAPES)
    if dropped:
        warnings.warn(f"{dropped} training accidentals outside the active set ignored", stacklevel=3)
    return hists, obs


def contact_loglik(alpha, hists, obs) -> float:
    with np.errstate(divide="ignore"):
        lh = np.log(hists)
    norm = logsumexp(alpha[None, :] + lh, axis=1)
    return float((obs @ alpha).sum() - obs.sum(axis=1) @ norm)


def contact_grad(alpha, hists, obs, with_curvature=False):
    """Gradient of ``contact_loglik``; optionally also the diagonal of the
    negative Hessian."""
    with np.errstate(divide="ignore"):
        lh = np.log(hists)
    a = alpha[None, :] + lh
    pi = np.exp(a - logsumexp(a, axis=1, keepdims=True))
    n = obs.sum(axis=1)
    g = obs.sum(axis=0) - n @ pi
    if with_curvature:
        return g, n @ (pi * (1.0 - pi))
    return g


def contact_mle(shoes, active, tol=1e-6, max_iter=10_000):
    """Maximum-likelihood contact model by diagonally preconditioned gradient
    ascent with backtracking; the step grows after every accepted move.

    Returns ``(params, info)``; ``info`` holds the final gradient
    infinity-norm, iteration count and the codes pinned at the anchor.
    """
    hists, obs = _code_tables(shoes, active)
    if obs.sum() == 0:
        raise ValueError("no training accidentals on the active set")
    free = np.flatnonzero(hists.sum(axis=0) > 0)
    free = free[free != 0]
    pinned = [i + 1 for i in range(1, N_SHAPES) if i not in set(free.tolist())]
    if pinned:
        warnings.warn(f"shape codes {pinned} never occur on any mask; alpha pinned at the anchor",
                      stacklevel=2)
    alpha = np.full(N_SHAPES, ContactModelParams.ANCHOR)
    f = contact_loglik(alpha, hists, obs)
    step = 1.0
    gnorm = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        g, h = contact_grad(alpha, hists, obs, with_curvature=True)
        g, h = g[free], h[free]
        gnorm = float(np.abs(g).max()) if len(g) else 0.0
        if gnorm < tol:
            break
        d = g / np.maximum(h, 1e-12 * max(1.0, float(h.max())))
        slope = float(g @ d)
        while True:
            trial = alpha.copy()
            trial[free] += step * d
            ft = contact_loglik(trial, hists, obs)
            if ft >= f + 1e-4 * step * slope:
                break
            # near the optimum the gain drops below the rounding of f; fall
            # back to the directional derivative at the trial point
            if abs(ft - f) <= 1e-12 * abs(f) and contact_grad(trial, hists, obs)[free] @ d > 0:
                break
            step *= 0.5
            if step < 1e-12:
                break
        if step < 1e-12:
            log.warning("contact MLE line search stalled at gradient norm %.3g", gnorm)
            break
        alpha, f = trial, ft
        step = min(2.0 * step, 1.0)
    else:
        log.warning("contact MLE stopped at max_iter with gradient norm %.3g", gnorm)
    return ContactModelParams(alpha), {"grad_norm": gnorm, "iterations": it, "pinned": pinned,
                                       "loglik": f}


def contact_cell_log_probs(params: ContactModelParams, surface, active) -> np.ndarray:
    """Per-cell log probabilities (``-inf`` off the active set)."""
    active = np.asarray(active, dtype=bool)
    a = params.alpha[surface.shape_codes - 1]
    out = np.full(active.shape, -np.inf)
    out[active] = a[active] - logsumexp(a[active])
    return out


def contact_log_density(params: ContactModelParams, surface, active, points) -> float:
    c = _cells(points)
    if len(c) == 0:
        return 0.0
    lp = contact_cell_log_probs(params, surface, active)
    return float(lp[c[:, 0], c[:, 1]].sum())


__all__ = [
    "ContactModelParams", "KDEFit", "REFERENCE_KERNEL", "contact_cell_log_probs", "contact_grad",
    "contact_log_density", "contact_loglik", "contact_mle", "kde_fit", "kde_log_density",
    "uniform_density", "uniform_log_density",
]
