"""Univariate stepping-out slice sampling and elliptical slice sampling."""
from __future__ import annotations

import math

import numpy as np


def slice_sample_1d(logdensity, x0, width, rng, lower=-math.inf, upper=math.inf,
                    logp0=None, return_logp=False, max_steps=None):
    """One stepping-out / shrinkage slice update of a scalar.

    Points outside ``[lower, upper]`` have zero density and are never
    evaluated; ``logdensity`` must cope with the closed bounds themselves.
    The stepped-out interval is clipped to the bounds, which leaves the
    update exact.

    Parameters
    ----------
    logdensity : callable
        Unnormalized log density of a float.
    x0 : float
        Current state; ``logdensity(x0)`` must be finite.
    width : float
        Step width of the stepping-out phase.
    rng : numpy.random.Generator
    max_steps : int, optional
        Cap on the total number of stepping-out steps, split at random
        between the two sides so the update stays exact. ``None`` = no cap.
    """
    if not width > 0:
        raise ValueError("slice width must be positive")
    if logp0 is None:
        logp0 = logdensity(x0)
    if not math.isfinite(logp0):
        raise ValueError(f"log density is not finite at the current point {x0!r}")
    level = logp0 - rng.exponential()

    left = x0 - rng.random() * width
    right = left + width
    if max_steps is None:
        n_left = n_right = math.inf
    else:
        n_left = math.floor(max_steps * rng.random())
        n_right = max_steps - 1 - n_left
    while n_left > 0 and left > lower and logdensity(left) > level:
        left -= width
        n_left -= 1
    while n_right > 0 and right < upper and logdensity(right) > level:
        right += width
        n_right -= 1
    left = max(left, lower)
    right = min(right, upper)

    while True:
        x1 = left + rng.random() * (right - left)
        lp = logdensity(x1)
        if lp > level:
            return (x1, lp) if return_logp else x1
        if x1 < x0:
            left = x1
        elif x1 > x0:
            right = x1
        else:
            raise RuntimeError("slice shrank to the current point; log density is inconsistent")


def elliptical_slice(x, prior_draw, loglik, rng, cur_loglik=None):
    """One elliptical slice update for a zero-mean Gaussian prior.

    Returns the new state and its log likelihood. Always terminates with an
    accepted point because the bracket shrinks towards the current state.
    """
    if cur_loglik is None:
        cur_loglik = loglik(x)
    level = cur_loglik - rng.exponential()
    angle = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = angle - 2.0 * math.pi, angle
    while True:
        xp = x * math.cos(angle) + prior_draw * math.sin(angle)
        ll = loglik(xp)
        if ll > level:
            return xp, ll
        if angle < 0:
            lo = angle
        else:
            hi = angle
        if hi - lo < 1e-12:
            return np.array(x, copy=True), cur_loglik
        angle = rng.uniform(lo, hi)


def slice_sample_vec(logdensity, x0, width, rng, lower=-math.inf, upper=math.inf, logp0=None,
                     max_steps=None):
    """Independent slice updates of every entry of ``x0``.

    ``logdensity`` maps a vector to the vector of per-entry log densities;
    entry ``k`` of the output may depend on entry ``k`` of the input only.
    All entries step out and shrink in lockstep, so one call costs as many
    evaluations as the slowest entry needs.
    """
    x0 = np.asarray(x0, dtype=float)
    width = np.broadcast_to(np.asarray(width, dtype=float), x0.shape)
    if not (width > 0).all():
        raise ValueError("slice widths must be positive")
    if logp0 is None:
        logp0 = logdensity(x0)
    logp0 = np.asarray(logp0, dtype=float)
    if not np.isfinite(logp0).all():
        k = int(np.flatnonzero(~np.isfinite(logp0))[0])
        raise ValueError(f"log density is not finite at entry {k} (x = {x0[k]!r})")
    n = x0.shape
    level = logp0 - rng.exponential(size=n)

    left = x0 - rng.random(n) * width
    right = left + width
    if max_steps is None:
        n_left = np.full(n, np.inf)
        n_right = n_left.copy()
    else:
        n_left = np.floor(max_steps * rng.random(n))
        n_right = max_steps - 1 - n_left
    grow = (left > lower) & (n_left > 0)
    while grow.any():
        grow &= logdensity(np.where(grow, left, x0)) > level
        left = np.where(grow, left - width, left)
        n_left -= grow
        grow &= (left > lower) & (n_left > 0)
    grow = (right < upper) & (n_right > 0)
    while grow.any():
        grow &= logdensity(np.where(grow, right, x0)) > level
        right = np.where(grow, right + width, right)
        n_right -= grow
        grow &= (right < upper) & (n_right > 0)
    left = np.maximum(left, lower)
    right = np.minimum(right, upper)

    x1 = x0.copy()
    lp1 = logp0.copy()
    todo = np.ones(n, dtype=bool)
    while todo.any():
        cand = np.where(todo, left + rng.random(n) * (right - left), x0)
        lp = logdensity(cand)
        acc = todo & (lp > level)
        x1[acc] = cand[acc]
        lp1[acc] = lp[acc]
        todo &= ~acc
        if (todo & (cand == x0)).any():
            raise RuntimeError("slice shrank to the current point; log density is inconsistent")
        left = np.where(todo & (cand < x0), cand, left)
        right = np.where(todo & (cand > x0), cand, right)
    return x1, lp1
