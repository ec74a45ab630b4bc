"""Held-out marginal density of a new shoe's accidentals by importance
sampling over the gamma auxiliary and the kernel assignments, plus the
per-accidental metric and effective sample sizes."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import FULL, ImpossibleAssignmentError, ModelVariant, Shoe, apply_variant
from .grid import CoarseMap, tier_kappa
from .likelihood import DI, DJ, WIN, Problem

METRIC_SCALE = 20000.0


def _single(shoe: Shoe, cm: CoarseMap, variant: ModelVariant) -> Problem:
    return Problem([shoe], cm, kernel_on=variant.kernel)


def importance_draw_u(theta, shoe: Shoe, cm: CoarseMap, rng, variant: ModelVariant = FULL,
                      pb: Problem = None) -> float:
    """Gamma(N, q * sum of w phi) draw (rate ``sum of w phi`` without scores)."""
    if shoe.n < 1:
        raise ValueError("need at least one accidental")
    pb = pb or _single(shoe, cm, variant)
    eff = apply_variant(theta, variant)
    S = float(pb.total_weight(eff)[0])
    rate = eff.q * S if eff.scores else S
    return float(rng.gamma(shoe.n, 1.0 / rate))


def _window_weights(eff, pb: Problem) -> np.ndarray:
    w_ext = np.append(eff.w_E, 0.0)
    return w_ext[pb.win_e] * eff.phi[pb.win_r] * eff.kernel.weights().ravel()[None, :]


def importance_draw_z(theta, shoe: Shoe, cm: CoarseMap, rng, variant: ModelVariant = FULL,
                      pb: Problem = None) -> np.ndarray:
    """Window index (0..48) of every accidental, drawn proportional to
    ``w phi K`` over its 7x7 window."""
    pb = pb or _single(shoe, cm, variant)
    f = _window_weights(apply_variant(theta, variant), pb)
    tot = f.sum(axis=1)
    if (tot <= 0).any():
        n = int(np.flatnonzero(tot <= 0)[0])
        raise ImpossibleAssignmentError(f"shoe {shoe.shoe_id!r}, accidental {n}: zero-weight window",
                                        shoe=shoe.shoe_id, accidental=n)
    return np.array([rng.choice(WIN * WIN, p=row / row.sum()) for row in f])


def importance_weight(theta, shoe: Shoe, cm: CoarseMap, u: float, Z, variant: ModelVariant = FULL,
                      pb: Problem = None) -> float:
    """Log importance weight: augmented integrand divided by the proposal
    density of ``(u, Z)``."""
    pb = pb or _single(shoe, cm, variant)
    eff = apply_variant(theta, variant)
    q, N = eff.q, shoe.n
    f = _window_weights(eff, pb)
    logW = float(np.log(f.sum(axis=1)).sum())
    c_tab = eff.w_E[pb.tab_e] * eff.phi[pb.tab_r]
    S = float(pb.tab_n @ c_tab)
    if not eff.scores:
        return logW - N * math.log(S)
    _, _, C, e, r = pb.occupancy(np.asarray(Z))
    c_occ = eff.w_E[e] * eff.phi[r]
    return (logW - N * math.log(q * S) + u * q * S
            - q * float(pb.tab_n @ np.log1p(u * c_tab))
            - float(C @ np.log1p(u * c_occ))
            + float(np.sum(gammaln(q + C) - gammaln(q))))


def _tie_ranks(cells: np.ndarray) -> np.ndarray:
    """Per row, for each entry the number of earlier equal entries in sorted order.

    The multiset of ranks per row is what matters: summing ``log(q + rank)``
    over a row gives ``sum_a log Gamma(q + C_a) - log Gamma(q)``.
    """
    s = np.sort(cells, axis=1)
    k = np.arange(s.shape[1])
    new_run = np.ones_like(s, dtype=bool)
    new_run[:, 1:] = s[:, 1:] != s[:, :-1]
    start = np.maximum.accumulate(np.where(new_run, k[None, :], 0), axis=1)
    return k[None, :] - start


@dataclass
class HeldoutResult:
    shoe_id: str
    N: int
    log_weights: np.ndarray
    estimate_log: float
    metric: float
    ess: float

    @property
    def estimate(self) -> float:
        return math.exp(self.estimate_log)


def _draw_arrays(draws):
    """Normalize a PosteriorDraws or a list of GlobalParams to stacked arrays."""
    if hasattr(draws, "log_w_E") and hasattr(draws, "p_h") and np.ndim(draws.q) == 1:
        return (np.asarray(draws.q, float), np.exp(np.asarray(draws.log_w_E, float)),
                np.asarray(draws.phi, float), np.asarray(draws.p_h, float), np.asarray(draws.p_v, float))
    thetas = list(draws)
    return (np.array([t.q for t in thetas]), np.array([t.w_E for t in thetas]),
            np.array([t.phi for t in thetas]), np.array([t.kparams.p_h for t in thetas]),
            np.array([t.kparams.p_v for t in thetas]))


def heldout_log_weights(draws, shoe: Shoe, cm: CoarseMap, rng, variant: ModelVariant = FULL,
                        M: int = 1, block: int = 512) -> np.ndarray:
    """Log importance weight per posterior draw (averaging ``M`` samples each)."""
    if M < 1:
        raise ValueError("M must be at least 1")
    q, w, phi, p_h, p_v = _draw_arrays(draws)
    L = len(q)
    if L == 0:
        raise ValueError("no posterior draws")
    if shoe.n == 0:
        return np.zeros(L)
    if not variant.w:
        w = np.ones_like(w)
    if not variant.phi:
        phi = np.ones_like(phi)
    if variant.kernel:
        kh = np.apply_along_axis(tier_kappa, 1, p_h)
        kv = np.apply_along_axis(tier_kappa, 1, p_v)
        K = kh[:, np.abs(DI)] * kv[:, np.abs(DJ)]
    else:
        K = np.zeros((L, WIN * WIN))
        K[:, WIN * WIN // 2] = 1.0
    pb = _single(shoe, cm, variant)
    N = pb.G
    out = np.empty(L)
    for lo in range(0, L, block):
        sl = slice(lo, min(lo + block, L))
        idx = np.repeat(np.arange(sl.start, sl.stop), M)
        B = len(idx)
        wb, pbh, qb = w[idx], phi[idx], q[idx]
        c_tab = wb[:, pb.tab_e] * pbh[:, pb.tab_r]                     # (B, T)
        S = c_tab @ pb.tab_n
        w_ext = np.concatenate([wb, np.zeros((B, 1))], axis=1)
        c_win = w_ext[:, pb.win_e] * pbh[:, pb.win_r]                  # (B, N, 49)
        f = c_win * K[idx][:, None, :]
        W = f.sum(axis=2)
        logW = np.log(W).sum(axis=1)
        if not variant.scores:
            lw = logW - N * np.log(S)
        else:
            u = rng.gamma(N, 1.0 / (qb * S))
            cdf = np.cumsum(f, axis=2)
            r = rng.random((B, N)) * W
            Z = np.argmax(cdf > r[:, :, None], axis=2)                 # (B, N)
            cells = pb.win_cell[np.arange(N)[None, :], Z]
            c_z = np.take_along_axis(c_win, Z[:, :, None], axis=2)[:, :, 0]
            ranks = _tie_ranks(cells)
            lw = (logW - N * np.log(qb * S) + u * qb * S
                  - qb * (np.log1p(u[:, None] * c_tab) @ pb.tab_n)
                  - np.log1p(u[:, None] * c_z).sum(axis=1)
                  + np.log(qb[:, None] + ranks).sum(axis=1))
        if M > 1:
            lw = logsumexp(lw.reshape(-1, M), axis=1) - math.log(M)
        out[sl] = lw
    return out


def heldout_density(draws, shoe: Shoe, cm: CoarseMap, rng, variant: ModelVariant = FULL,
                    M: int = 1) -> HeldoutResult:
    """Posterior-averaged marginal density of a held-out shoe's accidentals."""
    lw = heldout_log_weights(draws, shoe, cm, rng, variant, M)
    est = float(logsumexp(lw) - math.log(len(lw)))
    ess = chain_ess(np.exp(lw - lw.max())) if len(lw) >= 10 else float(len(lw))
    return HeldoutResult(shoe.shoe_id, shoe.n, lw, est, per_accidental_metric_log(est, shoe.n), ess)


def per_accidental_metric(estimate: float, N: int) -> float:
    """``20000 * estimate ** (1 / N)``: geometric-mean density per accidental,
    scaled so that a uniform density over the full grid scores one."""
    if estimate < 0:
        raise ValueError("density estimate must be non-negative")
    if N < 1:
        raise ValueError("need N >= 1")
    return METRIC_SCALE * estimate ** (1.0 / N)


def per_accidental_metric_log(estimate_log: float, N: int) -> float:
    if N < 1:
        return math.nan
    return METRIC_SCALE * math.exp(estimate_log / N)


def geo_mean_metric(metrics) -> float:
    """Geometric mean of per-shoe metrics; zero if any shoe scores zero."""
    m = np.asarray(list(metrics), dtype=float)
    m = m[~np.isnan(m)]
    if len(m) == 0:
        return math.nan
    if (m <= 0).any():
        return 0.0
    return float(np.exp(np.log(m).mean()))


def autocorrelation(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = len(x)
    xc = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    return acov / acov[0]


def chain_ess(x) -> float:
    """Effective sample size by Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    L = len(x)
    if L < 10:
        raise ValueError("need a chain of length >= 10")
    if not np.isfinite(x).all():
        raise ValueError("chain has non-finite values")
    if np.ptp(x) == 0 or x.var() <= 1e-300 * max(1.0, float(np.abs(x).max()) ** 2):
        return float(L)
    rho = autocorrelation(x)
    npair = L // 2
    pairs = rho[:2 * npair].reshape(npair, 2).sum(axis=1)
    neg = np.flatnonzero(pairs <= 0)
    m = neg[0] if len(neg) else npair
    tau = -1.0 + 2.0 * pairs[:m].sum()
    if tau <= 0:
        return float(L)
    return float(min(L, L / tau))


__all__ = [
    "HeldoutResult", "chain_ess", "geo_mean_metric", "heldout_density", "heldout_log_weights",
    "importance_draw_u", "importance_draw_z", "importance_weight", "per_accidental_metric",
    "per_accidental_metric_log",
]
