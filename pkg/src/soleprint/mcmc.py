"""Posterior sampler: per-shoe gamma auxiliaries and kernel assignments,
elliptical slice updates of the coarse log weights, and scalar slice updates
of ``phi``, ``q`` and the kernel tier parameters."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import FULL, EffectiveParams, GlobalParams, ModelVariant, PriorConfig
from .generative import precision_cholesky, sample_log_w, sample_prior
from .grid import N_SHAPES, N_TIERS, Kernel, KernelParams, tier_kappa
from .likelihood import CENTER, TIER_H, TIER_V, WIN, AuxiliaryState, Problem, augmented_loglik
from .slice import elliptical_slice, slice_sample_1d, slice_sample_vec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SliceConfig:
    q: float = 0.2
    phi: float = 0.01
    p: float = 1.0
    u_scale: float = 20.0     # u width is u_scale * sqrt(N_s) / (|A| q)
    qu: float = 0.3           # log-scale width of the joint (q, u) move
    max_steps: int = 1000     # stepping-out cap per update (None = unbounded)

    def __post_init__(self):
        if min(self.q, self.phi, self.p, self.u_scale, self.qu) <= 0:
            raise ValueError("slice widths must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")

    def u_width(self, N, n_active, q):
        return self.u_scale * np.sqrt(N) / (n_active * q)


@dataclass
class ChainConfig:
    n_sweeps: int = 30000
    warmup: int = 10000
    thin: int = 1
    variant: ModelVariant = FULL
    prior: PriorConfig = field(default_factory=PriorConfig)
    slice: SliceConfig = field(default_factory=SliceConfig)
    debug: bool = False

    def __post_init__(self):
        if self.n_sweeps < 0 or self.warmup < 0 or self.thin < 1:
            raise ValueError("need n_sweeps >= 0, warmup >= 0 and thin >= 1")


@dataclass
class ChainState:
    theta: GlobalParams
    aux: AuxiliaryState
    iter: int
    rng_state: dict


def _tier_loglik(p, H) -> float:
    """``sum_l H[l] * log kappa_l(p)`` with plain floats (hot path of the p update)."""
    m = max(p)
    e = [math.exp(v - m) for v in p]
    tot = sum(e)
    acc = 0.0
    out = 0.0
    for j in range(len(p) - 1, -1, -1):
        acc += e[j] / (2 * j + 1)
        if H[j]:
            out += H[j] * math.log(acc / tot)
    return out


class Sampler:
    """Holds the chain state for one dataset and performs the updates.

    The global parameters are kept as plain arrays (``q``, ``log_w``, ``phi``,
    ``p_h``, ``p_v``); ablated components are held at their fixed values and
    never updated. ``q`` under the no-scores variant and ``p`` under the
    no-kernel variant do not enter the likelihood and keep their initial
    values.
    """

    def __init__(self, problem: Problem, variant: ModelVariant = FULL,
                 prior: PriorConfig = PriorConfig(), slice_cfg: SliceConfig = SliceConfig(),
                 rng=None, theta0: GlobalParams = None, debug=False):
        self.pb = problem
        self.v = variant
        self.prior = prior
        self.sc = slice_cfg
        self.rng = rng if rng is not None else np.random.default_rng()
        self.debug = debug
        self.iter = 0
        self.chol = precision_cholesky(problem.cm, prior)
        if theta0 is None:
            theta0 = sample_prior(self.rng, prior, problem.cm, self.chol)
        self.q = theta0.q
        self.log_w = np.log(theta0.w_E) if variant.w else np.zeros(problem.R)
        self.phi = theta0.phi.copy() if variant.phi else np.ones(N_SHAPES)
        self.p_h = theta0.kparams.p_h.copy()
        self.p_v = theta0.kparams.p_v.copy()
        self.set_data(problem)

    # -- state -------------------------------------------------------------

    def set_data(self, problem: Problem, Z=None, u=None):
        """Attach a dataset; without ``Z``/``u`` the auxiliaries are initialized
        at the data (or the nearest reachable cell) and at their conditional
        mean under unit scores."""
        self.pb = pb = problem
        if Z is None:
            Z = pb.initial_z(self.kernel.weights()) if self.v.kernel else np.full(pb.G, CENTER)
        self.Z = np.asarray(Z, dtype=np.int64).copy()
        if u is None:
            total = pb.total_weight(self._eff_arrays())
            u = pb.N / (self.q * total) if pb.S else np.zeros(0)
        self.u = np.asarray(u, dtype=float).copy()
        self.Cnt = pb.counts(self.Z)
        self._refresh()

    def _eff_arrays(self):
        return EffectiveParams(self.q, self.w, self.phi, self.kernel, self.v.scores)

    @property
    def w(self):
        return np.exp(self.log_w)

    @property
    def kernel(self) -> Kernel:
        if not self.v.kernel:
            return Kernel.identity()
        return Kernel(tier_kappa(self.p_h), tier_kappa(self.p_v))

    @property
    def theta(self) -> GlobalParams:
        return GlobalParams(self.q, self.w, np.clip(self.phi, 0.0, 1.0),
                            KernelParams(self.p_h.copy(), self.p_v.copy()))

    @property
    def aux(self) -> AuxiliaryState:
        return AuxiliaryState(self.Z.copy(), self.u.copy())

    def state(self) -> ChainState:
        return ChainState(self.theta, self.aux, self.iter, self.rng.bit_generator.state)

    def _refresh(self):
        """Recompute the sufficient statistics of ``Z`` used by the global updates."""
        pb = self.pb
        self.occ_s, self.occ_cell, self.occ_C, self.occ_e, self.occ_r = pb.occupancy(self.Z)
        self.T_code = np.bincount(self.occ_r, weights=self.occ_C, minlength=N_SHAPES)
        self.T_region = np.bincount(self.occ_e, weights=self.occ_C, minlength=pb.R)
        order = np.argsort(self.occ_r, kind="stable")
        bounds = np.searchsorted(self.occ_r[order], np.arange(N_SHAPES + 1))
        self.occ_by_code = [order[bounds[i]:bounds[i + 1]] for i in range(N_SHAPES)]
        hist = np.bincount(self.occ_C.astype(np.int64))
        # G[j] = number of occupied cells with count > j
        self.G_hist = hist[::-1].cumsum()[::-1][1:].astype(float)
        self.H_h = np.bincount(TIER_H[self.Z], minlength=N_TIERS).astype(float)
        self.H_v = np.bincount(TIER_V[self.Z], minlength=N_TIERS).astype(float)

    def check_counts(self):
        """Full recount of the per-cell counts against ``Z``."""
        if not np.array_equal(self.Cnt, self.pb.counts(self.Z)):
            raise AssertionError(f"count array out of sync with Z at sweep {self.iter}")

    def log_prior(self) -> float:
        pr = self.prior
        lp = 0.0
        if self.q <= 0:
            return -math.inf
        lp += (pr.q_shape - 1) * math.log(self.q) - pr.q_rate * self.q
        if self.v.w:
            z = self.chol @ self.log_w
            lp -= 0.5 * float(z @ z)
        if self.v.phi and (self.phi.min() < 0 or self.phi.max() > pr.phi_upper):
            return -math.inf
        lp -= float(self.p_h @ self.p_h + self.p_v @ self.p_v) / (2 * pr.p_variance)
        return lp

    def log_joint(self) -> float:
        """Unnormalized log posterior of the current state (parameters and auxiliaries)."""
        return self.log_prior() + augmented_loglik(self.theta, self.aux, self.pb, self.v)

    # -- updates -----------------------------------------------------------

    def _c_tab(self):
        return self.w[self.pb.tab_e] * self.phi[self.pb.tab_r]

    def _c_occ(self):
        return self.w[self.occ_e] * self.phi[self.occ_r]

    def update_u(self):
        pb = self.pb
        if pb.S == 0:
            return
        c_tab = self._c_tab()
        if not self.v.scores:
            rate = np.bincount(pb.tab_s, weights=pb.tab_n * c_tab, minlength=pb.S)
            self.u = self.rng.gamma(pb.N, 1.0 / rate)
            return
        c_occ = self._c_occ()
        q, N = self.q, pb.N
        nm1 = (N - 1).astype(float)

        def logd(u):
            with np.errstate(divide="ignore"):
                lu = np.where(nm1 > 0, nm1 * np.log(u), 0.0)
            a = np.bincount(pb.tab_s, weights=pb.tab_n * np.log1p(u[pb.tab_s] * c_tab), minlength=pb.S)
            b = np.bincount(self.occ_s, weights=self.occ_C * np.log1p(u[self.occ_s] * c_occ),
                            minlength=pb.S)
            return lu - q * a - b

        width = self.sc.u_width(N, pb.n_active, q)
        self.u, _ = slice_sample_vec(logd, self.u, width, self.rng, lower=0.0,
                                     max_steps=self.sc.max_steps)

    def update_w(self):
        if not self.v.w:
            return
        pb = self.pb
        q, Tr = self.q, self.T_region
        a_tab = self.u[pb.tab_s] * self.phi[pb.tab_r]
        a_occ = self.u[self.occ_s] * self.phi[self.occ_r]
        if self.v.scores:
            def loglik(lw):
                w = np.exp(lw)
                return (float(Tr @ lw)
                        - q * float(pb.tab_n @ np.log1p(a_tab * w[pb.tab_e]))
                        - float(self.occ_C @ np.log1p(a_occ * w[self.occ_e])))
        else:
            B = np.bincount(pb.tab_e, weights=pb.tab_n * a_tab, minlength=pb.R)

            def loglik(lw):
                return float(Tr @ lw) - float(B @ np.exp(lw))
        nu = sample_log_w(self.rng, self.chol)
        self.log_w, _ = elliptical_slice(self.log_w, nu, loglik, self.rng)

    def update_phi(self):
        if not self.v.phi:
            return
        pb = self.pb
        w, q, hi = self.w, self.q, self.prior.phi_upper
        for i in range(N_SHAPES):
            ti = pb.tab_by_code[i]
            if len(ti) == 0:
                # the code occurs on no shoe: the conditional is the prior
                self.phi[i] = self.rng.uniform(0.0, hi)
                continue
            oi = self.occ_by_code[i]
            nt = pb.tab_n[ti]
            at = self.u[pb.tab_s[ti]] * w[pb.tab_e[ti]]
            Co = self.occ_C[oi]
            ao = self.u[self.occ_s[oi]] * w[self.occ_e[oi]]
            Ti = float(self.T_code[i])
            if self.v.scores:
                def logd(x, Ti=Ti, nt=nt, at=at, Co=Co, ao=ao):
                    if Ti > 0 and x <= 0:
                        return -math.inf
                    lx = Ti * math.log(x) if Ti > 0 else 0.0
                    return lx - q * float(nt @ np.log1p(at * x)) - float(Co @ np.log1p(ao * x))
            else:
                slope = float(nt @ at)

                def logd(x, Ti=Ti, slope=slope):
                    if Ti > 0 and x <= 0:
                        return -math.inf
                    return (Ti * math.log(x) if Ti > 0 else 0.0) - slope * x
            self.phi[i] = slice_sample_1d(logd, self.phi[i], self.sc.phi, self.rng, 0.0, hi,
                                          max_steps=self.sc.max_steps)

    def update_q(self):
        if not self.v.scores:
            return
        pb = self.pb
        L = float(pb.tab_n @ np.log1p(self.u[pb.tab_s] * self._c_tab())) if pb.S else 0.0
        G = self.G_hist
        js = np.arange(len(G), dtype=float)
        a, b = self.prior.q_shape, self.prior.q_rate

        def logd(q):
            if q <= 0:
                return -math.inf
            return (a - 1) * math.log(q) - b * q + float(G @ np.log(q + js)) - q * L

        self.q = slice_sample_1d(logd, self.q, self.sc.q, self.rng, 0.0, max_steps=self.sc.max_steps)

    def _qu_line(self):
        """Log density of t along q -> q e^t, u -> u e^-t, up to a constant.

        The data pin down u*q much better than q alone, so the single-site
        updates crawl along this ridge. The move is a translation in log
        coordinates; its Jacobian e^{t(1-S)} is folded into ``slope``.
        """
        pb = self.pb
        c_tab, c_occ = self._c_tab(), self._c_occ()
        G = self.G_hist
        js = np.arange(len(G), dtype=float)
        a, b = self.prior.q_shape, self.prior.q_rate
        slope = float((pb.N - 1).sum()) + pb.S - 1
        q0, u0 = self.q, self.u

        def logd(t):
            if abs(t) > 700:
                return -math.inf
            q, u = q0 * math.exp(t), u0 * math.exp(-t)
            return ((a - 1) * math.log(q) - b * q + float(G @ np.log(q + js)) - slope * t
                    - q * float(pb.tab_n @ np.log1p(u[pb.tab_s] * c_tab))
                    - float(self.occ_C @ np.log1p(u[self.occ_s] * c_occ)))

        return logd

    def update_qu(self):
        if not self.v.scores or self.pb.S == 0:
            return
        t = slice_sample_1d(self._qu_line(), 0.0, self.sc.qu, self.rng, max_steps=self.sc.max_steps)
        self.q, self.u = self.q * math.exp(t), self.u * math.exp(-t)

    def update_p(self):
        if not self.v.kernel:
            return
        var = self.prior.p_variance
        for p, H in ((self.p_h, self.H_h), (self.p_v, self.H_v)):
            H = [float(h) for h in H]
            for i in range(N_TIERS):
                rest = [float(v) for v in p]

                def logd(x, rest=rest, H=H, i=i):
                    rest[i] = x
                    return -x * x / (2 * var) + _tier_loglik(rest, H)
                p[i] = slice_sample_1d(logd, p[i], self.sc.p, self.rng, max_steps=self.sc.max_steps)

    def _z_factor(self, C_minus, c, u, K):
        """Unnormalized conditional probabilities of the window cells."""
        if self.v.scores:
            return (self.q + C_minus) * c / (u * c + 1.0) * K
        return c * K

    def update_z(self):
        if not self.v.kernel or self.pb.G == 0:
            return
        pb = self.pb
        w_ext = np.append(self.w, 0.0)
        c_win = w_ext[pb.win_e] * self.phi[pb.win_r]
        K = self.kernel.weights().ravel()
        cols = np.arange(WIN * WIN)
        for batch in pb.batches:
            s = pb.acc_shoe[batch]
            cells = pb.win_cell[batch]
            zb = self.Z[batch]
            C_minus = self.Cnt[s[:, None], cells] - (cols[None, :] == zb[:, None])
            f = self._z_factor(C_minus, c_win[batch], self.u[s][:, None], K[None, :])
            cdf = np.cumsum(f, axis=1)
            r = self.rng.random(len(batch)) * cdf[:, -1]
            new = np.argmax(cdf > r[:, None], axis=1)
            rows = np.arange(len(batch))
            self.Cnt[s, cells[rows, zb]] -= 1
            self.Cnt[s, cells[rows, new]] += 1
            self.Z[batch] = new
        self._refresh()

    def sweep(self):
        self.update_u()
        self.update_w()
        self.update_phi()
        self.update_q()
        self.update_qu()
        self.update_p()
        self.update_z()
        self.iter += 1
        if self.debug and self.iter % 1000 == 0:
            self.check_counts()


@dataclass
class PosteriorDraws:
    """Retained draws of the global parameters, one row per recorded sweep."""

    iters: np.ndarray
    q: np.ndarray
    log_w_E: np.ndarray
    phi: np.ndarray
    p_h: np.ndarray
    p_v: np.ndarray
    variant: ModelVariant = FULL
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iters)

    def theta(self, k) -> GlobalParams:
        return GlobalParams(float(self.q[k]), np.exp(self.log_w_E[k]), np.clip(self.phi[k], 0, 1),
                            KernelParams(self.p_h[k], self.p_v[k]))

    def __iter__(self):
        return (self.theta(k) for k in range(len(self)))

    def records(self):
        for k in range(len(self)):
            yield {"iter": int(self.iters[k]), "q": float(self.q[k]),
                   "log_w_E": self.log_w_E[k].tolist(), "phi": self.phi[k].tolist(),
                   "p_h": self.p_h[k].tolist(), "p_v": self.p_v[k].tolist()}

    def kappa_h(self):
        return np.array([tier_kappa(p) for p in self.p_h])

    def kappa_v(self):
        return np.array([tier_kappa(p) for p in self.p_v])

    @classmethod
    def from_records(cls, records, variant=FULL, meta=None):
        recs = list(records)
        if not recs:
            return cls(np.zeros(0, int), np.zeros(0), np.zeros((0, 0)), np.zeros((0, N_SHAPES)),
                       np.zeros((0, N_TIERS)), np.zeros((0, N_TIERS)), variant, meta or {})
        return cls(np.array([r["iter"] for r in recs]),
                   np.array([r["q"] for r in recs], dtype=float),
                   np.array([r["log_w_E"] for r in recs], dtype=float),
                   np.array([r["phi"] for r in recs], dtype=float),
                   np.array([r["p_h"] for r in recs], dtype=float),
                   np.array([r["p_v"] for r in recs], dtype=float), variant, meta or {})


def run_chain(data, cm=None, cfg: ChainConfig = None, rng=None, seed=None,
              theta0: GlobalParams = None, callback=None, start_iter=0) -> PosteriorDraws:
    """Run the sampler and collect draws after warm-up.

    ``data`` is a list of ``Shoe`` (with ``cm``) or a prepared ``Problem``.
    ``iters`` are absolute 1-based sweep numbers, offset by ``start_iter``
    when continuing an earlier chain. ``callback(sampler)`` runs after every
    sweep.
    """
    cfg = cfg or ChainConfig()
    if rng is None:
        rng = np.random.default_rng(seed)
    pb = data if isinstance(data, Problem) else Problem(data, cm, kernel_on=cfg.variant.kernel)
    if pb.dropped:
        log.info("%d shoes without accidentals skipped", len(pb.dropped))
    smp = Sampler(pb, cfg.variant, cfg.prior, cfg.slice, rng, theta0, cfg.debug)
    keep = [k for k in range(cfg.warmup + 1, cfg.n_sweeps + 1) if (k - cfg.warmup - 1) % cfg.thin == 0]
    D = len(keep)
    out = dict(iters=np.array(keep, dtype=np.int64) + int(start_iter), q=np.empty(D), log_w_E=np.empty((D, pb.R)),
               phi=np.empty((D, N_SHAPES)), p_h=np.empty((D, N_TIERS)), p_v=np.empty((D, N_TIERS)))
    d = 0
    for k in range(1, cfg.n_sweeps + 1):
        smp.sweep()
        if callback is not None:
            callback(smp)
        if d < D and keep[d] == k:
            out["q"][d] = smp.q
            out["log_w_E"][d] = smp.log_w
            out["phi"][d] = smp.phi
            out["p_h"][d] = smp.p_h
            out["p_v"][d] = smp.p_v
            d += 1
    if cfg.debug:
        smp.check_counts()
    draws = PosteriorDraws(variant=cfg.variant, **out)
    draws.sampler = smp
    return draws
