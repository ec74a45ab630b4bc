import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.special import logsumexp

from oracles import UNIFORM_METRIC_11475
from soleprint.core import FULL, GlobalParams, ModelVariant, PriorConfig, Shoe, apply_variant
from soleprint.generative import sample_prior
from soleprint.grid import ContactSurface, KernelParams, kernel_weight
from soleprint.heldout import (_tie_ranks, _window_weights, chain_ess, geo_mean_metric, heldout_density,
                               heldout_log_weights, importance_draw_u, importance_draw_z, importance_weight,
                               per_accidental_metric, per_accidental_metric_log)
from soleprint.likelihood import CENTER, Problem, marginal_bruteforce_Z
from soleprint.mcmc import PosteriorDraws
from soleprint.toy import random_tiny_instance, tiny_coarse_map

P0 = KernelParams(np.zeros(4), np.zeros(4))
NO_KERNEL = ModelVariant(kernel=False)
NO_SCORES = ModelVariant(scores=False)


def ones_surface(cm):
    return ContactSurface(np.ones(cm.shape, dtype=np.uint8))


def draws_of(thetas, variant=FULL):
    recs = [{"iter": k, "q": t.q, "log_w_E": np.log(t.w_E).tolist(), "phi": t.phi.tolist(),
             "p_h": t.kparams.p_h.tolist(), "p_v": t.kparams.p_v.tolist()} for k, t in enumerate(thetas)]
    return PosteriorDraws.from_records(recs, variant)


# --- proposals ------------------------------------------------------------------

def test_u_proposal_mean_and_exponential_case():
    rng = np.random.default_rng(0)
    cm = tiny_coarse_map(4)
    th = GlobalParams(1.7, np.array([1.0, 2.0, 0.5, 1.5]), np.full(32, 0.6), P0)
    a = np.argwhere(cm.active)
    shoe = Shoe(ones_surface(cm), a[[0, 1, 1]] + 0.5, "u")
    pb = Problem([shoe], cm)
    S = 0.6 * 5.0
    u = np.array([importance_draw_u(th, shoe, cm, rng, pb=pb) for _ in range(100_000)])
    assert (u > 0).all()
    assert abs(u.mean() - 3 / (1.7 * S)) < 3 * u.std() / math.sqrt(len(u))

    cm1 = tiny_coarse_map(1)
    one = Shoe(ones_surface(cm1), np.argwhere(cm1.active) + 0.5, "one")
    th1 = GlobalParams(1.0, np.ones(1), np.ones(32), P0)
    pb1 = Problem([one], cm1)
    u = np.array([importance_draw_u(th1, one, cm1, rng, pb=pb1) for _ in range(20_000)])
    assert stats.kstest(u, "expon").pvalue > 0.01


def test_z_proposal_is_kernel_under_flat_weights():
    cm = tiny_coarse_map(9, size=14)
    (i, j) = np.argwhere(cm.active)[4]                 # centre of the 3x3 block
    shoe = Shoe(ones_surface(cm), [[i + 0.5, j + 0.5]], "k")
    th = GlobalParams(1.0, np.ones(9), np.ones(32), P0)
    rng = np.random.default_rng(1)
    pb = Problem([shoe], cm)
    n = 40_000
    z = np.array([importance_draw_z(th, shoe, cm, rng, pb=pb)[0] for _ in range(n)])
    cells = pb.win_cell[0, z]
    freq = np.bincount(cells, minlength=pb.ncell) / n
    act = np.argwhere(cm.active)
    k = np.array([kernel_weight(th.kernel, int(a[0] - i), int(a[1] - j)) for a in act])
    p = k / k.sum()
    got = freq[act[:, 0] * cm.shape[1] + act[:, 1]]
    assert (np.abs(got - p) < 3 * np.sqrt(p * (1 - p) / n) + 1e-12).all()


def test_z_proposal_single_cell_and_three_cell_hand_case():
    rng = np.random.default_rng(2)
    cm = tiny_coarse_map(1)
    shoe = Shoe(ones_surface(cm), np.argwhere(cm.active) + 1.5 - 1.0, "s")
    th = GlobalParams(1.0, np.ones(1), np.ones(32), P0)
    assert {int(importance_draw_z(th, shoe, cm, rng)[0]) for _ in range(50)} == {CENTER}

    cm = tiny_coarse_map(3, size=10)
    A, B, C = np.argwhere(cm.active)
    shoe = Shoe(ones_surface(cm), [A + 0.5], "h")
    w = np.array([1.0, 2.0, 3.0])
    th = GlobalParams(1.0, w, np.ones(32), P0)
    f = np.array([w[r] * kernel_weight(th.kernel, *map(int, A - X)) for r, X in enumerate((A, B, C))])
    p = f / f.sum()
    pb = Problem([shoe], cm)
    n = 30_000
    cells = np.array([pb.win_cell[0, importance_draw_z(th, shoe, cm, rng, pb=pb)[0]] for _ in range(n)])
    flat = [int(X[0]) * cm.shape[1] + int(X[1]) for X in (A, B, C)]
    freq = np.array([(cells == c).mean() for c in flat])
    assert (np.abs(freq - p) < 3 * np.sqrt(p * (1 - p) / n)).all()


# --- weights --------------------------------------------------------------------

def scalar_weights(th, shoe, cm, rng, n, variant=FULL):
    pb = Problem([shoe], cm, kernel_on=variant.kernel)
    out = np.empty(n)
    for k in range(n):
        u = importance_draw_u(th, shoe, cm, rng, variant, pb)
        Z = importance_draw_z(th, shoe, cm, rng, variant, pb)
        out[k] = importance_weight(th, shoe, cm, u, Z, variant, pb)
    return out


def test_single_atom_weight_is_exact_and_unbiased():
    """The weight is e^u / (1 + u)^2 under an Exp(1) proposal: its mean is 1
    but its variance is infinite, so the check integrates instead of sampling."""
    cm = tiny_coarse_map(1)
    shoe = Shoe(ones_surface(cm), np.argwhere(cm.active) + 0.5, "one")
    th = GlobalParams(1.0, np.ones(1), np.ones(32), P0)
    pb = Problem([shoe], cm, kernel_on=False)
    Z = np.array([CENTER])
    for u in (1e-3, 0.5, 3.0, 40.0):
        lw = importance_weight(th, shoe, cm, u, Z, NO_KERNEL, pb)
        assert lw == pytest.approx(u - 2 * math.log1p(u), abs=1e-12)
    mean, _ = integrate.quad(lambda u: math.exp(importance_weight(th, shoe, cm, u, Z, NO_KERNEL, pb) - u),
                             0, np.inf, limit=200)
    assert mean == pytest.approx(1.0, abs=1e-8)
    lw = heldout_log_weights(draws_of([th] * 1000, NO_KERNEL), shoe, cm, np.random.default_rng(3), NO_KERNEL)
    assert np.isfinite(lw).all()


def expected_weight(th, shoe, cm):
    """Proposal expectation of the weight: exact sum over Z, quadrature over u."""
    pb = Problem([shoe], cm)
    eff = apply_variant(th)
    f = _window_weights(eff, pb)
    p = f / f.sum(axis=1, keepdims=True)
    rate = th.q * float(pb.total_weight(eff)[0])
    tot = 0.0
    for Z in itertools.product(*[np.flatnonzero(row > 0) for row in p]):
        pz = math.prod(p[n, z] for n, z in enumerate(Z))
        g = lambda u: math.exp(importance_weight(th, shoe, cm, u, np.array(Z), pb=pb)
                               + stats.gamma.logpdf(u, shoe.n, scale=1 / rate))
        tot += pz * integrate.quad(g, 0, np.inf, limit=500)[0]
    return tot


@pytest.mark.slow
def test_weight_expectation_equals_exhaustive_marginal():
    """Unbiasedness without sampling noise, at prior-drawn q where the
    sample mean of the weights converges too slowly to be checked."""
    for i in range(20):
        th, shoe, cm = random_tiny_instance(np.random.default_rng([2, i]))
        assert expected_weight(th, shoe, cm) == pytest.approx(marginal_bruteforce_Z(th, shoe, cm), rel=1e-3)


@pytest.mark.parametrize("seed", range(3))
def test_weights_are_unbiased_when_q_is_large(seed):
    """With a large shape the weight variance is finite and the mean must
    match the exhaustive marginal."""
    rng = np.random.default_rng(40 + seed)
    th, shoe, cm = random_tiny_instance(rng)
    th = th.replace(q=6.0)
    z = marginal_bruteforce_Z(th, shoe, cm)
    w = np.exp(heldout_log_weights(draws_of([th] * 100_000), shoe, cm, rng))
    assert abs(w.mean() - z) < 3 * w.std() / math.sqrt(len(w))


def test_vector_and_scalar_routes_agree():
    rng = np.random.default_rng(5)
    th, shoe, cm = random_tiny_instance(rng)
    th = th.replace(q=4.0)
    a = np.exp(scalar_weights(th, shoe, cm, rng, 20_000))
    b = np.exp(heldout_log_weights(draws_of([th] * 20_000), shoe, cm, rng))
    se = math.hypot(a.std() / math.sqrt(len(a)), b.std() / math.sqrt(len(b)))
    assert abs(a.mean() - b.mean()) < 3 * se
    # without scores both routes are deterministic and exact
    a = scalar_weights(th, shoe, cm, rng, 3, NO_SCORES)
    b = heldout_log_weights(draws_of([th] * 3, NO_SCORES), shoe, cm, rng, NO_SCORES)
    np.testing.assert_allclose(a, b, rtol=1e-12)
    assert a[0] == pytest.approx(math.log(marginal_bruteforce_Z(th, shoe, cm, NO_SCORES)), abs=1e-8)


def test_tie_ranks_rebuild_gamma_ratio():
    cells = np.array([[5, 2, 5, 5, 2, 9]])
    q = 0.7
    lhs = np.log(q + _tie_ranks(cells)).sum()
    # counts 3, 2, 1 at cells 5, 2, 9
    rhs = sum(math.lgamma(q + c) - math.lgamma(q) for c in (3, 2, 1))
    assert lhs == pytest.approx(rhs)


# --- posterior-averaged density -----------------------------------------------------

def test_duplicated_and_permuted_draws_leave_the_estimate_unchanged():
    rng = np.random.default_rng(6)
    _, shoe, cm = random_tiny_instance(rng)
    thetas = [sample_prior(rng, PriorConfig(), cm) for _ in range(12)]
    one = heldout_density(draws_of(thetas, NO_SCORES), shoe, cm, rng, NO_SCORES)
    two = heldout_density(draws_of(thetas * 2, NO_SCORES), shoe, cm, rng, NO_SCORES)
    perm = heldout_density(draws_of(thetas[::-1], NO_SCORES), shoe, cm, rng, NO_SCORES)
    assert two.estimate_log == pytest.approx(one.estimate_log, abs=1e-12)
    assert perm.estimate_log == pytest.approx(one.estimate_log, abs=1e-12)


def test_nested_oracle_over_prior_draws():
    """Draws from a prior concentrated on large q stand in for a posterior;
    the estimate must match the average exhaustive marginal."""
    rng = np.random.default_rng(7)
    _, shoe, cm = random_tiny_instance(rng)
    prior = PriorConfig(q_shape=40.0, q_rate=8.0)
    thetas = [sample_prior(rng, prior, cm) for _ in range(50)]
    exact = np.mean([marginal_bruteforce_Z(t, shoe, cm) for t in thetas])
    lw = heldout_log_weights(draws_of(thetas * 2000), shoe, cm, rng)
    w = np.exp(lw)
    assert abs(w.mean() - exact) < 3 * w.std() / math.sqrt(len(w))
    r = heldout_density(draws_of(thetas * 200), shoe, cm, rng)
    assert r.N == shoe.n and r.metric == pytest.approx(20000 * math.exp(r.estimate_log / shoe.n))


def test_empty_shoe_has_unit_density():
    cm = tiny_coarse_map(4)
    shoe = Shoe(ones_surface(cm), np.zeros((0, 2)), "none")
    r = heldout_density(draws_of([sample_prior(np.random.default_rng(8), PriorConfig(), cm)] * 20), shoe, cm,
                        np.random.default_rng(8))
    assert r.estimate == 1.0 and math.isnan(r.metric)


# --- metrics and ESS ---------------------------------------------------------------

def test_metric_of_uniform_density():
    for N in (1, 7, 40):
        assert per_accidental_metric((1 / 11475) ** N, N) == pytest.approx(UNIFORM_METRIC_11475, rel=1e-9)
    assert round(UNIFORM_METRIC_11475, 3) == 1.743
    with pytest.raises(ValueError):
        per_accidental_metric(-1.0, 3)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.integers(1, 20000))
def test_metric_scale_consistency(N, A):
    assert per_accidental_metric_log(-N * math.log(A), N) == pytest.approx(20000 / A, rel=1e-9)


def test_geo_mean():
    assert geo_mean_metric([2.5, 2.5, 2.5]) == pytest.approx(2.5)
    assert geo_mean_metric([1.0, 4.0]) == pytest.approx(2.0)
    assert geo_mean_metric([3.0, 0.0, 4.0]) == 0.0
    assert geo_mean_metric([2.0, float("nan"), 8.0]) == pytest.approx(4.0)
    assert math.isnan(geo_mean_metric([]))


def test_ess_white_noise_ar1_and_constant():
    rng = np.random.default_rng(9)
    L = 20_000
    assert abs(chain_ess(rng.standard_normal(L)) - L) < 0.1 * L
    rho = 0.9
    e = rng.standard_normal(L)
    x = np.empty(L)
    x[0] = e[0] / math.sqrt(1 - rho ** 2)
    for t in range(1, L):
        x[t] = rho * x[t - 1] + e[t]
    target = L * (1 - rho) / (1 + rho)
    assert abs(chain_ess(x) - target) < 0.2 * target
    assert chain_ess(np.full(500, 3.0)) == 500
    with pytest.raises(ValueError):
        chain_ess([1.0, 2.0])
