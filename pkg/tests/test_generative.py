import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import K00_P0
from soleprint.core import FULL, VARIANTS, DegenerateModelError, GlobalParams, PriorConfig, Shoe
from soleprint.generative import (IntensityField, SimConfig, expand_w, lambda_field, mu_weights,
                                  sample_accidentals, sample_prior, sample_scores, shoe_intensity,
                                  simulate_dataset)
from soleprint.grid import CoarseMap, ContactSurface, Kernel, KernelParams, kernel_from_params
from soleprint.toy import random_surface, tiny_coarse_map

P0 = KernelParams(np.zeros(4), np.zeros(4))


def flat_theta(R, q=1.0, w=None, phi=1.0, kp=P0):
    return GlobalParams(q, np.ones(R) if w is None else w, np.full(32, phi), kp)


def four_cells():
    cm = tiny_coarse_map(4, size=10)
    return cm, ContactSurface(np.ones(cm.shape, dtype=np.uint8))


# --- prior ---------------------------------------------------------------------

def test_prior_draw_contract(default_cm):
    th = sample_prior(np.random.default_rng(0), PriorConfig(), default_cm)
    assert th.q > 0
    assert th.w_E.shape == (138,) and (th.w_E > 0).all()
    assert th.phi.shape == (32,) and th.phi.min() >= 0 and th.phi.max() <= 1


def test_prior_moments():
    cm = tiny_coarse_map(4)
    rng = np.random.default_rng(1)
    n = 100_000
    draws = [sample_prior(rng, PriorConfig(), cm) for _ in range(n)]
    q = np.array([d.q for d in draws])
    p = np.array([d.kparams.p_h[0] for d in draws])
    assert abs(q.mean() - 1.0) < 3 * q.std() / np.sqrt(n)
    # variance of a normal sample variance: 2 sigma^4 / (n - 1)
    assert abs(p.var() - 4.0) < 3 * np.sqrt(2 * 16 / (n - 1))


# --- weights and intensities ---------------------------------------------------

def test_expand_w_on_and_off_active(default_cm):
    w = expand_w(np.ones(138), default_cm)
    assert (w[default_cm.active] == 1).all() and (w[~default_cm.active] == 0).all()
    w_E = np.random.default_rng(2).gamma(1.0, 1.0, 138)
    np.testing.assert_allclose(expand_w(3 * w_E, default_cm), 3 * expand_w(w_E, default_cm))
    w = expand_w(w_E, default_cm)
    for r in (1, 50, 138):
        assert np.unique(w[default_cm.region_of == r]).size == 1


def test_mu_uniform_and_weighted():
    cm, surf = four_cells()
    nu = cm.active.astype(float)
    mu = mu_weights(flat_theta(4), nu, surf, cm)
    np.testing.assert_allclose(mu[cm.active], 0.25)
    mu = mu_weights(flat_theta(4, w=np.array([1.0, 1.0, 2.0, 2.0])), nu, surf, cm)
    np.testing.assert_allclose([mu[cm.region_of == r][0] for r in (1, 2, 3, 4)], [1 / 6, 1 / 6, 1 / 3, 1 / 3])


def test_mu_all_zero_is_degenerate():
    cm, surf = four_cells()
    with pytest.raises(DegenerateModelError):
        mu_weights(flat_theta(4, phi=0.0), cm.active.astype(float), surf, cm)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0.01, 100))
def test_mu_normalization_invariances(seed, a, b, c):
    rng = np.random.default_rng(seed)
    cm = tiny_coarse_map(6, size=10)
    surf = random_surface(rng, cm.shape)
    th = sample_prior(rng, PriorConfig(phi_upper=1.0), cm)
    nu = sample_scores(rng, th.q, cm)
    mu = mu_weights(th, nu, surf, cm)
    assert mu.sum() == pytest.approx(1.0, abs=1e-10)
    scaled = GlobalParams(th.q, th.w_E * b, np.clip(th.phi * min(a, 1.0), 0, 1), th.kparams)
    np.testing.assert_allclose(mu_weights(scaled, nu * c, surf, cm), mu, atol=1e-12)


def test_lambda_single_atom_and_identity():
    mu = np.zeros((20, 20))
    mu[10, 10] = 1.0
    L = lambda_field(mu, kernel_from_params(P0))
    assert L.grid[10, 10] == pytest.approx(K00_P0, abs=1e-6)
    assert L.lam.sum() == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(3)
    mu = rng.random((20, 20))
    mu /= mu.sum()
    np.testing.assert_array_equal(lambda_field(mu, Kernel.identity()).grid, mu)
    assert lambda_field(mu, Kernel.identity()).mass_off_grid == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lambda_conserves_mass(seed):
    rng = np.random.default_rng(seed)
    mu = rng.random((12, 15)) * (rng.random((12, 15)) < 0.3)
    mu[0, 0] += 1e-3
    mu /= mu.sum()
    k = kernel_from_params(KernelParams(rng.normal(0, 2, 4), rng.normal(0, 2, 4)))
    assert lambda_field(mu, k).lam.sum() == pytest.approx(1.0, abs=1e-10)


def test_no_kernel_variant_lambda_equals_mu():
    cm, surf = four_cells()
    th = flat_theta(4, q=1.0)
    rng = np.random.default_rng(4)
    L = shoe_intensity(th, surf, cm, rng, VARIANTS["no-scores-kernel"])
    np.testing.assert_array_equal(L.grid, mu_weights(th, cm.active.astype(float), surf, cm))


def test_score_variability_falls_with_q():
    """Across shoes, the spread of mu at a fixed cell shrinks as q grows."""
    cm, surf = four_cells()
    cell = np.argwhere(cm.active)[0]
    cvs = []
    for q in (0.5, 2.0, 8.0):
        rng = np.random.default_rng(5)
        th = flat_theta(4, q=q)
        v = np.array([mu_weights(th, sample_scores(rng, q, cm), surf, cm)[tuple(cell)] for _ in range(10_000)])
        cvs.append(v.std() / v.mean())
    assert cvs[0] > cvs[1] > cvs[2]


# --- sampling accidentals -------------------------------------------------------

def test_sample_accidentals_edge_cases():
    rng = np.random.default_rng(6)
    lam = np.zeros((106, 206))
    lam[3 + 49, 3 + 99] = 1.0
    L = IntensityField(lam)
    assert sample_accidentals(L, 0, rng).shape == (0, 2)
    x = sample_accidentals(L, 500, rng)
    assert (x[:, 0] > 49).all() and (x[:, 0] <= 50).all()
    assert (x[:, 1] > 99).all() and (x[:, 1] <= 100).all()


def test_sample_accidentals_two_cell_frequencies():
    rng = np.random.default_rng(7)
    lam = np.zeros((7, 8))
    lam[3, 3], lam[3, 4] = 0.3, 0.7
    n = 1_000_000
    x = sample_accidentals(IntensityField(lam), n, rng)
    frac = (np.ceil(x[:, 1]) == 2).mean()
    assert abs(frac - 0.7) < 3 * np.sqrt(0.21 / n)


# --- datasets ------------------------------------------------------------------

def test_shared_mask_gives_distinct_draws():
    ds = simulate_dataset(SimConfig(n_shoes=8, counts=10, shared_mask=True), seed=8)
    assert all((s.surface.bits == ds.shoes[0].surface.bits).all() for s in ds.shoes)
    pts = [tuple(map(tuple, s.points)) for s in ds.shoes]
    assert len(set(pts)) == 8


def test_simulation_determinism_and_counts():
    cfg = SimConfig(n_shoes=5, counts=[20, 0, 3, 7, 1])
    a = simulate_dataset(cfg, seed=9)
    b = simulate_dataset(cfg, seed=9)
    assert [s.n for s in a.shoes] == [20, 0, 3, 7, 1]
    for s, t in zip(a.shoes, b.shoes):
        np.testing.assert_array_equal(s.points, t.points)
        np.testing.assert_array_equal(s.surface.bits, t.surface.bits)
    with pytest.raises(ValueError):
        simulate_dataset(SimConfig(n_shoes=2, counts=[1, 2, 3]), seed=0)


def test_default_simulation_median_count():
    ds = simulate_dataset(SimConfig(n_shoes=386, median_count=20), seed=10)
    n = np.array([s.n for s in ds.shoes])
    assert len(n) == 386
    assert 15 <= np.median(n) <= 25


def test_confined_simulation_stays_on_active(default_cm):
    ds = simulate_dataset(SimConfig(n_shoes=10, counts=30, confine_to_active=True), seed=11)
    for s in ds.shoes:
        c = s.cells
        assert default_cm.active[c[:, 0], c[:, 1]].all()


def test_shoe_rejects_points_off_grid():
    surf = ContactSurface(np.zeros((5, 5), dtype=np.uint8))
    with pytest.raises(ValueError):
        Shoe(surf, [[5.5, 1.0]])
    assert Shoe(surf, [[0.0, 0.0]]).cells.tolist() == [[0, 0]]
