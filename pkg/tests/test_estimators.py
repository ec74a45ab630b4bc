import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from oracles import UNIFORM_METRIC_11475
from soleprint import AccidentalModel, ContactModel, KDEModel, UniformModel
from soleprint.core import Shoe
from soleprint.estimators import check_shoes
from soleprint.generative import SimConfig, simulate_dataset
from soleprint.toy import tiny_coarse_map


@pytest.fixture(scope="module")
def shoes():
    return simulate_dataset(SimConfig(n_shoes=8, median_count=5, confine_to_active=True), seed=1).shoes


def test_check_shoes_rejects_bad_input(shoes, default_cm):
    with pytest.raises(TypeError):
        check_shoes(shoes[0])
    with pytest.raises(TypeError):
        check_shoes([shoes[0], "x"])
    with pytest.raises(ValueError):
        check_shoes([])
    assert check_shoes([], allow_empty=True) == []
    small = tiny_coarse_map(4)
    with pytest.raises(ValueError, match="mask shape"):
        check_shoes(shoes, small)


def test_uniform_model(shoes):
    m = UniformModel().fit(shoes)
    np.testing.assert_allclose([v for v, s in zip(m.metric_samples(shoes), shoes) if s.n],
                               UNIFORM_METRIC_11475, rtol=1e-12)
    assert m.score(shoes) == pytest.approx(UNIFORM_METRIC_11475)


def test_kde_and_contact_models(shoes):
    kde = KDEModel().fit(shoes[:6])
    assert kde.score_samples(shoes[6:]).shape == (2,)
    tight = KDEModel(restrict_to_active=True).fit(shoes[:6])
    assert (tight.score_samples(shoes[:6]) >= kde.score_samples(shoes[:6])).all()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        con = ContactModel().fit(shoes[:6])
    assert con.info_["grad_norm"] < 1e-6
    assert np.isfinite(con.score_samples(shoes[6:])).all()


def test_unfitted_raises(shoes):
    with pytest.raises(NotFittedError):
        KDEModel().score_samples(shoes)


def test_clone_and_params():
    m = AccidentalModel(n_sweeps=20, warmup=5, variant="no-phi", random_state=3)
    c = clone(m)
    assert c.get_params() == m.get_params()
    assert c is not m


def test_accidental_model_fit_and_score(shoes):
    m = AccidentalModel(n_sweeps=20, warmup=5, random_state=0).fit(shoes[:6])
    assert len(m.draws_) == 15
    lp = m.score_samples(shoes[6:])
    assert np.isfinite(lp).all()
    again = AccidentalModel(n_sweeps=20, warmup=5, random_state=0).fit(shoes[:6])
    np.testing.assert_array_equal(again.score_samples(shoes[6:]), lp)
    empty = Shoe(shoes[0].surface, np.zeros((0, 2)), "empty")
    assert m.score_samples([empty])[0] == 0.0
    assert np.isnan(m.metric_samples([empty])[0])


def test_no_phi_model_keeps_phi_fixed(shoes):
    m = AccidentalModel(n_sweeps=6, warmup=1, variant="no-phi", random_state=0).fit(shoes[:4])
    assert (m.draws_.phi == 1.0).all()
