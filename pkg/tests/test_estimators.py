import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from lyapmetric import CAT_MAP, ToralAutomorphism
from lyapmetric import metric_field as mf
from lyapmetric.estimators import LyapunovOracle, MetricDescent

B_MAP = ToralAutomorphism([[2, 3], [1, 2]])


def test_params_round_trip():
    est = MetricDescent(resolution=8, max_iters=10)
    params = est.get_params()
    assert params["resolution"] == 8 and params["max_iters"] == 10
    other = clone(est).set_params(grad_tol=1e-6)
    assert other.grad_tol == 1e-6 and est.grad_tol == 1e-8


def test_oracle_fit_predict():
    o = LyapunovOracle(n_steps=1000, samples=4).fit(CAT_MAP)
    gold = np.log((3 + np.sqrt(5)) / 2)
    np.testing.assert_allclose(o.predict(), [gold, -gold], atol=1e-8)


def test_descent_fit():
    o = LyapunovOracle(n_steps=500, samples=2, resolution=8).fit(B_MAP)
    est = MetricDescent(resolution=8).fit(B_MAP, oracle=o.estimate_)
    assert est.report_.gap_to_oracle[0] < 1e-3
    assert est.n_iter_ == est.trace_.iterations
    assert est.transform(B_MAP).shape == (64, 2)
    assert est.score(B_MAP) == pytest.approx(-est.report_.s_partial[0])


def test_descent_init_checked():
    with pytest.raises(ValueError):
        MetricDescent(resolution=8).fit(B_MAP, init=mf.flat_metric(4))


def test_not_fitted_and_bad_input():
    with pytest.raises(NotFittedError):
        MetricDescent().transform(B_MAP)
    with pytest.raises(TypeError):
        MetricDescent().fit(np.zeros((3, 2)))
