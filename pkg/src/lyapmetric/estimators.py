"""Estimator-style wrappers around the oracle and the metric descent.

The input ``X`` of :meth:`fit` is a torus system rather than a data matrix.
The wrappers follow the scikit-learn conventions for constructor
parameters, ``get_params``/``set_params``, trailing-underscore fitted
attributes and ``check_is_fitted``.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dynamics import TorusSystem, invariant_weights
from .metric_field import MetricField, flat_metric
from .objective import evaluate_objective
from .optimizer import OptimizerConfig, resolve_k_weights, descend
from .oracle import lyapunov_vector

__all__ = ["LyapunovOracle", "MetricDescent", "check_system", "check_metric"]


def check_system(system):
    """Validate that ``system`` is a torus system."""
    if not isinstance(system, TorusSystem):
        raise TypeError(f"expected a TorusSystem, got {type(system).__name__}")
    return system


def check_metric(g, n, d):
    """Validate that ``g`` is a metric field on the ``(n, d)`` grid."""
    if not isinstance(g, MetricField):
        raise TypeError(f"expected a MetricField, got {type(g).__name__}")
    if g.n != n or g.d != d:
        raise ValueError(f"metric lives on (n={g.n}, d={g.d}), expected (n={n}, d={d})")
    return g


def _weights(system, resolution, measure, seed):
    if measure == "lebesgue":
        return invariant_weights(system, resolution)
    return invariant_weights(system, resolution, mode="birkhoff", seed=seed)


class LyapunovOracle(BaseEstimator):
    """QR estimate of the averaged Lyapunov vector.

    Parameters
    ----------
    n_steps : int
    samples : int
    transient : int
    resolution : int
        Grid used for the sampling measure.
    measure : {"lebesgue", "birkhoff"}
    seed : int

    Attributes
    ----------
    lambda_ : ndarray of shape (d,)
    estimate_ : LyapunovEstimate
    """

    def __init__(self, n_steps=10_000, samples=64, transient=100, resolution=16, measure="lebesgue", seed=0):
        self.n_steps = n_steps
        self.samples = samples
        self.transient = transient
        self.resolution = resolution
        self.measure = measure
        self.seed = seed

    def fit(self, X, y=None):
        system = check_system(X)
        w = _weights(system, self.resolution, self.measure, self.seed)
        self.estimate_ = lyapunov_vector(system, w, self.n_steps, self.samples, self.seed, self.transient)
        self.lambda_ = self.estimate_.lambda_
        return self

    def predict(self, X=None):
        check_is_fitted(self, "lambda_")
        return self.lambda_.copy()


class MetricDescent(BaseEstimator):
    """Minimize a scalarization of the averaged singular-value objective.

    Parameters
    ----------
    resolution : int
        Grid resolution per axis.
    k_weights : sequence of float or {"top", "all"}
    max_iters, step_init, armijo_c, armijo_shrink, grad_tol, gap_margin
        Passed to :class:`OptimizerConfig`.
    measure : {"lebesgue", "birkhoff"}
    seed : int

    Attributes
    ----------
    metric_ : MetricField
    trace_ : OptimizationTrace
    weights_ : MeasureWeights
    report_ : ObjectiveReport
    n_iter_ : int
    """

    def __init__(
        self,
        resolution=16,
        k_weights="top",
        max_iters=500,
        step_init=1.0,
        armijo_c=1e-4,
        armijo_shrink=0.5,
        grad_tol=1e-8,
        gap_margin=1e-6,
        measure="lebesgue",
        seed=0,
    ):
        self.resolution = resolution
        self.k_weights = k_weights
        self.max_iters = max_iters
        self.step_init = step_init
        self.armijo_c = armijo_c
        self.armijo_shrink = armijo_shrink
        self.grad_tol = grad_tol
        self.gap_margin = gap_margin
        self.measure = measure
        self.seed = seed

    def _config(self):
        return OptimizerConfig(
            k_weights=self.k_weights,
            max_iters=self.max_iters,
            step_init=self.step_init,
            armijo_c=self.armijo_c,
            armijo_shrink=self.armijo_shrink,
            grad_tol=self.grad_tol,
            gap_margin=self.gap_margin,
            seed=self.seed,
        )

    def fit(self, X, y=None, init=None, oracle=None):
        """Run the descent on system ``X`` from ``init`` (flat by default)."""
        system = check_system(X)
        self.weights_ = _weights(system, self.resolution, self.measure, self.seed)
        g0 = flat_metric(self.resolution, system.dim) if init is None else check_metric(init, self.resolution, system.dim)
        self.metric_, self.trace_ = descend(system, g0, self.weights_, self._config(), oracle)
        self.report_ = evaluate_objective(system, self.metric_, self.weights_, oracle)
        self.n_iter_ = self.trace_.iterations
        return self

    def transform(self, X):
        """Per-cell log singular values of ``df`` in the fitted metric."""
        check_is_fitted(self, "metric_")
        return evaluate_objective(check_system(X), self.metric_, self.weights_, keep_cells=True).per_cell_sigma

    def score(self, X, y=None):
        """Negative scalarized objective of the fitted metric (higher is better)."""
        check_is_fitted(self, "metric_")
        s = evaluate_objective(check_system(X), self.metric_, self.weights_).s_partial
        return -float(np.dot(resolve_k_weights(self.k_weights, s.size), s))
