"""Reference Lyapunov exponents by the discrete QR method."""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import invariant_weights

__all__ = ["LyapunovEstimate", "lyapunov_vector", "det_growth_check"]


@dataclass(frozen=True)
class LyapunovEstimate:
    """Averaged Lyapunov vector with dispersion diagnostics.

    Attributes
    ----------
    lambda_ : ndarray, shape (d,)
        Nonincreasing exponents in nats per iteration.
    n_steps : int
        Counted iterations per sample orbit.
    per_point_spread : float
        Largest deviation of any sample's exponents from the average.
    doubling_delta : float
        Largest change of the average between ``n_steps // 2`` and
        ``n_steps`` iterations, a rough finite-time bias indicator.
    samples : ndarray, shape (samples, d)
        Per-sample exponents.
    """

    lambda_: np.ndarray
    n_steps: int
    per_point_spread: float
    doubling_delta: float
    samples: np.ndarray = field(repr=False)
    seed: int = 0
    transient: int = 0

    @property
    def dim(self):
        return self.lambda_.size

    def to_dict(self):
        return {
            "lambda": [float(v) for v in self.lambda_],
            "n_steps": int(self.n_steps),
            "samples": int(self.samples.shape[0]),
            "per_point_spread": float(self.per_point_spread),
            "doubling_delta": float(self.doubling_delta),
            "seed": int(self.seed),
            "transient": int(self.transient),
        }


def _draw_points(system, weights, samples, rng):
    """Draw points by the cell weights, uniform inside cells.

    Cells are chosen by systematic sampling: one random offset, then evenly
    spaced quantiles of the cumulative weights. Every cell keeps inclusion
    probability proportional to its weight, and the draws spread across
    the torus, which lowers the variance on systems with mixed phase space.
    """
    n, d = weights.n, system.dim
    cdf = np.cumsum(weights.weights)
    u = (rng.random() + np.arange(samples)) / samples * cdf[-1]
    cells = np.minimum(np.searchsorted(cdf, u, side="right"), weights.n_cells - 1)
    corner = np.stack(np.unravel_index(cells, (n,) * d), axis=-1)
    return (corner + rng.random((samples, d))) / n


def _random_frames(rng, samples, d):
    q, r = np.linalg.qr(rng.standard_normal((samples, d, d)))
    return q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[..., None, :]


def lyapunov_vector(system, weights=None, n_steps=10_000, samples=64, seed=0, transient=100):
    """Estimate the averaged Lyapunov vector of ``system``.

    Each sample orbit starts at a point drawn from ``weights`` with a random
    orthonormal frame. The frame is pushed forward by the Jacobian and
    re-orthonormalized by QR every step. The logs of ``|R_ii|`` are summed
    after a transient that aligns the frame with the Oseledets filtration.

    Parameters
    ----------
    system : TorusSystem
    weights : MeasureWeights, optional
        Sampling measure. Defaults to Lebesgue weights on a 16-grid.
    n_steps : int
        Counted iterations per orbit.
    samples : int
        Number of orbits.
    seed : int
        Seed for starting points and frames.
    transient : int
        Discarded iterations before counting starts.

    Returns
    -------
    LyapunovEstimate
    """
    if n_steps < 1 or samples < 1:
        raise ValueError("n_steps and samples must be >= 1")
    if transient < 0:
        raise ValueError("transient must be >= 0")
    d = system.dim
    if weights is None:
        weights = invariant_weights(system, 16)
    rng = np.random.default_rng(seed)
    x = _draw_points(system, weights, samples, rng)
    q = _random_frames(rng, samples, d)
    acc = np.zeros((samples, d))
    half = None
    for i in range(transient + n_steps):
        q, r = np.linalg.qr(system.jacobian(x) @ q)
        x = system.apply(x)
        if i >= transient:
            acc += np.log(np.abs(np.diagonal(r, axis1=-2, axis2=-1)))
            if i - transient + 1 == n_steps // 2:
                half = acc.copy()
    per_sample = -np.sort(-acc / n_steps, axis=-1)
    lam = per_sample.mean(axis=0)
    if half is not None and n_steps >= 2:
        half_lam = (-np.sort(-half / (n_steps // 2), axis=-1)).mean(axis=0)
        delta = float(np.max(np.abs(lam - half_lam)))
    else:
        delta = float("nan")
    return LyapunovEstimate(
        lambda_=lam,
        n_steps=int(n_steps),
        per_point_spread=float(np.max(np.abs(per_sample - lam))),
        doubling_delta=delta,
        samples=per_sample,
        seed=int(seed),
        transient=int(transient),
    )


def det_growth_check(system, weights=None, n_steps=10_000, samples=64, seed=0):
    """Average of ``(1/n) log|det df^n_x|`` over sample points.

    The product determinant is accumulated as a sum of logs, so long orbits
    do not overflow.
    """
    if n_steps < 1 or samples < 1:
        raise ValueError("n_steps and samples must be >= 1")
    if weights is None:
        weights = invariant_weights(system, 16)
    rng = np.random.default_rng(seed)
    x = _draw_points(system, weights, samples, rng)
    acc = np.zeros(samples)
    for _ in range(n_steps):
        acc += np.linalg.slogdet(system.jacobian(x))[1]
        x = system.apply(x)
    return float(np.mean(acc / n_steps))

