"""Averaged singular-value objective over metric fields and its structure checks."""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import spd
from .metric_field import (
    _check_grids,
    _check_weights,
    _stencil,
    grid_map,
    l2_distance,
    pullback_iterate,
)
from .tolerances import DEFAULT_TOLERANCES

__all__ = [
    "ObjectiveReport",
    "cell_sigmas",
    "sigma_at",
    "sigma_iterate",
    "evaluate_objective",
    "scaling_invariance_check",
    "convexity_violation",
    "midpoint_convexity_check",
    "lipschitz_check",
    "entropy_estimate",
    "lower_bound_holds",
    "sandwich_check",
    "format_float",
]


def format_float(v):
    """Locale-free text with 17 significant digits."""
    return format(float(v), ".17g")


def _sigmas_from_logs(log_x, log_image, jac):
    """``sigma(G_fx^{1/2} A G_x^{-1/2})`` from logarithms, nonincreasing.

    Uses ``B^T B = G_x^{-1/2} (A^T G_fx A) G_x^{-1/2}`` so that only
    log-domain congruences are needed.
    """
    rel = spd.log_relative(log_x, spd.log_congruence(jac, log_image))
    return 0.5 * np.linalg.eigvalsh(rel)[..., ::-1]


def cell_sigmas(system, g):
    """Per-cell ``sigma^g(df_x)`` at the grid sample points, shape ``(cells, d)``."""
    gm = grid_map(system, g.n)
    return _sigmas_from_logs(g.logs, gm.image_logs(g.logs), gm.jac)


def sigma_iterate(system, g, N):
    """Per-cell ``sigma^g(df^N_x)``, computed without forming ``df^N``."""
    pulled = pullback_iterate(system, g, N)
    return 0.5 * np.linalg.eigvalsh(spd.log_relative(g.logs, pulled.logs))[..., ::-1]


def sigma_at(system, g, x):
    """Log singular values of ``df_x`` measured in ``g``, at arbitrary points.

    Parameters
    ----------
    system : TorusSystem
    g : MetricField
    x : ndarray, shape (..., d)

    Returns
    -------
    ndarray, shape (..., d)
    """
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, g.d)
    off = system.grid_offset
    ix, wx = _stencil(flat, g.n, off)
    iy, wy = _stencil(system.apply(flat), g.n, off)
    lx = np.einsum("pm,pmij->pij", wx, g.logs[ix])
    ly = np.einsum("pm,pmij->pij", wy, g.logs[iy])
    return _sigmas_from_logs(lx, ly, system.jacobian(flat)).reshape(x.shape)


@dataclass(frozen=True)
class ObjectiveReport:
    """Value of the averaged objective at one metric field.

    Attributes
    ----------
    svec : ndarray, shape (d,)
        Weighted average of the per-cell log singular values.
    s_partial : ndarray, shape (d,)
        Prefix sums of ``svec``.
    gap_to_oracle : ndarray or None
        ``s_partial`` minus the prefix sums of the oracle exponents.
    per_cell_sigma : ndarray or None
        Per-cell values, kept on request.
    """

    svec: np.ndarray
    s_partial: np.ndarray
    gap_to_oracle: np.ndarray = None
    per_cell_sigma: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        out = {
            "svec": [float(v) for v in self.svec],
            "s_partial": [float(v) for v in self.s_partial],
        }
        if self.gap_to_oracle is not None:
            out["gap_to_oracle"] = [float(v) for v in self.gap_to_oracle]
        return out

    def to_json(self):
        return json.dumps(self.to_dict())

    def to_csv(self):
        d = self.s_partial.size
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"s_{i + 1}" for i in range(d)] + [f"gap_{i + 1}" for i in range(d)])
        gaps = self.gap_to_oracle if self.gap_to_oracle is not None else [float("nan")] * d
        w.writerow([format_float(v) for v in self.s_partial] + [format_float(v) for v in gaps])
        return buf.getvalue()


def evaluate_objective(system, g, weights, oracle=None, keep_cells=False):
    """Averaged objective of ``g`` with partial sums and oracle gaps.

    Parameters
    ----------
    system : TorusSystem
    g : MetricField
    weights : MeasureWeights
    oracle : LyapunovEstimate, optional
        When given, ``gap_to_oracle`` holds the partial-sum differences.
    keep_cells : bool
        Keep the per-cell values in the report.

    Returns
    -------
    ObjectiveReport
    """
    _check_weights(g, weights)
    sig = cell_sigmas(system, g)
    svec = weights.weights @ sig
    s_partial = np.cumsum(svec)
    gap = None
    if oracle is not None:
        gap = s_partial - np.cumsum(oracle.lambda_)
    return ObjectiveReport(svec, s_partial, gap, sig if keep_cells else None)


def scaling_invariance_check(system, g, weights, gamma):
    """Largest change of any ``s_k`` when ``g`` is multiplied by ``gamma``.

    ``gamma`` is a positive scalar or a positive value per cell. The scaled
    field leaves the det-1 class, so it is handled as raw logarithms.
    """
    _check_weights(g, weights)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (g.n_cells,))
    if np.any(gamma <= 0):
        raise ValueError("gamma must be positive")
    gm = grid_map(system, g.n)
    scaled = g.logs + np.log(gamma)[:, None, None] * np.eye(g.d)
    base = weights.weights @ _sigmas_from_logs(g.logs, gm.image_logs(g.logs), gm.jac)
    new = weights.weights @ _sigmas_from_logs(scaled, gm.image_logs(scaled), gm.jac)
    return float(np.max(np.abs(np.cumsum(new) - np.cumsum(base))))


def convexity_violation(system, g_a, g_b, weights, ts=(0.5,)):
    """Largest breach of geodesic cone-convexity between two fields.

    For each ``t`` the field ``g_t`` on the geodesic from ``g_a`` to ``g_b``
    is compared with ``(1 - t) sigma^{g_a} + t sigma^{g_b}`` in the
    majorization order, per cell and after integration. Returns the largest
    positive partial-sum excess (zero means no breach).
    """
    _check_grids(g_a, g_b)
    _check_weights(g_a, weights)
    gm = grid_map(system, g_a.n)
    sa = cell_sigmas(system, g_a)
    sb = cell_sigmas(system, g_b)
    direction = spd.log_relative(g_a.logs, g_b.logs)
    worst = 0.0
    for t in ts:
        lt = spd.log_exp_at(g_a.logs, direction, t)
        lt = spd.remove_trace(lt)
        st = _sigmas_from_logs(lt, gm.image_logs(lt), gm.jac)
        rhs = (1.0 - t) * sa + t * sb
        for lhs_v, rhs_v in ((st, rhs), (weights.weights @ st, weights.weights @ rhs)):
            pl, pr = np.cumsum(lhs_v, axis=-1), np.cumsum(rhs_v, axis=-1)
            excess = max(
                float(np.max(pl[..., :-1] - pr[..., :-1], initial=0.0)),
                float(np.max(np.abs(pl[..., -1] - pr[..., -1]))),
            )
            worst = max(worst, excess)
    return worst


def midpoint_convexity_check(system, g_a, g_b, weights, ts=(0.5,), atol=None):
    """True when cone-convexity holds at every ``t`` in ``ts`` within ``atol``."""
    atol = DEFAULT_TOLERANCES.convexity if atol is None else atol
    return convexity_violation(system, g_a, g_b, weights, ts) <= atol


def lipschitz_check(system, g1, g2, weights, k):
    """Return ``(|s_k(g1) - s_k(g2)|, sqrt(k) * L2 distance)``."""
    if not 1 <= k <= g1.d:
        raise ValueError(f"k must lie in 1..{g1.d}")
    s1 = evaluate_objective(system, g1, weights).s_partial[k - 1]
    s2 = evaluate_objective(system, g2, weights).s_partial[k - 1]
    return float(abs(s1 - s2)), float(np.sqrt(k) * l2_distance(g1, g2, weights))


def entropy_estimate(system, g, weights, oracle, threshold=None):
    """Upper bound ``s_k(g)`` on the entropy, ``k`` = number of positive exponents.

    Returns 0 when the oracle reports no positive exponent.
    """
    threshold = DEFAULT_TOLERANCES.positive_exponent if threshold is None else threshold
    k = int(np.sum(np.asarray(oracle.lambda_) > threshold))
    if k == 0:
        return 0.0
    return float(evaluate_objective(system, g, weights).s_partial[k - 1])


def lower_bound_holds(oracle, report, slack=None):
    """Whether the oracle vector is majorized by the objective value."""
    slack = DEFAULT_TOLERANCES.lower_bound if slack is None else slack
    return spd.majorize_leq(oracle.lambda_, report.svec, weak=False, atol=slack)


def sandwich_check(a, b, eps, atol=1e-9):
    """Sup-norm consequence of ``a <=_w b <=_w a + eps``.

    Returns None when the premises fail, otherwise whether
    ``max |a - b| <= d * eps + atol``.

    Notes
    -----
    The factor ``d`` cannot be dropped: ``a = (1, 0)``, ``b = (1, 2 eps)``
    satisfies both premises with ``max |a - b| = 2 eps``. Writing ``D_k``
    for the partial sums of ``b - a``, the premises give
    ``0 <= D_k <= k eps``, hence ``|b_k - a_k| <= k eps``.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if not (spd.majorize_leq(a, b, weak=True) and spd.majorize_leq(b, a + eps, weak=True)):
        return None
    return bool(np.max(np.abs(a - b)) <= a.shape[-1] * eps + atol)
