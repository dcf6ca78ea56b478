"""Geodesic descent on det-1 metric fields.

The gradient of ``s_k`` at a field ``g`` is assembled per cell from the
top-``k`` singular subspaces of ``B_x = G_{f(x)}^{1/2} A_x G_x^{-1/2}``:

``Gamma_x = c * (Q^l_x - Q^r_x)``, with ``Q^r_x = G_x^{1/2} V V^T G_x^{1/2}``
and ``Q^l`` the analogous projection built from the left singular vectors
at ``f(x)``, moved back to the cell of ``f(x)``. The constant
``c = GRADIENT_SCALE = 1/2`` comes from ``d log a = d(a^2) / (2 a^2)``; it
is pinned by a finite-difference test.

When ``f(x)`` is not a grid point the field is interpolated there, and the
gradient includes the exact adjoint of the log-Euclidean interpolation
(Frechet derivatives of the matrix exponential and logarithm). On exact
grids this reduces to the plain projection difference.
"""

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import spd
from .exceptions import LineSearchStall, SpectralGapViolated
from .metric_field import MetricField, _check_weights, grid_map
from .objective import _sigmas_from_logs, format_float
from .tolerances import DEFAULT_TOLERANCES

__all__ = [
    "GRADIENT_SCALE",
    "GradientField",
    "OptimizerConfig",
    "OptimizationTrace",
    "gradient_field",
    "scalarized_gradient",
    "resolve_k_weights",
    "descend",
    "directional_derivatives",
    "verify_gradient",
    "finite_difference_slope",
]

GRADIENT_SCALE = 0.5


def _swap(a):
    return np.swapaxes(a, -1, -2)


def _divided_exp(w):
    """First divided differences of ``exp`` on pairs of eigenvalues."""
    a, b = w[..., :, None], w[..., None, :]
    diff = a - b
    same = diff == 0
    safe = np.where(same, 1.0, diff)
    return np.where(same, np.exp(a), np.exp(b) * np.expm1(np.where(same, 0.0, diff)) / safe)


def _frechet(log_m, e, inverse=False):
    """Frechet derivative of ``exp`` at ``log_m`` (or of ``log`` at ``exp(log_m)``) applied to ``e``."""
    w, v = np.linalg.eigh(spd.symmetrize(log_m))
    phi = _divided_exp(w)
    if inverse:
        phi = 1.0 / phi
    return v @ (phi * (_swap(v) @ e @ v)) @ _swap(v)


@dataclass(frozen=True, eq=False)
class GradientField:
    """Riemannian gradient of a scalarized objective, one matrix per cell.

    Attributes
    ----------
    values : ndarray, shape (cells, d, d)
        Ambient gradient ``Gamma_x`` in the Gram representation, such that
        the directional derivative along ``h`` is
        ``sum_x mu_x tr(G_x^{-1} Gamma_x G_x^{-1} h_x)``.
    whitened : ndarray, shape (cells, d, d)
        ``G_x^{-1/2} Gamma_x G_x^{-1/2}``, before trace removal.
    k_weights : ndarray, shape (d,)
    spectral_gap_ok : ndarray of bool, shape (cells,)
        False where some weighted ``k`` has ``a_k - a_{k+1}`` below the
        margin relative to ``a_1``.
    """

    values: np.ndarray = field(repr=False)
    whitened: np.ndarray = field(repr=False)
    k_weights: np.ndarray
    spectral_gap_ok: np.ndarray = field(repr=False)
    n: int = 0

    @property
    def k(self):
        nz = np.flatnonzero(self.k_weights)
        return int(nz[0]) + 1 if nz.size == 1 else None

    def trace_residual(self):
        """Per-cell ``tr(G^{-1} Gamma)``."""
        return np.trace(self.whitened, axis1=-2, axis2=-1)

    def direction(self):
        """Whitened, exactly trace-free descent direction (before the sign flip)."""
        return spd.remove_trace(self.whitened)

    def norm(self, weights):
        """L2 norm ``(sum_x mu_x ||Gamma_x||_{G_x}^2)^{1/2}`` of the projected gradient."""
        return float(np.sqrt(weights.weights @ np.sum(self.direction() ** 2, axis=(-2, -1))))


def resolve_k_weights(k_weights, d):
    if k_weights is None or (isinstance(k_weights, str) and k_weights == "top"):
        kw = np.zeros(d)
        kw[0] = 1.0
    elif isinstance(k_weights, str) and k_weights == "all":
        kw = np.ones(d)
    elif isinstance(k_weights, str):
        raise ValueError(f"unknown k_weights preset {k_weights!r}")
    else:
        kw = np.asarray(k_weights, dtype=float)
        if kw.shape != (d,):
            raise ValueError(f"k_weights must have length {d}, got {kw.shape}")
    if np.any(kw < 0) or kw.sum() <= 0:
        raise ValueError("k_weights must be nonnegative with positive sum")
    return kw


def _gradient_whitened(gm, logs, mu, kw, gap_margin):
    """Whitened gradient of ``sum_k kw_k s_k`` and the per-cell gap flags."""
    d = logs.shape[-1]
    lf = gm.image_logs(logs)
    gf_half = spd.matrix_exp(0.5 * lf)
    gf_ihalf = spd.matrix_exp(-0.5 * lf)
    g_half = spd.matrix_exp(0.5 * logs)
    g_ihalf = spd.matrix_exp(-0.5 * logs)
    u, s, vt = spd.svd(gf_half @ gm.jac @ g_ihalf)
    v = _swap(vt)

    left = np.zeros_like(logs)
    right = np.zeros_like(logs)
    gap_ok = np.ones(logs.shape[0], dtype=bool)
    for k in range(1, d + 1):
        if kw[k - 1] == 0:
            continue
        if k < d:
            gap_ok &= (s[:, k - 1] - s[:, k]) >= gap_margin * s[:, 0]
        ub, vb = u[:, :, :k], v[:, :, :k]
        left += kw[k - 1] * (ub @ _swap(ub))
        right += kw[k - 1] * (vb @ _swap(vb))
    scale = GRADIENT_SCALE * mu[:, None, None]
    # Euclidean gradients with respect to the Gram matrices at f(x) and at x
    y = scale * (gf_ihalf @ left @ gf_ihalf)
    r = scale * (g_ihalf @ right @ g_ihalf)
    if gm.stencil_idx.shape[1] == 1:
        e = gm.scatter(y) - r
    else:
        e = _frechet(logs, gm.scatter(_frechet(lf, y)), inverse=True) - r
    with np.errstate(divide="ignore"):
        inv_mu = np.where(mu > 0, 1.0 / np.where(mu > 0, mu, 1.0), mu.size)
    whitened = spd.symmetrize(g_half @ e @ g_half) * inv_mu[:, None, None]
    return whitened, gap_ok


def scalarized_gradient(system, g, weights, k_weights=None, gap_margin=1e-6):
    """Gradient of ``sum_k w_k s_k`` at ``g``.

    Parameters
    ----------
    system : TorusSystem
    g : MetricField
    weights : MeasureWeights
    k_weights : array_like of shape (d,), or {"top", "all"}, optional
    gap_margin : float
        Relative singular-value gap below which a cell is flagged.

    Returns
    -------
    GradientField
    """
    _check_weights(g, weights)
    kw = resolve_k_weights(k_weights, g.d)
    gm = grid_map(system, g.n)
    whitened, gap_ok = _gradient_whitened(gm, g.logs, weights.weights, kw, gap_margin)
    half = g.sqrt()
    return GradientField(half @ whitened @ half, whitened, kw, gap_ok, g.n)


def gradient_field(system, g, weights, k, gap_margin=1e-6):
    """Gradient of the single partial sum ``s_k``."""
    if not 1 <= k <= g.d:
        raise ValueError(f"k must lie in 1..{g.d}")
    kw = np.zeros(g.d)
    kw[k - 1] = 1.0
    return scalarized_gradient(system, g, weights, kw, gap_margin)


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of :func:`descend`.

    Attributes
    ----------
    k_weights : sequence of float or {"top", "all"}
        Scalarization weights of the partial sums. ``"top"`` selects
        ``s_1`` and ``"all"`` weights every partial sum equally.
    max_iters : int
    step_init : float
        First trial step of the line search.
    armijo_c : float
        Sufficient-decrease constant in (0, 1).
    armijo_shrink : float
        Backtracking factor in (0, 1).
    step_growth : float
        Factor applied to the last accepted step to obtain the next trial.
    step_max : float
    min_step : float
        The search stalls when the trial step falls below this value.
    grad_tol : float
        Stop once the gradient norm is below this value.
    gap_margin : float
        Relative singular-value gap used to flag nonsmooth cells.
    seed : int
        Unused by the deterministic descent; kept for run records.
    """

    k_weights: object = "top"
    max_iters: int = 500
    step_init: float = 1.0
    armijo_c: float = 1e-4
    armijo_shrink: float = 0.5
    step_growth: float = 2.0
    step_max: float = 1e3
    min_step: float = 1e-14
    grad_tol: float = 1e-8
    gap_margin: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.k_weights, (list, np.ndarray)):
            object.__setattr__(self, "k_weights", tuple(float(v) for v in self.k_weights))
        if not isinstance(self.k_weights, str):
            kw = np.asarray(self.k_weights, dtype=float)
            if np.any(kw < 0) or kw.sum() <= 0:
                raise ValueError("k_weights must be nonnegative with positive sum")
        if int(self.max_iters) < 0:
            raise ValueError("max_iters must be >= 0")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.armijo_shrink < 1:
            raise ValueError("armijo_shrink must lie in (0, 1)")
        for name in ("step_init", "step_growth", "step_max", "min_step", "grad_tol", "gap_margin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.step_growth < 1:
            raise ValueError("step_growth must be >= 1")


@dataclass
class OptimizationTrace:
    """Per-iteration records of a descent run.

    Row ``0`` is the starting field; row ``i`` is the field after ``i``
    accepted steps.
    """

    d: int
    rows: list = field(default_factory=list)
    status: str = "running"

    def append(self, it, s_partial, step, grad_norm, gap):
        self.rows.append(
            {
                "iter": int(it),
                "s_partial": np.asarray(s_partial, dtype=float).copy(),
                "step": float(step),
                "grad_norm": float(grad_norm),
                "gap": None if gap is None else np.asarray(gap, dtype=float).copy(),
            }
        )

    @property
    def iterations(self):
        return len(self.rows) - 1

    def column(self, name, k=None):
        if name in ("s_partial", "gap"):
            return np.array([r[name][k - 1] if r[name] is not None else np.nan for r in self.rows])
        return np.array([r[name] for r in self.rows])

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.d
        w.writerow(
            ["iter"] + [f"s_{i + 1}" for i in range(d)] + ["step", "grad_norm"] + [f"gap_{i + 1}" for i in range(d)]
        )
        for r in self.rows:
            gap = r["gap"] if r["gap"] is not None else [float("nan")] * d
            w.writerow(
                [r["iter"]]
                + [format_float(v) for v in r["s_partial"]]
                + [format_float(r["step"]), format_float(r["grad_norm"])]
                + [format_float(v) for v in gap]
            )
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def descend(system, g0, weights, config=None, oracle=None):
    """Armijo gradient descent along geodesics of the det-1 metric fields.

    Parameters
    ----------
    system : TorusSystem
    g0 : MetricField
        Starting field.
    weights : MeasureWeights
    config : OptimizerConfig, optional
    oracle : LyapunovEstimate, optional
        Used only to fill the gap columns of the trace.

    Returns
    -------
    g : MetricField
        Last accepted iterate.
    trace : OptimizationTrace
        ``trace.status`` is ``"converged"``, ``"max_iters"`` or
        ``"stalled"``. A stall also emits :class:`LineSearchStall`.
    """
    cfg = config or OptimizerConfig()
    _check_weights(g0, weights)
    kw = resolve_k_weights(cfg.k_weights, g0.d)
    gm = grid_map(system, g0.n)
    mu = weights.weights
    lam = None if oracle is None else np.cumsum(oracle.lambda_)

    def value(logs):
        s = np.cumsum(mu @ _sigmas_from_logs(logs, gm.image_logs(logs), gm.jac))
        return float(kw @ s), s

    def grad(logs):
        whitened, _ = _gradient_whitened(gm, logs, mu, kw, cfg.gap_margin)
        direction = spd.remove_trace(whitened)
        return direction, float(mu @ np.sum(direction**2, axis=(-2, -1)))

    logs = g0.logs
    f, s = value(logs)
    direction, gn2 = grad(logs)
    trace = OptimizationTrace(g0.d)
    trace.append(0, s, 0.0, np.sqrt(gn2), None if lam is None else s - lam)
    step = cfg.step_init
    trace.status = "max_iters"
    for it in range(1, int(cfg.max_iters) + 1):
        if np.sqrt(gn2) < cfg.grad_tol:
            trace.status = "converged"
            break
        trial = step if it == 1 else min(step * cfg.step_growth, cfg.step_max)
        accepted = False
        while trial >= cfg.min_step:
            cand = spd.remove_trace(spd.log_exp_at(logs, -trial * direction))
            f_new, s_new = value(cand)
            if f_new <= f - cfg.armijo_c * trial * gn2 and f_new < f:
                accepted = True
                break
            trial *= cfg.armijo_shrink
        if not accepted:
            trace.status = "stalled"
            warnings.warn(
                f"line search stalled at iteration {it} with gradient norm {np.sqrt(gn2):.3e}",
                LineSearchStall,
                stacklevel=2,
            )
            break
        logs, f, s, step = cand, f_new, s_new, trial
        direction, gn2 = grad(logs)
        trace.append(it, s, step, np.sqrt(gn2), None if lam is None else s - lam)
    else:
        if np.sqrt(gn2) < cfg.grad_tol:
            trace.status = "converged"
    return MetricField._trusted(logs, g0.n), trace


# ---------------------------------------------------------------------------
# finite-difference verification


def _random_directions(g, weights, count, rng):
    """Trace-free whitened directions with unit L2 norm."""
    out = []
    for _ in range(count):
        x = spd.remove_trace(spd.symmetrize(rng.standard_normal(g.logs.shape)))
        x /= np.sqrt(weights.weights @ np.sum(x**2, axis=(-2, -1)))
        out.append(x)
    return out


def _partial_sum(gm, logs, mu, k):
    return float(np.cumsum(mu @ _sigmas_from_logs(logs, gm.image_logs(logs), gm.jac))[k - 1])


def directional_derivatives(system, g, weights, k, x, delta):
    """Analytic and central-difference derivatives of ``s_k`` along whitened ``x``."""
    gm = grid_map(system, g.n)
    mu = weights.weights
    grad = gradient_field(system, g, weights, k)
    analytic = float(mu @ np.sum(grad.whitened * x, axis=(-2, -1)))
    plus = spd.remove_trace(spd.log_exp_at(g.logs, x, delta))
    minus = spd.remove_trace(spd.log_exp_at(g.logs, x, -delta))
    fd = (_partial_sum(gm, plus, mu, k) - _partial_sum(gm, minus, mu, k)) / (2.0 * delta)
    return analytic, fd


def verify_gradient(system, g, weights, k, n_directions=20, delta=1e-5, seed=0, gap_margin=1e-6):
    """Largest relative mismatch between analytic and finite-difference derivatives.

    Raises
    ------
    SpectralGapViolated
        If ``a_k > a_{k+1}`` fails (within ``gap_margin``) in some cell.
    """
    grad = gradient_field(system, g, weights, k, gap_margin)
    if not np.all(grad.spectral_gap_ok):
        bad = int(np.sum(~grad.spectral_gap_ok))
        raise SpectralGapViolated(f"{bad} cells lack a spectral gap at k={k}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for x in _random_directions(g, weights, n_directions, rng):
        analytic, fd = directional_derivatives(system, g, weights, k, x, delta)
        worst = max(worst, abs(fd - analytic) / max(abs(analytic), 1e-300))
    return worst


def finite_difference_slope(system, g, weights, k, deltas=(1e-3, 2e-3, 4e-3, 8e-3), seed=0):
    """Log-log slope of the central-difference error against the step size.

    A second-order scheme gives a slope near 2 while truncation dominates
    rounding.
    """
    rng = np.random.default_rng(seed)
    (x,) = _random_directions(g, weights, 1, rng)
    errors = []
    for delta in deltas:
        analytic, fd = directional_derivatives(system, g, weights, k, x, delta)
        errors.append(abs(fd - analytic))
    return float(np.polyfit(np.log(deltas), np.log(errors), 1)[0])
