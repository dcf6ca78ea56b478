"""Grid fields of volume-normalized metrics on the torus.

A :class:`MetricField` assigns to every grid cell a Gram matrix ``G_x`` with
``det G_x = 1``, so that ``g_x(v, w) = v^T G_x w``. Internally each value is
kept as its matrix logarithm, a trace-free symmetric matrix. This makes the
det-1 constraint linear and keeps iterated pullbacks accurate when ``G_x``
is far from the identity.
"""

import functools
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import spd
from .dynamics import grid_indices, sample_points
from .exceptions import (
    DimensionMismatch,
    NotInMetricSpace,
    NotPositiveDefinite,
    TangencyViolated,
    VolumeNotPreserved,
)
from .tolerances import DEFAULT_TOLERANCES

__all__ = [
    "MetricField",
    "TangentField",
    "GridMap",
    "grid_map",
    "flat_metric",
    "random_metric",
    "evaluate",
    "pullback",
    "pullback_iterate",
    "field_barycenter",
    "geodesic_step",
    "connecting_tangent",
    "l2_distance",
    "bochi_sequence",
]


class MetricField:
    """Det-1 SPD Gram matrices on an ``n**d`` grid.

    Parameters
    ----------
    logs : ndarray, shape (n**d, d, d)
        Matrix logarithms of the cell values. They must be symmetric with
        trace below ``tolerances.det_one``; the residual trace is removed.
    n : int
        Grid resolution per axis.
    tolerances : ToleranceProfile, optional

    See Also
    --------
    MetricField.from_gram : construct from explicit Gram matrices.
    """

    def __init__(self, logs, n, tolerances=None):
        tol = tolerances or DEFAULT_TOLERANCES
        logs = np.array(logs, dtype=float)
        if logs.ndim != 3 or logs.shape[1] != logs.shape[2]:
            raise DimensionMismatch(f"logs must have shape (cells, d, d), got {logs.shape}")
        d = logs.shape[-1]
        if logs.shape[0] != n**d:
            raise DimensionMismatch(f"expected {n ** d} cells for n={n}, d={d}, got {logs.shape[0]}")
        if not np.all(np.isfinite(logs)):
            raise NotInMetricSpace("metric field has non-finite entries")
        scale = 1.0 + np.abs(logs).max(initial=0.0)
        if np.abs(logs - np.swapaxes(logs, -1, -2)).max(initial=0.0) > tol.symmetry * scale:
            raise NotInMetricSpace("cell values are not symmetric")
        tr = np.trace(logs, axis1=-2, axis2=-1)
        if np.abs(tr).max(initial=0.0) > tol.det_one:
            raise NotInMetricSpace(f"not in M_omega: |log det| up to {np.abs(tr).max():.3e}")
        self._logs = spd.remove_trace(spd.symmetrize(logs))
        self._logs.setflags(write=False)
        self.n = int(n)
        self.d = int(d)

    @classmethod
    def from_gram(cls, gram, n, tolerances=None):
        """Build from Gram matrices, validating SPD and unit determinant."""
        tol = tolerances or DEFAULT_TOLERANCES
        gram = np.asarray(gram, dtype=float)
        if gram.ndim != 3:
            raise DimensionMismatch(f"gram must have shape (cells, d, d), got {gram.shape}")
        scale = 1.0 + np.abs(gram).max(initial=0.0)
        if np.abs(gram - np.swapaxes(gram, -1, -2)).max(initial=0.0) > tol.symmetry * scale:
            raise NotInMetricSpace("cell values are not symmetric")
        try:
            logs = spd.matrix_log(gram)
        except NotPositiveDefinite as exc:
            raise NotInMetricSpace(f"not in M_omega: {exc}") from None
        return cls(logs, n, tolerances=tol)

    @classmethod
    def _trusted(cls, logs, n):
        obj = cls.__new__(cls)
        obj._logs = spd.remove_trace(spd.symmetrize(logs))
        obj._logs.setflags(write=False)
        obj.n = int(n)
        obj.d = int(logs.shape[-1])
        return obj

    @property
    def logs(self):
        """Trace-free matrix logarithms, shape ``(n**d, d, d)``."""
        return self._logs

    @property
    def gram(self):
        """Gram matrices ``G_x``, shape ``(n**d, d, d)``."""
        return spd.matrix_exp(self._logs)

    @property
    def n_cells(self):
        return self._logs.shape[0]

    def sqrt(self):
        return spd.matrix_exp(0.5 * self._logs)

    def invsqrt(self):
        return spd.matrix_exp(-0.5 * self._logs)

    def same_grid(self, other):
        return self.n == other.n and self.d == other.d

    def __repr__(self):
        return f"MetricField(n={self.n}, d={self.d})"

    # serialization -------------------------------------------------------

    def to_dict(self):
        return {"d": self.d, "n": self.n, "values": self.gram.reshape(self.n_cells, -1).tolist()}

    @classmethod
    def from_dict(cls, data, tolerances=None):
        try:
            d, n, values = int(data["d"]), int(data["n"]), data["values"]
        except KeyError as exc:
            raise DimensionMismatch(f"metric record is missing key {exc.args[0]!r}") from None
        extra = set(data) - {"d", "n", "values"}
        if extra:
            raise DimensionMismatch(f"metric record has unknown key {sorted(extra)[0]!r}")
        gram = np.asarray(values, dtype=float)
        if gram.shape != (n**d, d * d):
            raise DimensionMismatch(f"metric record has shape {gram.shape}, expected {(n ** d, d * d)}")
        return cls.from_gram(gram.reshape(n**d, d, d), n, tolerances)

    def to_json(self, path=None):
        """Serialize to JSON; writes ``path`` if given, returns the text."""
        text = json.dumps(self.to_dict())
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, source, tolerances=None):
        """Load from a JSON string or a file path."""
        if isinstance(source, str) and source.lstrip().startswith("{"):
            data = json.loads(source)
        else:
            with open(source, encoding="utf-8") as fh:
                data = json.load(fh)
        return cls.from_dict(data, tolerances)


@dataclass(frozen=True, eq=False)
class TangentField:
    """Symmetric matrices ``h_x`` on the grid, tangent at some metric ``g``.

    Tangency means ``tr(G_x^{-1} h_x) = 0`` for every cell; it is checked
    against a given base metric by :meth:`check_tangent`.
    """

    values: np.ndarray = field(repr=False)
    n: int

    def __post_init__(self):
        v = spd.symmetrize(np.asarray(self.values, dtype=float))
        if v.ndim != 3 or v.shape[0] != self.n ** v.shape[-1]:
            raise DimensionMismatch(f"tangent values have shape {v.shape} for n={self.n}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def d(self):
        return self.values.shape[-1]

    @classmethod
    def from_whitened(cls, g, x):
        """Ambient field ``G^{1/2} x G^{1/2}`` for whitened directions ``x``."""
        s = g.sqrt()
        return cls(s @ x @ s, g.n)

    def whitened(self, g):
        """Whitened directions ``G^{-1/2} h G^{-1/2}``."""
        _check_grids(g, self)
        s = g.invsqrt()
        return spd.symmetrize(s @ self.values @ s)

    def trace_residual(self, g):
        """Per-cell ``tr(G^{-1} h)``."""
        return np.trace(self.whitened(g), axis1=-2, axis2=-1)

    def check_tangent(self, g, atol=None):
        atol = DEFAULT_TOLERANCES.tangent_invariant if atol is None else atol
        return bool(np.all(np.abs(self.trace_residual(g)) <= atol))


def _check_grids(*fields):
    first = fields[0]
    for other in fields[1:]:
        if other.n != first.n or other.d != first.d:
            raise DimensionMismatch(
                f"grid mismatch: (n={first.n}, d={first.d}) vs (n={other.n}, d={other.d})"
            )


def _check_weights(g, weights):
    if weights.n != g.n or weights.d != g.d:
        raise DimensionMismatch(
            f"weights live on (n={weights.n}, d={weights.d}), field on (n={g.n}, d={g.d})"
        )


# ---------------------------------------------------------------------------
# grid geometry


def _stencil(y, n, offset):
    """Multilinear interpolation stencil for points ``y``.

    Nodes sit at ``(i + offset) / n``. Returns corner cell indices and
    weights, each of shape ``(points, 2**d)``.
    """
    y = np.asarray(y, dtype=float)
    d = y.shape[-1]
    u = y * n - offset
    base = np.floor(u)
    frac = u - base
    base = base.astype(np.int64)
    idx, wts = [], []
    for corner in itertools.product((0, 1), repeat=d):
        c = np.asarray(corner)
        cells = np.mod(base + c, n)
        idx.append(np.ravel_multi_index(tuple(np.moveaxis(cells, -1, 0)), (n,) * d))
        wts.append(np.prod(np.where(c == 1, frac, 1.0 - frac), axis=-1))
    return np.stack(idx, axis=-1), np.stack(wts, axis=-1)


@dataclass(frozen=True, eq=False)
class GridMap:
    """Sample points of a system's grid with images, Jacobians and stencils.

    Attributes
    ----------
    points, images : ndarray, shape (cells, d)
    jac : ndarray, shape (cells, d, d)
    stencil_idx, stencil_w : ndarray, shape (cells, m)
        Cells and weights whose log-Euclidean combination gives the field
        at the image point. On exact grids ``m = 1`` and the weight is one.
    """

    system: object
    n: int
    points: np.ndarray = field(repr=False)
    images: np.ndarray = field(repr=False)
    jac: np.ndarray = field(repr=False)
    stencil_idx: np.ndarray = field(repr=False)
    stencil_w: np.ndarray = field(repr=False)

    @property
    def exact(self):
        return self.system.exact_grid

    def image_logs(self, logs):
        """Field logarithms evaluated at the image of every sample point."""
        if self.stencil_idx.shape[1] == 1:
            return logs[self.stencil_idx[:, 0]]
        return np.einsum("cm,cmij->cij", self.stencil_w, logs[self.stencil_idx])

    def scatter(self, values):
        """Adjoint of :meth:`image_logs`: accumulate image-located values into cells."""
        out = np.zeros_like(values)
        for j in range(self.stencil_idx.shape[1]):
            np.add.at(out, self.stencil_idx[:, j], self.stencil_w[:, j, None, None] * values)
        return out


@functools.lru_cache(maxsize=32)
def grid_map(system, n):
    """Cached :class:`GridMap` for ``system`` at resolution ``n``."""
    pts = sample_points(system, n)
    images = system.apply(pts)
    jac = system.jacobian(pts)
    perm = system.grid_permutation(n)
    if perm is not None:
        idx, w = perm[:, None], np.ones((perm.size, 1))
    else:
        idx, w = _stencil(images, n, system.grid_offset)
    for a in (pts, images, jac, idx, w):
        a.setflags(write=False)
    return GridMap(system, n, pts, images, jac, idx, w)


# ---------------------------------------------------------------------------
# operations


def flat_metric(n, d=2):
    """Identity Gram matrix in every cell."""
    if n < 2:
        raise ValueError("grid resolution must be >= 2")
    return MetricField._trusted(np.zeros((n**d, d, d)), n)


def random_metric(n, d=2, scale=0.5, seed=None, smooth=False):
    """Random det-1 field with trace-free Gaussian logarithms.

    Parameters
    ----------
    n, d : int
        Grid shape.
    scale : float
        Standard deviation of the log entries.
    seed : int or numpy Generator, optional
    smooth : bool
        If True, use a single random trigonometric mode per entry instead of
        independent cell values.
    """
    rng = np.random.default_rng(seed)
    if smooth:
        pts = (grid_indices(n, d) + 0.5) / n
        k = rng.integers(-2, 3, size=(d, d, d))
        phase = rng.random((d, d))
        amp = rng.standard_normal((d, d))
        logs = amp * np.sin(2 * np.pi * (np.einsum("cd,ijd->cij", pts, k) + phase))
    else:
        logs = rng.standard_normal((n**d, d, d))
    logs = scale * spd.remove_trace(spd.symmetrize(logs))
    return MetricField._trusted(logs, n)


def evaluate(g, x, offset=0.5):
    """Log-Euclidean multilinear interpolation of ``g`` at points ``x``.

    Parameters
    ----------
    g : MetricField
    x : ndarray, shape (..., d)
        Torus points.
    offset : float
        Position of sample points inside their cells: ``0.5`` for cell
        centers, ``0.0`` for lower-left corners.

    Returns
    -------
    ndarray, shape (..., d, d)
        Det-1 SPD matrices ``exp(sum_c w_c log G_c)``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.d:
        raise DimensionMismatch(f"points have dimension {x.shape[-1]}, field has {g.d}")
    flat = x.reshape(-1, g.d)
    idx, w = _stencil(flat, g.n, offset)
    logs = np.einsum("pm,pmij->pij", w, g.logs[idx])
    return spd.matrix_exp(logs).reshape(x.shape[:-1] + (g.d, g.d))


def _check_volume(jac, tol):
    det = np.linalg.det(jac)
    if np.any(np.abs(np.abs(det) - 1.0) > tol):
        raise VolumeNotPreserved(f"|det df| deviates from 1 by up to {np.abs(np.abs(det) - 1).max():.3e}")


def pullback(system, g, tolerances=None):
    """Pullback ``(f* g)_x = A_x^T G_{f(x)} A_x`` with ``A_x = df_x``.

    Raises
    ------
    VolumeNotPreserved
        If ``|det df_x|`` differs from one at some sample point.
    """
    tol = tolerances or DEFAULT_TOLERANCES
    gm = grid_map(system, g.n)
    if system.dim != g.d:
        raise DimensionMismatch(f"system dimension {system.dim} differs from field dimension {g.d}")
    _check_volume(gm.jac, tol.volume)
    return MetricField._trusted(spd.log_congruence(gm.jac, gm.image_logs(g.logs)), g.n)


def pullback_iterate(system, g, j, tolerances=None):
    """Pullback by the ``j``-th iterate, ``(f^j)* g``.

    The Jacobian chain is applied one factor at a time in the log domain, so
    no explicit product ``df^j`` is formed. On exact grids this equals ``j``
    repeated :func:`pullback` calls; elsewhere ``g`` is interpolated only
    once, at ``f^j(x)``.
    """
    tol = tolerances or DEFAULT_TOLERANCES
    if j < 0:
        raise ValueError("j must be >= 0")
    if j == 0:
        return g
    gm = grid_map(system, g.n)
    orbit = [gm.points]
    for _ in range(j):
        orbit.append(system.apply(orbit[-1]))
    if gm.exact:
        perm = gm.stencil_idx[:, 0]
        target = np.arange(g.n_cells)
        for _ in range(j):
            target = perm[target]
        logs = g.logs[target]
    else:
        idx, w = _stencil(orbit[-1], g.n, system.grid_offset)
        logs = np.einsum("cm,cmij->cij", w, g.logs[idx])
    for i in range(j - 1, -1, -1):
        jac = system.jacobian(orbit[i])
        _check_volume(jac, tol.volume)
        logs = spd.log_congruence(jac, logs)
    return MetricField._trusted(logs, g.n)


def field_barycenter(fields, max_iter=200, tol=None):
    """Cell-wise Karcher barycenter of metric fields."""
    fields = list(fields)
    if not fields:
        raise ValueError("field_barycenter needs at least one field")
    _check_grids(*fields)
    mean, _ = spd.karcher_mean_log(np.stack([f.logs for f in fields]), max_iter=max_iter, tol=tol)
    return MetricField._trusted(mean, fields[0].n)


def _step_whitened(g, x, t):
    return MetricField._trusted(spd.log_exp_at(g.logs, x, t), g.n)


def geodesic_step(g, h, t, tolerances=None):
    """Point at time ``t`` on the geodesic ``G exp(t G^{-1} h)``.

    Raises
    ------
    TangencyViolated
        If ``tr(G^{-1} h)`` exceeds the tangency tolerance in some cell.
    """
    tol = tolerances or DEFAULT_TOLERANCES
    x = h.whitened(g)
    res = np.abs(np.trace(x, axis1=-2, axis2=-1)).max(initial=0.0)
    if res > tol.tangency:
        raise TangencyViolated(f"tr(G^-1 h) reaches {res:.3e}")
    return _step_whitened(g, spd.remove_trace(x), t)


def connecting_tangent(g, g2):
    """Tangent ``h`` at ``g`` with ``geodesic_step(g, h, 1) == g2``."""
    _check_grids(g, g2)
    return TangentField.from_whitened(g, spd.log_relative(g.logs, g2.logs))


def l2_distance(g1, g2, weights):
    """Discretized L2 distance ``(sum_x w_x d(G1_x, G2_x)^2)^{1/2}``."""
    _check_grids(g1, g2)
    _check_weights(g1, weights)
    d2 = np.sum(spd.log_relative(g1.logs, g2.logs) ** 2, axis=(-2, -1))
    return float(np.sqrt(max(float(weights.weights @ d2), 0.0)))


def bochi_sequence(system, g0, N, max_iter=2000):
    """Barycenter of the first ``N`` pullback iterates of ``g0``.

    Returns ``bar(g0, f* g0, ..., (f^{N-1})* g0)``; ``N = 1`` gives ``g0``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if N == 1:
        return g0
    iterates = [pullback_iterate(system, g0, j) for j in range(N)]
    return field_barycenter(iterates, max_iter=max_iter)
