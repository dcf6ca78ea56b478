"""Diffeomorphisms of the d-torus, their Jacobians and grid measures.

Points are arrays of shape ``(..., d)`` with coordinates in ``[0, 1)``. The
grid of resolution ``n`` has ``n**d`` cells indexed in C (row-major) order
of their integer multi-index. Each cell carries one sample point: its lower
left corner for linear automorphisms, whose integer matrix permutes these
corners, and its center for every other system.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatch, OverflowWarning, SingularMatrix
from .tolerances import DEFAULT_TOLERANCES

__all__ = [
    "TorusSystem",
    "ToralAutomorphism",
    "StandardMap",
    "PerturbedAutomorphism",
    "LinearTorusMap",
    "MeasureWeights",
    "apply",
    "inverse",
    "jacobian",
    "iterate_jacobian",
    "grid_indices",
    "sample_points",
    "cell_of",
    "invariant_weights",
    "system_from_dict",
    "CAT_MAP",
]

TWO_PI = 2.0 * np.pi


def _wrap(x):
    y = np.mod(x, 1.0)
    return np.where(y >= 1.0, 0.0, y)


def _int_det(m):
    """Exact determinant of a small integer matrix (Bareiss elimination)."""
    a = [[int(v) for v in row] for row in m]
    n = len(a)
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            swap = next((r for r in range(k + 1, n) if a[r][k] != 0), None)
            if swap is None:
                return 0
            a[k], a[swap] = a[swap], a[k]
            sign = -sign
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


class TorusSystem:
    """Base class for maps of the torus.

    Subclasses implement :meth:`apply`, :meth:`inverse`, :meth:`jacobian` and
    :meth:`to_dict`. Instances are immutable.
    """

    dim: int
    exact_grid: bool = False
    volume_preserving: bool = True

    @property
    def grid_offset(self):
        """Position of the sample point inside its cell, in cell units."""
        return 0.0 if self.exact_grid else 0.5

    def apply(self, x):
        raise NotImplementedError

    def inverse(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def _orbit_step(self):
        """Return a scalar step function on tuples, used for long orbits."""

        def step(p):
            return tuple(self.apply(np.asarray(p, dtype=float)))

        return step

    def grid_permutation(self, n):
        """Cell index of ``f(x)`` for each sample point, on exact grids only."""
        return None

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ToralAutomorphism(TorusSystem):
    """Linear automorphism ``x -> A x mod 1`` with integer unimodular ``A``.

    Parameters
    ----------
    matrix : array_like of int, shape (d, d)
        Integer matrix with determinant +1 or -1.
    description : str
        Free text label.
    """

    matrix: np.ndarray
    description: str = ""
    exact_grid = True

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"automorphism matrix must be square, got {m.shape}")
        if not np.all(np.equal(np.mod(m, 1), 0)):
            raise ValueError("automorphism matrix must have integer entries")
        mi = m.astype(np.int64)
        if abs(_int_det(mi.tolist())) != 1:
            raise ValueError("automorphism matrix must have determinant +1 or -1")
        object.__setattr__(self, "matrix", mi)
        object.__setattr__(self, "_inv", np.rint(np.linalg.inv(mi)).astype(np.int64))
        object.__setattr__(self, "_af", mi.astype(float))

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def kind(self):
        return "automorphism"

    def apply(self, x):
        return _wrap(np.asarray(x, dtype=float) @ self._af.T)

    def inverse(self, x):
        return _wrap(np.asarray(x, dtype=float) @ self._inv.T.astype(float))

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self._af, x.shape[:-1] + self._af.shape).copy()

    def grid_permutation(self, n):
        idx = grid_indices(n, self.dim)
        return np.ravel_multi_index(tuple(np.mod(idx @ self.matrix.T, n).T), (n,) * self.dim)

    def _orbit_step(self):
        rows = [tuple(float(v) for v in row) for row in self.matrix]

        def step(p):
            out = []
            for row in rows:
                y = math.fsum(r * c for r, c in zip(row, p)) % 1.0
                out.append(0.0 if y >= 1.0 else y)
            return tuple(out)

        return step

    def to_dict(self):
        return {"kind": self.kind, "matrix": self.matrix.tolist()}


@dataclass(frozen=True, eq=False)
class StandardMap(TorusSystem):
    """Chirikov standard map on the unit 2-torus.

    ``y2 = x2 + K/(2 pi) sin(2 pi x1)``, ``y1 = x1 + y2``, both mod 1.
    """

    K: float
    description: str = ""
    dim = 2

    def __post_init__(self):
        object.__setattr__(self, "K", float(self.K))

    @property
    def kind(self):
        return "standard"

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != 2:
            raise DimensionMismatch("standard map acts on 2-dimensional points")
        y2 = x[..., 1] + self.K / TWO_PI * np.sin(TWO_PI * x[..., 0])
        return _wrap(np.stack([x[..., 0] + y2, y2], axis=-1))

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        x1 = y[..., 0] - y[..., 1]
        x2 = y[..., 1] - self.K / TWO_PI * np.sin(TWO_PI * x1)
        return _wrap(np.stack([x1, x2], axis=-1))

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        c = self.K * np.cos(TWO_PI * x[..., 0])
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0 + c
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = c
        out[..., 1, 1] = 1.0
        return out

    def _orbit_step(self):
        k = self.K / TWO_PI

        def step(p):
            y2 = (p[1] + k * math.sin(TWO_PI * p[0])) % 1.0
            y1 = (p[0] + y2) % 1.0
            return (0.0 if y1 >= 1.0 else y1, 0.0 if y2 >= 1.0 else y2)

        return step

    def to_dict(self):
        return {"kind": self.kind, "K": self.K}


PERTURBATIONS = ("shear",)


@dataclass(frozen=True, eq=False)
class PerturbedAutomorphism(TorusSystem):
    """Automorphism composed with a volume-preserving shear.

    ``f = A o s`` where ``s`` shifts the first coordinate by
    ``eps/(2 pi) sin(2 pi x_d)``. With ``eps = 0`` this is the automorphism
    itself and the grid is exact; ``A = I, eps = 0`` is the identity map.
    """

    matrix: np.ndarray
    eps: float = 0.0
    perturbation: str = "shear"
    description: str = ""

    def __post_init__(self):
        base = ToralAutomorphism(self.matrix)
        if self.perturbation not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.perturbation!r}; expected one of {PERTURBATIONS}")
        if self.eps != 0 and base.dim < 2:
            raise DimensionMismatch("shear perturbation needs d >= 2")
        object.__setattr__(self, "matrix", base.matrix)
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "_base", base)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def exact_grid(self):
        return self.eps == 0.0

    @property
    def kind(self):
        return "perturbed"

    def _shear(self, x, sign=1.0):
        if self.eps == 0.0:
            return x
        y = x.copy()
        y[..., 0] = x[..., 0] + sign * self.eps / TWO_PI * np.sin(TWO_PI * x[..., -1])
        return y

    def apply(self, x):
        return self._base.apply(self._shear(np.asarray(x, dtype=float)))

    def inverse(self, y):
        return _wrap(self._shear(self._base.inverse(y), -1.0))

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        ds = np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim)).copy()
        ds[..., 0, -1] += self.eps * np.cos(TWO_PI * x[..., -1])
        return self._base._af @ ds

    def grid_permutation(self, n):
        return self._base.grid_permutation(n) if self.exact_grid else None

    def to_dict(self):
        return {
            "kind": self.kind,
            "matrix": self.matrix.tolist(),
            "eps": self.eps,
            "perturbation": self.perturbation,
        }


@dataclass(frozen=True, eq=False)
class LinearTorusMap(TorusSystem):
    """Diagnostic map ``x -> M x mod 1`` for an arbitrary real matrix ``M``.

    Not measure preserving in general; used to exercise determinant growth
    checks on non-conservative maps.
    """

    matrix: np.ndarray
    description: str = ""
    volume_preserving = False

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def kind(self):
        return "linear"

    def apply(self, x):
        return _wrap(np.asarray(x, dtype=float) @ self.matrix.T)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + self.matrix.shape).copy()

    def to_dict(self):
        return {"kind": self.kind, "matrix": self.matrix.tolist()}


CAT_MAP = ToralAutomorphism([[2, 1], [1, 1]], description="Arnold cat map")


def system_from_dict(spec):
    """Build a system from a plain mapping such as a config section."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    builders = {
        "automorphism": lambda s: ToralAutomorphism(s.pop("matrix"), s.pop("description", "")),
        "standard": lambda s: StandardMap(s.pop("K"), s.pop("description", "")),
        "perturbed": lambda s: PerturbedAutomorphism(
            s.pop("matrix"), s.pop("eps", 0.0), s.pop("perturbation", "shear"), s.pop("description", "")
        ),
        "identity": lambda s: PerturbedAutomorphism(np.eye(int(s.pop("d", 2)), dtype=int), 0.0),
        "linear": lambda s: LinearTorusMap(s.pop("matrix"), s.pop("description", "")),
    }
    if kind not in builders:
        raise KeyError(f"unknown system kind {kind!r}; expected one of {sorted(builders)}")
    try:
        system = builders[kind](spec)
    except KeyError as exc:
        raise KeyError(f"system.{exc.args[0]} is required for kind {kind!r}") from None
    if spec:
        raise KeyError(f"unknown key system.{sorted(spec)[0]} for kind {kind!r}")
    return system


# ---------------------------------------------------------------------------
# functional interface


def apply(system, x):
    """Image ``f(x)`` reduced into ``[0, 1)``."""
    return system.apply(x)


def inverse(system, y):
    """Preimage ``f^{-1}(y)`` reduced into ``[0, 1)``."""
    return system.inverse(y)


def jacobian(system, x):
    """Jacobian of the lifted map at ``x``, shape ``(..., d, d)``."""
    return system.jacobian(x)


def iterate_jacobian(system, x, n):
    """Chain-rule product ``df_{f^{n-1} x} ... df_x``.

    Emits :class:`OverflowWarning` once any entry exceeds the overflow
    threshold; the product is still returned.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(x, dtype=float)
    prod = system.jacobian(x)
    for _ in range(n - 1):
        x = system.apply(x)
        prod = system.jacobian(x) @ prod
    if not np.all(np.abs(prod) <= DEFAULT_TOLERANCES.overflow):
        warnings.warn(
            "Jacobian product exceeds the overflow threshold; use the QR oracle",
            OverflowWarning,
            stacklevel=2,
        )
    return prod


def grid_indices(n, d):
    """Integer multi-indices of all cells, shape ``(n**d, d)``, C order."""
    return np.stack(np.unravel_index(np.arange(n**d), (n,) * d), axis=-1)


def sample_points(system, n):
    """Sample point of every grid cell, shape ``(n**d, d)``."""
    if n < 2:
        raise ValueError("grid resolution must be >= 2")
    pts = (grid_indices(n, system.dim) + system.grid_offset) / n
    det = np.linalg.det(system.jacobian(pts))
    if np.any(np.abs(det) <= 1e-300):
        raise SingularMatrix("Jacobian is singular at a grid point")
    return pts


def cell_of(x, n):
    """Index of the grid cell ``[i/n, (i+1)/n)`` containing each point."""
    x = np.asarray(x, dtype=float)
    idx = np.clip(np.floor(x * n).astype(np.int64), 0, n - 1)
    return np.ravel_multi_index(tuple(np.moveaxis(idx, -1, 0)), (n,) * x.shape[-1])


@dataclass(frozen=True, eq=False)
class MeasureWeights:
    """Probability weights of the ``n**d`` grid cells."""

    n: int
    d: int
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.n**self.d,):
            raise DimensionMismatch(f"expected {self.n ** self.d} weights, got shape {w.shape}")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_cells(self):
        return self.weights.size


def invariant_weights(system, n, mode="lebesgue", orbit_length=10**6, burn_in=1000, seed=0):
    """Discretized invariant measure on the grid.

    Parameters
    ----------
    system : TorusSystem
    n : int
        Grid resolution per axis, at least 2.
    mode : {"lebesgue", "birkhoff"}
        ``lebesgue`` gives uniform weights. ``birkhoff`` gives the cell
        visit frequencies of one orbit started at a seeded random point.
    orbit_length, burn_in : int
        Counted orbit length and discarded transient for ``birkhoff``.
    seed : int
        Seed of the starting point.

    Returns
    -------
    MeasureWeights
    """
    if n < 2:
        raise ValueError("grid resolution must be >= 2")
    d = system.dim
    if mode == "lebesgue":
        return MeasureWeights(n, d, np.full(n**d, 1.0 / n**d))
    if mode != "birkhoff":
        raise ValueError(f"unknown measure mode {mode!r}")
    if orbit_length < 1:
        raise ValueError("orbit_length must be >= 1")
    step = system._orbit_step()
    p = tuple(np.random.default_rng(seed).random(d))
    for _ in range(burn_in):
        p = step(p)
    counts = np.zeros(n**d)
    strides = [n ** (d - 1 - k) for k in range(d)]
    for _ in range(orbit_length):
        counts[sum(min(int(c * n), n - 1) * s for c, s in zip(p, strides))] += 1
        p = step(p)
    return MeasureWeights(n, d, counts / counts.sum())
