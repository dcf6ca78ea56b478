"""Geometry of the cone of symmetric positive-definite matrices.

All functions accept batched input: a trailing ``(d, d)`` matrix axis with
arbitrary leading axes. Matrix functions go through the symmetric
eigendecomposition.

Two families of routines live here:

* explicit routines (:func:`spd_distance`, :func:`geodesic_between`, ...)
  that take and return SPD matrices;
* log-domain routines (:func:`log_congruence`, :func:`log_relative`,
  :func:`log_exp_at`, :func:`karcher_mean_log`) that take and return matrix
  logarithms. These never form a badly conditioned SPD matrix explicitly.
  Congruences are evaluated with a one-sided Jacobi orthogonalization,
  which resolves singular values to high relative accuracy even when they
  span many orders of magnitude. Metric fields are stored in this form.
"""

import numpy as np

from .exceptions import (
    DimensionMismatch,
    NoConvergence,
    NotPositiveDefinite,
    SingularMatrix,
)
from .tolerances import DEFAULT_TOLERANCES

__all__ = [
    "symmetrize",
    "matrix_exp",
    "matrix_log",
    "matrix_sqrt",
    "matrix_invsqrt",
    "matrix_power",
    "svd",
    "log_singular_values",
    "majorize_leq",
    "partial_sums",
    "spd_distance",
    "geodesic_between",
    "geodesic_from",
    "gl_action",
    "vectorial_distance",
    "barycenter",
    "log_gram",
    "log_congruence",
    "log_relative",
    "log_exp_at",
    "karcher_mean_log",
    "remove_trace",
]


def _swap(a):
    return np.swapaxes(a, -1, -2)


def _as_square(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionMismatch(f"{name} must have trailing shape (d, d), got {a.shape}")
    return a


def _same_dim(*arrays):
    dims = {a.shape[-1] for a in arrays}
    if len(dims) != 1:
        raise DimensionMismatch(f"matrix dimensions differ: {sorted(dims)}")


def symmetrize(a):
    """Return the symmetric part ``(a + a^T) / 2``."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + _swap(a))


def _eigh(s):
    return np.linalg.eigh(symmetrize(s))


def _spectral(s, fn):
    w, v = _eigh(s)
    return (v * fn(w)[..., None, :]) @ _swap(v)


def _spd_eigh(p):
    p = _as_square(p)
    w, v = _eigh(p)
    if not np.all(w > 0):
        raise NotPositiveDefinite(f"smallest eigenvalue {w.min():.3e} is not positive")
    return w, v


def remove_trace(s):
    """Project symmetric matrices onto the trace-free subspace."""
    s = np.asarray(s, dtype=float)
    d = s.shape[-1]
    tr = np.trace(s, axis1=-2, axis2=-1)
    return s - (tr / d)[..., None, None] * np.eye(d)


def matrix_exp(s):
    """Matrix exponential of a symmetric matrix.

    Parameters
    ----------
    s : ndarray, shape (..., d, d)
        Symmetric matrices.

    Returns
    -------
    ndarray, shape (..., d, d)
        SPD matrices ``exp(s)``.
    """
    return _spectral(_as_square(s), np.exp)


def matrix_log(p):
    """Principal logarithm of an SPD matrix.

    Parameters
    ----------
    p : ndarray, shape (..., d, d)
        SPD matrices.

    Returns
    -------
    ndarray, shape (..., d, d)
        Symmetric matrices ``log(p)``.

    Raises
    ------
    NotPositiveDefinite
        If some eigenvalue of ``p`` is not positive.
    """
    w, v = _spd_eigh(p)
    return (v * np.log(w)[..., None, :]) @ _swap(v)


def matrix_sqrt(p):
    """Principal square root of an SPD matrix."""
    w, v = _spd_eigh(p)
    return (v * np.sqrt(w)[..., None, :]) @ _swap(v)


def matrix_invsqrt(p):
    """Inverse principal square root of an SPD matrix."""
    w, v = _spd_eigh(p)
    return (v * (1.0 / np.sqrt(w))[..., None, :]) @ _swap(v)


def matrix_power(p, t):
    """Real power ``p**t`` of an SPD matrix."""
    w, v = _spd_eigh(p)
    t = np.asarray(t, dtype=float)
    return (v * np.exp(t[..., None] * np.log(w))[..., None, :]) @ _swap(v)


def svd(m, tie_tol=1e-12):
    """Singular value decomposition with a deterministic normalization.

    Singular values are returned in nonincreasing order. Each left singular
    vector is flipped so that its first nonzero entry is positive, with the
    matching right singular vector flipped along with it. Within a group of
    coincident singular values the columns are sorted lexicographically by
    their left singular vectors.

    Parameters
    ----------
    m : ndarray, shape (..., d, d)
        Input matrices.
    tie_tol : float
        Relative tolerance (with respect to the largest singular value)
        below which two singular values count as coincident.

    Returns
    -------
    u : ndarray, shape (..., d, d)
    s : ndarray, shape (..., d)
    vt : ndarray, shape (..., d, d)
        Factors with ``m = u @ diag(s) @ vt``.
    """
    m = _as_square(m)
    u, s, vt = np.linalg.svd(m)
    first = np.argmax(np.abs(u) > 1e-12, axis=-2)
    lead = np.take_along_axis(u, first[..., None, :], axis=-2)[..., 0, :]
    sign = np.where(lead < 0, -1.0, 1.0)
    u = u * sign[..., None, :]
    vt = vt * sign[..., :, None]

    d = m.shape[-1]
    if d > 1:
        ties = (s[..., :-1] - s[..., 1:]) <= tie_tol * s[..., :1]
        if np.any(ties):
            u, vt = u.copy(), vt.copy()
            for idx in np.ndindex(s.shape[:-1]):
                if not np.any(ties[idx]):
                    continue
                group = np.concatenate([[0], np.cumsum(~ties[idx])])
                order = sorted(range(d), key=lambda j: (group[j], tuple(u[idx][:, j])))
                u[idx] = u[idx][:, order]
                vt[idx] = vt[idx][order, :]
    return u, s, vt


def log_singular_values(m):
    """Logarithms of the singular values, in nonincreasing order.

    Parameters
    ----------
    m : ndarray, shape (..., d, d)
        Invertible matrices.

    Returns
    -------
    ndarray, shape (..., d)
        ``(log a_1, ..., log a_d)`` with ``a_1 >= ... >= a_d``.

    Raises
    ------
    SingularMatrix
        If a singular value underflows to zero or is not finite.

    Examples
    --------
    >>> log_singular_values(np.diag([np.e**2, np.e**-3]))
    array([ 2., -3.])
    """
    m = _as_square(m)
    s = np.linalg.svd(m, compute_uv=False)
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        raise SingularMatrix("matrix has a vanishing or non-finite singular value")
    return np.log(s)


def partial_sums(xi):
    """Prefix sums along the last axis."""
    return np.cumsum(np.asarray(xi, dtype=float), axis=-1)


def majorize_leq(xi, eta, weak=False, atol=None):
    """Test ``xi`` majorized by ``eta``.

    Vectors are compared through the partial sums of their nonincreasing
    rearrangements. The strong order additionally requires equal totals.

    Parameters
    ----------
    xi, eta : array_like, shape (..., d)
        Vectors to compare. Leading axes are broadcast and the relation must
        hold for every entry.
    weak : bool
        If True, test the weak order, which only bounds the total sum from
        above.
    atol : float, optional
        Absolute tolerance on every partial-sum comparison. Defaults to the
        ``majorization`` entry of the default tolerance profile.

    Returns
    -------
    bool

    Raises
    ------
    DimensionMismatch
        If the vectors have different lengths.
    """
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if xi.shape[-1:] != eta.shape[-1:]:
        raise DimensionMismatch(f"vector lengths differ: {xi.shape[-1:]} vs {eta.shape[-1:]}")
    if atol is None:
        atol = DEFAULT_TOLERANCES.majorization
    px = partial_sums(-np.sort(-xi, axis=-1))
    pe = partial_sums(-np.sort(-eta, axis=-1))
    if not np.all(px <= pe + atol):
        return False
    if weak:
        return True
    return bool(np.all(np.abs(px[..., -1] - pe[..., -1]) <= atol))


def spd_distance(p, q):
    """Trace-metric distance ``||log eig(p^-1 q)||_2``.

    Parameters
    ----------
    p, q : ndarray, shape (..., d, d)
        SPD matrices.

    Returns
    -------
    float or ndarray
        Distance, batched over leading axes.
    """
    p, q = _as_square(p), _as_square(q)
    _same_dim(p, q)
    ip = matrix_invsqrt(p)
    w = np.linalg.eigvalsh(symmetrize(ip @ q @ ip))
    if not np.all(w > 0):
        raise NotPositiveDefinite("second argument is not positive-definite")
    return np.sqrt(np.sum(np.log(w) ** 2, axis=-1))


def geodesic_between(p, q, t):
    """Point ``p #_t q`` on the geodesic from ``p`` (t=0) to ``q`` (t=1).

    Parameters
    ----------
    p, q : ndarray, shape (..., d, d)
        SPD end points.
    t : float or ndarray
        Geodesic parameter, broadcast against the leading axes.

    Returns
    -------
    ndarray, shape (..., d, d)
    """
    p, q = _as_square(p), _as_square(q)
    _same_dim(p, q)
    sp, ip = matrix_sqrt(p), matrix_invsqrt(p)
    return symmetrize(sp @ matrix_power(symmetrize(ip @ q @ ip), t) @ sp)


def geodesic_from(p, v, t=1.0):
    """Geodesic ``p^{1/2} exp(t p^{-1/2} v p^{-1/2}) p^{1/2}`` through ``p`` with velocity ``v``."""
    p, v = _as_square(p), _as_square(v)
    _same_dim(p, v)
    sp, ip = matrix_sqrt(p), matrix_invsqrt(p)
    t = np.asarray(t, dtype=float)[..., None, None]
    return symmetrize(sp @ matrix_exp(t * (ip @ symmetrize(v) @ ip)) @ sp)


def gl_action(g, p):
    """Congruence action ``g p g^T``."""
    g, p = _as_square(g), _as_square(p)
    _same_dim(g, p)
    return symmetrize(g @ p @ _swap(g))


def vectorial_distance(p, q):
    """Vector-valued distance ``2 sigma(p^{-1/2} q^{1/2})``.

    The Euclidean norm of the result equals :func:`spd_distance`.

    Parameters
    ----------
    p, q : ndarray, shape (..., d, d)
        SPD matrices.

    Returns
    -------
    ndarray, shape (..., d)
        Nonincreasing vector.
    """
    p, q = _as_square(p), _as_square(q)
    _same_dim(p, q)
    return 2.0 * log_singular_values(matrix_invsqrt(p) @ matrix_sqrt(q))


def barycenter(points, max_iter=200, tol=None):
    """Karcher barycenter of SPD matrices under the trace metric.

    Parameters
    ----------
    points : sequence of ndarray, each of shape (..., d, d)
        Nonempty list of SPD matrices with matching shapes. Leading axes are
        treated as independent problems.
    max_iter : int
        Iteration cap.
    tol : float, optional
        Stopping threshold, per point, on the norm of the Riemannian
        gradient measured at the current iterate.

    Returns
    -------
    ndarray, shape (..., d, d)

    Raises
    ------
    NoConvergence
        If the iteration cap is reached before the gradient is small.

    See Also
    --------
    karcher_mean_log : the same computation on matrix logarithms.
    """
    pts = [_as_square(p, "point") for p in points]
    if not pts:
        raise ValueError("barycenter needs at least one point")
    _same_dim(*pts)
    logs = np.stack([matrix_log(p) for p in pts])
    mean, _ = karcher_mean_log(logs, max_iter=max_iter, tol=tol)
    return matrix_exp(mean)


# ---------------------------------------------------------------------------
# log-domain primitives


def _jacobi_columns(x, max_sweeps=40, tol=1e-15):
    """One-sided Jacobi orthogonalization of the columns of ``x``.

    Returns column norms and unit columns of ``x @ J`` where ``J`` is the
    accumulated rotation. Works on batched input.
    """
    x = np.array(x, dtype=float, copy=True)
    d = x.shape[-1]
    for _ in range(max_sweeps):
        rotated = False
        for i in range(d - 1):
            for j in range(i + 1, d):
                xi, xj = x[..., :, i], x[..., :, j]
                a = np.einsum("...k,...k->...", xi, xi)
                b = np.einsum("...k,...k->...", xj, xj)
                c = np.einsum("...k,...k->...", xi, xj)
                active = np.abs(c) > tol * np.sqrt(a * b)
                if not np.any(active):
                    continue
                rotated = True
                zeta = (b - a) / (2.0 * np.where(active, c, 1.0))
                tan = np.where(
                    zeta == 0, 1.0, np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                )
                cos = 1.0 / np.sqrt(1.0 + tan * tan)
                sin = cos * tan
                cos = np.where(active, cos, 1.0)[..., None]
                sin = np.where(active, sin, 0.0)[..., None]
                new_i = cos * xi - sin * xj
                new_j = sin * xi + cos * xj
                x[..., :, i] = new_i
                x[..., :, j] = new_j
        if not rotated:
            break
    norms = np.linalg.norm(x, axis=-2)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise SingularMatrix("rank-deficient factor in log-domain congruence")
    return norms, x / norms[..., None, :]


def log_gram(m):
    """Return ``log(m^T m)`` for invertible ``m`` via Jacobi on ``m^T``."""
    norms, u = _jacobi_columns(_swap(_as_square(m)))
    return symmetrize((u * (2.0 * np.log(norms))[..., None, :]) @ _swap(u))


def log_congruence(a, log_p):
    """Return ``log(a^T exp(log_p) a)``.

    Parameters
    ----------
    a : ndarray, shape (..., d, d)
        Invertible matrices.
    log_p : ndarray, shape (..., d, d)
        Symmetric matrices, the logarithm of the SPD factor.

    Returns
    -------
    ndarray, shape (..., d, d)
    """
    w, v = _eigh(log_p)
    c = np.exp(0.5 * w)[..., :, None] * (_swap(v) @ a)
    return log_gram(c)


def log_relative(log_p, log_q):
    """Return ``log(p^{-1/2} q p^{-1/2})`` from ``log p`` and ``log q``.

    Its Frobenius norm is the trace-metric distance between ``p`` and ``q``.
    """
    wp, vp = _eigh(log_p)
    wq, vq = _eigh(log_q)
    c = np.exp(0.5 * wq)[..., :, None] * (_swap(vq) @ vp) * np.exp(-0.5 * wp)[..., None, :]
    return symmetrize(vp @ log_gram(c) @ _swap(vp))


def log_exp_at(log_p, x, t=1.0):
    """Return ``log(p^{1/2} exp(t x) p^{1/2})``.

    This is the logarithm of the geodesic through ``p`` in the whitened
    direction ``x``.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim:
        t = t[..., None, None]
    wp, vp = _eigh(log_p)
    wx, vx = _eigh(t * np.asarray(x, dtype=float))
    c = np.exp(0.5 * wx)[..., :, None] * (_swap(vx) @ vp) * np.exp(0.5 * wp)[..., None, :]
    return symmetrize(vp @ log_gram(c) @ _swap(vp))


def _sym_basis(d):
    """Frobenius-orthonormal basis of symmetric ``d x d`` matrices."""
    out = []
    for i in range(d):
        for j in range(i, d):
            e = np.zeros((d, d))
            e[i, j] = e[j, i] = 1.0 if i == j else np.sqrt(0.5)
            out.append(e)
    return np.stack(out)


def _half_coth(delta):
    """``(delta / 2) coth(delta / 2)``, equal to 1 at 0."""
    h = 0.5 * np.abs(delta)
    small = h < 1e-8
    hs = np.where(small, 1.0, h)
    return np.where(small, 1.0 + h * h / 3.0, hs / np.tanh(hs))


def _karcher_newton(rel, m, basis):
    """Newton direction of ``(1/2l) sum_i d(p, p_i)^2`` in whitened coordinates.

    The Hessian of ``d(p, q)^2 / 2`` acts diagonally in the eigenbasis of
    ``L = log(p^{-1/2} q p^{-1/2})``, scaling the ``(i, j)`` entry by
    ``(delta/2) coth(delta/2)`` with ``delta = l_i - l_j``.
    """
    w, u = np.linalg.eigh(rel)
    phi = _half_coth(w[..., :, None] - w[..., None, :])
    ut = _swap(u)
    cols = [np.einsum("bij,...ij->...b", basis, (u @ (phi * (ut @ e @ u)) @ ut).mean(axis=0)) for e in basis]
    hess = np.stack(cols, axis=-1)
    rhs = np.einsum("bij,...ij->...b", basis, m)
    x = np.linalg.solve(hess, rhs[..., None])[..., 0]
    return np.einsum("...b,bij->...ij", x, basis)


def karcher_mean_log(logs, max_iter=200, tol=None, floor=None):
    """Karcher barycenter computed on matrix logarithms.

    Parameters
    ----------
    logs : ndarray, shape (l, ..., d, d)
        Logarithms of the ``l`` points. Leading axes after the first are
        independent problems (for example grid cells).
    max_iter : int
        Iteration cap.
    tol : float, optional
        Target for the norm of the mean logarithm map at the iterate.
    floor : float, optional
        Accuracy accepted, per unit of spread of the points, when rounding
        stops progress before ``tol`` is reached.

    Returns
    -------
    mean : ndarray, shape (..., d, d)
        Logarithm of the barycenter.
    info : dict
        ``iterations`` and ``gradient_norm`` (largest gradient norm over
        the batch at exit).

    Raises
    ------
    NoConvergence
        If some problem stops above its accepted accuracy.

    Notes
    -----
    The iteration starts from the log-Euclidean mean and takes damped
    Riemannian Newton steps with the closed-form Hessian of the squared
    distance. Step lengths halve until the cost drops by a quarter of the
    predicted decrease. Once the cost no longer changes above rounding
    level, a step is accepted only if it halves the gradient norm,
    and the problem is marked stalled otherwise.
    Points far apart (tens of nats) leave a rounding floor on the computed
    gradient that grows with their spread, hence the spread-relative
    ``floor``.
    """
    tol = DEFAULT_TOLERANCES.barycenter_gradient if tol is None else tol
    floor = DEFAULT_TOLERANCES.barycenter_floor if floor is None else floor
    logs = symmetrize(_as_square(logs, "logs"))
    if logs.ndim < 3 or logs.shape[0] == 0:
        raise ValueError("karcher_mean_log expects a nonempty stack of points")
    if logs.shape[0] == 1:
        return logs[0].copy(), {"iterations": 0, "gradient_norm": 0.0}
    basis = _sym_basis(logs.shape[-1])

    def stats(p):
        rel = np.stack([log_relative(p, q) for q in logs])
        return rel, rel.mean(axis=0), 0.5 * np.mean(np.sum(rel**2, axis=(-2, -1)), axis=0)

    p = logs.mean(axis=0)
    rel, m, f = stats(p)
    gn = np.linalg.norm(m, axis=(-2, -1))
    stalled = np.zeros(gn.shape, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        active = (gn > tol) & ~stalled
        if not np.any(active):
            break
        x = _karcher_newton(rel, m, basis)
        slope = np.sum(m * x, axis=(-2, -1))
        t = np.ones(gn.shape)
        todo = active.copy()
        for _ in range(40):
            p_new = log_exp_at(p, t[..., None, None] * x)
            rel_new, m_new, f_new = stats(p_new)
            gn_new = np.linalg.norm(m_new, axis=(-2, -1))
            level = np.abs(f_new - f) <= 1e-12 * (1.0 + f)
            armijo = f_new <= f - 0.25 * t * slope
            ok = todo & np.where(level, gn_new < 0.5 * gn, armijo)
            p = np.where(ok[..., None, None], p_new, p)
            rel = np.where(ok[None, ..., None, None], rel_new, rel)
            m = np.where(ok[..., None, None], m_new, m)
            f = np.where(ok, f_new, f)
            gn = np.where(ok, gn_new, gn)
            # shorter steps cannot help once the cost is flat to rounding
            stalled |= todo & ~ok & level
            todo &= ~ok & ~level
            if not np.any(todo):
                break
            t = np.where(todo, 0.5 * t, t)
        stalled |= todo
    spread = np.sqrt(np.max(np.sum(rel**2, axis=(-2, -1)), axis=0))
    unresolved = gn > np.maximum(tol, floor * (1.0 + spread))
    worst = float(gn.max()) if gn.size else 0.0
    if np.any(unresolved):
        raise NoConvergence(
            f"Karcher iteration stopped at gradient norm {worst:.3e} after {it} iterations"
        )
    return p, {"iterations": it, "gradient_norm": worst}
