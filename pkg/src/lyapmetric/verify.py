"""Seeded numerical property suites, shared by the CLI and the test-suite."""

import zlib
from dataclasses import dataclass

import numpy as np

from . import metric_field as mf
from . import objective as obj
from . import spd
from .dynamics import CAT_MAP, ToralAutomorphism, invariant_weights
from .optimizer import finite_difference_slope, gradient_field, verify_gradient
from .oracle import lyapunov_vector
from .tolerances import DEFAULT_TOLERANCES

__all__ = ["SuiteResult", "SUITES", "run_suites", "random_spd", "random_invertible"]

B_MAP = ToralAutomorphism([[2, 3], [1, 2]], description="automorphism B")


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    checked: int
    worst: float
    detail: str = ""

    def row(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<12} {status}  checked={self.checked:<6d} worst={self.worst:.3e}  {self.detail}"


def random_invertible(rng, d, size=(), scale=1.0):
    """Random matrices with controlled conditioning, via exp of a random matrix."""
    m = rng.standard_normal(size + (d, d)) * scale
    q, _ = np.linalg.qr(rng.standard_normal(size + (d, d)))
    return q @ spd.matrix_exp(spd.symmetrize(m))


def random_spd(rng, d, size=(), scale=1.0):
    return spd.matrix_exp(scale * spd.symmetrize(rng.standard_normal(size + (d, d))))


def suite_horn(rng, trials, tol):
    a = random_invertible(rng, 3, (trials,))
    b = random_invertible(rng, 3, (trials,))
    lhs = spd.log_singular_values(a @ b)
    rhs = spd.log_singular_values(a) + spd.log_singular_values(b)
    excess = np.cumsum(lhs, -1) - np.cumsum(rhs, -1)
    worst = max(float(excess[:, :-1].max()), float(np.abs(excess[:, -1]).max()))
    ok = all(spd.majorize_leq(lhs[i], rhs[i], atol=1e-8) for i in range(trials))
    return SuiteResult("horn", ok, trials, worst)


def suite_majorization(rng, trials, tol):
    fails = 0
    for _ in range(trials):
        x, y, z = (np.sort(rng.standard_normal(3))[::-1] for _ in range(3))
        if not spd.majorize_leq(x, x):
            fails += 1
        if spd.majorize_leq(x, y, weak=True) and spd.majorize_leq(y, z, weak=True):
            fails += not spd.majorize_leq(x, z, weak=True)
        if spd.majorize_leq(x, y) and spd.majorize_leq(y, x):
            fails += not np.allclose(x, y, atol=1e-8)
    return SuiteResult("majorization", fails == 0, trials, float(fails))


def suite_distance(rng, trials, tol):
    worst = 0.0
    for _ in range(trials):
        p, q, r = random_spd(rng, 3, (3,))
        g = random_invertible(rng, 3)
        dv = spd.vectorial_distance(p, q)
        worst = max(worst, float(np.abs(dv - spd.vectorial_distance(spd.gl_action(g, p), spd.gl_action(g, q))).max()))
        worst = max(worst, abs(float(np.linalg.norm(dv)) - float(spd.spd_distance(p, q))))
        worst = max(worst, float(np.abs(spd.vectorial_distance(q, p) + dv[::-1]).max()))
        tri = spd.vectorial_distance(p, r)
        if not spd.majorize_leq(tri, dv + spd.vectorial_distance(q, r), weak=True, atol=1e-9):
            worst = max(worst, 1.0)
    return SuiteResult("distance", worst <= 1e-8, trials, worst)


def suite_barycenter(rng, trials, tol):
    contraction = symmetry = equivariance = 0.0
    for _ in range(trials):
        l = int(rng.integers(2, 6))
        pts = random_spd(rng, 2, (l,))
        bar = spd.barycenter(list(pts))
        pts2 = pts.copy()
        pts2[-1] = random_spd(rng, 2)
        lhs = spd.vectorial_distance(bar, spd.barycenter(list(pts2)))
        rhs = spd.vectorial_distance(pts[-1], pts2[-1]) / l
        contraction = max(contraction, float(np.max(np.cumsum(lhs) - np.cumsum(rhs))))
        perm = rng.permutation(l)
        symmetry = max(symmetry, float(np.abs(spd.barycenter(list(pts[perm])) - bar).max()))
        g = random_invertible(rng, 2)
        moved = spd.barycenter([spd.gl_action(g, p) for p in pts])
        equivariance = max(equivariance, float(np.abs(moved - spd.gl_action(g, bar)).max() / np.abs(moved).max()))
    ok = contraction <= 1e-7 and symmetry <= 1e-8 and equivariance <= 1e-8
    detail = f"contraction={contraction:.1e} permutation={symmetry:.1e} equivariance={equivariance:.1e}"
    return SuiteResult("barycenter", ok, trials, max(contraction, symmetry, equivariance), detail)


def _field_pairs(rng, trials, n=8):
    for _ in range(trials):
        scale = float(rng.uniform(0.1, 1.5))
        yield (
            mf.random_metric(n, 2, scale=scale, seed=rng),
            mf.random_metric(n, 2, scale=scale, seed=rng),
        )


def suite_convexity(rng, trials, tol):
    worst = 0.0
    for system in (CAT_MAP, B_MAP):
        w = invariant_weights(system, 8)
        for ga, gb in _field_pairs(rng, trials // 2):
            worst = max(worst, obj.convexity_violation(system, ga, gb, w, ts=(0.1, 0.25, 0.5, 0.75, 0.9)))
    return SuiteResult("convexity", worst <= tol.convexity, trials, worst)


def suite_lipschitz(rng, trials, tol):
    worst = -np.inf
    for system in (CAT_MAP, B_MAP):
        w = invariant_weights(system, 8)
        for g1, g2 in _field_pairs(rng, trials // 2):
            for k in (1, 2):
                lhs, rhs = obj.lipschitz_check(system, g1, g2, w, k)
                worst = max(worst, lhs - rhs)
    return SuiteResult("lipschitz", worst <= tol.lipschitz, trials, max(worst, 0.0))


def suite_bochi(rng, trials, tol):
    worst = 0.0
    gaps = {}
    for system in (CAT_MAP, B_MAP):
        g0 = mf.flat_metric(4)
        lam = float(np.log(np.abs(np.linalg.eigvals(system.matrix)).max()))
        for N in (1, 2, 4, 8, 16):
            gN = mf.bochi_sequence(system, g0, N)
            lhs = obj.cell_sigmas(system, gN)
            rhs = obj.sigma_iterate(system, g0, N) / N
            excess = np.cumsum(lhs, -1) - np.cumsum(rhs, -1)
            worst = max(worst, float(excess[:, :-1].max()), float(np.abs(excess[:, -1]).max()))
            gaps[(system.description, N)] = float(lhs[:, 0].mean()) - lam
    shrink = gaps[("automorphism B", 16)] < 0.25 * gaps[("automorphism B", 1)]
    return SuiteResult("bochi", worst <= tol.bochi and shrink, 10, worst, "gap(16) < gap(1)/4" if shrink else "no gap shrink")


def suite_gradient(rng, trials, tol):
    w = invariant_weights(B_MAP, 8)
    g = mf.flat_metric(8)
    err = verify_gradient(B_MAP, g, w, 1, n_directions=min(trials, 20), delta=1e-5, seed=int(rng.integers(2**31)))
    slope = finite_difference_slope(B_MAP, g, w, 1)
    zero = gradient_field(CAT_MAP, mf.flat_metric(8), invariant_weights(CAT_MAP, 8), 1).norm(
        invariant_weights(CAT_MAP, 8)
    )
    ok = err < 1e-3 and abs(slope - 2.0) <= 0.3 and zero < 1e-8
    return SuiteResult("gradient", ok, min(trials, 20), err, f"slope={slope:.3f}")


def suite_lower_bound(rng, trials, tol):
    worst = 0.0
    for system in (CAT_MAP, B_MAP):
        w = invariant_weights(system, 8)
        est = lyapunov_vector(system, w, n_steps=2000, samples=8, seed=0)
        for _ in range(trials // 2):
            g = mf.random_metric(8, 2, scale=float(rng.uniform(0.1, 1.5)), seed=rng)
            svec = obj.evaluate_objective(system, g, w).svec
            excess = np.cumsum(est.lambda_) - np.cumsum(svec)
            worst = max(worst, float(excess[:-1].max()), float(abs(excess[-1])))
    return SuiteResult("lower_bound", worst <= tol.lower_bound, trials, worst)


def suite_sandwich(rng, trials, tol):
    fails, checked = 0, 0
    for _ in range(trials):
        a = np.sort(rng.standard_normal(3))[::-1]
        eps = float(rng.uniform(0.01, 0.5))
        b = np.sort(a + rng.uniform(0, eps, 3))[::-1]
        res = obj.sandwich_check(a, b, eps)
        if res is not None:
            checked += 1
            fails += not res
    return SuiteResult("sandwich", fails == 0, checked, float(fails))


SUITES = {
    "horn": suite_horn,
    "majorization": suite_majorization,
    "distance": suite_distance,
    "barycenter": suite_barycenter,
    "convexity": suite_convexity,
    "lipschitz": suite_lipschitz,
    "bochi": suite_bochi,
    "gradient": suite_gradient,
    "lower_bound": suite_lower_bound,
    "sandwich": suite_sandwich,
}

DEFAULT_TRIALS = {
    "horn": 1000,
    "majorization": 500,
    "distance": 200,
    "barycenter": 50,
    "convexity": 100,
    "lipschitz": 100,
    "bochi": 1,
    "gradient": 20,
    "lower_bound": 50,
    "sandwich": 500,
}


def run_suites(names=None, seed=0, trials=None, tolerances=None):
    """Run the named suites (all by default) and return their results in order."""
    tol = tolerances or DEFAULT_TOLERANCES
    names = list(SUITES) if not names else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite {unknown[0]!r}; expected one of {sorted(SUITES)}")
    results = []
    for name in names:
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        count = DEFAULT_TRIALS[name] if trials is None else int(trials)
        results.append(SUITES[name](rng, count, tol))
    return results
