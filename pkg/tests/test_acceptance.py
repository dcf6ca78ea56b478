"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line that is printed in the terminal
summary under "acceptance criteria".
"""

import time

import numpy as np
import pytest

from lyapmetric import CAT_MAP, PerturbedAutomorphism, StandardMap, ToralAutomorphism
from lyapmetric import metric_field as mf
from lyapmetric import objective as obj
from lyapmetric import optimizer as opt
from lyapmetric import spd
from lyapmetric.dynamics import invariant_weights
from lyapmetric.oracle import lyapunov_vector
from lyapmetric.verify import random_invertible

GOLDEN = np.log((3 + np.sqrt(5)) / 2)
B_MAP = ToralAutomorphism([[2, 3], [1, 2]])
B_LAMBDA = np.log(2 + np.sqrt(3))
B_FLAT = 0.5 * np.log(9 + 4 * np.sqrt(5))
IDENTITY = PerturbedAutomorphism(np.eye(2, dtype=int))
PERTURBED = PerturbedAutomorphism([[2, 1], [1, 1]], eps=0.1)
STANDARD = StandardMap(1.5)
SHIPPED = {"cat": CAT_MAP, "B": B_MAP, "standard": STANDARD, "perturbed": PERTURBED, "identity": IDENTITY}
INTERIOR_T = (0.1, 0.25, 0.5, 0.75, 0.9)


def _trace_logdet(g):
    return float(np.abs(np.trace(g.logs, axis1=-2, axis2=-1)).max())


def _pairs(rng, count, n=8):
    for _ in range(count):
        scale = float(rng.uniform(0.1, 1.5))
        yield mf.random_metric(n, scale=scale, seed=rng), mf.random_metric(n, scale=scale, seed=rng)


def test_criterion_01_oracle(record_criterion):
    start = time.perf_counter()
    est = lyapunov_vector(CAT_MAP, n_steps=10_000, samples=64)
    elapsed = time.perf_counter() - start
    err = float(np.abs(est.lambda_ - [GOLDEN, -GOLDEN]).max())
    ok = record_criterion(1, "cat-map oracle", err <= 1e-6 and elapsed < 5.0, f"err={err:.1e} time={elapsed:.2f}s")
    assert ok


def test_criterion_02_minimizer(record_criterion):
    n = 16
    w = invariant_weights(CAT_MAP, n)
    g = mf.flat_metric(n)
    rep = obj.evaluate_objective(CAT_MAP, g, w)
    err = float(np.abs(rep.svec - [GOLDEN, -GOLDEN]).max())
    gnorm = opt.gradient_field(CAT_MAP, g, w, 1).norm(w)
    _, trace = opt.descend(CAT_MAP, g, w)
    ok = err <= 1e-6 and gnorm < 1e-8 and trace.iterations == 0
    detail = f"|S-lambda|={err:.1e} |grad|={gnorm:.1e} iterations={trace.iterations}"
    assert record_criterion(2, "flat metric is the cat-map minimizer", ok, detail)


def test_criterion_03_convex_descent(record_criterion):
    n = 16
    w = invariant_weights(B_MAP, n)
    start = time.perf_counter()
    _, trace = opt.descend(B_MAP, mf.flat_metric(n), w, opt.OptimizerConfig(k_weights=(1.0, 0.0), max_iters=500))
    elapsed = time.perf_counter() - start
    s1 = trace.column("s_partial", 1)
    gap = float(s1[-1] - B_LAMBDA)
    ok = abs(s1[0] - B_FLAT) < 1e-12 and np.all(np.diff(s1) < 0) and -1e-12 <= gap < 1e-3
    ok = ok and trace.iterations <= 500 and elapsed < 60.0
    detail = f"s1 {s1[0]:.4f}->{s1[-1]:.6f} gap={gap:.1e} iterations={trace.iterations} time={elapsed:.2f}s"
    assert record_criterion(3, "descent to log(2+sqrt3) on B", ok, detail)


def test_criterion_04_bochi(record_criterion):
    n = 16
    worst = 0.0
    gaps = {}
    starts = {"cat": mf.random_metric(n, scale=0.5, seed=0), "B": mf.flat_metric(n)}
    lam = {"cat": GOLDEN, "B": B_LAMBDA}
    for name, system in (("cat", CAT_MAP), ("B", B_MAP)):
        g0 = starts[name]
        w = invariant_weights(system, n)
        for N in (1, 2, 4, 8, 16):
            gN = mf.bochi_sequence(system, g0, N)
            lhs = np.cumsum(obj.cell_sigmas(system, gN), -1)
            rhs = np.cumsum(obj.sigma_iterate(system, g0, N) / N, -1)
            worst = max(worst, float((lhs[:, :-1] - rhs[:, :-1]).max()), float(np.abs(lhs[:, -1] - rhs[:, -1]).max()))
            gaps[name, N] = float(obj.evaluate_objective(system, gN, w).s_partial[0] - lam[name])
    shrink = all(gaps[k, 16] < 0.25 * gaps[k, 1] for k in ("cat", "B"))
    detail = f"worst excess={worst:.1e} gap B: {gaps['B', 1]:.3e}->{gaps['B', 16]:.3e}"
    assert record_criterion(4, "Bochi inequality and gap shrink", worst <= 1e-7 and shrink, detail)


def test_criterion_05_lower_bound(record_criterion):
    n = 16
    rng = np.random.default_rng(5)
    violations, worst = 0, -np.inf
    for system in SHIPPED.values():
        w = invariant_weights(system, n)
        est = lyapunov_vector(system, w, n_steps=10_000, samples=64)
        for _ in range(50):
            g = mf.random_metric(n, scale=float(rng.uniform(0.05, 1.5)), seed=rng, smooth=bool(rng.integers(2)))
            svec = obj.evaluate_objective(system, g, w).svec
            excess = np.cumsum(est.lambda_) - np.cumsum(svec)
            worst = max(worst, float(excess[:-1].max()), float(abs(excess[-1])))
            violations += not spd.majorize_leq(est.lambda_, svec, atol=1e-5)
    detail = f"{len(SHIPPED)} systems x 50 fields, violations={violations} worst excess={worst:.1e}"
    assert record_criterion(5, "oracle majorized by S(g)", violations == 0, detail)


def test_criterion_06_convexity(record_criterion):
    rng = np.random.default_rng(6)
    violations, worst = 0, 0.0
    for i, (ga, gb) in enumerate(_pairs(rng, 100)):
        system = CAT_MAP if i % 2 else B_MAP
        v = obj.convexity_violation(system, ga, gb, invariant_weights(system, 8), ts=INTERIOR_T)
        worst = max(worst, v)
        violations += v > 1e-8
    detail = f"100 pairs x {len(INTERIOR_T)} t, violations={violations} worst={worst:.1e}"
    assert record_criterion(6, "geodesic cone-convexity", violations == 0, detail)


def test_criterion_07_lipschitz(record_criterion):
    rng = np.random.default_rng(7)
    violations, worst = 0, -np.inf
    for i, (g1, g2) in enumerate(_pairs(rng, 100)):
        system = CAT_MAP if i % 2 else B_MAP
        w = invariant_weights(system, 8)
        for k in (1, 2):
            lhs, rhs = obj.lipschitz_check(system, g1, g2, w, k)
            worst = max(worst, lhs - rhs)
            violations += lhs > rhs + 1e-8
    detail = f"100 pairs x k in (1, 2), violations={violations} max(lhs-rhs)={worst:.2e}"
    assert record_criterion(7, "L2 Lipschitz bound", violations == 0, detail)


def test_criterion_08_gradient(record_criterion):
    n = 16
    w = invariant_weights(B_MAP, n)
    g = mf.flat_metric(n)
    err = opt.verify_gradient(B_MAP, g, w, 1, n_directions=20, delta=1e-5, seed=8)
    ok = err < 1e-3 and opt.GRADIENT_SCALE == 0.5
    assert record_criterion(8, "gradient vs central differences", ok, f"max rel err={err:.1e} scale={opt.GRADIENT_SCALE}")


def test_criterion_09_structure(record_criterion):
    rng = np.random.default_rng(9)
    n = 8
    det_worst = 0.0
    for system in (CAT_MAP, B_MAP, STANDARD, PERTURBED):
        g = mf.random_metric(n, scale=1.0, seed=rng)
        g2 = mf.random_metric(n, scale=1.0, seed=rng)
        det_worst = max(det_worst, _trace_logdet(mf.pullback(system, g)))
        for t in (-2.0, 0.5, 2.0):
            det_worst = max(det_worst, _trace_logdet(mf.geodesic_step(g, mf.connecting_tangent(g, g2), t)))
        det_worst = max(det_worst, _trace_logdet(mf.field_barycenter([g, g2, mf.pullback(system, g)])))
        det_worst = max(det_worst, float(np.abs(np.linalg.slogdet(mf.pullback(system, g).gram)[1]).max()))

    sd_worst = 0.0
    trace_worst = 0.0
    for system in (CAT_MAP, B_MAP, STANDARD, PERTURBED, IDENTITY):
        w = invariant_weights(system, n)
        for _ in range(10):
            g = mf.random_metric(n, scale=1.0, seed=rng)
            sd_worst = max(sd_worst, abs(float(obj.evaluate_objective(system, g, w).s_partial[-1])))
            grad = opt.gradient_field(system, g, w, 1, gap_margin=0.0)
            trace_worst = max(trace_worst, float(np.abs(np.trace(grad.direction(), axis1=-2, axis2=-1)).max()))
            if system.exact_grid:
                trace_worst = max(trace_worst, float(np.abs(grad.trace_residual()).max()))

    a = random_invertible(rng, 3, (1000,))
    b = random_invertible(rng, 3, (1000,))
    lhs = spd.log_singular_values(a @ b)
    rhs = spd.log_singular_values(a) + spd.log_singular_values(b)
    horn_fail = sum(not spd.majorize_leq(lhs[i], rhs[i], atol=1e-8) for i in range(1000))

    ok = det_worst <= 1e-10 and sd_worst <= 1e-8 and trace_worst <= 1e-8 and horn_fail == 0
    detail = f"logdet={det_worst:.1e} s_d={sd_worst:.1e} trace={trace_worst:.1e} horn failures={horn_fail}/1000"
    assert record_criterion(9, "structural invariants", ok, detail)


@pytest.mark.slow
def test_criterion_10_standard_map(record_criterion):
    n = 32
    w = invariant_weights(STANDARD, n)
    est = lyapunov_vector(STANDARD, w, n_steps=10_000, samples=1024)
    _, trace = opt.descend(STANDARD, mf.flat_metric(n), w, opt.OptimizerConfig(max_iters=500), est)
    s1, s2 = trace.column("s_partial", 1), trace.column("s_partial", 2)
    monotone = bool(np.all(np.diff(s1) <= 0))
    s2_max = float(np.abs(s2).max())
    ratio = float(s1[-1] / est.lambda_[0])
    ok = monotone and s2_max <= 1e-6 and abs(ratio - 1) <= 0.10
    detail = f"s1={s1[-1]:.5f} oracle={est.lambda_[0]:.5f} ratio={ratio:.3f} |s2|<={s2_max:.0e} monotone={monotone}"
    assert record_criterion(10, "standard map K=1.5, n=32", ok, detail)
