import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lyapmetric import spd
from lyapmetric.exceptions import DimensionMismatch, NoConvergence, NotPositiveDefinite, SingularMatrix
from lyapmetric.verify import random_invertible, random_spd

E = np.e
seeds = st.integers(0, 2**32 - 1)
dims = st.integers(2, 4)
vectors = arrays(np.float64, 3, elements=st.floats(-5, 5, allow_nan=False))


def _spd(seed, d, count=1, scale=1.0):
    return random_spd(np.random.default_rng(seed), d, (count,), scale)


class TestMatrixFunctions:
    def test_log_identity(self):
        np.testing.assert_array_equal(spd.matrix_log(np.eye(3)), np.zeros((3, 3)))

    def test_exp_diagonal(self):
        np.testing.assert_allclose(spd.matrix_exp(np.diag([1.0, 2.0])), np.diag([E, E**2]), rtol=1e-14)

    @given(seeds, dims)
    def test_sqrt_squares_back(self, seed, d):
        (p,) = _spd(seed, d)
        r = spd.matrix_sqrt(p)
        np.testing.assert_allclose(r @ r, p, atol=1e-10 * np.abs(p).max())

    @given(seeds, dims)
    def test_exp_log_round_trip(self, seed, d):
        (p,) = _spd(seed, d)
        np.testing.assert_allclose(spd.matrix_exp(spd.matrix_log(p)), p, rtol=1e-10, atol=1e-12)

    def test_power_half_is_sqrt(self, rng):
        p = random_spd(rng, 3)
        np.testing.assert_allclose(spd.matrix_power(p, 0.5), spd.matrix_sqrt(p), rtol=1e-12)
        np.testing.assert_allclose(spd.matrix_invsqrt(p) @ spd.matrix_sqrt(p), np.eye(3), atol=1e-12)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            spd.matrix_log(np.diag([1.0, -1.0]))

    def test_shape_check(self):
        with pytest.raises(DimensionMismatch):
            spd.matrix_log(np.ones((2, 3)))

    def test_remove_trace(self, rng):
        s = spd.symmetrize(rng.standard_normal((5, 3, 3)))
        assert np.abs(np.trace(spd.remove_trace(s), axis1=-2, axis2=-1)).max() < 1e-14


class TestLogSingularValues:
    def test_identity(self):
        np.testing.assert_array_equal(spd.log_singular_values(np.eye(2)), [0.0, 0.0])

    def test_diagonal(self):
        np.testing.assert_allclose(spd.log_singular_values(np.diag([E**2, E**-3])), [2.0, -3.0], atol=1e-14)

    def test_cat_matrix_matches_eigenvalues(self):
        a = np.array([[2.0, 1.0], [1.0, 1.0]])
        expected = np.sort(np.log(np.abs(np.linalg.eigvalsh(a))))[::-1]
        np.testing.assert_allclose(spd.log_singular_values(a), expected, atol=1e-14)
        np.testing.assert_allclose(expected[0], np.log((3 + np.sqrt(5)) / 2), atol=1e-15)

    def test_singular(self):
        with pytest.raises(SingularMatrix):
            spd.log_singular_values(np.array([[1.0, 2.0], [2.0, 4.0]]) * 0.0)

    @given(seeds, dims)
    def test_sorted_and_sum_is_logdet(self, seed, d):
        m = random_invertible(np.random.default_rng(seed), d)
        s = spd.log_singular_values(m)
        assert np.all(np.diff(s) <= 1e-15)
        assert abs(s.sum() - np.linalg.slogdet(m)[1]) < 1e-10

    @given(seeds)
    def test_horn_inequality(self, seed):
        r = np.random.default_rng(seed)
        a, b = random_invertible(r, 3, (2,))
        lhs = spd.log_singular_values(a @ b)
        rhs = spd.log_singular_values(a) + spd.log_singular_values(b)
        assert spd.majorize_leq(lhs, rhs, atol=1e-8)


class TestDeterministicSvd:
    def test_reconstructs(self, rng):
        m = rng.standard_normal((6, 3, 3))
        u, s, vt = spd.svd(m)
        np.testing.assert_allclose(u * s[..., None, :] @ vt, m, atol=1e-12)

    def test_sign_convention(self, rng):
        u, _, _ = spd.svd(rng.standard_normal((10, 3, 3)))
        first = np.array([[c[np.flatnonzero(np.abs(c) > 1e-12)[0]] for c in ui.T] for ui in u])
        assert np.all(first > 0)

    def test_ties_are_reproducible(self):
        u1, s1, v1 = spd.svd(np.eye(3))
        u2, s2, v2 = spd.svd(np.eye(3).copy())
        np.testing.assert_array_equal(u1, u2)
        np.testing.assert_array_equal(s1, [1.0, 1.0, 1.0])


class TestMajorization:
    def test_strong_example(self):
        assert spd.majorize_leq([1.0, -1.0], [2.0, -2.0])

    def test_weak_failure(self):
        assert not spd.majorize_leq([2.0, 0.0], [1.0, 0.0], weak=True)

    def test_sum_mismatch_breaks_strong_only(self):
        assert spd.majorize_leq([1.0, 0.0], [1.0, 1.0], weak=True)
        assert not spd.majorize_leq([1.0, 0.0], [1.0, 1.0])

    def test_length_check(self):
        with pytest.raises(DimensionMismatch):
            spd.majorize_leq([1.0, 0.0], [1.0, 0.0, 0.0])

    def test_partial_sums(self):
        np.testing.assert_array_equal(spd.partial_sums([3.0, 1.0, -4.0]), [3.0, 4.0, 0.0])

    @given(vectors)
    def test_reflexive(self, x):
        assert spd.majorize_leq(x, x)

    @given(vectors, vectors, vectors)
    def test_transitive(self, x, y, z):
        for weak in (True, False):
            if spd.majorize_leq(x, y, weak=weak, atol=0) and spd.majorize_leq(y, z, weak=weak, atol=0):
                assert spd.majorize_leq(x, z, weak=weak, atol=1e-9)

    @given(vectors, vectors)
    def test_antisymmetric(self, x, y):
        if spd.majorize_leq(x, y) and spd.majorize_leq(y, x):
            np.testing.assert_allclose(np.sort(x), np.sort(y), atol=1e-8)

    @given(vectors)
    def test_mean_vector_is_minimal(self, x):
        # the constant vector with the same sum sits below everything
        assert spd.majorize_leq(np.full(3, x.mean()), x, atol=1e-9)


class TestDistance:
    def test_self_distance(self, rng):
        p = random_spd(rng, 3)
        assert spd.spd_distance(p, p) < 1e-12

    def test_diagonal(self):
        assert abs(spd.spd_distance(np.eye(2), np.diag([E**2, E**-2])) - 2 * np.sqrt(2)) < 1e-14

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            spd.spd_distance(np.eye(2), np.eye(3))

    @given(seeds)
    def test_gl_invariance(self, seed):
        r = np.random.default_rng(seed)
        p, q = random_spd(r, 3, (2,))
        g = random_invertible(r, 3)
        assert abs(spd.spd_distance(p, q) - spd.spd_distance(spd.gl_action(g, p), spd.gl_action(g, q))) < 1e-9

    @given(seeds)
    def test_triangle(self, seed):
        p, q, r = random_spd(np.random.default_rng(seed), 3, (3,))
        assert spd.spd_distance(p, r) <= spd.spd_distance(p, q) + spd.spd_distance(q, r) + 1e-9


class TestGeodesics:
    def test_constant_geodesic(self, rng):
        p = random_spd(rng, 2)
        np.testing.assert_allclose(spd.geodesic_between(p, p, 0.5), p, rtol=1e-12)

    def test_diagonal_midpoint(self):
        np.testing.assert_allclose(
            spd.geodesic_between(np.eye(2), np.diag([4.0, 0.25]), 0.5), np.diag([2.0, 0.5]), atol=1e-14
        )

    @given(seeds, st.floats(-1.5, 2.5))
    def test_inverse_commutes(self, seed, t):
        p, q = _spd(seed, 3, 2)
        lhs = np.linalg.inv(spd.geodesic_between(p, q, t))
        rhs = spd.geodesic_between(np.linalg.inv(p), np.linalg.inv(q), t)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * np.abs(rhs).max())

    def test_zero_velocity(self, rng):
        p = random_spd(rng, 3)
        for t in (0.0, 1.0, 3.0):
            np.testing.assert_allclose(spd.geodesic_from(p, np.zeros((3, 3)), t), p, rtol=1e-12)

    def test_diagonal_velocity(self):
        np.testing.assert_allclose(spd.geodesic_from(np.eye(2), np.diag([1.0, -1.0]), 1.0), np.diag([E, 1 / E]))

    @given(seeds)
    def test_velocity_endpoint(self, seed):
        p, q = _spd(seed, 3, 2)
        ph, pih = spd.matrix_sqrt(p), spd.matrix_invsqrt(p)
        v = ph @ spd.matrix_log(pih @ q @ pih) @ ph
        np.testing.assert_allclose(spd.geodesic_from(p, v, 1.0), q, atol=1e-9 * np.abs(q).max())

    @given(seeds, st.floats(0, 1))
    def test_equivariance(self, seed, t):
        r = np.random.default_rng(seed)
        p, q = random_spd(r, 3, (2,))
        g = random_invertible(r, 3)
        lhs = spd.gl_action(g, spd.geodesic_between(p, q, t))
        rhs = spd.geodesic_between(spd.gl_action(g, p), spd.gl_action(g, q), t)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9 * np.abs(rhs).max())


class TestAction:
    def test_identity(self, rng):
        p = random_spd(rng, 2)
        np.testing.assert_array_equal(spd.gl_action(np.eye(2), p), p)

    def test_diagonal(self):
        np.testing.assert_array_equal(spd.gl_action(np.diag([2.0, 1.0]), np.eye(2)), np.diag([4.0, 1.0]))


class TestVectorialDistance:
    def test_diagonal(self):
        np.testing.assert_allclose(spd.vectorial_distance(np.eye(2), np.diag([E**2, E**-4])), [2.0, -4.0], atol=1e-13)

    def test_self(self, rng):
        p = random_spd(rng, 3)
        assert np.abs(spd.vectorial_distance(p, p)).max() < 1e-12

    @given(seeds)
    def test_reversal(self, seed):
        p, q = _spd(seed, 3, 2)
        np.testing.assert_allclose(spd.vectorial_distance(q, p), -spd.vectorial_distance(p, q)[::-1], atol=1e-9)

    @given(seeds)
    def test_invariance_and_norm(self, seed):
        r = np.random.default_rng(seed)
        p, q = random_spd(r, 3, (2,))
        g = random_invertible(r, 3)
        dv = spd.vectorial_distance(p, q)
        np.testing.assert_allclose(spd.vectorial_distance(spd.gl_action(g, p), spd.gl_action(g, q)), dv, atol=1e-9)
        assert abs(np.linalg.norm(dv) - spd.spd_distance(p, q)) < 1e-9

    @given(seeds)
    def test_triangle_in_order(self, seed):
        p, q, r = _spd(seed, 3, 3)
        total = spd.vectorial_distance(p, q) + spd.vectorial_distance(q, r)
        assert spd.majorize_leq(spd.vectorial_distance(p, r), total, weak=True, atol=1e-9)


class TestBarycenter:
    def test_single_point(self, rng):
        p = random_spd(rng, 3)
        np.testing.assert_allclose(spd.barycenter([p]), p, rtol=1e-10)

    def test_two_points_is_midpoint(self, rng):
        p, q = random_spd(rng, 3, (2,))
        np.testing.assert_allclose(spd.barycenter([p, q]), spd.geodesic_between(p, q, 0.5), rtol=1e-9)

    def test_empty(self):
        with pytest.raises(ValueError):
            spd.barycenter([])

    def test_iteration_cap(self, rng):
        pts = list(random_spd(rng, 3, (4,), scale=2.0))
        with pytest.raises(NoConvergence):
            spd.barycenter(pts, max_iter=1)

    @given(seeds, st.integers(2, 5))
    def test_equivariance_and_symmetry(self, seed, count):
        r = np.random.default_rng(seed)
        pts = random_spd(r, 2, (count,))
        g = random_invertible(r, 2)
        bar = spd.barycenter(list(pts))
        moved = spd.barycenter([spd.gl_action(g, p) for p in pts])
        np.testing.assert_allclose(moved, spd.gl_action(g, bar), atol=1e-8 * np.abs(moved).max())
        np.testing.assert_allclose(spd.barycenter(list(pts[r.permutation(count)])), bar, atol=1e-8)

    @given(seeds, st.integers(2, 5))
    def test_contraction(self, seed, count):
        r = np.random.default_rng(seed)
        pts = random_spd(r, 2, (count,))
        other = pts.copy()
        other[-1] = random_spd(r, 2)
        lhs = spd.vectorial_distance(spd.barycenter(list(pts)), spd.barycenter(list(other)))
        rhs = spd.vectorial_distance(pts[-1], other[-1]) / count
        assert spd.majorize_leq(lhs, rhs, weak=True, atol=1e-7)

    def test_ill_conditioned_logs(self):
        # log-domain mean stays accurate far beyond float64 conditioning
        logs = np.stack([np.diag([40.0, -40.0]), np.diag([-20.0, 20.0])])
        mean, info = spd.karcher_mean_log(logs)
        np.testing.assert_allclose(mean, np.diag([10.0, -10.0]), atol=1e-9)
        assert info["gradient_norm"] <= 1e-10


class TestLogDomain:
    @given(seeds)
    def test_congruence_matches_explicit(self, seed):
        r = np.random.default_rng(seed)
        p = random_spd(r, 3)
        a = random_invertible(r, 3)
        np.testing.assert_allclose(
            spd.matrix_exp(spd.log_congruence(a, spd.matrix_log(p))), a.T @ p @ a, rtol=1e-9, atol=1e-12
        )

    @given(seeds)
    def test_relative_and_exp_at(self, seed):
        p, q = _spd(seed, 3, 2)
        lp, lq = spd.matrix_log(p), spd.matrix_log(q)
        rel = spd.log_relative(lp, lq)
        pih = spd.matrix_invsqrt(p)
        np.testing.assert_allclose(rel, spd.matrix_log(pih @ q @ pih), atol=1e-9)
        np.testing.assert_allclose(spd.log_exp_at(lp, rel, 1.0), lq, atol=1e-9)

    def test_gram(self, rng):
        m = random_invertible(rng, 3)
        np.testing.assert_allclose(spd.matrix_exp(spd.log_gram(m)), m.T @ m, rtol=1e-10)
