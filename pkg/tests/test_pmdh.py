"""Forward-model tests: histograms, counting, and perturbed-count moments."""

import math

import numpy as np
import pytest

from ldphist.errors import IncompleteHistogramError, InputError
from ldphist.pmdh import (
    Histogram,
    NormalParams,
    apply_linear_constraint,
    build_forward_operator,
    count_pmdh,
    cov_c,
    expected_c,
    forward_matrix,
    inverse_matrix,
    offset_vector,
    pmdh_normal_params,
)
from ldphist.protocols import EvidenceMatrix, ProtocolParams
from ldphist.setops import ColumnSet, GradedIndex
from ldphist.sim import RowTypeHistogram, cooccurrences_from_rowtypes

import oracles
from test_protocols import random_params

IDENTITY = ProtocolParams.identity()
U2 = GradedIndex(2, 2)
U3 = GradedIndex(3, 3)


def hist(universe, **counts):
    """Shorthand: hist(U2, n=10, c1=..., ...) with keys like 'n', 'c0', 'c01'."""
    mapping = {}
    for key, value in counts.items():
        if key == "n":
            mapping[0] = value
        else:
            mapping[sum(1 << int(ch) for ch in key[1:])] = value
    return Histogram(universe, mapping)


def random_truth_histogram(rng, d):
    counts = rng.integers(0, 20, size=1 << d).astype(float)
    return cooccurrences_from_rowtypes(RowTypeHistogram(d, counts))


class TestHistogram:
    def test_requires_empty_set(self):
        with pytest.raises(InputError):
            Histogram(U2, {1: 3.0})

    def test_rejects_nan_and_negative_total(self):
        with pytest.raises(InputError):
            Histogram(U2, {0: math.nan})
        with pytest.raises(InputError):
            Histogram(U2, {0: -1.0})

    def test_rejects_out_of_universe_masks(self):
        with pytest.raises(InputError):
            Histogram(U2, {0: 1.0, 4: 1.0})

    def test_get_and_total(self):
        h = hist(U2, n=10, c0=4, c1=3, c01=2)
        assert h.total == 10
        assert h.get(ColumnSet.of(0)) == 4
        assert h.get(ColumnSet.of(0, 1)) == 2
        assert ColumnSet.of(1) in h

    def test_missing_count_raises(self):
        h = hist(U2, n=10, c0=4)
        with pytest.raises(IncompleteHistogramError) as info:
            h.get(ColumnSet.of(0, 1))
        assert info.value.columns == (0, 1)

    def test_from_vector_round_trip(self):
        vec = np.array([4.0, 3.0, 2.0])
        h = Histogram.from_vector(U2, vec, 10.0)
        assert np.array_equal(h.vector(), vec)
        assert h.total == 10.0
        with pytest.raises(InputError):
            Histogram.from_vector(U2, vec[:2], 10.0)

    def test_items_ordering(self):
        h = hist(U2, n=10, c01=2, c1=3, c0=4)
        assert [cs.columns for cs, _ in h.items()] == [(), (0,), (1,), (0, 1)]

    def test_monotonicity_check(self):
        assert hist(U2, n=10, c0=4, c1=3, c01=2).is_monotone()
        assert not hist(U2, n=10, c0=1, c1=3, c01=2).is_monotone()

    def test_max_stored_order(self):
        assert hist(U2, n=10, c0=4).max_stored_order() == 1


class TestCountPmdh:
    def test_all_zero_evidence(self):
        ev = EvidenceMatrix(np.zeros((5, 2), dtype=np.uint8))
        h = count_pmdh(ev, U2)
        assert h.total == 5
        assert all(v == 0 for cs, v in h.items() if cs.size)

    def test_single_row(self):
        h = count_pmdh(EvidenceMatrix(np.array([[1, 1]])), U2)
        assert [v for _, v in h.items()] == [1, 1, 1, 1]

    def test_hand_counted_rows(self):
        ev = EvidenceMatrix(np.array([[1, 1], [1, 0], [0, 1]]))
        h = count_pmdh(ev, U2)
        assert h.get(ColumnSet.of(0)) == 2
        assert h.get(ColumnSet.of(1)) == 2
        assert h.get(ColumnSet.of(0, 1)) == 1

    def test_matches_direct_products(self):
        rng = np.random.default_rng(21)
        bits = (rng.random((200, 4)) < 0.4).astype(np.uint8)
        h = count_pmdh(EvidenceMatrix(bits), GradedIndex(4, 3))
        for cs in GradedIndex(4, 3).sets:
            want = int(np.all(bits[:, list(cs.columns)], axis=1).sum())
            assert h.get(cs) == want

    def test_width_mismatch(self):
        with pytest.raises(InputError):
            count_pmdh(EvidenceMatrix(np.zeros((2, 3), dtype=np.uint8)), U2)


class TestExpectedC:
    def test_identity_returns_truth(self):
        rng = np.random.default_rng(22)
        truth = random_truth_histogram(rng, 3)
        for cs in U3.sets:
            assert expected_c(truth, IDENTITY, cs) == truth.get(cs)

    def test_frozen_singleton(self):
        truth = hist(GradedIndex(1, 1), n=10, c0=4)
        got = expected_c(truth, ProtocolParams(0.1, 0.8), ColumnSet.of(0))
        assert got == pytest.approx(3.8, abs=1e-12)

    def test_frozen_pair_with_p_zero(self):
        truth = hist(U2, n=2, c0=1, c1=1, c01=1)
        got = expected_c(truth, ProtocolParams(0.0, 0.5), ColumnSet.of(0, 1))
        assert got == pytest.approx(0.25, abs=1e-12)

    def test_missing_subset_raises(self):
        truth = hist(U2, n=10, c0=4, c1=3)  # no pair count
        with pytest.raises(IncompleteHistogramError):
            expected_c(truth, ProtocolParams(0.1, 0.8), ColumnSet.of(0, 1))


class TestCovC:
    def test_disjoint_is_zero_without_counts(self):
        # The short-circuit must not require any histogram entries.
        sparse = hist(U3, n=5)
        params = ProtocolParams(0.1, 0.8)
        assert cov_c(sparse, params, ColumnSet.of(0), ColumnSet.of(1)) == 0.0
        assert cov_c(sparse, params, ColumnSet.of(0, 1), ColumnSet.of(2)) == 0.0

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(23)
        truth = random_truth_histogram(rng, 3)
        params = random_params(rng)
        for a in U3.sets:
            for b in U3.sets:
                assert cov_c(truth, params, a, b) == cov_c(truth, params, b, a)

    def test_singleton_variance_formula(self):
        rng = np.random.default_rng(24)
        for _ in range(50):
            params = random_params(rng)
            n = float(rng.integers(1, 100))
            t = float(rng.uniform(0, n))
            truth = hist(GradedIndex(1, 1), n=n, c0=t)
            want = oracles.var_c_single(n, t, params.p, params.q)
            got = cov_c(truth, params, ColumnSet.of(0), ColumnSet.of(0))
            assert got == pytest.approx(want, rel=1e-12, abs=1e-12)

    def test_single_pair_worked_formula(self):
        rng = np.random.default_rng(25)
        for _ in range(50):
            params = random_params(rng)
            truth = random_truth_histogram(rng, 2)
            want = oracles.cov_c_single_pair(
                truth.total,
                truth.get(ColumnSet.of(0)),
                truth.get(ColumnSet.of(1)),
                truth.get(ColumnSet.of(0, 1)),
                params.p,
                params.q,
            )
            got = cov_c(truth, params, ColumnSet.of(0), ColumnSet.of(0, 1))
            assert got == pytest.approx(want, rel=1e-12, abs=1e-12)

    def test_point_truth_gives_bernoulli_product_covariance(self):
        """Truth concentrated on one row type makes the evidence bits an
        independent-Bernoulli array; the covariance must collapse to
        N * r(union) * (1 - r(intersection))."""
        rng = np.random.default_rng(26)
        d = 3
        for _ in range(30):
            params = random_params(rng)
            b_mask = int(rng.integers(0, 1 << d))
            n = float(rng.integers(1, 50))
            counts = np.zeros(1 << d)
            counts[b_mask] = n
            truth = cooccurrences_from_rowtypes(RowTypeHistogram(d, counts))
            r = [
                params.q if b_mask >> i & 1 else params.p for i in range(d)
            ]
            for left in U3.sets:
                for right in U3.sets:
                    union = left | right
                    inter = left & right
                    r_union = math.prod(r[i] for i in union)
                    r_inter = math.prod(r[i] for i in inter)
                    want = n * r_union * (1.0 - r_inter) if inter else 0.0
                    got = cov_c(truth, params, left, right)
                    assert got == pytest.approx(want, abs=1e-12)


class TestForwardOperator:
    def test_identity_params(self):
        m = forward_matrix(U3, IDENTITY)
        assert np.allclose(m, np.eye(7), atol=0)
        assert np.all(offset_vector(U3, IDENTITY) == 0.0)

    def test_explicit_d3_blocks(self):
        """The full-order D=3 matrix assembled from its lower-triangular
        blocks p^(a-b) (q-p)^b K^(ab)."""
        params = ProtocolParams(0.1, 0.8)
        p, g = params.p, params.gap
        k21 = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1]], dtype=float)
        k31 = np.array([[1, 1, 1]], dtype=float)
        want = np.zeros((7, 7))
        want[0:3, 0:3] = g * np.eye(3)
        want[3:6, 0:3] = p * g * k21
        want[3:6, 3:6] = g**2 * np.eye(3)
        want[6:7, 0:3] = p**2 * g * k31
        want[6:7, 3:6] = p * g**2 * k31
        want[6, 6] = g**3
        assert np.allclose(forward_matrix(U3, params), want, atol=1e-15)

    def test_explicit_d3_inverse_blocks(self):
        params = ProtocolParams(0.1, 0.8)
        p, g = params.p, params.gap
        k21 = np.array([[1, 1, 0], [1, 0, 1], [0, 1, 1]], dtype=float)
        k31 = np.array([[1, 1, 1]], dtype=float)
        want = np.zeros((7, 7))
        want[0:3, 0:3] = np.eye(3) / g
        want[3:6, 0:3] = -p / g**2 * k21
        want[3:6, 3:6] = np.eye(3) / g**2
        want[6:7, 0:3] = p**2 / g**3 * k31
        want[6:7, 3:6] = -p / g**3 * k31
        want[6, 6] = 1.0 / g**3
        assert np.allclose(inverse_matrix(U3, params), want, atol=1e-15)

    def test_matrix_times_inverse(self):
        rng = np.random.default_rng(27)
        for d in range(1, 5):
            for cap in range(1, d + 1):
                u = GradedIndex(d, cap)
                for _ in range(5):
                    params = random_params(rng, min_gap=0.2)
                    prod = inverse_matrix(u, params) @ forward_matrix(u, params)
                    assert np.abs(prod - np.eye(u.dimension)).max() < 1e-10

    def test_affine_map_matches_expected_c(self):
        rng = np.random.default_rng(28)
        u = GradedIndex(4, 4)
        for _ in range(100):
            params = random_params(rng)
            truth = random_truth_histogram(rng, 4)
            op = build_forward_operator(u, params)
            via_matrix = op.mean(truth)
            entrywise = np.array(
                [expected_c(truth, params, cs) for cs in u.sets]
            )
            assert np.allclose(via_matrix, entrywise, rtol=1e-11, atol=1e-11)


class TestLinearConstraint:
    def test_zero_strength_is_noop(self):
        op = build_forward_operator(U2, ProtocolParams(0.1, 0.8))
        updated = apply_linear_constraint(op, 0.0)
        assert np.array_equal(updated.matrix, op.matrix)
        assert np.allclose(updated.inverse, op.inverse, atol=0)

    def test_matches_dense_inversion(self):
        op = build_forward_operator(U2, ProtocolParams(0.1, 0.8))
        updated = apply_linear_constraint(op, 0.3)
        dense = np.linalg.inv(op.matrix + 0.3 * np.ones((3, 3)))
        assert np.abs(updated.inverse - dense).max() < 1e-10

    def test_product_is_identity_for_random_strengths(self):
        rng = np.random.default_rng(29)
        u = GradedIndex(3, 2)
        for _ in range(50):
            op = build_forward_operator(u, random_params(rng, min_gap=0.2))
            s = float(rng.uniform(0.01, 1.0))
            updated = apply_linear_constraint(op, s)
            prod = updated.matrix @ updated.inverse
            assert np.abs(prod - np.eye(u.dimension)).max() < 1e-10

    def test_custom_weights(self):
        op = build_forward_operator(U2, ProtocolParams(0.1, 0.8))
        w = np.array([1.0, 1.0, 0.0])
        updated = apply_linear_constraint(op, 0.5, weights=w)
        dense = np.linalg.inv(op.matrix + 0.5 * np.outer(np.ones(3), w))
        assert np.abs(updated.inverse - dense).max() < 1e-10

    def test_rejects_infinite_strength(self):
        op = build_forward_operator(U2, ProtocolParams(0.1, 0.8))
        with pytest.raises(InputError):
            apply_linear_constraint(op, math.inf)


class TestNormalParams:
    def test_symmetry_enforced(self):
        cov = np.array([[1.0, 0.5], [0.4, 1.0]])
        with pytest.raises(InputError):
            NormalParams(GradedIndex(2, 1), np.zeros(2), cov)

    def test_shape_checks(self):
        with pytest.raises(InputError):
            NormalParams(GradedIndex(2, 1), np.zeros(3), np.eye(2))
        with pytest.raises(InputError):
            NormalParams(GradedIndex(2, 1), np.zeros(2), np.eye(3))


class TestPmdhNormalParams:
    def test_identity_params(self):
        rng = np.random.default_rng(30)
        truth = random_truth_histogram(rng, 3)
        normal = pmdh_normal_params(truth, IDENTITY)
        assert np.array_equal(normal.mean, truth.vector())
        assert np.all(normal.covariance == 0.0)

    def test_diagonal_equals_cov_c(self):
        rng = np.random.default_rng(31)
        truth = random_truth_histogram(rng, 3)
        params = random_params(rng)
        normal = pmdh_normal_params(truth, params)
        for pos, cs in enumerate(U3.sets):
            assert normal.covariance[pos, pos] == pytest.approx(
                cov_c(truth, params, cs, cs), rel=1e-12
            )

    @pytest.mark.parametrize("n,d", [(4, 2), (3, 2), (2, 3)])
    def test_against_bruteforce_enumeration(self, n, d):
        """Mean and covariance against summation over all 2^(N*D)
        perturbation outcomes."""
        rng = np.random.default_rng(100 + n * 10 + d)
        u = GradedIndex(d, d)
        for _ in range(3):
            params = random_params(rng)
            bits = (rng.random((n, d)) < 0.5).astype(np.uint8)
            truth = cooccurrences_from_rowtypes(
                RowTypeHistogram.from_bit_rows(bits)
            )
            normal = pmdh_normal_params(truth, params, u)
            mean, cov = oracles.bruteforce_pmdh_moments(
                bits, params.p, params.q, u
            )
            assert np.abs(normal.mean - mean).max() < 1e-10
            assert np.abs(normal.covariance - cov).max() < 1e-10

    def test_covariance_is_psd_for_valid_truths(self):
        rng = np.random.default_rng(32)
        for _ in range(20):
            truth = random_truth_histogram(rng, 3)
            params = random_params(rng)
            normal = pmdh_normal_params(truth, params)
            eigenvalues = np.linalg.eigvalsh(normal.covariance)
            trace = np.trace(normal.covariance)
            assert eigenvalues.min() >= -1e-8 * max(trace, 1.0)
