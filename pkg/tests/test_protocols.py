"""Protocol parameter algebra, encodings, and dataset randomization tests."""

import math

import numpy as np
import pytest

from ldphist.errors import (
    DegenerateProtocolError,
    DependentColumnsError,
    InputError,
)
from ldphist.protocols import (
    DatasetSchema,
    Encoding,
    EvidenceMatrix,
    FeatureSpec,
    ProtocolParams,
    cross_support_probability,
    encode_dataset,
    encode_row,
    epsilon_of,
    perturb_bits,
    perturb_row,
    randomize_dataset,
    rr_compose,
)

IDENTITY = ProtocolParams.identity()


def random_params(rng, lo=0.02, hi=0.98, min_gap=0.05):
    while True:
        p, q = sorted(rng.uniform(lo, hi, size=2))
        if q - p >= min_gap:
            return ProtocolParams(float(p), float(q))


class TestProtocolParams:
    def test_validation(self):
        ProtocolParams(0.1, 0.8)
        ProtocolParams(0.0, 0.5)  # boundary p=0 is legal
        ProtocolParams(0.5, 1.0)
        with pytest.raises(DegenerateProtocolError):
            ProtocolParams(0.5, 0.5)
        with pytest.raises(DegenerateProtocolError):
            ProtocolParams(0.8, 0.1)
        with pytest.raises(DegenerateProtocolError):
            ProtocolParams(-0.1, 0.8)
        with pytest.raises(DegenerateProtocolError):
            ProtocolParams(0.1, 1.2)
        with pytest.raises(DegenerateProtocolError):
            ProtocolParams(math.nan, 0.8)

    def test_identity_and_gap(self):
        assert IDENTITY == ProtocolParams(0.0, 1.0)
        assert IDENTITY.gap == 1.0
        assert ProtocolParams(0.1, 0.8).gap == pytest.approx(0.7)

    def test_from_epsilon(self):
        params = ProtocolParams.from_epsilon(math.log(4))
        assert params.q == pytest.approx(0.8)
        assert params.p == pytest.approx(0.2)
        # The per-bit likelihood ratio of symmetric RR involves both p and
        # 1-q, so the reported level is twice the construction level.
        assert epsilon_of(params) == pytest.approx(2 * math.log(4))
        with pytest.raises(DegenerateProtocolError):
            ProtocolParams.from_epsilon(0.0)
        with pytest.raises(DegenerateProtocolError):
            ProtocolParams.from_epsilon(math.inf)


class TestCompose:
    def test_frozen_value(self):
        a = ProtocolParams(0.1, 0.8)
        c = rr_compose(a, a)
        assert c.p == pytest.approx(0.17, abs=1e-15)
        assert c.q == pytest.approx(0.66, abs=1e-15)

    def test_identity_laws(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a = random_params(rng)
            assert rr_compose(a, IDENTITY) == a
            left = rr_compose(IDENTITY, a)
            assert left.p == pytest.approx(a.p, abs=1e-15)
            assert left.q == pytest.approx(a.q, abs=1e-15)

    def test_matches_two_stage_bit_flip(self):
        """compose(a, b) must equal the law of flipping with a then with b,
        derived by direct conditioning on the intermediate bit."""
        rng = np.random.default_rng(12)
        for _ in range(100):
            a, b = random_params(rng), random_params(rng)
            c = rr_compose(a, b)
            # P(out=1 | in=0): intermediate is 1 w.p. a.p.
            p_chain = a.p * b.q + (1.0 - a.p) * b.p
            # P(out=1 | in=1): intermediate is 1 w.p. a.q.
            q_chain = a.q * b.q + (1.0 - a.q) * b.p
            assert c.p == pytest.approx(p_chain, abs=1e-14)
            assert c.q == pytest.approx(q_chain, abs=1e-14)

    def test_associative(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            a, b, c = (random_params(rng) for _ in range(3))
            lhs = rr_compose(a, rr_compose(b, c))
            rhs = rr_compose(rr_compose(a, b), c)
            assert lhs.p == pytest.approx(rhs.p, abs=1e-12)
            assert lhs.q == pytest.approx(rhs.q, abs=1e-12)

    def test_commutative_iff_symmetric(self):
        # Symmetric pairs (p = 1 - q) commute.
        a = ProtocolParams(0.2, 0.8)
        b = ProtocolParams(0.35, 0.65)
        ab, ba = rr_compose(a, b), rr_compose(b, a)
        assert ab.p == pytest.approx(ba.p, abs=1e-14)
        assert ab.q == pytest.approx(ba.q, abs=1e-14)
        # An asymmetric operand breaks commutativity.
        c = ProtocolParams(0.1, 0.8)
        cb, bc = rr_compose(c, b), rr_compose(b, c)
        assert abs(cb.p - bc.p) > 1e-3

    def test_closure(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            a, b = random_params(rng), random_params(rng)
            c = rr_compose(a, b)  # constructor re-checks 0 <= p < q <= 1
            assert 0.0 <= c.p < c.q <= 1.0


class TestEpsilon:
    def test_frozen_values(self):
        assert epsilon_of(ProtocolParams(0.1, 0.8)) == pytest.approx(math.log(36))
        assert epsilon_of(ProtocolParams(0.2, 0.8)) == pytest.approx(math.log(16))

    def test_boundaries_are_infinite(self):
        assert epsilon_of(ProtocolParams(0.0, 0.5)) == math.inf
        assert epsilon_of(ProtocolParams(0.5, 1.0)) == math.inf

    def test_near_degenerate_vanishes(self):
        assert epsilon_of(ProtocolParams(0.5, 0.5 + 1e-9)) < 1e-7

    def test_monotone_in_p(self):
        eps = [epsilon_of(ProtocolParams(p, 0.8)) for p in (0.05, 0.1, 0.2, 0.4)]
        assert eps == sorted(eps, reverse=True)


class TestSchema:
    def test_feature_validation(self):
        FeatureSpec("a", 2)
        with pytest.raises(InputError):
            FeatureSpec("", 2)
        with pytest.raises(InputError):
            FeatureSpec("a", 1)
        with pytest.raises(InputError):
            FeatureSpec("a", 4, Encoding.LOCAL_HASH)  # no hash_domain
        with pytest.raises(InputError):
            FeatureSpec("a", 4, Encoding.LOCAL_HASH, hash_domain=1)
        with pytest.raises(InputError):
            FeatureSpec("a", 4, Encoding.UNARY, hash_domain=4)

    def test_column_layout(self):
        schema = DatasetSchema(
            (FeatureSpec("a", 3), FeatureSpec("b", 2), FeatureSpec("c", 4))
        )
        assert schema.n_features == 3
        assert schema.n_columns == 9
        assert schema.column_of(0, 2) == 2
        assert schema.column_of(1, 0) == 3
        assert schema.column_of(2, 3) == 8
        assert list(schema.block_of(1)) == [3, 4]
        assert [schema.feature_of_column(c) for c in range(9)] == [
            0, 0, 0, 1, 1, 2, 2, 2, 2,
        ]
        with pytest.raises(InputError):
            schema.column_of(0, 3)
        with pytest.raises(InputError):
            schema.feature_of_column(9)

    def test_schema_validation(self):
        with pytest.raises(InputError):
            DatasetSchema(())
        with pytest.raises(InputError):
            DatasetSchema((FeatureSpec("a", 2), FeatureSpec("a", 3)))
        with pytest.raises(InputError):
            DatasetSchema(tuple(FeatureSpec(f"f{i}", 5) for i in range(13)))

    def test_validate_column_set(self):
        from ldphist.setops import ColumnSet

        schema = DatasetSchema(
            (
                FeatureSpec("u", 2),                       # columns 0-1
                FeatureSpec("g", 3, Encoding.GRR),         # columns 2-4
                FeatureSpec("h", 2, Encoding.LOCAL_HASH, hash_domain=4),  # 5-6
            )
        )
        schema.validate_column_set(ColumnSet.of(0, 1))      # unary pair: fine
        schema.validate_column_set(ColumnSet.of(0, 2, 5))   # one per block
        with pytest.raises(DependentColumnsError):
            schema.validate_column_set(ColumnSet.of(2, 3))
        with pytest.raises(DependentColumnsError):
            schema.validate_column_set(ColumnSet.of(5, 6))
        with pytest.raises(InputError):
            schema.validate_column_set(ColumnSet.of(7))


class TestEncode:
    def test_single_binary_feature(self):
        schema = DatasetSchema((FeatureSpec("a", 2),))
        assert encode_row([1], schema).tolist() == [0, 1]

    def test_two_binary_features(self):
        schema = DatasetSchema((FeatureSpec("a", 2), FeatureSpec("b", 2)))
        assert encode_row([1, 0], schema).tolist() == [0, 1, 1, 0]

    def test_three_categories(self):
        schema = DatasetSchema((FeatureSpec("a", 3),))
        assert encode_row([2], schema).tolist() == [0, 0, 1]

    def test_dataset_shape_and_errors(self):
        schema = DatasetSchema((FeatureSpec("a", 3), FeatureSpec("b", 2)))
        out = encode_dataset([[0, 1], [2, 0]], schema)
        assert out.tolist() == [[1, 0, 0, 0, 1], [0, 0, 1, 1, 0]]
        with pytest.raises(InputError):
            encode_dataset([[3, 0]], schema)
        with pytest.raises(InputError):
            encode_dataset([[0, -1]], schema)
        with pytest.raises(InputError):
            encode_dataset([[0.5, 0]], schema)
        with pytest.raises(InputError):
            encode_dataset([[0, 0, 0]], schema)


class TestEvidenceMatrix:
    def test_validation(self):
        EvidenceMatrix(np.zeros((3, 2), dtype=np.uint8))
        with pytest.raises(InputError):
            EvidenceMatrix(np.zeros(3))
        with pytest.raises(InputError):
            EvidenceMatrix(np.full((2, 2), 2))

    def test_properties(self):
        ev = EvidenceMatrix(np.array([[0, 1], [1, 1], [0, 0]]))
        assert ev.n_rows == 3
        assert ev.n_columns == 2
        assert ev.bits.dtype == np.uint8


class TestPerturb:
    def test_identity_is_noop(self):
        rng = np.random.default_rng(0)
        bits = (np.random.default_rng(1).random((50, 4)) < 0.5).astype(np.uint8)
        assert np.array_equal(perturb_bits(bits, IDENTITY, rng), bits)

    def test_rejects_non_binary(self):
        with pytest.raises(InputError):
            perturb_bits(np.array([0, 2]), ProtocolParams(0.1, 0.8),
                         np.random.default_rng(0))
        with pytest.raises(InputError):
            perturb_row(np.zeros((2, 2)), ProtocolParams(0.1, 0.8),
                        np.random.default_rng(0))

    def test_near_one_p_floods_zeros(self):
        rng = np.random.default_rng(2)
        out = perturb_bits(
            np.zeros(10_000, dtype=np.uint8), ProtocolParams(0.999, 1.0), rng
        )
        assert out.mean() >= 0.99

    def test_keep_frequency(self):
        rng = np.random.default_rng(3)
        n = 100_000
        out = perturb_bits(
            np.ones(n, dtype=np.uint8), ProtocolParams(0.1, 0.8), rng
        )
        sigma = math.sqrt(0.8 * 0.2 / n)
        assert abs(out.mean() - 0.8) < 3 * sigma


UNARY_PAIR = DatasetSchema((FeatureSpec("a", 2), FeatureSpec("b", 3)))


class TestRandomizeDataset:
    def test_identity_returns_encoding(self):
        rows = [[0, 2], [1, 0], [1, 1]]
        ev = randomize_dataset(rows, UNARY_PAIR, IDENTITY, seed=0)
        assert np.array_equal(ev.bits, encode_dataset(rows, UNARY_PAIR))

    def test_seed_reproducibility(self):
        rng = np.random.default_rng(4)
        rows = rng.integers(0, 2, size=(20_000, 1)) * [1, 0] + rng.integers(
            0, 3, size=(20_000, 1)
        ) * [0, 1]
        params = ProtocolParams(0.1, 0.8)
        a = randomize_dataset(rows, UNARY_PAIR, params, seed=99)
        b = randomize_dataset(rows, UNARY_PAIR, params, seed=99)
        c = randomize_dataset(rows, UNARY_PAIR, params, seed=100)
        assert np.array_equal(a.bits, b.bits)
        assert not np.array_equal(a.bits, c.bits)
        # SeedSequence and int forms of the same master seed agree.
        d = randomize_dataset(
            rows, UNARY_PAIR, params, np.random.SeedSequence(99)
        )
        assert np.array_equal(a.bits, d.bits)

    def test_unsupported_column_rate(self):
        """A never-held category's column reports 1 at rate p."""
        n = 100_000
        rows = np.zeros((n, 1), dtype=np.int64)  # category 0 always
        schema = DatasetSchema((FeatureSpec("a", 2),))
        params = ProtocolParams(0.1, 0.8)
        ev = randomize_dataset(rows, schema, params, seed=5)
        rate = ev.bits[:, 1].mean()
        sigma = math.sqrt(0.1 * 0.9 / n)
        assert abs(rate - 0.1) < 3 * sigma

    def test_cross_block_columns_uncorrelated(self):
        n = 100_000
        rng = np.random.default_rng(6)
        rows = np.column_stack(
            [rng.integers(0, 2, n), rng.integers(0, 3, n)]
        )
        ev = randomize_dataset(rows, UNARY_PAIR, ProtocolParams(0.1, 0.8), seed=7)
        corr = np.corrcoef(ev.bits[:, 1], ev.bits[:, 3])[0, 1]
        assert abs(corr) < 4 / math.sqrt(n)

    def test_grr_realizability_enforced(self):
        schema = DatasetSchema((FeatureSpec("g", 4, Encoding.GRR),))
        rows = np.zeros((10, 1), dtype=np.int64)
        # q + 3p = 1 required; (0.1, 0.8) gives 1.1.
        with pytest.raises(InputError):
            randomize_dataset(rows, schema, ProtocolParams(0.1, 0.8), seed=0)
        randomize_dataset(rows, schema, ProtocolParams(0.1, 0.7), seed=0)

    def test_hash_realizability_enforced(self):
        schema = DatasetSchema(
            (FeatureSpec("h", 6, Encoding.LOCAL_HASH, hash_domain=4),)
        )
        rows = np.zeros((10, 1), dtype=np.int64)
        with pytest.raises(InputError):
            randomize_dataset(rows, schema, ProtocolParams(0.1, 0.8), seed=0)
        randomize_dataset(rows, schema, ProtocolParams(0.25, 0.7), seed=0)


class TestPureLdpProperty:
    """Per Def.-style support marginals: the held value's support bit is
    positive at rate q, any other value's at rate p, for every encoding."""

    N = 100_000

    def _rates(self, schema, params, held=0, other=1, seed=8):
        rows = np.full((self.N, 1), held, dtype=np.int64)
        ev = randomize_dataset(rows, schema, params, seed=seed)
        return ev.bits[:, held].mean(), ev.bits[:, other].mean()

    def _check(self, rate, target):
        sigma = math.sqrt(target * (1.0 - target) / self.N)
        assert abs(rate - target) < 3 * sigma

    def test_unary(self):
        params = ProtocolParams(0.1, 0.8)
        q_rate, p_rate = self._rates(
            DatasetSchema((FeatureSpec("u", 3),)), params
        )
        self._check(q_rate, params.q)
        self._check(p_rate, params.p)

    def test_grr(self):
        params = ProtocolParams(0.1, 0.7)  # q + (4-1)p = 1
        q_rate, p_rate = self._rates(
            DatasetSchema((FeatureSpec("g", 4, Encoding.GRR),)), params
        )
        self._check(q_rate, params.q)
        self._check(p_rate, params.p)

    def test_local_hash(self):
        params = ProtocolParams(0.25, 0.7)  # p = 1/4
        q_rate, p_rate = self._rates(
            DatasetSchema(
                (FeatureSpec("h", 5, Encoding.LOCAL_HASH, hash_domain=4),)
            ),
            params,
        )
        self._check(q_rate, params.q)
        self._check(p_rate, params.p)


class TestCrossSupport:
    def test_unary_is_product(self):
        assert cross_support_probability(Encoding.UNARY, 0.1, 1) == pytest.approx(0.1)
        assert cross_support_probability(Encoding.UNARY, 0.1, 2) == pytest.approx(0.01)
        assert cross_support_probability(
            Encoding.UNARY, (0.1, 0.5, 0.2), 3
        ) == pytest.approx(0.01)

    def test_grr(self):
        assert cross_support_probability(Encoding.GRR, 0.1, 1) == pytest.approx(0.1)
        assert cross_support_probability(Encoding.GRR, 0.1, 2) == 0.0
        assert cross_support_probability(Encoding.GRR, 0.1, 5) == 0.0

    def test_local_hash_convention(self):
        assert cross_support_probability(
            Encoding.LOCAL_HASH, 0.25, 1, hash_domain=4
        ) == pytest.approx(0.25)
        assert cross_support_probability(
            Encoding.LOCAL_HASH, 0.25, 2, hash_domain=4
        ) == pytest.approx(0.25 / 4)
        with pytest.raises(InputError):
            cross_support_probability(Encoding.LOCAL_HASH, 0.25, 2)

    def test_validation(self):
        with pytest.raises(InputError):
            cross_support_probability(Encoding.UNARY, 0.1, 0)
        with pytest.raises(InputError):
            cross_support_probability(Encoding.UNARY, (0.1, 0.2), 3)
        with pytest.raises(InputError):
            cross_support_probability(Encoding.UNARY, 1.5, 1)

    def test_local_hash_empirical(self):
        """Two non-held bits of one LH block co-occur at rate p/d: both
        categories must collide with the reported bucket."""
        n = 200_000
        d = 4
        params = ProtocolParams(1.0 / d, 0.7)
        schema = DatasetSchema(
            (FeatureSpec("h", 5, Encoding.LOCAL_HASH, hash_domain=d),)
        )
        rows = np.full((n, 1), 4, dtype=np.int64)  # held value supports col 4
        ev = randomize_dataset(rows, schema, params, seed=9)
        both = (ev.bits[:, 0] & ev.bits[:, 1]).mean()
        target = cross_support_probability(
            Encoding.LOCAL_HASH, params.p, 2, hash_domain=d
        )
        sigma = math.sqrt(target * (1.0 - target) / n)
        assert abs(both - target) < 4 * sigma
