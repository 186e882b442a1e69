"""Pure local-randomization protocols and dataset perturbation.

A *pure* protocol is summarized by two numbers per support bit: ``p``, the
probability that a bit whose true value is 0 is reported as 1, and ``q``, the
probability that a true 1 stays 1, with ``0 <= p < q <= 1``.  Every encoding
handled here (unary/one-hot, generalized randomized response, local hashing)
reduces to this per-bit picture on the *support* bits of the report, which is
all the downstream moment machinery ever looks at.

The perturbation of one bit is the two-parameter bit flip ("randomized
response"); chaining two such flips is again a flip, which gives the small
composition monoid implemented by :func:`rr_compose`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateProtocolError,
    DependentColumnsError,
    InputError,
)
from .setops import MAX_COLUMNS, ColumnSet

#: Tolerance used when checking that declared (p, q) are realizable by an
#: encoding whose marginals are structurally constrained (GRR, local hashing).
REALIZABILITY_TOL = 1e-9

#: Mersenne prime modulus for the universal hash family used by local hashing.
#: Small enough that a*v + b stays inside int64 for category values < 64.
_HASH_PRIME = (1 << 31) - 1

#: Rows are randomized in fixed-size batches, each on its own child stream, so
#: results are reproducible no matter how batches are scheduled.
ROW_BATCH = 8192


@dataclass(frozen=True)
class ProtocolParams:
    """Per-bit flip probabilities ``(p, q)`` of a pure protocol.

    ``p`` is the probability a non-supported bit reports positive, ``q`` the
    probability a supported bit stays positive.  Construction enforces
    ``0 <= p < q <= 1``; the degenerate diagonal ``p == q`` carries no signal
    and is rejected outright.
    """

    p: float
    q: float

    def __post_init__(self) -> None:
        p, q = self.p, self.q
        if not (math.isfinite(p) and math.isfinite(q)):
            raise DegenerateProtocolError(f"non-finite parameters ({p}, {q})")
        if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
            raise DegenerateProtocolError(
                f"parameters must lie in [0, 1], got ({p}, {q})"
            )
        if p >= q:
            raise DegenerateProtocolError(
                f"need p < q for an invertible protocol, got ({p}, {q})"
            )

    @classmethod
    def identity(cls) -> "ProtocolParams":
        """The no-noise protocol (0, 1)."""
        return cls(0.0, 1.0)

    @classmethod
    def from_epsilon(cls, epsilon: float) -> "ProtocolParams":
        """Symmetric randomized response with the given per-bit privacy level:
        ``q = e^eps / (1 + e^eps)`` and ``p = 1 - q``."""
        if not math.isfinite(epsilon) or epsilon <= 0.0:
            raise DegenerateProtocolError(
                f"epsilon must be finite and positive, got {epsilon}"
            )
        q = math.exp(epsilon) / (1.0 + math.exp(epsilon))
        return cls(1.0 - q, q)

    @property
    def gap(self) -> float:
        """Signal strength ``q - p`` (always positive)."""
        return self.q - self.p


def rr_compose(a: ProtocolParams, b: ProtocolParams) -> ProtocolParams:
    """Parameters of two bit flips in sequence: ``a`` applied first, then ``b``.

    The result is ``(a.p * b.gap + b.p, a.q * b.gap + b.p)``; the identity
    element is ``(0, 1)``.  Composition is associative, and commutative
    exactly when both operands are symmetric (``p == 1 - q``).
    """
    gap = b.q - b.p
    return ProtocolParams(a.p * gap + b.p, a.q * gap + b.p)


def epsilon_of(params: ProtocolParams) -> float:
    """Per-bit privacy level ``ln[q(1-p) / (p(1-q))]``.

    Returns ``math.inf`` for the boundary cases ``p == 0`` or ``q == 1``
    (a positive report then rules out one of the two inputs)."""
    if params.p == 0.0 or params.q == 1.0:
        return math.inf
    return math.log(params.q * (1.0 - params.p) / (params.p * (1.0 - params.q)))


class Encoding(str, enum.Enum):
    """How a categorical feature is turned into support bits."""

    UNARY = "unary"
    GRR = "grr"
    LOCAL_HASH = "local_hash"


@dataclass(frozen=True)
class FeatureSpec:
    """One categorical feature of the input data.

    Parameters
    ----------
    name:
        Header name of the feature column in the raw dataset.
    cardinality:
        Number of categories (``>= 2``); values are integers ``0..card-1``.
    encoding:
        Report encoding; unary keeps one evidence column per category and
        perturbs each bit independently, GRR reports a single (possibly
        flipped) category, local hashing reports a hashed bucket.
    hash_domain:
        Bucket count ``d`` for local hashing (``>= 2``); unused otherwise.
    """

    name: str
    cardinality: int
    encoding: Encoding = Encoding.UNARY
    hash_domain: int | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise InputError("feature name must be non-empty")
        if self.cardinality < 2:
            raise InputError(
                f"feature {self.name!r}: cardinality must be >= 2, "
                f"got {self.cardinality}"
            )
        if self.encoding is Encoding.LOCAL_HASH:
            if self.hash_domain is None or self.hash_domain < 2:
                raise InputError(
                    f"feature {self.name!r}: local hashing needs hash_domain >= 2"
                )
        elif self.hash_domain is not None:
            raise InputError(
                f"feature {self.name!r}: hash_domain only applies to local hashing"
            )


@dataclass(frozen=True)
class DatasetSchema:
    """An ordered collection of features mapped onto contiguous column blocks.

    Feature ``k`` with cardinality ``c_k`` owns evidence columns
    ``[offset_k, offset_k + c_k)``; the total width is capped at 64 so column
    sets stay bitmask-representable.
    """

    features: tuple[FeatureSpec, ...]
    _offsets: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.features:
            raise InputError("schema needs at least one feature")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise InputError(f"duplicate feature names in schema: {names}")
        offsets, total = [], 0
        for f in self.features:
            offsets.append(total)
            total += f.cardinality
        if total > MAX_COLUMNS:
            raise InputError(
                f"schema needs {total} evidence columns; the cap is {MAX_COLUMNS}"
            )
        object.__setattr__(self, "_offsets", tuple(offsets))

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def n_columns(self) -> int:
        last = self.features[-1]
        return self._offsets[-1] + last.cardinality

    def column_of(self, feature_index: int, category: int) -> int:
        """Evidence column tracking ``category`` of feature ``feature_index``."""
        f = self.features[feature_index]
        if not 0 <= category < f.cardinality:
            raise InputError(
                f"feature {f.name!r}: category {category} outside "
                f"[0, {f.cardinality})"
            )
        return self._offsets[feature_index] + category

    def block_of(self, feature_index: int) -> range:
        """Evidence columns owned by one feature."""
        f = self.features[feature_index]
        start = self._offsets[feature_index]
        return range(start, start + f.cardinality)

    def feature_of_column(self, column: int) -> int:
        if not 0 <= column < self.n_columns:
            raise InputError(f"column {column} outside [0, {self.n_columns})")
        k = 0
        while k + 1 < len(self._offsets) and self._offsets[k + 1] <= column:
            k += 1
        return k

    def validate_column_set(self, cs: ColumnSet) -> None:
        """Reject sets mixing two columns of one GRR or local-hashing block.

        Support bits inside such a block are mutually exclusive (or coupled
        through hash collisions), so the independent-bit moment formulas do
        not apply to within-block co-occurrences.
        """
        seen: dict[int, int] = {}
        for column in cs:
            if column >= self.n_columns:
                raise InputError(
                    f"column {column} outside the schema's {self.n_columns} columns"
                )
            k = self.feature_of_column(column)
            if self.features[k].encoding is Encoding.UNARY:
                continue
            if k in seen:
                raise DependentColumnsError(
                    f"columns {seen[k]} and {column} both belong to "
                    f"{self.features[k].encoding.value} feature "
                    f"{self.features[k].name!r}; within-block co-occurrences "
                    "are not supported by the moment formulas"
                )
            seen[k] = column


@dataclass(frozen=True)
class EvidenceMatrix:
    """The observed binary support bits: one row per report, one column per
    tracked category/bucket indicator."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise InputError(f"evidence must be 2-D, got shape {b.shape}")
        if b.shape[1] < 1 or b.shape[1] > MAX_COLUMNS:
            raise InputError(
                f"evidence must have 1..{MAX_COLUMNS} columns, got {b.shape[1]}"
            )
        if b.size and not np.isin(b, (0, 1)).all():
            raise InputError("evidence entries must be 0 or 1")
        object.__setattr__(self, "bits", np.ascontiguousarray(b, dtype=np.uint8))

    @property
    def n_rows(self) -> int:
        return self.bits.shape[0]

    @property
    def n_columns(self) -> int:
        return self.bits.shape[1]


def _as_row_array(rows: object, schema: DatasetSchema) -> np.ndarray:
    arr = np.asarray(rows)
    if arr.ndim == 1 and schema.n_features == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != schema.n_features:
        raise InputError(
            f"expected rows with {schema.n_features} features, "
            f"got shape {arr.shape}"
        )
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.equal(np.mod(arr, 1), 0).all():
            raise InputError("categories must be integers")
    arr = arr.astype(np.int64, copy=False)
    for k, f in enumerate(schema.features):
        col = arr[:, k]
        bad = (col < 0) | (col >= f.cardinality)
        if bad.any():
            i = int(np.argmax(bad))
            raise InputError(
                f"row {i}: category {col[i]} of feature {f.name!r} outside "
                f"[0, {f.cardinality})"
            )
    return arr


def encode_row(row: object, schema: DatasetSchema) -> np.ndarray:
    """One-hot support bits of a single raw row (no randomization)."""
    return encode_dataset(np.asarray(row).reshape(1, -1), schema)[0]


def encode_dataset(rows: object, schema: DatasetSchema) -> np.ndarray:
    """One-hot support bits for every raw row; shape ``(N, n_columns)``.

    For every encoding the true support is the one-hot indicator of the
    held category (for local hashing this is the pre-hash support)."""
    arr = _as_row_array(rows, schema)
    out = np.zeros((arr.shape[0], schema.n_columns), dtype=np.uint8)
    rows_idx = np.arange(arr.shape[0])
    for k in range(schema.n_features):
        out[rows_idx, schema._offsets[k] + arr[:, k]] = 1
    return out


def perturb_bits(
    bits: np.ndarray, params: ProtocolParams, rng: np.random.Generator
) -> np.ndarray:
    """Independent per-bit randomized response on an arbitrary bit array."""
    b = np.asarray(bits)
    if b.size and not np.isin(b, (0, 1)).all():
        raise InputError("bits must be 0 or 1")
    stay = np.where(b == 1, params.q, params.p)
    return (rng.random(b.shape) < stay).astype(np.uint8)


def perturb_row(
    bits: np.ndarray, params: ProtocolParams, rng: np.random.Generator
) -> np.ndarray:
    """Randomized response on one support-bit row."""
    b = np.asarray(bits)
    if b.ndim != 1:
        raise InputError(f"expected a 1-D bit row, got shape {b.shape}")
    return perturb_bits(b, params, rng)


def _check_grr_realizable(f: FeatureSpec, params: ProtocolParams) -> None:
    # A GRR report is one category: keep the truth w.p. q, else uniform over
    # the rest.  Its support-bit marginals are (p, q) only when the report
    # probabilities sum to one.
    total = params.q + (f.cardinality - 1) * params.p
    if abs(total - 1.0) > REALIZABILITY_TOL:
        raise InputError(
            f"feature {f.name!r}: GRR with cardinality {f.cardinality} "
            f"requires q + (cardinality-1)*p == 1, got {total}"
        )


def _check_hash_realizable(f: FeatureSpec, params: ProtocolParams) -> None:
    # Under local hashing a non-held value collides with the reported bucket
    # w.p. 1/d, so the declared p must equal 1/hash_domain.
    assert f.hash_domain is not None
    if abs(params.p * f.hash_domain - 1.0) > REALIZABILITY_TOL:
        raise InputError(
            f"feature {f.name!r}: local hashing over {f.hash_domain} buckets "
            f"fixes p = 1/{f.hash_domain}, got p = {params.p}"
        )


def _grr_reports(
    values: np.ndarray, cardinality: int, q: float, rng: np.random.Generator
) -> np.ndarray:
    """Vectorized GRR: keep w.p. q, else uniform over the other categories."""
    n = values.shape[0]
    keep = rng.random(n) < q
    # Draw a uniform "other" category by skipping the true value.
    other = rng.integers(0, cardinality - 1, size=n)
    other = np.where(other >= values, other + 1, other)
    return np.where(keep, values, other)


def _hash_buckets(
    a: np.ndarray, b: np.ndarray, values: np.ndarray, domain: int
) -> np.ndarray:
    """Universal hash ``((a*v + b) mod prime) mod domain``, vectorized.

    ``a``/``b`` hold one coefficient per row; ``values`` broadcasts against
    them.  With ``a, b < 2^31`` and ``v < 64`` everything fits in int64."""
    av = a.astype(np.int64) * values.astype(np.int64)
    return ((av + b.astype(np.int64)) % _HASH_PRIME) % domain


def _randomize_batch(
    arr: np.ndarray,
    schema: DatasetSchema,
    params: ProtocolParams,
    rng: np.random.Generator,
) -> np.ndarray:
    out = np.zeros((arr.shape[0], schema.n_columns), dtype=np.uint8)
    rows_idx = np.arange(arr.shape[0])
    for k, f in enumerate(schema.features):
        start = schema._offsets[k]
        values = arr[:, k]
        if f.encoding is Encoding.UNARY:
            bits = np.zeros((arr.shape[0], f.cardinality), dtype=np.uint8)
            bits[rows_idx, values] = 1
            out[:, start : start + f.cardinality] = perturb_bits(bits, params, rng)
        elif f.encoding is Encoding.GRR:
            reports = _grr_reports(values, f.cardinality, params.q, rng)
            out[rows_idx, start + reports] = 1
        else:  # local hashing
            d = f.hash_domain
            a = rng.integers(1, _HASH_PRIME, size=arr.shape[0], dtype=np.int64)
            b = rng.integers(0, _HASH_PRIME, size=arr.shape[0], dtype=np.int64)
            true_bucket = _hash_buckets(a, b, values, d)
            reported = _grr_reports(true_bucket, d, params.q, rng)
            # Support bit of category c: does c hash into the reported bucket?
            cats = np.arange(f.cardinality, dtype=np.int64)
            all_buckets = _hash_buckets(
                a[:, None], b[:, None], cats[None, :], d
            )
            out[:, start : start + f.cardinality] = (
                all_buckets == reported[:, None]
            ).astype(np.uint8)
    return out


def randomize_dataset(
    rows: object,
    schema: DatasetSchema,
    params: ProtocolParams,
    seed: int | np.random.SeedSequence | np.random.Generator,
) -> EvidenceMatrix:
    """Encode and randomize a raw categorical dataset.

    Rows are processed in batches of :data:`ROW_BATCH`; with an integer (or
    ``SeedSequence``) seed each batch draws from its own spawned child stream,
    so the output is reproducible bit-for-bit and batches could be randomized
    concurrently.  Passing a ``Generator`` instead uses that single stream
    sequentially (still deterministic given its state).

    Parameters
    ----------
    rows:
        Array-like of shape ``(N, n_features)`` with integer categories.
    schema:
        Feature layout; GRR features require ``q + (card-1) p == 1`` and
        local hashing requires ``p == 1/hash_domain``, since those marginals
        are fixed by the encoding itself.
    params:
        Per-bit flip probabilities shared by all features.
    seed:
        Master seed (or an explicit generator).

    Returns
    -------
    EvidenceMatrix
        ``N x schema.n_columns`` support bits.
    """
    arr = _as_row_array(rows, schema)
    for f in schema.features:
        if f.encoding is Encoding.GRR:
            _check_grr_realizable(f, params)
        elif f.encoding is Encoding.LOCAL_HASH:
            _check_hash_realizable(f, params)

    n = arr.shape[0]
    out = np.zeros((n, schema.n_columns), dtype=np.uint8)
    if isinstance(seed, np.random.Generator):
        streams = None
        single = seed
    else:
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        n_batches = max(1, -(-n // ROW_BATCH))
        streams = [np.random.Generator(np.random.Philox(c)) for c in ss.spawn(n_batches)]
        single = None
    for b, lo in enumerate(range(0, max(n, 1), ROW_BATCH)):
        hi = min(lo + ROW_BATCH, n)
        if lo >= hi:
            break
        rng = single if streams is None else streams[b]
        out[lo:hi] = _randomize_batch(arr[lo:hi], schema, params, rng)
    return EvidenceMatrix(out)


def cross_support_probability(
    encoding: Encoding,
    marginals: float | tuple[float, ...],
    k: int,
    hash_domain: int | None = None,
) -> float:
    """Probability that ``k`` specific support bits *of one feature block* are
    simultaneously positive, for a report of a value supporting none of them.

    ``marginals`` gives the per-bit positive probability ``p1`` (a single
    float, or one float per bit for unary encoding, where bits are
    independent and the answer is the plain product).  GRR reports exactly
    one category, so two or more bits can never be positive together; local
    hashing couples bits through bucket collisions, each extra bit costing a
    factor ``1/hash_domain``.
    """
    if k < 1:
        raise InputError(f"need k >= 1 support bits, got {k}")
    probs = (
        tuple(marginals) if isinstance(marginals, (tuple, list)) else (float(marginals),) * k
    )
    if len(probs) != k:
        raise InputError(f"got {len(probs)} marginals for k = {k} bits")
    for p1 in probs:
        if not 0.0 <= p1 <= 1.0:
            raise InputError(f"marginal probability outside [0, 1]: {p1}")
    if encoding is Encoding.UNARY:
        return float(math.prod(probs))
    if encoding is Encoding.GRR:
        return float(probs[0]) if k == 1 else 0.0
    if encoding is Encoding.LOCAL_HASH:
        if hash_domain is None or hash_domain < 2:
            raise InputError("local hashing needs hash_domain >= 2")
        return float(probs[0]) / hash_domain ** (k - 1)
    raise InputError(f"unknown encoding {encoding!r}")
