"""Simulation paths and exact small-case oracles for the moment formulas.

Everything here deliberately avoids the closed-form moment algebra of
:mod:`ldphist.pmdh`/:mod:`ldphist.tmdh` so it can serve as an independent
check.  Three routes are provided:

* a *row-type* view of datasets — a histogram over the ``2^D`` possible
  binary rows — linked to co-occurrence histograms by the subset zeta /
  Moebius transform pair;
* two samplers of perturbed histograms: a direct multinomial draw over
  output row types, and a full row-by-row materialize-and-flip simulation;
* an exact enumeration oracle that computes the mean and covariance of the
  perturbed histogram by summing over all output row types, feasible for
  small column counts.

All randomness flows through explicitly passed seeds or generators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, InconsistentHistogramError, InputError
from .pmdh import Histogram, NormalParams, count_pmdh
from .protocols import EvidenceMatrix, ProtocolParams, perturb_bits
from .setops import ColumnSet, GradedIndex

#: Largest column count for which 2^D row-type tables are materialized.
MAX_ROWTYPE_COLUMNS = 16

#: Largest column count accepted by the exact enumeration oracle.
MAX_ORACLE_COLUMNS = 6

#: Row-type counts this far below zero (relative) are inconsistent, closer
#: ones are clipped as rounding residue.
NEGATIVITY_TOL = 1e-9


def _check_rowtype_width(n_columns: int, limit: int = MAX_ROWTYPE_COLUMNS) -> None:
    if not 1 <= n_columns <= limit:
        raise CapacityError(
            f"row-type tables support 1..{limit} columns, got {n_columns}"
        )


@dataclass(frozen=True)
class RowTypeHistogram:
    """Counts (or probabilities) of each possible binary row.

    ``counts[m]`` belongs to the row whose set of 1-bits is the bitmask
    ``m``; the array has length ``2^n_columns``.
    """

    n_columns: int
    counts: np.ndarray

    def __post_init__(self) -> None:
        _check_rowtype_width(self.n_columns)
        c = np.asarray(self.counts, dtype=float)
        if c.shape != (1 << self.n_columns,):
            raise InputError(
                f"expected {1 << self.n_columns} row-type entries, "
                f"got shape {c.shape}"
            )
        if np.isnan(c).any():
            raise InputError("row-type counts must not be NaN")
        scale = max(1.0, float(np.abs(c).max()) if c.size else 0.0)
        if (c < -NEGATIVITY_TOL * scale).any():
            worst = int(np.argmin(c))
            raise InconsistentHistogramError(
                f"row type {worst:#06b} has negative weight {c[worst]}"
            )
        object.__setattr__(self, "counts", np.clip(c, 0.0, None))

    @classmethod
    def from_bit_rows(cls, bits: np.ndarray) -> "RowTypeHistogram":
        b = np.asarray(bits)
        if b.ndim != 2:
            raise InputError(f"expected 2-D bit rows, got shape {b.shape}")
        d = b.shape[1]
        _check_rowtype_width(d)
        masks = (b.astype(np.int64) << np.arange(d, dtype=np.int64)).sum(axis=1)
        counts = np.bincount(masks, minlength=1 << d).astype(float)
        return cls(d, counts)

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def is_integral(self) -> bool:
        return bool(np.all(np.abs(self.counts - np.round(self.counts)) < 1e-9))

    def integer_counts(self) -> np.ndarray:
        if not self.is_integral:
            raise InputError("row-type histogram does not hold integer counts")
        return np.round(self.counts).astype(np.int64)

    def bit_rows(self) -> np.ndarray:
        """Materialize the rows (integer counts only), types in mask order."""
        reps = self.integer_counts()
        masks = np.repeat(np.arange(1 << self.n_columns, dtype=np.int64), reps)
        return (
            (masks[:, None] >> np.arange(self.n_columns, dtype=np.int64)) & 1
        ).astype(np.uint8)


def zeta_superset(values: np.ndarray) -> np.ndarray:
    """Superset-sum transform: ``out[J] = sum_{S ⊇ J} values[S]``."""
    out = np.array(values, dtype=float)
    size = out.shape[0]
    k = size.bit_length() - 1
    if 1 << k != size:
        raise InputError(f"length must be a power of two, got {size}")
    idx = np.arange(size)
    for b in range(k):
        bit = 1 << b
        lo = idx[(idx & bit) == 0]
        out[lo] += out[lo | bit]
    return out


def mobius_superset(values: np.ndarray) -> np.ndarray:
    """Inverse of :func:`zeta_superset`:
    ``out[J] = sum_{S ⊇ J} (-1)^(|S|-|J|) values[S]``."""
    out = np.array(values, dtype=float)
    size = out.shape[0]
    k = size.bit_length() - 1
    if 1 << k != size:
        raise InputError(f"length must be a power of two, got {size}")
    idx = np.arange(size)
    for b in range(k):
        bit = 1 << b
        lo = idx[(idx & bit) == 0]
        out[lo] -= out[lo | bit]
    return out


def rowtypes_from_cooccurrences(
    truth: Histogram, base: ColumnSet | None = None
) -> RowTypeHistogram:
    """Recover row-type counts on ``base`` from co-occurrence counts.

    Applies the superset Moebius transform
    ``L(J) = sum_{J ⊆ S ⊆ base} (-1)^(|S|-|J|) c_S``; every subset of
    ``base`` must be present in ``truth``.  Column ``r`` of the result is
    the ``r``-th smallest column of ``base``.  Negative results mean the
    counts cannot come from any real dataset and raise
    :class:`~ldphist.errors.InconsistentHistogramError`.
    """
    if base is None:
        base = ColumnSet((1 << truth.universe.universe_size) - 1)
    cols = base.columns
    k = len(cols)
    _check_rowtype_width(k)
    c_rel = np.empty(1 << k)
    for m_rel in range(1 << k):
        m_abs = 0
        for r in range(k):
            if m_rel >> r & 1:
                m_abs |= 1 << cols[r]
        c_rel[m_rel] = truth._get_mask(m_abs)
    return RowTypeHistogram(k, mobius_superset(c_rel))


def cooccurrences_from_rowtypes(rowtypes: RowTypeHistogram) -> Histogram:
    """Full-order co-occurrence histogram of a row-type histogram
    (the superset zeta transform; exact inverse of
    :func:`rowtypes_from_cooccurrences`)."""
    d = rowtypes.n_columns
    c = zeta_superset(rowtypes.counts)
    universe = GradedIndex(d, d)
    return Histogram(universe, {m: float(c[m]) for m in range(1 << d)})


def rowtype_probability(
    true_type: ColumnSet,
    observed_type: ColumnSet,
    params: ProtocolParams,
    n_columns: int,
) -> float:
    """Probability that per-bit randomization maps one exact row to another.

    Supported bits stay 1 w.p. ``q``; unsupported bits turn 1 w.p. ``p``;
    bits are independent, so the result is a four-way product over the
    kept/lost/gained/quiet column counts.
    """
    if n_columns < 1 or n_columns > 63:
        raise InputError(f"n_columns must be in [1, 63], got {n_columns}")
    full = (1 << n_columns) - 1
    b, j = true_type.mask, observed_type.mask
    if b & ~full or j & ~full:
        raise InputError("row types must fit inside the declared columns")
    kept = (b & j).bit_count()
    lost = (b & ~j).bit_count()
    gained = (j & ~b).bit_count()
    quiet = n_columns - kept - lost - gained
    p, q = params.p, params.q
    return q**kept * (1.0 - q) ** lost * p**gained * (1.0 - p) ** quiet


def _transition_row(
    d: int, true_mask: int, params: ProtocolParams
) -> np.ndarray:
    """Distribution over output row types for one true row type (length 2^d)."""
    masks = np.arange(1 << d)
    kept = np.bitwise_count(masks & true_mask)
    gained = np.bitwise_count(masks & ~true_mask & ((1 << d) - 1))
    b_size = int(np.bitwise_count(np.int64(true_mask)))
    lost = b_size - kept
    quiet = d - b_size - gained
    p, q = params.p, params.q
    return (
        q**kept
        * (1.0 - q) ** lost
        * p**gained
        * (1.0 - p) ** quiet
    )


def transition_matrix(d: int, params: ProtocolParams) -> np.ndarray:
    """All row-type transition probabilities, shape ``(2^d, 2^d)``,
    row = true type, column = observed type."""
    _check_rowtype_width(d, limit=12)
    return np.vstack([_transition_row(d, m, params) for m in range(1 << d)])


def subset_indicator_matrix(d: int, universe: GradedIndex) -> np.ndarray:
    """Matrix turning row-type counts into graded co-occurrence counts:
    entry ``(m, pos)`` is 1 when the set at ``pos`` is contained in mask
    ``m``.  Row-type vectors right-multiplied by this give count vectors."""
    if universe.universe_size != d:
        raise InputError(
            f"universe is over {universe.universe_size} columns, expected {d}"
        )
    masks = np.arange(1 << d)
    cols = [
        ((masks & cs.mask) == cs.mask).astype(np.int64) for cs in universe.sets
    ]
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class TruthSpec:
    """Ground-truth description for simulations.

    Exactly one of ``marginals`` (independent binary columns with the given
    per-column support probabilities) or ``rowtypes`` (an explicit row-type
    histogram) is set.
    """

    marginals: tuple[float, ...] | None = None
    rowtypes: RowTypeHistogram | None = None

    def __post_init__(self) -> None:
        if (self.marginals is None) == (self.rowtypes is None):
            raise InputError(
                "specify exactly one of marginals= or rowtypes="
            )
        if self.marginals is not None:
            m = tuple(float(f) for f in self.marginals)
            if not m:
                raise InputError("need at least one marginal")
            _check_rowtype_width(len(m))
            for f in m:
                if not 0.0 <= f <= 1.0:
                    raise InputError(f"marginal outside [0, 1]: {f}")
            object.__setattr__(self, "marginals", m)

    @classmethod
    def independent_binary(cls, marginals: object) -> "TruthSpec":
        return cls(marginals=tuple(float(f) for f in np.asarray(marginals).ravel()))

    @classmethod
    def from_rowtypes(cls, rowtypes: RowTypeHistogram) -> "TruthSpec":
        return cls(rowtypes=rowtypes)

    @property
    def n_columns(self) -> int:
        if self.marginals is not None:
            return len(self.marginals)
        return self.rowtypes.n_columns

    def row_type_probabilities(self) -> np.ndarray:
        """Distribution over the ``2^D`` row types."""
        if self.rowtypes is not None:
            total = self.rowtypes.total
            if total <= 0:
                raise InputError("row-type histogram has zero total")
            return self.rowtypes.counts / total
        d = len(self.marginals)
        masks = np.arange(1 << d)
        probs = np.ones(1 << d)
        for col, f in enumerate(self.marginals):
            has = (masks >> col & 1).astype(bool)
            probs *= np.where(has, f, 1.0 - f)
        return probs

    def materialize(self, n_rows: int, rng: object) -> RowTypeHistogram:
        """Draw a concrete dataset of ``n_rows`` rows as a row-type histogram."""
        if n_rows < 0:
            raise InputError(f"n_rows must be non-negative, got {n_rows}")
        gen = np.random.default_rng(rng)
        counts = gen.multinomial(n_rows, self.row_type_probabilities())
        return RowTypeHistogram(self.n_columns, counts.astype(float))


def sample_pmdh_vectors(
    truth: RowTypeHistogram,
    params: ProtocolParams,
    rng: object,
    replicates: int,
    universe: GradedIndex | None = None,
) -> np.ndarray:
    """Replicated perturbed count vectors by direct multinomial draws.

    For each true row type the perturbation sends its ``n_B`` rows into
    output row types via one multinomial draw per replicate; summing over
    types and applying the subset-indicator matrix yields the graded
    co-occurrence counts.  Statistically identical to running the full
    row-level simulation, at a fraction of the cost.

    Returns an int64 array of shape ``(replicates, universe.dimension)``.
    """
    if replicates < 1:
        raise InputError(f"need at least one replicate, got {replicates}")
    d = truth.n_columns
    u = universe or GradedIndex(d, d)
    reps = truth.integer_counts()
    gen = np.random.default_rng(rng)
    z = subset_indicator_matrix(d, u)
    occupied = [m for m in range(1 << d) if reps[m] > 0]
    rows = [_transition_row(d, m, params) for m in occupied]
    out = np.zeros((replicates, u.dimension), dtype=np.int64)
    chunk = max(1, min(replicates, 4_000_000 // (1 << d)))
    for lo in range(0, replicates, chunk):
        hi = min(lo + chunk, replicates)
        acc = np.zeros((hi - lo, 1 << d), dtype=np.int64)
        for m, pvec in zip(occupied, rows):
            acc += gen.multinomial(int(reps[m]), pvec, size=hi - lo)
        out[lo:hi] = acc @ z
    return out


def sample_pmdh_multinomial(
    truth: RowTypeHistogram,
    params: ProtocolParams,
    rng: object,
    replicates: int,
    universe: GradedIndex | None = None,
):
    """Yield perturbed histograms, one per replicate (multinomial path)."""
    d = truth.n_columns
    u = universe or GradedIndex(d, d)
    n = float(truth.integer_counts().sum())
    vectors = sample_pmdh_vectors(truth, params, rng, replicates, u)
    for row in vectors:
        yield Histogram.from_vector(u, row.astype(float), n)


def full_simulation(
    truth: TruthSpec | RowTypeHistogram,
    params: ProtocolParams,
    rng: object,
    n_rows: int | None = None,
    universe: GradedIndex | None = None,
) -> tuple[EvidenceMatrix, Histogram]:
    """Materialize rows, flip every bit, and count: the reference simulation.

    With a :class:`RowTypeHistogram` truth the dataset is exactly the given
    integer row mix; with a marginals-style :class:`TruthSpec` a fresh
    dataset of ``n_rows`` i.i.d. rows is drawn first.  Returns the perturbed
    evidence and its counted histogram (full order unless a universe is
    given).
    """
    gen = np.random.default_rng(rng)
    if isinstance(truth, TruthSpec) and truth.marginals is not None:
        if n_rows is None:
            raise InputError("marginals-style truth needs n_rows")
        true_bits = (
            gen.random((n_rows, truth.n_columns))
            < np.asarray(truth.marginals)
        ).astype(np.uint8)
    else:
        rowtypes = truth.rowtypes if isinstance(truth, TruthSpec) else truth
        if n_rows is not None and abs(rowtypes.total - n_rows) > 1e-9:
            raise InputError(
                f"n_rows={n_rows} does not match the row-type total "
                f"{rowtypes.total}"
            )
        true_bits = rowtypes.bit_rows()
    d = true_bits.shape[1]
    u = universe or GradedIndex(d, d)
    evidence = EvidenceMatrix(perturb_bits(true_bits, params, gen))
    return evidence, count_pmdh(evidence, u)


def exact_moments_oracle(
    truth: RowTypeHistogram,
    params: ProtocolParams,
    universe: GradedIndex | None = None,
) -> NormalParams:
    """Exact mean and covariance of the perturbed histogram by enumeration.

    Independent of the closed-form moment algebra: for every occupied true
    row type the full output-type distribution is enumerated; per-row means
    and second moments of the graded indicator vector are accumulated with
    row counts, using nothing but independence across rows.  Cost grows as
    ``2^D * dim^2`` per occupied type, so the column count is capped at
    :data:`MAX_ORACLE_COLUMNS`.
    """
    d = truth.n_columns
    if d > MAX_ORACLE_COLUMNS:
        raise CapacityError(
            f"exact enumeration supports up to {MAX_ORACLE_COLUMNS} columns, "
            f"got {d}"
        )
    u = universe or GradedIndex(d, d)
    z = subset_indicator_matrix(d, u).astype(float)
    dim = u.dimension
    mean = np.zeros(dim)
    cov = np.zeros((dim, dim))
    for m in range(1 << d):
        n_b = truth.counts[m]
        if n_b == 0:
            continue
        pvec = _transition_row(d, m, params)
        row_mean = pvec @ z
        second = z.T @ (z * pvec[:, None])
        cov += n_b * (second - np.outer(row_mean, row_mean))
        mean += n_b * row_mean
    return NormalParams(universe=u, mean=mean, covariance=cov)


@dataclass(frozen=True)
class ConditionalMoments:
    """Exact vs normal-surrogate conditional moments of a pair count."""

    exact_mean: float
    exact_variance: float
    approx_mean: float
    approx_variance: float


def conditional_checks(
    n: int, x: int, y: int, p_i: float, p_j: float
) -> ConditionalMoments:
    """Moments of the pair count given both singleton counts.

    With ``x`` rows positive on column ``i`` and ``y`` on column ``j``,
    placed uniformly and independently, the overlap is hypergeometric:
    exact mean ``x y / n`` and variance
    ``x y (n-x) (n-y) / (n^2 (n-1))``.  The normal-approximation surrogate
    uses the marginal positive probabilities instead:
    mean ``x p_j + y p_i - n p_i p_j`` and variance
    ``n p_i p_j (1-p_i) (1-p_j)``.
    """
    if n < 2:
        raise InputError(f"conditional moments need n >= 2, got {n}")
    if not (0 <= x <= n and 0 <= y <= n):
        raise InputError(f"counts must lie in [0, {n}], got x={x}, y={y}")
    for name, value in (("p_i", p_i), ("p_j", p_j)):
        if not 0.0 <= value <= 1.0:
            raise InputError(f"{name} outside [0, 1]: {value}")
    exact_mean = x * y / n
    exact_var = x * y * (n - x) * (n - y) / (n**2 * (n - 1))
    approx_mean = x * p_j + y * p_i - n * p_i * p_j
    approx_var = n * p_i * p_j * (1.0 - p_i) * (1.0 - p_j)
    return ConditionalMoments(
        exact_mean=float(exact_mean),
        exact_variance=float(exact_var),
        approx_mean=float(approx_mean),
        approx_variance=float(approx_var),
    )
