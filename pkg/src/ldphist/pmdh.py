"""Perturbed multi-dimensional histograms: counts and their exact moments.

A *co-occurrence histogram* maps each tracked column set ``I`` to the number
of rows whose evidence bits are all 1 on ``I``; the empty set carries the row
total ``N``.  When every evidence bit is an independent two-parameter flip of
the underlying truth bit, the observed counts are sums of independent per-row
indicators, and their mean and covariance have closed forms that are linear
in the *true* co-occurrence counts ``t``:

``E(c_I)     = sum_{S subset I} (q-p)^|S| p^(|I|-|S|) t_S`` (with ``t_empty = N``),
``V(c_J, c_J') = sum_{S subset J∪J'} t_S (q-p)^|S| p^(|J∪J'|-|S|)
                 * (1 - (q+p)^|S∩J∩J'| p^(|J∩J'|-|S∩J∩J'|))``,

which vanishes for disjoint ``J``, ``J'``.  Stacked over the graded index the
mean becomes the affine map ``mu = M t + N P`` with a block lower-triangular
``M`` assembled from subset-incidence blocks; that operator form (and its
rank-one constrained variants) is what the estimation layer inverts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .errors import IncompleteHistogramError, InputError, SingularUpdateError
from .protocols import EvidenceMatrix, ProtocolParams
from .setops import (
    EMPTY,
    ColumnSet,
    GradedIndex,
    build_K,
    iter_submasks,
    require_dense_capacity,
)

#: Relative symmetry tolerance accepted by :class:`NormalParams`.
SYMMETRY_RTOL = 1e-12


def _mask_columns(mask: int) -> tuple[int, ...]:
    return tuple(i for i in range(mask.bit_length()) if mask >> i & 1)


class Histogram:
    """Counts indexed by column sets, with the empty set holding the total.

    The ``universe`` records the declared width ``D`` and the order up to
    which the histogram is *complete*; the mapping may carry further
    higher-order counts (covariances of order-``cap`` sets involve unions of
    order up to ``2*cap - 1``, so counting pipelines store those too).

    Counts are non-negative reals in general — observed histograms hold
    integers, expected ones need not.
    """

    __slots__ = ("universe", "_counts")

    def __init__(
        self, universe: GradedIndex, counts: Mapping[ColumnSet, float] | Mapping[int, float]
    ) -> None:
        self.universe = universe
        store: dict[int, float] = {}
        for key, value in counts.items():
            mask = key.mask if isinstance(key, ColumnSet) else int(key)
            if mask < 0 or mask >= 1 << universe.universe_size:
                raise InputError(
                    f"count key {mask:#x} outside universe of size "
                    f"{universe.universe_size}"
                )
            v = float(value)
            if np.isnan(v):
                raise InputError("histogram counts must not be NaN")
            store[mask] = v
        if 0 not in store:
            raise InputError("histogram must include the empty-set total")
        if store[0] < 0:
            raise InputError(f"row total must be non-negative, got {store[0]}")
        self._counts = store

    @classmethod
    def from_vector(
        cls, universe: GradedIndex, values: np.ndarray, total: float
    ) -> "Histogram":
        """Build from a graded vector plus the row total."""
        vec = np.asarray(values, dtype=float)
        if vec.shape != (universe.dimension,):
            raise InputError(
                f"expected a vector of length {universe.dimension}, "
                f"got shape {vec.shape}"
            )
        counts: dict[int, float] = {0: float(total)}
        for pos, cs in enumerate(universe.sets):
            counts[cs.mask] = float(vec[pos])
        return cls(universe, counts)

    @property
    def total(self) -> float:
        """The empty-set count ``N``."""
        return self._counts[0]

    def get(self, cs: ColumnSet) -> float:
        try:
            return self._counts[cs.mask]
        except KeyError:
            raise IncompleteHistogramError(_mask_columns(cs.mask)) from None

    def _get_mask(self, mask: int) -> float:
        try:
            return self._counts[mask]
        except KeyError:
            raise IncompleteHistogramError(_mask_columns(mask)) from None

    def __contains__(self, cs: ColumnSet) -> bool:
        return cs.mask in self._counts

    def items(self) -> Iterator[tuple[ColumnSet, float]]:
        """All stored counts (including the empty set), by ascending order
        then mask."""
        for mask in sorted(self._counts, key=lambda m: (m.bit_count(), m)):
            yield ColumnSet(mask), self._counts[mask]

    def vector(self, universe: GradedIndex | None = None) -> np.ndarray:
        """Counts of the given universe's graded sets as a vector."""
        u = universe or self.universe
        return np.array([self._get_mask(cs.mask) for cs in u.sets], dtype=float)

    def max_stored_order(self) -> int:
        return max(m.bit_count() for m in self._counts)

    def is_monotone(self) -> bool:
        """True when every stored superset count is <= each stored subset
        count — a necessary consistency property of genuine row counts."""
        for mask, value in self._counts.items():
            for col in _mask_columns(mask):
                sub = mask & ~(1 << col)
                if sub in self._counts and value > self._counts[sub] + 1e-12:
                    return False
        return True

    def __repr__(self) -> str:
        return (
            f"Histogram(D={self.universe.universe_size}, "
            f"cap={self.universe.order_cap}, total={self.total}, "
            f"{len(self._counts) - 1} set counts)"
        )


def count_pmdh(evidence: EvidenceMatrix, universe: GradedIndex) -> Histogram:
    """Count co-occurrences of the evidence bits over the graded universe.

    ``counts(I)`` is the number of rows whose bits are all 1 on ``I``;
    the empty set gets the row count.
    """
    if evidence.n_columns != universe.universe_size:
        raise InputError(
            f"evidence has {evidence.n_columns} columns, universe declares "
            f"{universe.universe_size}"
        )
    bits = evidence.bits
    counts: dict[int, float] = {0: float(bits.shape[0])}
    # Accumulate running AND-products per order so each set reuses the
    # product of one of its subsets of the previous order.
    prev: dict[int, np.ndarray] = {0: np.ones(bits.shape[0], dtype=np.uint8)}
    for alpha in range(1, universe.order_cap + 1):
        cur: dict[int, np.ndarray] = {}
        for cs in universe.sets_of_size(alpha):
            low = cs.columns[-1]
            rest = cs.mask & ~(1 << low)
            prod = prev[rest] & bits[:, low]
            cur[cs.mask] = prod
            counts[cs.mask] = float(int(prod.sum()))
        prev = cur
    return Histogram(universe, counts)


def expected_c(truth: Histogram, params: ProtocolParams, target: ColumnSet) -> float:
    """Expected perturbed count of ``target`` given true counts.

    Sums ``(q-p)^|S| p^(|I|-|S|) t_S`` over all subsets ``S`` of the target
    (the empty set contributing ``p^|I| N``); requires every subset count to
    be present.
    """
    p, gap = params.p, params.gap
    size = target.size
    acc = 0.0
    for sub in iter_submasks(target.mask):
        s = sub.bit_count()
        acc += gap**s * p ** (size - s) * truth._get_mask(sub)
    return acc


def cov_c(
    truth: Histogram,
    params: ProtocolParams,
    left: ColumnSet,
    right: ColumnSet,
) -> float:
    """Covariance of the perturbed counts of two column sets.

    Disjoint sets are uncorrelated (each row contributes to at most one
    indicator product through independent bits), so the sum short-circuits
    to 0 without touching the histogram.  Otherwise every subset of the
    union must be present in ``truth``.
    """
    inter = left.mask & right.mask
    if inter == 0:
        return 0.0
    union = left.mask | right.mask
    p, q, gap = params.p, params.q, params.gap
    u_size = union.bit_count()
    i_size = inter.bit_count()
    qp = q + p
    acc = 0.0
    for sub in iter_submasks(union):
        s = sub.bit_count()
        si = (sub & inter).bit_count()
        weight = gap**s * p ** (u_size - s)
        acc += (
            truth._get_mask(sub)
            * weight
            * (1.0 - qp**si * p ** (i_size - si))
        )
    return acc


@dataclass(frozen=True)
class NormalParams:
    """Mean vector and covariance matrix over a graded index."""

    universe: GradedIndex
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        dim = self.universe.dimension
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        if mean.shape != (dim,):
            raise InputError(f"mean must have shape ({dim},), got {mean.shape}")
        if cov.shape != (dim, dim):
            raise InputError(
                f"covariance must have shape ({dim}, {dim}), got {cov.shape}"
            )
        scale = float(np.abs(cov).max()) if cov.size else 0.0
        if scale and float(np.abs(cov - cov.T).max()) > SYMMETRY_RTOL * scale:
            raise InputError("covariance matrix is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", (cov + cov.T) / 2.0)


@dataclass(frozen=True)
class ForwardOperator:
    """The affine map from true counts to expected perturbed counts.

    ``mean = matrix @ t + total * offset`` over the graded index; ``inverse``
    is kept alongside because the estimation layer and the rank-one
    constraint update both need it.
    """

    universe: GradedIndex
    params: ProtocolParams
    matrix: np.ndarray
    offset: np.ndarray
    inverse: np.ndarray

    def mean(self, truth: Histogram) -> np.ndarray:
        t = truth.vector(self.universe)
        return self.matrix @ t + truth.total * self.offset


def forward_matrix(universe: GradedIndex, params: ProtocolParams) -> np.ndarray:
    """Dense graded matrix ``M`` with blocks ``p^(a-b) (q-p)^b K^(ab)``."""
    require_dense_capacity(universe)
    p, gap = params.p, params.gap
    dim = universe.dimension
    out = np.zeros((dim, dim))
    for alpha in range(1, universe.order_cap + 1):
        rows = universe.block(alpha)
        for beta in range(1, alpha + 1):
            cols = universe.block(beta)
            coeff = p ** (alpha - beta) * gap**beta
            if coeff == 0.0:
                continue
            out[rows.start : rows.stop, cols.start : cols.stop] = coeff * build_K(
                alpha, beta, universe
            )
    return out


def inverse_matrix(universe: GradedIndex, params: ProtocolParams) -> np.ndarray:
    """Closed-form inverse of :func:`forward_matrix`.

    Blockwise ``(q-p)^(-a) (-p)^(a-b) K^(ab)``; exact up to rounding, no
    linear solve involved.
    """
    require_dense_capacity(universe)
    p, gap = params.p, params.gap
    dim = universe.dimension
    out = np.zeros((dim, dim))
    for alpha in range(1, universe.order_cap + 1):
        rows = universe.block(alpha)
        inv_gap = gap ** (-alpha)
        for beta in range(1, alpha + 1):
            cols = universe.block(beta)
            coeff = inv_gap * (-p) ** (alpha - beta)
            if coeff == 0.0:
                continue
            out[rows.start : rows.stop, cols.start : cols.stop] = coeff * build_K(
                alpha, beta, universe
            )
    return out


def offset_vector(universe: GradedIndex, params: ProtocolParams) -> np.ndarray:
    """Per-position baseline ``p^|I|``: the all-noise contribution of one row."""
    out = np.empty(universe.dimension)
    for alpha in range(1, universe.order_cap + 1):
        r = universe.block(alpha)
        out[r.start : r.stop] = params.p**alpha
    return out


def build_forward_operator(
    universe: GradedIndex, params: ProtocolParams
) -> ForwardOperator:
    """Assemble the affine forward map and its closed-form inverse."""
    return ForwardOperator(
        universe=universe,
        params=params,
        matrix=forward_matrix(universe, params),
        offset=offset_vector(universe, params),
        inverse=inverse_matrix(universe, params),
    )


def apply_linear_constraint(
    op: ForwardOperator,
    strength: float,
    weights: np.ndarray | None = None,
) -> ForwardOperator:
    """Add a rank-one soft-constraint term to the forward operator.

    The constrained matrix is ``M + strength * 1 w^T`` (``w`` defaults to the
    all-ones vector, giving the classic all-entries coupling); its inverse is
    maintained through the rank-one update

    ``(M + s u w^T)^-1 = M^-1 - s (M^-1 u)(w^T M^-1) / (1 + s w^T M^-1 u)``.

    Raises :class:`SingularUpdateError` when the denominator vanishes.
    """
    if not np.isfinite(strength):
        raise InputError(
            f"constraint strength must be finite here, got {strength}; "
            "exact enforcement lives in the estimation layer"
        )
    dim = op.universe.dimension
    w = np.ones(dim) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (dim,):
        raise InputError(f"weights must have shape ({dim},), got {w.shape}")
    u = np.ones(dim)
    inv_u = op.inverse @ u
    w_inv = w @ op.inverse
    denom = 1.0 + strength * float(w @ inv_u)
    if abs(denom) < 1e-300:
        raise SingularUpdateError(
            "rank-one constraint update is singular (1 + s w^T M^-1 1 == 0)"
        )
    matrix = op.matrix + strength * np.outer(u, w)
    inverse = op.inverse - (strength / denom) * np.outer(inv_u, w_inv)
    return ForwardOperator(
        universe=op.universe,
        params=op.params,
        matrix=matrix,
        offset=op.offset,
        inverse=inverse,
    )


def pmdh_normal_params(
    truth: Histogram,
    params: ProtocolParams,
    universe: GradedIndex | None = None,
) -> NormalParams:
    """Normal-approximation parameters of the perturbed histogram.

    The mean is the forward affine map; the covariance is filled entrywise
    from :func:`cov_c`.  Intersecting pairs of order-``cap`` sets reach
    unions of order up to ``2*cap - 1``, so ``truth`` must be complete up to
    ``min(D, 2*cap - 1)`` — a plain order-``cap`` histogram is only enough
    when ``cap == D`` or ``cap == 1``.
    """
    u = universe or truth.universe
    sets = u.sets
    mean = np.array(
        [expected_c(truth, params, cs) for cs in sets], dtype=float
    )
    dim = u.dimension
    cov = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(i, dim):
            v = cov_c(truth, params, sets[i], sets[j])
            cov[i, j] = v
            cov[j, i] = v
    return NormalParams(universe=u, mean=mean, covariance=cov)
