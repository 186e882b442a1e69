"""Column-set combinatorics for graded co-occurrence vectors.

A *column set* is a subset of the evidence-matrix columns ``{0, ..., D-1}``,
stored as a bitmask (``D <= 64``).  Co-occurrence histograms are indexed by
the *graded* family of all non-empty column sets up to a size cap: sets are
grouped by size ("order"), and ordered within each size block by ascending
bitmask value (colexicographic order).  All operator matrices in
:mod:`ldphist.pmdh` and :mod:`ldphist.tmdh` share this ordering, so it is
fixed here once.

The module also provides the subset-incidence block matrices ``K`` (entry 1
when the column set indexing the column is a subset of the set indexing the
row) and the small zoo of integer coefficients — Stirling numbers of the
second kind, their factorial multiples, and the alternating sums — that the
incidence algebra produces.  All integer quantities use exact Python integer
arithmetic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator

import numpy as np

from .errors import CapacityError, InputError

#: Hard cap on the number of evidence columns a bitmask may address.
MAX_COLUMNS = 64

#: Largest graded dimension for which dense operator matrices are built.
MAX_DENSE_POSITIONS = 4096


@dataclass(frozen=True)
class ColumnSet:
    """An immutable subset of evidence columns, backed by a bitmask.

    Parameters
    ----------
    mask:
        Bitmask with bit ``i`` set when column ``i`` belongs to the set.
        Must be representable within :data:`MAX_COLUMNS` bits.
    """

    mask: int

    def __post_init__(self) -> None:
        if not isinstance(self.mask, int) or isinstance(self.mask, bool):
            raise InputError(f"column-set mask must be an int, got {self.mask!r}")
        if self.mask < 0 or self.mask >= (1 << MAX_COLUMNS):
            raise InputError(f"column-set mask out of range: {self.mask}")

    @classmethod
    def of(cls, *columns: int) -> "ColumnSet":
        return cls.from_columns(columns)

    @classmethod
    def from_columns(cls, columns: Iterable[int]) -> "ColumnSet":
        mask = 0
        for c in columns:
            if not isinstance(c, (int, np.integer)) or isinstance(c, bool):
                raise InputError(f"column index must be an int, got {c!r}")
            if c < 0 or c >= MAX_COLUMNS:
                raise InputError(f"column index out of range: {c}")
            mask |= 1 << int(c)
        return cls(mask)

    @property
    def columns(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.mask.bit_length()) if self.mask >> i & 1)

    @property
    def size(self) -> int:
        return self.mask.bit_count()

    def __len__(self) -> int:
        return self.size

    def __iter__(self) -> Iterator[int]:
        return iter(self.columns)

    def __contains__(self, column: int) -> bool:
        return 0 <= column < MAX_COLUMNS and bool(self.mask >> column & 1)

    def __bool__(self) -> bool:
        return self.mask != 0

    def __or__(self, other: "ColumnSet") -> "ColumnSet":
        return ColumnSet(self.mask | other.mask)

    def __and__(self, other: "ColumnSet") -> "ColumnSet":
        return ColumnSet(self.mask & other.mask)

    def __sub__(self, other: "ColumnSet") -> "ColumnSet":
        return ColumnSet(self.mask & ~other.mask)

    def issubset(self, other: "ColumnSet") -> bool:
        return self.mask & ~other.mask == 0

    def isdisjoint(self, other: "ColumnSet") -> bool:
        return self.mask & other.mask == 0

    def __repr__(self) -> str:
        return f"ColumnSet({{{','.join(map(str, self.columns))}}})"


#: The empty column set (order zero); its histogram count is the row total.
EMPTY = ColumnSet(0)


def iter_submasks(mask: int) -> Iterator[int]:
    """Yield every submask of ``mask`` (including ``0`` and ``mask`` itself).

    Order is descending by mask value; callers that need the graded order
    should sort.  This is the standard ``sub = (sub - 1) & mask`` walk and
    visits ``2**popcount(mask)`` masks.
    """
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def size_k_masks(universe_size: int, size: int) -> Iterator[int]:
    """Yield all ``size``-element subsets of ``range(universe_size)`` as masks,
    in ascending mask order (Gosper's hack)."""
    if size < 0 or universe_size < 0:
        raise InputError("sizes must be non-negative")
    if size == 0:
        yield 0
        return
    if size > universe_size:
        return
    v = (1 << size) - 1
    limit = 1 << universe_size
    while v < limit:
        yield v
        u = v & -v
        w = v + u
        v = w | (((v ^ w) >> 2) // u)


class GradedIndex:
    """The ordered family of non-empty column sets up to a size cap.

    Sets are laid out in blocks of increasing order ``alpha = 1..order_cap``;
    inside a block they are sorted by ascending bitmask.  The resulting
    position index is what every vector and matrix in the package refers to.

    Parameters
    ----------
    universe_size:
        Number of evidence columns ``D`` (``1 <= D <= 64``).
    order_cap:
        Largest set size tracked (``1 <= order_cap <= D``).
    """

    __slots__ = ("universe_size", "order_cap", "_sets", "_position", "_block_start")

    def __init__(self, universe_size: int, order_cap: int) -> None:
        if not 1 <= universe_size <= MAX_COLUMNS:
            raise InputError(
                f"universe size must be in [1, {MAX_COLUMNS}], got {universe_size}"
            )
        if not 1 <= order_cap <= universe_size:
            raise InputError(
                f"order cap must be in [1, {universe_size}], got {order_cap}"
            )
        self.universe_size = universe_size
        self.order_cap = order_cap
        dimension = sum(
            math.comb(universe_size, a) for a in range(1, order_cap + 1)
        )
        if dimension > 50_000_000:
            raise CapacityError(
                f"graded index with {dimension} positions is too large"
            )
        sets: list[ColumnSet] = []
        block_start = [0]
        for alpha in range(1, order_cap + 1):
            sets.extend(ColumnSet(m) for m in size_k_masks(universe_size, alpha))
            block_start.append(len(sets))
        self._sets = tuple(sets)
        self._position = {cs.mask: i for i, cs in enumerate(sets)}
        self._block_start = tuple(block_start)

    @property
    def dimension(self) -> int:
        return len(self._sets)

    @property
    def sets(self) -> tuple[ColumnSet, ...]:
        return self._sets

    def index(self, cs: ColumnSet) -> int:
        """Position of ``cs`` in the graded ordering."""
        try:
            return self._position[cs.mask]
        except KeyError:
            raise InputError(
                f"{cs!r} is not in the graded universe "
                f"(D={self.universe_size}, order cap {self.order_cap})"
            ) from None

    def __contains__(self, cs: ColumnSet) -> bool:
        return cs.mask in self._position

    def block(self, alpha: int) -> range:
        """Positions of the order-``alpha`` block."""
        if not 1 <= alpha <= self.order_cap:
            raise InputError(f"order {alpha} outside [1, {self.order_cap}]")
        return range(self._block_start[alpha - 1], self._block_start[alpha])

    def sets_of_size(self, alpha: int) -> tuple[ColumnSet, ...]:
        r = self.block(alpha)
        return self._sets[r.start : r.stop]

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, GradedIndex)
            and self.universe_size == other.universe_size
            and self.order_cap == other.order_cap
        )

    def __hash__(self) -> int:
        return hash((self.universe_size, self.order_cap))

    def __repr__(self) -> str:
        return f"GradedIndex(universe_size={self.universe_size}, order_cap={self.order_cap})"


def require_dense_capacity(universe: GradedIndex) -> None:
    """Refuse to build dense operator matrices beyond the documented guard."""
    if universe.dimension > MAX_DENSE_POSITIONS:
        raise CapacityError(
            f"dense operators need dimension <= {MAX_DENSE_POSITIONS}, "
            f"got {universe.dimension} (D={universe.universe_size}, "
            f"cap={universe.order_cap})"
        )


def subsets_of(base: ColumnSet, size: int) -> list[ColumnSet]:
    """All ``size``-element subsets of ``base``, ordered by ascending mask."""
    if size < 0:
        raise InputError(f"subset size must be non-negative, got {size}")
    if size > base.size:
        return []
    masks = sorted(
        sum(1 << c for c in combo)
        for combo in itertools.combinations(base.columns, size)
    )
    return [ColumnSet(m) for m in masks]


def incidence(outer: ColumnSet, inner: ColumnSet) -> int:
    """1 when ``inner`` is a subset of ``outer``, else 0."""
    return 1 if inner.issubset(outer) else 0


def build_K(alpha: int, beta: int, universe: GradedIndex) -> np.ndarray:
    """Subset-incidence block between the order-``alpha`` and ``beta`` families.

    Entry ``(J, S)`` is 1 exactly when ``S`` (a ``beta``-set) is contained in
    ``J`` (an ``alpha``-set); rows and columns follow the graded ordering.

    Returns an integer matrix of shape ``(C(D, alpha), C(D, beta))``.
    """
    if not 1 <= beta <= alpha <= universe.order_cap:
        raise InputError(
            f"invalid block request: need 1 <= beta <= alpha <= "
            f"{universe.order_cap}, got alpha={alpha}, beta={beta}"
        )
    rows = universe.sets_of_size(alpha)
    cols = universe.sets_of_size(beta)
    out = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for i, J in enumerate(rows):
        for j, S in enumerate(cols):
            if S.mask & ~J.mask == 0:
                out[i, j] = 1
    return out


@lru_cache(maxsize=None)
def stirling2(n: int, k: int) -> int:
    """Stirling number of the second kind: partitions of ``n`` items into
    ``k`` non-empty unlabeled blocks.  Exact integer arithmetic; out-of-range
    arguments give 0 (with ``stirling2(0, 0) == 1``)."""
    if n < 0 or k < 0:
        raise InputError("stirling2 arguments must be non-negative")
    if n == 0 and k == 0:
        return 1
    if n == 0 or k == 0 or k > n:
        return 0
    return k * stirling2(n - 1, k) + stirling2(n - 1, k - 1)


def kappa(k: int, delta: int) -> int:
    """Ordered-partition count ``k! * stirling2(delta, k)``: surjections from
    ``delta`` labeled items onto ``k`` labeled blocks.  Zero when ``k > delta``."""
    if k < 0 or delta < 0:
        raise InputError("kappa arguments must be non-negative")
    if k > delta:
        return 0
    return math.factorial(k) * stirling2(delta, k)


def varkappa(delta: int) -> int:
    """Alternating surjection sum ``sum_k (-1)^k kappa(k, delta)``, which
    collapses to ``(-1)**delta``."""
    if delta < 0:
        raise InputError("varkappa argument must be non-negative")
    return -1 if delta % 2 else 1
