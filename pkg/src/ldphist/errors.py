"""Exception hierarchy shared across the package.

Every error raised on purpose derives from :class:`LdpHistError` so callers
(and the command-line layer, which maps error families to exit codes) can
distinguish bad input, capacity refusals, and degenerate protocol parameters
without string matching.
"""

from __future__ import annotations


class LdpHistError(Exception):
    """Base class for all errors raised by this package."""


class InputError(LdpHistError, ValueError):
    """Malformed or inconsistent user input (files, rows, schemas, ranges)."""


class CapacityError(LdpHistError):
    """A requested computation exceeds a documented size guard."""


class DegenerateProtocolError(LdpHistError, ValueError):
    """Protocol parameters outside 0 <= p < q <= 1; nothing is invertible there."""


class IncompleteHistogramError(LdpHistError, KeyError):
    """A histogram is missing a subset count that the computation requires."""

    def __init__(self, columns: tuple[int, ...]) -> None:
        super().__init__(columns)
        self.columns = columns

    def __str__(self) -> str:
        label = "{" + ",".join(str(c) for c in self.columns) + "}"
        return f"histogram has no count for column set {label}"


class InconsistentHistogramError(LdpHistError, ValueError):
    """Co-occurrence counts that cannot come from any non-negative row mix."""


class DependentColumnsError(LdpHistError, ValueError):
    """A column set mixes columns whose support bits are dependent by design.

    Generalized-randomized-response and local-hashing blocks produce exactly
    one (or hash-collision-coupled) positive support bit per row, so
    cross-column sets inside one such block violate the per-bit independence
    the moment formulas rely on.
    """


class SingularUpdateError(LdpHistError, ValueError):
    """A rank-one operator update whose denominator vanishes."""
