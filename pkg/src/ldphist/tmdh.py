"""True multi-dimensional histograms: inverting the perturbation analytically.

The forward mean map of :mod:`ldphist.pmdh` is block lower-triangular with
invertible diagonal blocks whenever ``q > p``, and its inverse is available
in closed form — no linear solve.  Per column set the unbiased estimate of a
true count is

``t_hat(I) = (q-p)^-|I| sum_{S subset I} (-p)^(|I|-|S|) c_S``,

and the covariance of two estimates, after plugging the estimates themselves
back into the count-covariance formula, collapses to

``V(t_hat_J, t_hat_J') = (q-p)^(-|J|-|J'|) sum_{S subset J∪J'} c_S
    (-p)^(|J∪J'|-|S|) [(-p)^(|J∩J'\\S|) (1-2p)^(|J∩J'∩S|) - (q-p)^|J∩J'|]``.

The same numbers fall out of the matrix sandwich ``M^-1 Cov(C) M^-T`` with
the plug-in truth; both routes are exposed and tested against each other.
Estimates are real-valued and may leave ``[0, N]`` for rare sets — that is
reported through diagnostics, never silently clipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, SingularUpdateError
from .pmdh import (
    Histogram,
    build_forward_operator,
    cov_c,
    inverse_matrix,
    offset_vector,
)
from .protocols import ProtocolParams
from .setops import ColumnSet, GradedIndex, iter_submasks

#: Means this far outside [0, N] (relative to max(1, N)) get flagged.
DOMAIN_TOL = 1e-9

#: A covariance matrix is reported non-PSD when its smallest eigenvalue drops
#: below -1e-8 times the trace.
PSD_TOL = 1e-8


def build_inverse_operator(
    universe: GradedIndex, params: ProtocolParams
) -> np.ndarray:
    """Closed-form inverse of the forward count map on the graded index.

    Block ``(alpha, beta)`` is ``(q-p)^(-alpha) (-p)^(alpha-beta) K^(ab)``;
    parameters with ``q <= p`` cannot be constructed at all
    (:class:`~ldphist.errors.DegenerateProtocolError` at parameter creation),
    so the gap powers here are always finite.
    """
    return inverse_matrix(universe, params)


def estimate_t(
    observed: Histogram, params: ProtocolParams, target: ColumnSet
) -> float:
    """Unbiased estimate of the true count of ``target`` from observed counts.

    Requires every subset count of ``target`` (the empty set contributes
    ``(-p)^|I| N``).
    """
    p, gap = params.p, params.gap
    size = target.size
    acc = 0.0
    for sub in iter_submasks(target.mask):
        s = sub.bit_count()
        acc += (-p) ** (size - s) * observed._get_mask(sub)
    return acc / gap**size


def cov_t(
    observed: Histogram,
    params: ProtocolParams,
    left: ColumnSet,
    right: ColumnSet,
) -> float:
    """Estimated covariance of two true-count estimates.

    Estimates of disjoint sets are uncorrelated; otherwise all subsets of
    the union must be present in ``observed``.
    """
    inter = left.mask & right.mask
    if inter == 0:
        return 0.0
    union = left.mask | right.mask
    p, gap = params.p, params.gap
    u_size = union.bit_count()
    i_size = inter.bit_count()
    one_2p = 1.0 - 2.0 * p
    gap_i = gap**i_size
    acc = 0.0
    for sub in iter_submasks(union):
        s_inter = (sub & inter).bit_count()
        i_missing = i_size - s_inter
        bracket = (-p) ** i_missing * one_2p**s_inter - gap_i
        if bracket == 0.0:
            continue
        u_missing = u_size - sub.bit_count()
        acc += observed._get_mask(sub) * (-p) ** u_missing * bracket
    return acc / gap ** (left.size + right.size)


@dataclass(frozen=True)
class EstimateDiagnostics:
    """Quality flags attached to a reconstruction."""

    out_of_domain: tuple[ColumnSet, ...]
    min_eigenvalue: float
    non_psd: bool
    psd_clipped: bool = False


@dataclass(frozen=True)
class TmdhEstimate:
    """Reconstructed true counts with error bars over a graded index."""

    universe: GradedIndex
    total: float
    mean: np.ndarray
    covariance: np.ndarray
    diagnostics: EstimateDiagnostics

    def estimate(self, cs: ColumnSet) -> float:
        return float(self.mean[self.universe.index(cs)])

    def variance(self, cs: ColumnSet) -> float:
        i = self.universe.index(cs)
        return float(self.covariance[i, i])

    def covariance_of(self, a: ColumnSet, b: ColumnSet) -> float:
        return float(self.covariance[self.universe.index(a), self.universe.index(b)])


def _diagnose(
    universe: GradedIndex,
    total: float,
    mean: np.ndarray,
    cov: np.ndarray,
    clip_psd: bool,
) -> tuple[np.ndarray, EstimateDiagnostics]:
    tol = DOMAIN_TOL * max(1.0, total)
    flagged = tuple(
        cs
        for pos, cs in enumerate(universe.sets)
        if mean[pos] < -tol or mean[pos] > total + tol
    )
    eigenvalues = np.linalg.eigvalsh((cov + cov.T) / 2.0)
    min_eig = float(eigenvalues[0])
    trace = float(np.trace(cov))
    non_psd = min_eig < -PSD_TOL * abs(trace)
    clipped = False
    if clip_psd and min_eig < 0.0:
        sym = (cov + cov.T) / 2.0
        vals, vecs = np.linalg.eigh(sym)
        cov = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        cov = (cov + cov.T) / 2.0
        clipped = True
        min_eig = float(np.linalg.eigvalsh(cov)[0])
    return cov, EstimateDiagnostics(
        out_of_domain=flagged,
        min_eigenvalue=min_eig,
        non_psd=non_psd,
        psd_clipped=clipped,
    )


def tmdh_estimate(
    observed: Histogram,
    params: ProtocolParams,
    universe: GradedIndex | None = None,
    clip_psd: bool = False,
) -> TmdhEstimate:
    """Reconstruct true counts and their covariance from observed counts.

    The mean applies the closed-form inverse operator to the centered count
    vector; the covariance is filled entrywise from :func:`cov_t`, which
    needs observed counts up to order ``min(D, 2*order_cap - 1)`` (unions of
    intersecting pairs) — counting pipelines built by this package store
    those automatically.

    ``clip_psd=True`` additionally projects the covariance onto the nearest
    positive-semidefinite matrix (eigenvalue clipping) after recording the
    diagnostics; this is a numerical convenience on top of the analytic
    result, off by default.
    """
    u = universe or observed.universe
    c = observed.vector(u)
    n = observed.total
    mean = inverse_matrix(u, params) @ (c - n * offset_vector(u, params))
    sets = u.sets
    dim = u.dimension
    cov = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(i, dim):
            v = cov_t(observed, params, sets[i], sets[j])
            cov[i, j] = v
            cov[j, i] = v
    cov, diag = _diagnose(u, n, mean, cov, clip_psd)
    return TmdhEstimate(
        universe=u, total=n, mean=mean, covariance=cov, diagnostics=diag
    )


def covariance_matrix_path(
    observed: Histogram,
    params: ProtocolParams,
    universe: GradedIndex | None = None,
) -> np.ndarray:
    """The sandwich route to the estimate covariance: ``M^-1 S M^-T`` with
    the count covariance ``S`` evaluated at the plug-in reconstruction.

    Algebraically identical to entrywise :func:`cov_t`; kept as an
    independent route for cross-checking.  Needs observed counts up to order
    ``min(D, 2*order_cap - 1)`` just like the closed form.
    """
    u = universe or observed.universe
    d, cap = u.universe_size, u.order_cap
    extended = GradedIndex(d, min(d, 2 * cap - 1)) if cap < d else u
    c_ext = observed.vector(extended)
    n = observed.total
    mu_ext = inverse_matrix(extended, params) @ (
        c_ext - n * offset_vector(extended, params)
    )
    plug = Histogram.from_vector(extended, mu_ext, n)
    sets = u.sets
    dim = u.dimension
    count_cov = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(i, dim):
            v = cov_c(plug, params, sets[i], sets[j])
            count_cov[i, j] = v
            count_cov[j, i] = v
    inv = inverse_matrix(u, params)
    return inv @ count_cov @ inv.T


@dataclass(frozen=True)
class LinearConstraint:
    """Side information ``w^T t == value`` folded into the estimator.

    ``weights`` maps column sets to coefficients (missing sets weigh 0);
    ``None`` means all-ones over the whole graded index, which expresses
    "the per-row supports are mutually exclusive and exhaustive" — e.g. a
    single one-hot feature where the order-1 counts sum to ``N`` and all
    higher true co-occurrences vanish.  ``strength`` is the coupling weight:
    ``math.inf`` (the default) enforces the constraint exactly, finite
    values trade it off against the data.
    """

    value: float
    weights: dict[ColumnSet, float] | None = None
    strength: float = math.inf

    def weight_vector(self, universe: GradedIndex) -> np.ndarray:
        if self.weights is None:
            return np.ones(universe.dimension)
        w = np.zeros(universe.dimension)
        for cs, coeff in self.weights.items():
            w[universe.index(cs)] = float(coeff)
        return w


def constrained_estimate(
    observed: Histogram,
    params: ProtocolParams,
    constraints: list[LinearConstraint] | tuple[LinearConstraint, ...],
    universe: GradedIndex | None = None,
    clip_psd: bool = False,
) -> TmdhEstimate:
    """Reconstruction with linear side constraints on the true counts.

    Each constraint adds a rank-one term ``strength * 1 w^T`` to the forward
    matrix; the inverse is maintained through rank-one updates and the mean
    moves by ``f * M^-1 1 (value - w^T mean)`` with
    ``f = strength / (1 + strength * w^T M^-1 1)`` — in the exact limit
    ``strength = inf`` simply ``f = 1 / (w^T M^-1 1)``, which pins
    ``w^T mean`` to the target and zeroes the constrained direction of the
    covariance.  The covariance is rebuilt through the sandwich route with
    the updated inverse.

    Constrained runs must use a universe with ``order_cap == D`` (full
    order) or ``order_cap == 1``, so the plug-in covariance needs no counts
    beyond the universe itself.
    """
    u = universe or observed.universe
    if not constraints:
        return tmdh_estimate(observed, params, universe=u, clip_psd=clip_psd)
    d, cap = u.universe_size, u.order_cap
    if cap not in (1, d):
        raise InputError(
            f"constrained estimation needs order_cap == 1 or == D; "
            f"got cap={cap} with D={d} (use the full-order universe)"
        )
    op = build_forward_operator(u, params)
    n = observed.total
    c = observed.vector(u)
    mean = op.inverse @ (c - n * op.offset)
    inv = op.inverse
    for k, constraint in enumerate(constraints):
        w = constraint.weight_vector(u)
        inv_one = inv @ np.ones(u.dimension)
        w_inv = w @ inv
        g = float(w @ inv_one)
        s = constraint.strength
        if not math.isfinite(s):
            if abs(g) < 1e-300:
                raise SingularUpdateError(
                    f"constraint {k}: w^T M^-1 1 == 0, cannot enforce exactly"
                )
            factor = 1.0 / g
        else:
            denom = 1.0 + s * g
            if abs(denom) < 1e-300:
                raise SingularUpdateError(
                    f"constraint {k}: rank-one update denominator vanishes"
                )
            factor = s / denom
        mean = mean + factor * inv_one * (constraint.value - float(w @ mean))
        inv = inv - factor * np.outer(inv_one, w_inv)
    plug = Histogram.from_vector(u, mean, n)
    sets = u.sets
    dim = u.dimension
    count_cov = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(i, dim):
            v = cov_c(plug, params, sets[i], sets[j])
            count_cov[i, j] = v
            count_cov[j, i] = v
    cov = inv @ count_cov @ inv.T
    cov = (cov + cov.T) / 2.0
    cov, diag = _diagnose(u, n, mean, cov, clip_psd)
    return TmdhEstimate(
        universe=u, total=n, mean=mean, covariance=cov, diagnostics=diag
    )
