"""Command-line surface: perturb, estimate, validate, conditional.

Exit codes: 0 success, 2 bad input (parse errors, inconsistent or
incomplete data, unsupported column sets), 3 capacity refusal, 4 degenerate
protocol parameters, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .errors import (
    CapacityError,
    DegenerateProtocolError,
    DependentColumnsError,
    LdpHistError,
)
from .pmdh import Histogram, count_pmdh, inverse_matrix, offset_vector
from .protocols import (
    DatasetSchema,
    EvidenceMatrix,
    ProtocolParams,
    randomize_dataset,
)
from .serialize import (
    format_set,
    load_dataset,
    load_evidence,
    load_schema,
    save_estimate,
    save_evidence,
    save_histogram,
)
from .setops import GradedIndex, require_dense_capacity
from .sim import conditional_checks
from .tmdh import EstimateDiagnostics, TmdhEstimate, cov_t
from .validation import RunConfig, load_run_config, run_validation, write_report


def _parse_params(text: str) -> ProtocolParams:
    parts = text.split(",")
    if len(parts) != 2:
        raise LdpHistError(f"--params expects 'p,q', got {text!r}")
    try:
        p, q = float(parts[0]), float(parts[1])
    except ValueError:
        raise LdpHistError(f"--params expects two floats, got {text!r}") from None
    return ProtocolParams(p, q)


def _resolve_params(
    args: argparse.Namespace, fallback: ProtocolParams | None
) -> ProtocolParams:
    if getattr(args, "params", None):
        return _parse_params(args.params)
    if getattr(args, "epsilon", None) is not None:
        return ProtocolParams.from_epsilon(args.epsilon)
    if fallback is not None:
        return fallback
    raise LdpHistError(
        "no protocol parameters: pass --params p,q or --epsilon, "
        "or put a 'protocol' entry in the schema"
    )


def estimate_from_evidence(
    evidence: EvidenceMatrix,
    schema: DatasetSchema,
    params: ProtocolParams,
    order_cap: int,
) -> tuple[TmdhEstimate, Histogram]:
    """The estimation pipeline behind ``ldphist estimate``.

    Counts the evidence up to the extended order the covariance formula
    needs, reconstructs true counts over the graded universe, and fills the
    covariance entrywise.  Every graded set must be supported by the schema
    (at most one column per GRR/local-hashing block); covariance entries
    whose *union* crosses such a block are reported as NaN, since the
    independence the formula needs does not hold there.
    """
    d = schema.n_columns
    if evidence.n_columns != d:
        raise LdpHistError(
            f"evidence has {evidence.n_columns} columns, schema declares {d}"
        )
    if not 1 <= order_cap <= d:
        raise LdpHistError(f"--order-cap must be in [1, {d}], got {order_cap}")
    universe = GradedIndex(d, order_cap)
    require_dense_capacity(universe)
    for cs in universe.sets:
        schema.validate_column_set(cs)

    extended = GradedIndex(d, min(d, 2 * order_cap - 1))
    observed = count_pmdh(evidence, extended)

    c = observed.vector(universe)
    n = observed.total
    mean = inverse_matrix(universe, params) @ (
        c - n * offset_vector(universe, params)
    )

    sets = universe.sets
    dim = universe.dimension
    cov = np.zeros((dim, dim))
    any_nan = False
    for i in range(dim):
        for j in range(i, dim):
            try:
                schema.validate_column_set(sets[i] | sets[j])
            except DependentColumnsError:
                cov[i, j] = cov[j, i] = math.nan
                any_nan = True
                continue
            v = cov_t(observed, params, sets[i], sets[j])
            cov[i, j] = v
            cov[j, i] = v

    tol = 1e-9 * max(1.0, n)
    flagged = tuple(
        cs
        for pos, cs in enumerate(sets)
        if mean[pos] < -tol or mean[pos] > n + tol
    )
    if any_nan:
        min_eig, non_psd = math.nan, False
    else:
        min_eig = float(np.linalg.eigvalsh((cov + cov.T) / 2.0)[0])
        non_psd = min_eig < -1e-8 * abs(float(np.trace(cov)))
    estimate = TmdhEstimate(
        universe=universe,
        total=n,
        mean=mean,
        covariance=cov,
        diagnostics=EstimateDiagnostics(
            out_of_domain=flagged, min_eigenvalue=min_eig, non_psd=non_psd
        ),
    )
    return estimate, observed


def cmd_estimate(args: argparse.Namespace) -> int:
    schema, file_params = load_schema(args.schema)
    params = _resolve_params(args, file_params)
    evidence = load_evidence(args.data)
    estimate, observed = estimate_from_evidence(
        evidence, schema, params, args.order_cap
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    save_histogram(observed, outdir / "pmdh.tsv")
    save_estimate(estimate, outdir / "tmdh.tsv")
    diag = estimate.diagnostics
    print(f"rows: {int(observed.total)}")
    print(f"sets: {estimate.universe.dimension} (order cap {args.order_cap})")
    print(
        "out_of_domain: "
        + (
            " ".join(format_set(cs) for cs in diag.out_of_domain)
            if diag.out_of_domain
            else "-"
        )
    )
    print(f"min_eigenvalue: {diag.min_eigenvalue!r}")
    print(f"wrote: {outdir / 'pmdh.tsv'} {outdir / 'tmdh.tsv'}")
    return 0


def cmd_perturb(args: argparse.Namespace) -> int:
    schema, file_params = load_schema(args.schema)
    params = _resolve_params(args, file_params)
    rows = load_dataset(args.data, schema)
    evidence = randomize_dataset(rows, schema, params, args.seed)
    save_evidence(evidence, args.out)
    print(f"rows: {evidence.n_rows}")
    print(f"columns: {evidence.n_columns}")
    print(f"wrote: {args.out}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    if args.config:
        config = load_run_config(args.config)
    else:
        config = RunConfig()
    overrides: dict = {}
    if args.marginals:
        overrides["marginals"] = tuple(
            float(t) for t in args.marginals.split(",")
        )
    if args.params or args.epsilon is not None:
        overrides["params"] = _resolve_params(args, None)
    if args.sizes:
        overrides["sizes"] = tuple(int(t) for t in args.sizes.split(","))
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.order_cap is not None:
        overrides["order_cap"] = args.order_cap
    if args.full_sim_replicates is not None:
        overrides["full_sim_replicates"] = args.full_sim_replicates
    if args.dump_replicates:
        overrides["dump_replicates"] = True
    if overrides:
        config = RunConfig(**{**config.to_kwargs(), **overrides})
    report = run_validation(config)
    written = write_report(report, args.out)
    for s in report.summary:
        print(
            f"n={s.n}\tz_within_4={s.z_within_4}/{s.z_count}"
            f"\tmax_abs_z={s.max_abs_z!r}"
            f"\tmean_abs_skew={s.mean_abs_skew_tmdh!r}"
            f"\tmean_abs_mmdev={s.mean_abs_mmdev_singletons!r}"
        )
    print("wrote: " + " ".join(str(p) for p in written))
    return 0


def cmd_conditional(args: argparse.Namespace) -> int:
    result = conditional_checks(args.n, args.x, args.y, args.pi, args.pj)
    lines = [
        "quantity\texact\tapprox",
        f"mean\t{result.exact_mean!r}\t{result.approx_mean!r}",
        f"variance\t{result.exact_variance!r}\t{result.approx_variance!r}",
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote: {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _add_param_flags(sub: argparse.ArgumentParser) -> None:
    group = sub.add_mutually_exclusive_group()
    group.add_argument(
        "--params", metavar="P,Q", help="per-bit flip probabilities p,q"
    )
    group.add_argument(
        "--epsilon",
        type=float,
        help="per-bit privacy level; implies symmetric q = e^eps/(1+e^eps)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldphist",
        description=(
            "Co-occurrence histograms under pure local differential "
            "privacy: perturb datasets, reconstruct true joint counts with "
            "error bars, and validate the analytic moments by simulation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser(
        "perturb", help="encode and randomize a raw categorical dataset"
    )
    sp.add_argument("--data", required=True, help="raw dataset (CSV with header)")
    sp.add_argument("--schema", required=True, help="schema JSON file")
    _add_param_flags(sp)
    sp.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    sp.add_argument("--out", required=True, help="evidence file to write")
    sp.set_defaults(func=cmd_perturb)

    sp = sub.add_parser(
        "estimate",
        help="reconstruct true co-occurrence counts from perturbed evidence",
    )
    sp.add_argument("--data", required=True, help="evidence file (perturb output)")
    sp.add_argument("--schema", required=True, help="schema JSON file")
    _add_param_flags(sp)
    sp.add_argument(
        "--order-cap",
        type=int,
        default=2,
        help="largest co-occurrence order to estimate (default 2)",
    )
    sp.add_argument("--out", required=True, help="directory for report files")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser(
        "validate", help="run an analytic-vs-simulation validation campaign"
    )
    sp.add_argument("--config", help="JSON config mirroring these flags")
    sp.add_argument(
        "--marginals", help="comma-separated per-column truth frequencies"
    )
    _add_param_flags(sp)
    sp.add_argument("--sizes", help="comma-separated dataset sizes")
    sp.add_argument("--replicates", type=int, help="simulation replicates")
    sp.add_argument("--seed", type=int, help="master seed")
    sp.add_argument("--order-cap", type=int, help="graded order cap")
    sp.add_argument(
        "--full-sim-replicates",
        type=int,
        help="also run the row-level simulator this many times per size",
    )
    sp.add_argument(
        "--dump-replicates",
        action="store_true",
        help="write per-size replicate count vectors",
    )
    sp.add_argument("--out", required=True, help="directory for report files")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser(
        "conditional",
        help="exact vs normal-surrogate conditional pair moments",
    )
    sp.add_argument("--n", type=int, required=True, help="number of rows")
    sp.add_argument("--x", type=int, required=True, help="positive rows on column i")
    sp.add_argument("--y", type=int, required=True, help="positive rows on column j")
    sp.add_argument("--pi", type=float, required=True, help="marginal probability of column i")
    sp.add_argument("--pj", type=float, required=True, help="marginal probability of column j")
    sp.add_argument("--out", help="write the table here instead of stdout")
    sp.set_defaults(func=cmd_conditional)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CapacityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DegenerateProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except LdpHistError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
