"""Analytic-vs-simulation validation campaigns.

A campaign fixes independent binary ground-truth columns, materializes one
concrete dataset per requested size, and then compares three things on that
fixed dataset:

* analytic mean/covariance of the perturbed histogram against replicated
  multinomial simulations, z-scored with standard errors estimated from the
  replicates themselves (second and fourth moments, so heavy-tailed rare
  counts are not over-flagged);
* predicted reconstruction variances against the sample variance of the
  per-replicate reconstructions;
* normality-divergence metrics of the reconstructions — skewness and
  ``1 - mean/median`` — whose decay with the dataset size is the practical
  justification for the normal approximation.

Optionally the full row-level simulator is run alongside the multinomial
one and their moments are cross-checked.  Every number in the report is a
deterministic function of the configuration and master seed; reruns emit
byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .pmdh import Histogram, offset_vector, pmdh_normal_params
from .protocols import ProtocolParams, perturb_bits
from .serialize import format_set, parse_set, save_replicates
from .setops import ColumnSet, GradedIndex
from .sim import (
    RowTypeHistogram,
    TruthSpec,
    cooccurrences_from_rowtypes,
    sample_pmdh_vectors,
    zeta_superset,
)
from .tmdh import cov_t, inverse_matrix


@dataclass(frozen=True)
class RunConfig:
    """Everything a campaign depends on; the file form mirrors the CLI flags."""

    marginals: tuple[float, ...] = (0.5, 0.3, 0.15, 0.05)
    params: ProtocolParams = ProtocolParams(0.1, 0.8)
    sizes: tuple[int, ...] = (10, 100, 1_000, 10_000, 100_000)
    replicates: int = 10_000
    seed: int = 20240
    order_cap: int | None = None
    full_sim_replicates: int = 0
    dump_replicates: bool = False

    def __post_init__(self) -> None:
        if not self.sizes or any(n < 2 for n in self.sizes):
            raise InputError(f"sizes must all be >= 2, got {self.sizes}")
        if self.replicates < 2:
            raise InputError(f"need >= 2 replicates, got {self.replicates}")
        if self.full_sim_replicates < 0:
            raise InputError("full_sim_replicates must be >= 0")
        d = len(self.marginals)
        if self.order_cap is not None and not 1 <= self.order_cap <= d:
            raise InputError(
                f"order_cap must be in [1, {d}], got {self.order_cap}"
            )

    def to_kwargs(self) -> dict:
        """Field values keyed by field name (for override merging)."""
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def to_dict(self) -> dict:
        return {
            "marginals": list(self.marginals),
            "params": {"p": self.params.p, "q": self.params.q},
            "sizes": list(self.sizes),
            "replicates": self.replicates,
            "seed": self.seed,
            "order_cap": self.order_cap,
            "full_sim_replicates": self.full_sim_replicates,
            "dump_replicates": self.dump_replicates,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        unknown = set(doc) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict = {}
        if "marginals" in doc:
            kwargs["marginals"] = tuple(float(f) for f in doc["marginals"])
        if "params" in doc:
            p = doc["params"]
            kwargs["params"] = (
                ProtocolParams.from_epsilon(float(p["epsilon"]))
                if "epsilon" in p
                else ProtocolParams(float(p["p"]), float(p["q"]))
            )
        if "sizes" in doc:
            kwargs["sizes"] = tuple(int(n) for n in doc["sizes"])
        for key in ("replicates", "seed", "full_sim_replicates"):
            if key in doc:
                kwargs[key] = int(doc[key])
        if "order_cap" in doc and doc["order_cap"] is not None:
            kwargs["order_cap"] = int(doc["order_cap"])
        if "dump_replicates" in doc:
            kwargs["dump_replicates"] = bool(doc["dump_replicates"])
        return cls(**kwargs)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return RunConfig.from_dict(doc)


@dataclass(frozen=True)
class MomentRecord:
    """One analytic-vs-simulated comparison (a mean entry or a covariance
    entry; ``set_b`` is None for means)."""

    n: int
    kind: str
    set_a: ColumnSet
    set_b: ColumnSet | None
    analytic: float
    simulated: float
    std_error: float
    z: float


@dataclass(frozen=True)
class DivergenceRecord:
    """Normality-divergence metrics of one replicate distribution."""

    n: int
    family: str  # "pmdh" (raw counts) or "tmdh" (reconstructions)
    set_: ColumnSet
    skewness: float
    mean_median_dev: float


@dataclass(frozen=True)
class VarianceMatchRecord:
    """Sample vs predicted variance of one reconstruction."""

    n: int
    set_: ColumnSet
    sample_variance: float
    predicted_variance: float
    ratio: float


@dataclass(frozen=True)
class SizeSummary:
    n: int
    z_count: int
    z_within_4: int
    frac_within_4: float
    max_abs_z: float
    mean_abs_skew_tmdh: float
    mean_abs_mmdev_singletons: float
    fullsim_z_count: int
    fullsim_z_within_4: int
    fullsim_max_abs_z: float


@dataclass
class ValidationReport:
    config: RunConfig
    universe: GradedIndex
    moments: list[MomentRecord]
    divergence: list[DivergenceRecord]
    variance_match: list[VarianceMatchRecord]
    summary: list[SizeSummary]
    replicate_vectors: dict[int, np.ndarray]


def _skewness(x: np.ndarray) -> float:
    m = x.mean()
    d = x - m
    m2 = float((d * d).mean())
    if m2 == 0.0:
        return 0.0
    m3 = float((d * d * d).mean())
    return m3 / m2**1.5


def _mean_median_dev(x: np.ndarray) -> float:
    med = float(np.median(x))
    if med == 0.0:
        return math.nan
    return 1.0 - float(x.mean()) / med


def _safe_z(diff: float, se: float) -> float:
    if se == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / se


def _moment_records(
    n: int,
    universe: GradedIndex,
    analytic_mean: np.ndarray,
    analytic_cov: np.ndarray,
    vectors: np.ndarray,
) -> list[MomentRecord]:
    """z-score simulated first/second moments against analytic ones.

    Standard errors come from the replicates: ``sqrt(s_ii / R)`` for means
    and the fourth-moment estimate
    ``sqrt((mean[(x_i - m_i)^2 (x_j - m_j)^2] - s_ij^2) / R)`` for
    covariance entries — the normal-theory shortcut would understate the
    error badly for rare, skewed counts.
    """
    r, dim = vectors.shape
    sets = universe.sets
    sample = vectors.astype(float)
    emp_mean = sample.mean(axis=0)
    centered = sample - emp_mean
    emp_cov = centered.T @ centered / (r - 1)
    sq = centered * centered
    records: list[MomentRecord] = []
    for i in range(dim):
        se = math.sqrt(emp_cov[i, i] / r)
        diff = emp_mean[i] - analytic_mean[i]
        records.append(
            MomentRecord(
                n=n,
                kind="mean",
                set_a=sets[i],
                set_b=None,
                analytic=float(analytic_mean[i]),
                simulated=float(emp_mean[i]),
                std_error=se,
                z=_safe_z(diff, se),
            )
        )
    for i in range(dim):
        for j in range(i, dim):
            var_of_cov = float((sq[:, i] * sq[:, j]).mean()) - emp_cov[i, j] ** 2
            se = math.sqrt(max(var_of_cov, 0.0) / r)
            diff = emp_cov[i, j] - analytic_cov[i, j]
            records.append(
                MomentRecord(
                    n=n,
                    kind="cov",
                    set_a=sets[i],
                    set_b=sets[j],
                    analytic=float(analytic_cov[i, j]),
                    simulated=float(emp_cov[i, j]),
                    std_error=se,
                    z=_safe_z(diff, se),
                )
            )
    return records


def _cross_sim_records(
    n: int,
    universe: GradedIndex,
    multinomial: np.ndarray,
    fullsim: np.ndarray,
) -> list[MomentRecord]:
    """Compare the two simulators' empirical moments against each other."""
    sets = universe.sets
    records: list[MomentRecord] = []
    a, b = multinomial.astype(float), fullsim.astype(float)
    ra, rb = a.shape[0], b.shape[0]
    am, bm = a.mean(axis=0), b.mean(axis=0)
    av = a.var(axis=0, ddof=1)
    bv = b.var(axis=0, ddof=1)
    for i in range(universe.dimension):
        se = math.sqrt(av[i] / ra + bv[i] / rb)
        records.append(
            MomentRecord(
                n=n,
                kind="fullsim-mean",
                set_a=sets[i],
                set_b=None,
                analytic=float(am[i]),
                simulated=float(bm[i]),
                std_error=se,
                z=_safe_z(float(bm[i] - am[i]), se),
            )
        )
    # Variances as well (diagonal second moments).
    ac = a - am
    bc = b - bm
    for i in range(universe.dimension):
        va = float((ac[:, i] ** 2).mean()) * ra / (ra - 1)
        vb = float((bc[:, i] ** 2).mean()) * rb / (rb - 1)
        m4a = float((ac[:, i] ** 4).mean())
        m4b = float((bc[:, i] ** 4).mean())
        se = math.sqrt(
            max(m4a - va**2, 0.0) / ra + max(m4b - vb**2, 0.0) / rb
        )
        records.append(
            MomentRecord(
                n=n,
                kind="fullsim-var",
                set_a=sets[i],
                set_b=sets[i],
                analytic=va,
                simulated=vb,
                std_error=se,
                z=_safe_z(vb - va, se),
            )
        )
    return records


def _full_sim_vectors(
    truth: RowTypeHistogram,
    params: ProtocolParams,
    rng: np.random.Generator,
    replicates: int,
    universe: GradedIndex,
) -> np.ndarray:
    """Row-level simulation replicates, as graded count vectors."""
    d = truth.n_columns
    true_bits = truth.bit_rows()
    positions = np.array([cs.mask for cs in universe.sets])
    out = np.zeros((replicates, universe.dimension), dtype=np.int64)
    for rep in range(replicates):
        noisy = perturb_bits(true_bits, params, rng)
        rt = RowTypeHistogram.from_bit_rows(noisy)
        full = zeta_superset(rt.counts)
        out[rep] = np.round(full[positions]).astype(np.int64)
    return out


def run_validation(config: RunConfig) -> ValidationReport:
    """Run the whole campaign described by ``config``."""
    d = len(config.marginals)
    cap = config.order_cap or d
    universe = GradedIndex(d, cap)
    params = config.params
    truth_spec = TruthSpec.independent_binary(config.marginals)
    minv = inverse_matrix(universe, params)
    offset = offset_vector(universe, params)
    singleton_positions = [universe.index(ColumnSet(1 << c)) for c in range(d)]

    moments: list[MomentRecord] = []
    divergence: list[DivergenceRecord] = []
    variance_match: list[VarianceMatchRecord] = []
    summary: list[SizeSummary] = []
    replicate_vectors: dict[int, np.ndarray] = {}

    master = np.random.SeedSequence(config.seed)
    per_size = master.spawn(len(config.sizes))
    for size_index, n in enumerate(config.sizes):
        ss_truth, ss_sample, ss_full = per_size[size_index].spawn(3)
        truth_rt = truth_spec.materialize(n, np.random.default_rng(ss_truth))
        truth_hist = cooccurrences_from_rowtypes(truth_rt)
        analytic = pmdh_normal_params(truth_hist, params, universe)

        vectors = sample_pmdh_vectors(
            truth_rt,
            params,
            np.random.default_rng(ss_sample),
            config.replicates,
            universe,
        )
        replicate_vectors[n] = vectors
        size_moments = _moment_records(
            n, universe, analytic.mean, analytic.covariance, vectors
        )

        # Reconstructions, their divergence metrics, and variance match.
        sample = vectors.astype(float)
        t_hat = (sample - n * offset) @ minv.T
        emp_mean_hist = Histogram.from_vector(universe, sample.mean(axis=0), n)
        for pos, cs in enumerate(universe.sets):
            divergence.append(
                DivergenceRecord(
                    n=n,
                    family="pmdh",
                    set_=cs,
                    skewness=_skewness(sample[:, pos]),
                    mean_median_dev=_mean_median_dev(sample[:, pos]),
                )
            )
            divergence.append(
                DivergenceRecord(
                    n=n,
                    family="tmdh",
                    set_=cs,
                    skewness=_skewness(t_hat[:, pos]),
                    mean_median_dev=_mean_median_dev(t_hat[:, pos]),
                )
            )
            predicted = cov_t(emp_mean_hist, params, cs, cs)
            sample_var = float(t_hat[:, pos].var(ddof=1))
            variance_match.append(
                VarianceMatchRecord(
                    n=n,
                    set_=cs,
                    sample_variance=sample_var,
                    predicted_variance=predicted,
                    ratio=(sample_var / predicted if predicted else math.nan),
                )
            )

        fullsim_records: list[MomentRecord] = []
        if config.full_sim_replicates:
            full_vectors = _full_sim_vectors(
                truth_rt,
                params,
                np.random.default_rng(ss_full),
                config.full_sim_replicates,
                universe,
            )
            fullsim_records = _cross_sim_records(
                n, universe, vectors, full_vectors
            )

        zs = np.array([abs(rec.z) for rec in size_moments])
        tmdh_skews = [
            abs(rec.skewness)
            for rec in divergence
            if rec.n == n and rec.family == "tmdh" and math.isfinite(rec.skewness)
        ]
        mmdevs = [
            abs(rec.mean_median_dev)
            for rec in divergence
            if rec.n == n
            and rec.family == "tmdh"
            and universe.index(rec.set_) in singleton_positions
            and math.isfinite(rec.mean_median_dev)
        ]
        full_zs = np.array([abs(rec.z) for rec in fullsim_records])
        summary.append(
            SizeSummary(
                n=n,
                z_count=len(zs),
                z_within_4=int((zs <= 4.0).sum()),
                frac_within_4=float((zs <= 4.0).mean()),
                max_abs_z=float(zs.max()),
                mean_abs_skew_tmdh=float(np.mean(tmdh_skews)),
                mean_abs_mmdev_singletons=(
                    float(np.mean(mmdevs)) if mmdevs else math.nan
                ),
                fullsim_z_count=len(full_zs),
                fullsim_z_within_4=int((full_zs <= 4.0).sum()),
                fullsim_max_abs_z=(
                    float(full_zs.max()) if len(full_zs) else math.nan
                ),
            )
        )
        moments.extend(size_moments)
        moments.extend(fullsim_records)

    return ValidationReport(
        config=config,
        universe=universe,
        moments=moments,
        divergence=divergence,
        variance_match=variance_match,
        summary=summary,
        replicate_vectors=replicate_vectors,
    )


# ---------------------------------------------------------------------------
# report files


def _fmt(x: float) -> str:
    return repr(float(x))


def _set_or_dash(cs: ColumnSet | None) -> str:
    return format_set(cs) if cs is not None else "-"


def write_report(report: ValidationReport, outdir: str | Path) -> list[Path]:
    """Write the campaign tables; returns the paths written."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    seed = report.config.seed
    written: list[Path] = []

    path = out / "config.json"
    path.write_text(
        json.dumps(report.config.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    written.append(path)

    path = out / "moments.tsv"
    with path.open("w") as fh:
        fh.write(f"# validate-moments\tv1\tseed={seed}\n")
        fh.write("n\tkind\tset_a\tset_b\tanalytic\tsimulated\tstd_error\tz\n")
        for rec in report.moments:
            fh.write(
                "\t".join(
                    (
                        str(rec.n),
                        rec.kind,
                        format_set(rec.set_a),
                        _set_or_dash(rec.set_b),
                        _fmt(rec.analytic),
                        _fmt(rec.simulated),
                        _fmt(rec.std_error),
                        _fmt(rec.z),
                    )
                )
                + "\n"
            )
    written.append(path)

    path = out / "divergence.tsv"
    with path.open("w") as fh:
        fh.write(f"# validate-divergence\tv1\tseed={seed}\n")
        fh.write("n\tfamily\tset\tskewness\tmean_median_dev\n")
        for rec in report.divergence:
            fh.write(
                "\t".join(
                    (
                        str(rec.n),
                        rec.family,
                        format_set(rec.set_),
                        _fmt(rec.skewness),
                        _fmt(rec.mean_median_dev),
                    )
                )
                + "\n"
            )
    written.append(path)

    path = out / "variance_match.tsv"
    with path.open("w") as fh:
        fh.write(f"# validate-variance-match\tv1\tseed={seed}\n")
        fh.write("n\tset\tsample_variance\tpredicted_variance\tratio\n")
        for rec in report.variance_match:
            fh.write(
                "\t".join(
                    (
                        str(rec.n),
                        format_set(rec.set_),
                        _fmt(rec.sample_variance),
                        _fmt(rec.predicted_variance),
                        _fmt(rec.ratio),
                    )
                )
                + "\n"
            )
    written.append(path)

    path = out / "summary.tsv"
    with path.open("w") as fh:
        fh.write(f"# validate-summary\tv1\tseed={seed}\n")
        fh.write(
            "n\tz_count\tz_within_4\tfrac_within_4\tmax_abs_z"
            "\tmean_abs_skew_tmdh\tmean_abs_mmdev_singletons"
            "\tfullsim_z_count\tfullsim_z_within_4\tfullsim_max_abs_z\n"
        )
        for rec in report.summary:
            fh.write(
                "\t".join(
                    (
                        str(rec.n),
                        str(rec.z_count),
                        str(rec.z_within_4),
                        _fmt(rec.frac_within_4),
                        _fmt(rec.max_abs_z),
                        _fmt(rec.mean_abs_skew_tmdh),
                        _fmt(rec.mean_abs_mmdev_singletons),
                        str(rec.fullsim_z_count),
                        str(rec.fullsim_z_within_4),
                        _fmt(rec.fullsim_max_abs_z),
                    )
                )
                + "\n"
            )
    written.append(path)

    if report.config.dump_replicates:
        for n, vectors in report.replicate_vectors.items():
            path = out / f"replicates_{n}.tsv"
            save_replicates(vectors, report.universe, float(n), path)
            written.append(path)
    return written


def _read_table(path: Path, tag: str) -> list[list[str]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(f"# {tag}\tv1"):
        raise InputError(f"{path}: expected a '{tag}' v1 header")
    if len(lines) < 2:
        raise InputError(f"{path}: missing column header")
    return [line.split("\t") for line in lines[2:] if line.strip()]


def load_moments(path: str | Path) -> list[MomentRecord]:
    rows = _read_table(Path(path), "validate-moments")
    out = []
    for row in rows:
        if len(row) != 8:
            raise InputError(f"{path}: bad moments row {row!r}")
        out.append(
            MomentRecord(
                n=int(row[0]),
                kind=row[1],
                set_a=parse_set(row[2]),
                set_b=None if row[3] == "-" else parse_set(row[3]),
                analytic=float(row[4]),
                simulated=float(row[5]),
                std_error=float(row[6]),
                z=float(row[7]),
            )
        )
    return out


def load_divergence(path: str | Path) -> list[DivergenceRecord]:
    rows = _read_table(Path(path), "validate-divergence")
    out = []
    for row in rows:
        if len(row) != 5:
            raise InputError(f"{path}: bad divergence row {row!r}")
        out.append(
            DivergenceRecord(
                n=int(row[0]),
                family=row[1],
                set_=parse_set(row[2]),
                skewness=float(row[3]),
                mean_median_dev=float(row[4]),
            )
        )
    return out


def load_variance_match(path: str | Path) -> list[VarianceMatchRecord]:
    rows = _read_table(Path(path), "validate-variance-match")
    out = []
    for row in rows:
        if len(row) != 5:
            raise InputError(f"{path}: bad variance-match row {row!r}")
        out.append(
            VarianceMatchRecord(
                n=int(row[0]),
                set_=parse_set(row[1]),
                sample_variance=float(row[2]),
                predicted_variance=float(row[3]),
                ratio=float(row[4]),
            )
        )
    return out


def load_summary(path: str | Path) -> list[SizeSummary]:
    rows = _read_table(Path(path), "validate-summary")
    out = []
    for row in rows:
        if len(row) != 10:
            raise InputError(f"{path}: bad summary row {row!r}")
        out.append(
            SizeSummary(
                n=int(row[0]),
                z_count=int(row[1]),
                z_within_4=int(row[2]),
                frac_within_4=float(row[3]),
                max_abs_z=float(row[4]),
                mean_abs_skew_tmdh=float(row[5]),
                mean_abs_mmdev_singletons=float(row[6]),
                fullsim_z_count=int(row[7]),
                fullsim_z_within_4=int(row[8]),
                fullsim_max_abs_z=float(row[9]),
            )
        )
    return out
