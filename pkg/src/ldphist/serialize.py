"""Text formats for histograms, evidence, estimates, and schemas.

All tabular files are tab-separated with a leading ``#``-comment header line
carrying a format tag, a version, and ``key=value`` metadata.  Column sets
are written as comma-joined ascending column indices, with a single ``.``
standing for the empty set.  Floats are written with ``repr`` so every file
round-trips bit-for-bit.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import TextIO

import numpy as np

from .errors import InputError
from .pmdh import Histogram, NormalParams
from .protocols import (
    DatasetSchema,
    Encoding,
    EvidenceMatrix,
    FeatureSpec,
    ProtocolParams,
)
from .setops import ColumnSet, GradedIndex
from .tmdh import EstimateDiagnostics, TmdhEstimate


def format_set(cs: ColumnSet) -> str:
    return ",".join(str(c) for c in cs.columns) if cs else "."


def parse_set(token: str) -> ColumnSet:
    if token == ".":
        return ColumnSet(0)
    try:
        return ColumnSet.from_columns(int(part) for part in token.split(","))
    except (ValueError, InputError) as exc:
        raise InputError(f"bad column-set token {token!r}: {exc}") from None


def _fmt(x: float) -> str:
    return repr(float(x))


def _header(tag: str, **meta: object) -> str:
    parts = [f"# {tag}", "v1"] + [f"{k}={v}" for k, v in meta.items()]
    return "\t".join(parts)


def _parse_header(line: str, tag: str, path: object) -> dict[str, str]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 2 or parts[0] != f"# {tag}" or parts[1] != "v1":
        raise InputError(f"{path}:1: expected a '{tag}' v1 header, got {line!r}")
    meta: dict[str, str] = {}
    for item in parts[2:]:
        if "=" not in item:
            raise InputError(f"{path}:1: bad header item {item!r}")
        key, _, value = item.partition("=")
        meta[key] = value
    return meta


def _meta_int(meta: dict[str, str], key: str, path: object) -> int:
    try:
        return int(meta[key])
    except KeyError:
        raise InputError(f"{path}:1: header is missing {key}=") from None
    except ValueError:
        raise InputError(f"{path}:1: header {key}={meta[key]!r} is not an integer") from None


# ---------------------------------------------------------------------------
# histograms


def save_histogram(hist: Histogram, path: str | Path) -> None:
    """Write all stored counts, one ``set<TAB>count`` line per entry."""
    lines = [
        _header(
            "histogram",
            d=hist.universe.universe_size,
            cap=hist.universe.order_cap,
        )
    ]
    for cs, value in hist.items():
        lines.append(f"{format_set(cs)}\t{_fmt(value)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_histogram(path: str | Path) -> Histogram:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise InputError(f"{path}: empty file")
    meta = _parse_header(lines[0], "histogram", path)
    d = _meta_int(meta, "d", path)
    cap = _meta_int(meta, "cap", path)
    counts: dict[int, float] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise InputError(
                f"{path}:{lineno}: expected 'set<TAB>count', got {line!r}"
            )
        cs = parse_set(parts[0])
        try:
            value = float(parts[1])
        except ValueError:
            raise InputError(
                f"{path}:{lineno}: bad count {parts[1]!r}"
            ) from None
        if cs.mask in counts:
            raise InputError(f"{path}:{lineno}: duplicate set {parts[0]!r}")
        counts[cs.mask] = value
    try:
        return Histogram(GradedIndex(d, cap), counts)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# evidence matrices


def save_evidence(evidence: EvidenceMatrix, path: str | Path) -> None:
    """One space-separated bit row per line."""
    with Path(path).open("w") as fh:
        fh.write(
            _header("evidence", d=evidence.n_columns, n=evidence.n_rows) + "\n"
        )
        for row in evidence.bits:
            fh.write(" ".join("1" if b else "0" for b in row) + "\n")


def load_evidence(path: str | Path) -> EvidenceMatrix:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
        if not first:
            raise InputError(f"{path}: empty file")
        meta = _parse_header(first, "evidence", path)
        d = _meta_int(meta, "d", path)
        n = _meta_int(meta, "n", path)
        rows = np.zeros((n, d), dtype=np.uint8)
        count = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            bits = line.split()
            if len(bits) != d:
                raise InputError(
                    f"{path}:{lineno}: expected {d} bits, got {len(bits)}"
                )
            if count >= n:
                raise InputError(f"{path}:{lineno}: more rows than n={n}")
            for j, b in enumerate(bits):
                if b == "1":
                    rows[count, j] = 1
                elif b != "0":
                    raise InputError(
                        f"{path}:{lineno}: bit must be 0 or 1, got {b!r}"
                    )
            count += 1
    if count != n:
        raise InputError(f"{path}: header says n={n} but found {count} rows")
    return EvidenceMatrix(rows)


# ---------------------------------------------------------------------------
# normal parameters and estimates


def _write_moment_block(
    fh: TextIO, universe: GradedIndex, mean: np.ndarray, cov: np.ndarray
) -> None:
    fh.write("sets\t" + "\t".join(format_set(cs) for cs in universe.sets) + "\n")
    fh.write("mean\t" + "\t".join(_fmt(v) for v in mean) + "\n")
    for pos, cs in enumerate(universe.sets):
        fh.write(
            f"cov:{format_set(cs)}\t"
            + "\t".join(_fmt(v) for v in cov[pos])
            + "\n"
        )


def _read_moment_block(
    lines: list[str], universe: GradedIndex, path: Path, start: int
) -> tuple[np.ndarray, np.ndarray, int]:
    dim = universe.dimension
    want_sets = [format_set(cs) for cs in universe.sets]
    i = start
    if i >= len(lines) or not lines[i].startswith("sets\t"):
        raise InputError(f"{path}:{i + 1}: expected a 'sets' line")
    got = lines[i].split("\t")[1:]
    if got != want_sets:
        raise InputError(f"{path}:{i + 1}: set ordering does not match the header universe")
    i += 1
    if i >= len(lines) or not lines[i].startswith("mean\t"):
        raise InputError(f"{path}:{i + 1}: expected a 'mean' line")
    mean = np.array([float(v) for v in lines[i].split("\t")[1:]])
    if mean.shape != (dim,):
        raise InputError(f"{path}:{i + 1}: expected {dim} mean entries")
    i += 1
    cov = np.zeros((dim, dim))
    for pos in range(dim):
        if i >= len(lines) or not lines[i].startswith("cov:"):
            raise InputError(f"{path}:{i + 1}: expected a 'cov:' line")
        label, *vals = lines[i].split("\t")
        if label != f"cov:{want_sets[pos]}":
            raise InputError(f"{path}:{i + 1}: covariance rows out of order")
        if len(vals) != dim:
            raise InputError(f"{path}:{i + 1}: expected {dim} covariance entries")
        cov[pos] = [float(v) for v in vals]
        i += 1
    return mean, cov, i


def save_normal_params(params: NormalParams, path: str | Path) -> None:
    with Path(path).open("w") as fh:
        fh.write(
            _header(
                "normal-params",
                d=params.universe.universe_size,
                cap=params.universe.order_cap,
            )
            + "\n"
        )
        _write_moment_block(fh, params.universe, params.mean, params.covariance)


def load_normal_params(path: str | Path) -> NormalParams:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise InputError(f"{path}: empty file")
    meta = _parse_header(lines[0], "normal-params", path)
    universe = GradedIndex(_meta_int(meta, "d", path), _meta_int(meta, "cap", path))
    mean, cov, _ = _read_moment_block(lines, universe, path, 1)
    return NormalParams(universe=universe, mean=mean, covariance=cov)


def save_estimate(estimate: TmdhEstimate, path: str | Path) -> None:
    with Path(path).open("w") as fh:
        fh.write(
            _header(
                "tmdh-estimate",
                d=estimate.universe.universe_size,
                cap=estimate.universe.order_cap,
                n=_fmt(estimate.total),
            )
            + "\n"
        )
        _write_moment_block(fh, estimate.universe, estimate.mean, estimate.covariance)
        diag = estimate.diagnostics
        fh.write(
            "diag:out_of_domain\t"
            + "\t".join(format_set(cs) for cs in diag.out_of_domain)
            + "\n"
        )
        fh.write(f"diag:min_eigenvalue\t{_fmt(diag.min_eigenvalue)}\n")
        fh.write(f"diag:non_psd\t{'true' if diag.non_psd else 'false'}\n")
        fh.write(f"diag:psd_clipped\t{'true' if diag.psd_clipped else 'false'}\n")


def load_estimate(path: str | Path) -> TmdhEstimate:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise InputError(f"{path}: empty file")
    meta = _parse_header(lines[0], "tmdh-estimate", path)
    universe = GradedIndex(_meta_int(meta, "d", path), _meta_int(meta, "cap", path))
    if "n" not in meta:
        raise InputError(f"{path}:1: header is missing n=")
    total = float(meta["n"])
    mean, cov, i = _read_moment_block(lines, universe, path, 1)
    fields: dict[str, str | list[str]] = {}
    for lineno in range(i, len(lines)):
        line = lines[lineno]
        if not line.strip():
            continue
        label, *vals = line.split("\t")
        if not label.startswith("diag:"):
            raise InputError(f"{path}:{lineno + 1}: expected a 'diag:' line")
        fields[label[5:]] = vals
    try:
        out_of_domain = tuple(
            parse_set(tok) for tok in fields["out_of_domain"] if tok
        )
        min_eig = float(fields["min_eigenvalue"][0])
        non_psd = fields["non_psd"][0] == "true"
        clipped = fields["psd_clipped"][0] == "true"
    except (KeyError, IndexError, ValueError) as exc:
        raise InputError(f"{path}: bad diagnostics block: {exc}") from None
    return TmdhEstimate(
        universe=universe,
        total=total,
        mean=mean,
        covariance=cov,
        diagnostics=EstimateDiagnostics(
            out_of_domain=out_of_domain,
            min_eigenvalue=min_eig,
            non_psd=non_psd,
            psd_clipped=clipped,
        ),
    )


# ---------------------------------------------------------------------------
# replicate streams


def save_replicates(
    vectors: np.ndarray,
    universe: GradedIndex,
    total: float,
    path: str | Path,
) -> None:
    """One replicate count vector per line, in graded order."""
    arr = np.asarray(vectors)
    if arr.ndim != 2 or arr.shape[1] != universe.dimension:
        raise InputError(
            f"expected (replicates, {universe.dimension}) vectors, got {arr.shape}"
        )
    with Path(path).open("w") as fh:
        fh.write(
            _header(
                "replicates",
                d=universe.universe_size,
                cap=universe.order_cap,
                n=_fmt(total),
                r=arr.shape[0],
            )
            + "\n"
        )
        fh.write(
            "sets\t" + "\t".join(format_set(cs) for cs in universe.sets) + "\n"
        )
        for row in arr:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def load_replicates(path: str | Path) -> tuple[np.ndarray, GradedIndex, float]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise InputError(f"{path}: empty file")
    meta = _parse_header(lines[0], "replicates", path)
    universe = GradedIndex(_meta_int(meta, "d", path), _meta_int(meta, "cap", path))
    r = _meta_int(meta, "r", path)
    total = float(meta.get("n", "nan"))
    if len(lines) < 2 or not lines[1].startswith("sets\t"):
        raise InputError(f"{path}:2: expected a 'sets' line")
    out = np.zeros((r, universe.dimension))
    row = 0
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        vals = line.split("\t")
        if len(vals) != universe.dimension:
            raise InputError(
                f"{path}:{lineno}: expected {universe.dimension} values"
            )
        if row >= r:
            raise InputError(f"{path}:{lineno}: more rows than r={r}")
        out[row] = [float(v) for v in vals]
        row += 1
    if row != r:
        raise InputError(f"{path}: header says r={r} but found {row} rows")
    return out, universe, total


# ---------------------------------------------------------------------------
# schemas and raw datasets


_ENCODINGS = {e.value: e for e in Encoding}


def load_schema(path: str | Path) -> tuple[DatasetSchema, ProtocolParams | None]:
    """Read a JSON schema: feature layout plus optional protocol parameters.

    ::

        {"protocol": {"p": 0.1, "q": 0.8},
         "features": [
           {"name": "color", "cardinality": 3},
           {"name": "size", "cardinality": 4, "encoding": "grr"},
           {"name": "city", "cardinality": 8,
            "encoding": "local_hash", "hash_domain": 10}]}
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or "features" not in doc:
        raise InputError(f"{path}: schema must be an object with a 'features' list")
    features = []
    for i, item in enumerate(doc["features"]):
        if not isinstance(item, dict):
            raise InputError(f"{path}: features[{i}] must be an object")
        unknown = set(item) - {"name", "cardinality", "encoding", "hash_domain"}
        if unknown:
            raise InputError(
                f"{path}: features[{i}] has unknown keys {sorted(unknown)}"
            )
        try:
            name = item["name"]
            cardinality = item["cardinality"]
        except KeyError as exc:
            raise InputError(
                f"{path}: features[{i}] is missing {exc.args[0]!r}"
            ) from None
        enc_name = item.get("encoding", "unary")
        if enc_name not in _ENCODINGS:
            raise InputError(
                f"{path}: features[{i}]: unknown encoding {enc_name!r} "
                f"(expected one of {sorted(_ENCODINGS)})"
            )
        features.append(
            FeatureSpec(
                name=str(name),
                cardinality=int(cardinality),
                encoding=_ENCODINGS[enc_name],
                hash_domain=(
                    int(item["hash_domain"]) if "hash_domain" in item else None
                ),
            )
        )
    schema = DatasetSchema(features=tuple(features))
    params = None
    if "protocol" in doc:
        proto = doc["protocol"]
        if not isinstance(proto, dict) or set(proto) - {"p", "q", "epsilon"}:
            raise InputError(
                f"{path}: protocol must be an object with p/q or epsilon"
            )
        if "epsilon" in proto:
            params = ProtocolParams.from_epsilon(float(proto["epsilon"]))
        else:
            try:
                params = ProtocolParams(float(proto["p"]), float(proto["q"]))
            except KeyError as exc:
                raise InputError(
                    f"{path}: protocol is missing {exc.args[0]!r}"
                ) from None
    return schema, params


def load_dataset(path: str | Path, schema: DatasetSchema) -> np.ndarray:
    """Read a raw categorical dataset: header naming the schema's features,
    then one comma- (or whitespace-) separated integer row per line."""
    path = Path(path)
    with path.open() as fh:
        header_line = fh.readline()
        if not header_line:
            raise InputError(f"{path}: empty file")
        delim = "," if "," in header_line else None
        names = [t.strip() for t in header_line.rstrip("\n").split(delim)]
        expected = [f.name for f in schema.features]
        if names != expected:
            raise InputError(
                f"{path}:1: header {names} does not match schema features "
                f"{expected}"
            )
        rows: list[list[int]] = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            tokens = [t.strip() for t in line.rstrip("\n").split(delim)]
            if len(tokens) != len(expected):
                raise InputError(
                    f"{path}:{lineno}: expected {len(expected)} values, "
                    f"got {len(tokens)}"
                )
            try:
                rows.append([int(t) for t in tokens])
            except ValueError:
                raise InputError(
                    f"{path}:{lineno}: categories must be integers, got {line!r}"
                ) from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.int64)
    for k, f in enumerate(schema.features):
        col = arr[:, k]
        bad = np.nonzero((col < 0) | (col >= f.cardinality))[0]
        if bad.size:
            i = int(bad[0])
            raise InputError(
                f"{path}:{i + 2}: category {col[i]} of feature {f.name!r} "
                f"outside [0, {f.cardinality})"
            )
    return arr


def save_dataset(
    rows: np.ndarray, schema: DatasetSchema, path: str | Path
) -> None:
    with Path(path).open("w") as fh:
        fh.write(",".join(f.name for f in schema.features) + "\n")
        for row in np.asarray(rows, dtype=np.int64):
            fh.write(",".join(str(int(v)) for v in row) + "\n")
