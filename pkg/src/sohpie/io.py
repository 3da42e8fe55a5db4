"""Reading, validating and aligning OTU count tables and sample metadata.

On-disk formats
---------------
OTU table
    UTF-8 TSV (canonical) or CSV. Header ``sample_id<TAB>taxon1<TAB>...``, one
    row per sample, non-negative integer cells.
Metadata
    UTF-8 CSV with a ``sample_id`` column plus named columns. A column is
    numeric when every non-missing cell parses as a float, otherwise it is
    categorical and its levels are the raw strings.
Exclusion report
    Plain text, one ``DROPPED <sample_id> <reason>`` line per removed sample.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "n/a"})


class OtuFormatError(ValueError):
    """Malformed OTU or metadata file."""


class AlignmentError(ValueError):
    """Counts and metadata cannot be reconciled into a two-group dataset."""


def _check_unique(names: Sequence[str], what: str) -> None:
    seen = set()
    for name in names:
        if name in seen:
            raise OtuFormatError(f"duplicate {what}: {name!r}")
        seen.add(name)


@dataclass(frozen=True, eq=False)
class OtuTable:
    """Samples-by-taxa matrix of read counts."""

    sample_ids: tuple[str, ...]
    taxon_names: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        object.__setattr__(self, "taxon_names", tuple(str(t) for t in self.taxon_names))
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise OtuFormatError("counts must be a 2-d array")
        if counts.shape != (len(self.sample_ids), len(self.taxon_names)):
            raise OtuFormatError(
                f"counts shape {counts.shape} does not match "
                f"{len(self.sample_ids)} samples x {len(self.taxon_names)} taxa"
            )
        _check_unique(self.sample_ids, "sample ID")
        _check_unique(self.taxon_names, "taxon name")
        if counts.dtype.kind == "f":
            if not np.all(np.isfinite(counts)):
                raise OtuFormatError("counts contain missing or non-finite cells")
            if np.any(counts != np.round(counts)):
                raise OtuFormatError("counts must be integers")
        if counts.size and counts.min() < 0:
            i, j = np.argwhere(counts < 0)[0]
            raise OtuFormatError(
                f"negative count {counts[i, j]} at sample {self.sample_ids[i]!r}, "
                f"taxon {self.taxon_names[j]!r}"
            )
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def p(self) -> int:
        return self.counts.shape[1]

    def __eq__(self, other):
        if not isinstance(other, OtuTable):
            return NotImplemented
        return (
            self.sample_ids == other.sample_ids
            and self.taxon_names == other.taxon_names
            and np.array_equal(self.counts, other.counts)
        )

    def select_samples(self, ids: Iterable[str]) -> "OtuTable":
        ids = list(ids)
        index = {s: i for i, s in enumerate(self.sample_ids)}
        rows = [index[s] for s in ids]
        return OtuTable(ids, self.taxon_names, self.counts[rows])

    def select_taxa(self, names: Iterable[str]) -> "OtuTable":
        names = list(names)
        index = {t: j for j, t in enumerate(self.taxon_names)}
        cols = [index[t] for t in names]
        return OtuTable(self.sample_ids, names, self.counts[:, cols])


def _sniff_delimiter(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "tsv"
    if fmt not in ("tsv", "csv"):
        raise ValueError(f"unknown table format {fmt!r}")
    return "," if fmt == "csv" else "\t"


def _parse_count(cell: str, row: int, col: int, sample: str, taxon: str) -> int:
    where = f"row {row}, column {col} (sample {sample!r}, taxon {taxon!r})"
    text = cell.strip()
    if text.lower() in MISSING_TOKENS:
        raise OtuFormatError(f"missing count at {where}")
    try:
        value = int(text)
    except ValueError:
        try:
            f = float(text)
        except ValueError:
            raise OtuFormatError(f"non-numeric count {cell!r} at {where}") from None
        if not math.isfinite(f) or f != int(f):
            raise OtuFormatError(f"non-integer count {cell!r} at {where}")
        value = int(f)
    if value < 0:
        raise OtuFormatError(f"negative count {cell!r} at {where}")
    return value


def load_otu_table(path, format: str | None = None) -> OtuTable:
    """Read an OTU table with samples as rows and taxa as columns.

    Parameters
    ----------
    path : str or Path
    format : {'tsv', 'csv'}, optional
        Inferred from the file extension when omitted (``.csv`` means CSV,
        anything else TSV).

    Raises
    ------
    OtuFormatError
        For a missing header, ragged rows, non-integer or negative cells
        (the message carries 1-based row/column coordinates) and duplicate
        sample IDs or taxon names.
    """
    path = Path(path)
    delim = _sniff_delimiter(path, format)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter=delim))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise OtuFormatError(f"{path}: empty file, header row required")
    header = [c.strip() for c in rows[0]]
    if len(header) < 2:
        raise OtuFormatError(f"{path}: header needs a sample column and at least one taxon")
    taxa = header[1:]
    sample_ids, counts = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise OtuFormatError(
                f"{path}: row {r} has {len(row)} cells, header has {len(header)}"
            )
        sid = row[0].strip()
        sample_ids.append(sid)
        counts.append(
            [_parse_count(c, r, j + 2, sid, taxa[j]) for j, c in enumerate(row[1:])]
        )
    counts = np.array(counts, dtype=np.int64).reshape(len(sample_ids), len(taxa))
    return OtuTable(sample_ids, taxa, counts)


def write_otu_table(otu: OtuTable, path, format: str | None = None) -> None:
    path = Path(path)
    delim = _sniff_delimiter(path, format)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delim, lineterminator="\n")
        w.writerow(["sample_id", *otu.taxon_names])
        for sid, row in zip(otu.sample_ids, otu.counts):
            w.writerow([sid, *(int(v) for v in row)])


@dataclass(frozen=True, eq=False)
class CovariateFrame:
    """Per-sample metadata columns keyed by name.

    Numeric columns are float arrays with NaN for missing values; categorical
    columns are object arrays of strings with ``None`` for missing values.
    After :func:`align`, ``group_col`` and ``group_levels`` (reference level
    first) are set and no values are missing.
    """

    sample_ids: tuple[str, ...]
    columns: dict
    categorical: frozenset = frozenset()
    group_col: str | None = None
    group_levels: tuple[str, str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        _check_unique(self.sample_ids, "sample ID")
        cols = {}
        for name, values in self.columns.items():
            values = np.asarray(values, dtype=object if name in self.categorical else float)
            if values.shape != (len(self.sample_ids),):
                raise OtuFormatError(f"column {name!r} has wrong length")
            cols[name] = values
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "categorical", frozenset(self.categorical))

    @property
    def n(self) -> int:
        return len(self.sample_ids)

    @property
    def group(self) -> np.ndarray:
        if self.group_col is None:
            raise AttributeError("no group column assigned; call align() first")
        return self.columns[self.group_col]

    def is_missing(self, name: str) -> np.ndarray:
        values = self.columns[name]
        if name in self.categorical:
            return np.array([v is None for v in values], dtype=bool)
        return np.isnan(values)

    def levels(self, name: str) -> list[str]:
        values = self.columns[name]
        return sorted({v for v in values if v is not None})

    def select(self, ids: Iterable[str], names: Iterable[str] | None = None, **kw) -> "CovariateFrame":
        ids = list(ids)
        index = {s: i for i, s in enumerate(self.sample_ids)}
        rows = [index[s] for s in ids]
        names = list(self.columns) if names is None else list(names)
        cols = {nm: self.columns[nm][rows] for nm in names}
        attrs = dict(group_col=self.group_col, group_levels=self.group_levels)
        attrs.update(kw)
        return CovariateFrame(
            ids, cols, frozenset(self.categorical) & set(names), **attrs
        )

    def __eq__(self, other):
        if not isinstance(other, CovariateFrame):
            return NotImplemented
        if (
            self.sample_ids != other.sample_ids
            or set(self.columns) != set(other.columns)
            or self.categorical != other.categorical
            or self.group_col != other.group_col
            or self.group_levels != other.group_levels
        ):
            return False
        for name, values in self.columns.items():
            theirs = other.columns[name]
            if name in self.categorical:
                if list(values) != list(theirs):
                    return False
            elif not np.array_equal(values, theirs, equal_nan=True):
                return False
        return True


def _is_float(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_metadata(path, categorical: Iterable[str] = (), id_col: str = "sample_id") -> CovariateFrame:
    """Read a metadata CSV (TSV when the extension is ``.tsv``).

    Column types are inferred; names listed in `categorical` are forced to be
    categorical even when their cells look numeric (e.g. 0/1 codes).
    """
    path = Path(path)
    delim = "\t" if path.suffix.lower() in (".tsv", ".txt") else ","
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delim) if any(c.strip() for c in r)]
    if not rows:
        raise OtuFormatError(f"{path}: empty metadata file")
    header = [c.strip() for c in rows[0]]
    if id_col not in header:
        raise OtuFormatError(f"{path}: metadata header lacks {id_col!r}")
    _check_unique(header, "metadata column")
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise OtuFormatError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
    id_idx = header.index(id_col)
    ids = [row[id_idx].strip() for row in rows[1:]]
    forced = set(categorical)
    cols, cats = {}, set()
    for j, name in enumerate(header):
        if j == id_idx:
            continue
        raw = [row[j].strip() for row in rows[1:]]
        present = [c for c in raw if c.lower() not in MISSING_TOKENS]
        if name not in forced and present and all(_is_float(c) for c in present):
            cols[name] = [float(c) if c.lower() not in MISSING_TOKENS else math.nan for c in raw]
        else:
            cols[name] = [c if c.lower() not in MISSING_TOKENS else None for c in raw]
            cats.add(name)
    return CovariateFrame(ids, cols, frozenset(cats))


def write_metadata(covs: CovariateFrame, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        names = list(covs.columns)
        w.writerow(["sample_id", *names])
        for i, sid in enumerate(covs.sample_ids):
            cells = []
            for nm in names:
                v = covs.columns[nm][i]
                if nm in covs.categorical:
                    cells.append("" if v is None else v)
                else:
                    cells.append("" if np.isnan(v) else repr(float(v)))
            w.writerow([sid, *cells])


@dataclass(frozen=True)
class Exclusion:
    sample_id: str
    reason: str

    def __str__(self):
        return f"DROPPED {self.sample_id} {self.reason}"


def format_exclusions(report: Iterable[Exclusion]) -> str:
    return "".join(f"{e}\n" for e in report)


@dataclass(frozen=True, eq=False)
class AlignedDataset:
    """Counts and covariates over a common, group-sorted sample order.

    Samples of the reference group come first, then the other group; within
    a group the original OTU-table order is kept. ``otu_after`` is the
    second time point for paired designs.
    """

    otu: OtuTable
    covariates: CovariateFrame
    report: tuple[Exclusion, ...] = field(default=())
    otu_after: OtuTable | None = None

    @property
    def group_col(self) -> str:
        return self.covariates.group_col

    @property
    def group_levels(self) -> tuple[str, str]:
        return self.covariates.group_levels

    @property
    def groups(self) -> np.ndarray:
        return self.covariates.group

    def group_ids(self, level: str) -> list[str]:
        g = self.groups
        return [s for s, lab in zip(self.otu.sample_ids, g) if lab == level]

    def group_table(self, level: str, after: bool = False) -> OtuTable:
        table = self.otu_after if after else self.otu
        return table.select_samples(self.group_ids(level))

    @property
    def group_sizes(self) -> tuple[int, int]:
        g = self.groups
        return tuple(int(np.sum(g == lev)) for lev in self.group_levels)


def align(
    otu: OtuTable,
    covs: CovariateFrame,
    group_col: str,
    covariate_cols: Sequence[str] = (),
    reference_group: str | None = None,
    otu_after: OtuTable | None = None,
    min_group_size: int = 3,
) -> AlignedDataset:
    """Intersect samples, drop incomplete cases and order samples by group.

    A sample is dropped when it is absent from either input (or from
    `otu_after`), or when the group or any requested covariate is missing.
    Categorical covariates left with a single observed level are removed
    with a warning. The reference group defaults to the first level in
    sorted order.

    Raises
    ------
    AlignmentError
        If the group column is unknown, fewer or more than two groups remain,
        or a group has fewer than `min_group_size` samples.
    """
    if group_col not in covs.columns:
        raise AlignmentError(f"group column {group_col!r} not in metadata")
    covariate_cols = [c for c in covariate_cols if c != group_col]
    for c in covariate_cols:
        if c not in covs.columns:
            raise AlignmentError(f"covariate {c!r} not in metadata")
    if otu_after is not None and otu_after.taxon_names != otu.taxon_names:
        raise AlignmentError("time points have different taxa")

    report = []
    meta_ids = set(covs.sample_ids)
    after_ids = set(otu_after.sample_ids) if otu_after is not None else None
    otu_ids = set(otu.sample_ids)
    keep = []
    for sid in otu.sample_ids:
        if sid not in meta_ids:
            report.append(Exclusion(sid, "not_in_metadata"))
        elif after_ids is not None and sid not in after_ids:
            report.append(Exclusion(sid, "missing_second_time_point"))
        else:
            keep.append(sid)
    for sid in covs.sample_ids:
        if sid not in otu_ids:
            report.append(Exclusion(sid, "not_in_otu_table"))
    if after_ids is not None:
        for sid in otu_after.sample_ids:
            if sid not in otu_ids:
                report.append(Exclusion(sid, "missing_first_time_point"))

    # group labels are always treated as strings
    g_raw = covs.columns[group_col]
    if group_col in covs.categorical:
        glab = list(g_raw)
    else:
        glab = [None if np.isnan(v) else (str(int(v)) if float(v).is_integer() else str(v)) for v in g_raw]
    cols = dict(covs.columns)
    cols[group_col] = np.array(glab, dtype=object)
    cats = set(covs.categorical) | {group_col}
    frame = CovariateFrame(covs.sample_ids, cols, frozenset(cats))

    required = [group_col, *covariate_cols]
    missing = {c: frame.is_missing(c) for c in required}
    index = {s: i for i, s in enumerate(frame.sample_ids)}
    complete = []
    for sid in keep:
        i = index[sid]
        gone = [c for c in required if missing[c][i]]
        if gone:
            report.append(Exclusion(sid, "missing:" + ",".join(gone)))
        else:
            complete.append(sid)

    sub = frame.select(complete, required)
    levels = sub.levels(group_col)
    if len(levels) < 2:
        raise AlignmentError(
            f"single group after alignment ({levels[0] if levels else 'none'}); need two"
        )
    if len(levels) > 2:
        raise AlignmentError(f"group column has {len(levels)} levels {levels}; need exactly two")
    if reference_group is None:
        reference_group = levels[0]
    if reference_group not in levels:
        raise AlignmentError(f"reference group {reference_group!r} not among {levels}")
    group_levels = (reference_group, levels[1] if levels[0] == reference_group else levels[0])

    kept_cols = [group_col]
    for c in covariate_cols:
        if c in sub.categorical and len(sub.levels(c)) < 2:
            warnings.warn(f"categorical covariate {c!r} has a single level; dropped", stacklevel=2)
            continue
        kept_cols.append(c)

    g = sub.columns[group_col]
    ordered = [s for s, lab in zip(sub.sample_ids, g) if lab == group_levels[0]]
    ordered += [s for s, lab in zip(sub.sample_ids, g) if lab == group_levels[1]]
    for lev in group_levels:
        n_z = int(np.sum(g == lev))
        if n_z < min_group_size:
            raise AlignmentError(
                f"group {lev!r} has {n_z} samples; at least {min_group_size} required"
            )

    aligned_covs = sub.select(ordered, kept_cols, group_col=group_col, group_levels=group_levels)
    return AlignedDataset(
        otu=otu.select_samples(ordered),
        covariates=aligned_covs,
        report=tuple(report),
        otu_after=None if otu_after is None else otu_after.select_samples(ordered),
    )


def prevalence_mask(otu: OtuTable, prevalence: float) -> np.ndarray:
    if not 0.0 <= prevalence <= 1.0:
        raise ValueError(f"prevalence must lie in [0, 1], got {prevalence}")
    present = np.count_nonzero(otu.counts, axis=0)
    return present >= prevalence * otu.n


def filter_rare_taxa(otu: OtuTable, prevalence: float) -> OtuTable:
    """Drop taxa observed (nonzero) in fewer than ``prevalence * n`` samples.

    Retained taxa keep their counts and order; ``result.taxon_names`` is the
    retained list.
    """
    mask = prevalence_mask(otu, prevalence)
    if not mask.any():
        raise ValueError(f"all {otu.p} taxa fall below prevalence {prevalence}")
    return otu.select_taxa([t for t, m in zip(otu.taxon_names, mask) if m])


def write_matrix(path, matrix: np.ndarray, names: Sequence[str]) -> None:
    """Square matrix as TSV with names in the header and first column."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(["taxon", *names]) + "\n")
        for name, row in zip(names, matrix):
            fh.write("\t".join([name, *(f"{v:.10g}" for v in row)]) + "\n")


def read_matrix(path) -> tuple[np.ndarray, list[str]]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        names, rows = [], []
        for line in fh:
            cells = line.rstrip("\n").split("\t")
            names.append(cells[0])
            rows.append([float(c) for c in cells[1:]])
    if names != header[1:]:
        raise OtuFormatError(f"{path}: row and column names differ")
    return np.array(rows), names
