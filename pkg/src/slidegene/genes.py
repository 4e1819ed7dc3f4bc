"""Expression table ingest, zero-median filtering, log transform, case splits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError, InputError


@dataclass
class GeneTable:
    gene_ids: list[str]
    cases: list[str]
    values: np.ndarray  # (cases, genes) float64
    transformed: bool = False
    dropped_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.cases), len(self.gene_ids)):
            raise InputError(
                f"value matrix {self.values.shape} does not match "
                f"{len(self.cases)} cases x {len(self.gene_ids)} genes"
            )
        if len(set(self.gene_ids)) != len(self.gene_ids):
            raise InputError("duplicate gene ids in table")
        if not np.isfinite(self.values).all():
            raise InputError("non-finite expression values")

    @property
    def num_genes(self) -> int:
        return len(self.gene_ids)

    def case_vector(self, case_id: str) -> np.ndarray:
        return self.values[self.cases.index(case_id)]


def _parse_pair_tsv(path: str) -> tuple[list[str], list[float]]:
    gene_ids, values = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 columns, got {len(parts)}")
            gene, raw = parts
            try:
                value = float(raw)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad value {raw!r}") from exc
            if value < 0:
                raise FormatError(f"{path}:{lineno}: negative expression {value}")
            gene_ids.append(gene)
            values.append(value)
    if len(set(gene_ids)) != len(gene_ids):
        dup = next(g for i, g in enumerate(gene_ids) if g in gene_ids[:i])
        raise FormatError(f"{path}: duplicate gene id {dup!r}")
    return gene_ids, values


def ingest_expression(case_files: dict[str, str]) -> GeneTable:
    """Assemble a table from per-case two-column TSVs, first file's gene order.

    Every case must report every gene; a missing gene is a hard error rather
    than a silent zero because zeros feed the median filter.
    """
    if not case_files:
        raise InputError("no case files given")
    cases = list(case_files)
    first_ids, first_vals = _parse_pair_tsv(case_files[cases[0]])
    order = {g: i for i, g in enumerate(first_ids)}
    matrix = np.zeros((len(cases), len(first_ids)), dtype=np.float64)
    matrix[0] = first_vals
    for row, case in enumerate(cases[1:], start=1):
        ids, vals = _parse_pair_tsv(case_files[case])
        if set(ids) != set(first_ids):
            missing = sorted(set(first_ids) ^ set(ids))[:3]
            raise FormatError(
                f"{case_files[case]}: gene set differs from first case "
                f"(e.g. {missing})"
            )
        for g, v in zip(ids, vals):
            matrix[row, order[g]] = v
    return GeneTable(gene_ids=first_ids, cases=cases, values=matrix)


def ingest_matrix(path: str) -> GeneTable:
    """Parse a combined matrix TSV: header row of case ids, one row per gene."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.rstrip("\n")]
    if not lines:
        raise FormatError(f"{path}: empty file")
    header = lines[0].split("\t")
    if len(header) < 2:
        raise FormatError(f"{path}:1: header needs gene column plus case ids")
    cases = header[1:]
    gene_ids: list[str] = []
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != len(header):
            raise FormatError(
                f"{path}:{lineno}: expected {len(header)} columns, got {len(parts)}"
            )
        gene_ids.append(parts[0])
        try:
            row = [float(x) for x in parts[1:]]
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: bad value") from exc
        if any(v < 0 for v in row):
            raise FormatError(f"{path}:{lineno}: negative expression value")
        rows.append(row)
    if len(set(gene_ids)) != len(gene_ids):
        dup = next(g for i, g in enumerate(gene_ids) if g in gene_ids[:i])
        raise FormatError(f"{path}: duplicate gene id {dup!r}")
    values = np.array(rows, dtype=np.float64).T  # cases x genes
    return GeneTable(gene_ids=gene_ids, cases=cases, values=values)


def filter_median_zero(table: GeneTable) -> GeneTable:
    """Drop genes whose median over cases is zero; raw scale required."""
    if table.transformed:
        raise ContractError("median filter must run on the raw scale")
    # np.median takes the mean of the two central order statistics when the
    # case count is even, which is the convention this filter relies on
    medians = np.median(table.values, axis=0)
    keep = medians > 0
    kept_ids = [g for g, flag in zip(table.gene_ids, keep) if flag]
    dropped = [g for g, flag in zip(table.gene_ids, keep) if not flag]
    return GeneTable(
        gene_ids=kept_ids,
        cases=list(table.cases),
        values=table.values[:, keep],
        transformed=False,
        dropped_ids=dropped,
    )


def log_transform(table: GeneTable) -> GeneTable:
    """Elementwise a -> log10(1 + a)."""
    if table.transformed:
        raise ContractError("table already transformed")
    if (table.values < 0).any():
        raise InputError("negative values cannot be log-transformed")
    return GeneTable(
        gene_ids=list(table.gene_ids),
        cases=list(table.cases),
        values=np.log10(1.0 + table.values),
        transformed=True,
        dropped_ids=list(table.dropped_ids),
    )


@dataclass
class SplitSpec:
    fractions: tuple[float, float, float]
    assignment: dict[str, str]  # case_id -> "train" | "val" | "test"

    def cases_for(self, split: str) -> list[str]:
        return [c for c, s in self.assignment.items() if s == split]


SPLIT_NAMES = ("train", "val", "test")


def _allocate(n: int, fractions: tuple[float, float, float]) -> list[int]:
    """Largest-remainder rounding of n cases into three splits."""
    raw = [n * f for f in fractions]
    counts = [int(x) for x in raw]
    remainders = [(x - int(x), -i) for i, x in enumerate(raw)]
    short = n - sum(counts)
    for _, neg_i in sorted(remainders, reverse=True)[:short]:
        counts[-neg_i] += 1
    return counts


def split_cases(
    case_labels: dict[str, int],
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitSpec:
    """Stratified case-wise split; all slides of a case follow its case."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InputError(f"fractions {fractions} do not sum to 1")
    if not case_labels:
        raise InputError("no cases to split")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[str]] = {}
    for case, label in case_labels.items():
        by_class.setdefault(int(label), []).append(case)
    assignment: dict[str, str] = {}
    for label in sorted(by_class):
        cases = sorted(by_class[label])
        if not cases:
            warnings.warn(f"class {label} has no cases", stacklevel=2)
            continue
        perm = rng.permutation(len(cases))
        shuffled = [cases[i] for i in perm]
        counts = _allocate(len(shuffled), fractions)
        start = 0
        for name, count in zip(SPLIT_NAMES, counts):
            for case in shuffled[start : start + count]:
                assignment[case] = name
            start += count
    return SplitSpec(fractions=tuple(fractions), assignment=assignment)
