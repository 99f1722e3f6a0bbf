"""Batch pipeline: ingest summary statistics, estimate Sigma, test genome-wide.

Input files are per-phenotype TSVs with CHR/POS/SNP plus either a Z column
or BETA and SE.  Files are merged on the (chromosome, position) intersection,
Sigma is estimated from approximately-null SNPs, one TestContext is built,
and every SNP is scored in bounded chunks whose outputs are written back in
panel order regardless of worker count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import ndtr, ndtri

from .assoc import TestContext
from .battery import COMPONENT_TESTS, QUAD_TESTS
from .errors import DataError
from .model import CorrelationMatrix
from .seeds import Seed

__all__ = [
    "SummaryFile",
    "MergedPanel",
    "RunConfig",
    "read_summary_file",
    "ingest_merge",
    "estimate_sigma",
    "run_genomewide",
    "genomic_inflation",
    "qq_data",
    "write_panel",
    "read_panel",
    "DEFAULT_GWAS_TESTS",
    "CHI2_MEDIAN",
]

log = logging.getLogger("pcassoc.gwas")

DEFAULT_GWAS_TESTS = (
    "PCMinP", "PCFisher", "PCLC", "WI", "Wald", "VC", "PCAQ", "PCO", "MinP",
)
GENOME_WIDE_ALPHA = 5e-8
CHI2_MEDIAN = 0.45493642311957185  # median of chi-square with 1 df

_ALLELE_COLUMNS = {"A1", "A2", "EA", "NEA", "REF", "ALT", "EFFECT_ALLELE", "OTHER_ALLELE"}
_CHUNK_SNPS = 20_000


@dataclass(frozen=True)
class SummaryFile:
    """One phenotype's summary statistics."""

    phenotype: str
    chrom: np.ndarray
    pos: np.ndarray
    snp_id: np.ndarray
    z: np.ndarray

    @property
    def n_records(self) -> int:
        return self.pos.shape[0]


@dataclass(frozen=True)
class MergedPanel:
    """Intersection-merged Z-score matrix indexed by genomic position."""

    chrom: np.ndarray
    pos: np.ndarray
    snp_id: np.ndarray
    z: np.ndarray
    phenotypes: tuple

    def __post_init__(self):
        if self.z.shape != (self.pos.shape[0], len(self.phenotypes)):
            raise DataError("panel Z matrix shape inconsistent with index")

    @property
    def n_snps(self) -> int:
        return self.pos.shape[0]

    @property
    def dim(self) -> int:
        return len(self.phenotypes)


@dataclass(frozen=True)
class RunConfig:
    """Genome-wide run settings."""

    tests: tuple = DEFAULT_GWAS_TESTS
    alpha: float = 5e-2
    z_cut: float = 5.45
    rx_b: int = 1000
    seed: Seed = Seed(0)
    threads: int = 1
    prune_list: frozenset | None = None
    p_floor: float = 1e-300

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DataError("alpha must be in (0, 1)")
        if self.rx_b < 100:
            raise DataError("rx_b must be at least 100")
        if self.threads < 1:
            raise DataError("threads must be at least 1")


def _chrom_sort_key(chrom: np.ndarray) -> np.ndarray:
    """Numeric chromosome order where possible; X/Y/MT and others follow."""
    special = {"X": 23, "Y": 24, "XY": 25, "MT": 26, "M": 26}
    keys = np.empty(chrom.shape[0], dtype=np.float64)
    for i, c in enumerate(chrom):
        c = str(c).removeprefix("chr")
        if c.isdigit():
            keys[i] = int(c)
        else:
            keys[i] = special.get(c.upper(), 100)
    return keys


def read_summary_file(path, phenotype: str | None = None) -> SummaryFile:
    """Parse one tab-separated summary-statistics file.

    Requires a header with CHR, POS, SNP and either Z or both BETA and SE
    (case-insensitive; extra columns are ignored).  '#' lines are comments.
    (chrom, pos) must be unique within the file.
    """
    phenotype = phenotype if phenotype is not None else _stem(path)
    try:
        df = pd.read_csv(path, sep="\t", comment="#", dtype=str)
    except Exception as exc:
        raise DataError(f"{path}: cannot parse: {exc}") from exc
    cols = {c.upper(): c for c in df.columns}
    for required in ("CHR", "POS", "SNP"):
        if required not in cols:
            raise DataError(f"{path}: missing required column {required}")
    carried = sorted(_ALLELE_COLUMNS & set(cols))
    if carried:
        log.warning(
            "%s: allele columns %s present; carried through without harmonization "
            "(inputs are assumed pre-harmonized to a common effect allele)",
            path, carried,
        )
    pos = _numeric(df, cols["POS"], path, kind="int")
    chrom = df[cols["CHR"]].astype(str).to_numpy()
    snp = df[cols["SNP"]].astype(str).to_numpy()
    if "Z" in cols:
        z = _numeric(df, cols["Z"], path)
    elif "BETA" in cols and "SE" in cols:
        beta = _numeric(df, cols["BETA"], path)
        se = _numeric(df, cols["SE"], path)
        bad = np.nonzero(se <= 0)[0]
        if bad.size:
            raise DataError(f"{path}: line {bad[0] + 2}: SE must be positive")
        z = beta / se
    else:
        raise DataError(f"{path}: need a Z column or both BETA and SE")
    bad = np.nonzero(~np.isfinite(z))[0]
    if bad.size:
        raise DataError(f"{path}: line {bad[0] + 2}: non-finite Z value")
    key = pd.Series(chrom).str.cat(pos.astype(str), sep=":")
    dup = key.duplicated()
    if dup.any():
        first = int(np.nonzero(dup.to_numpy())[0][0])
        raise DataError(
            f"{path}: line {first + 2}: duplicate position {key.iloc[first]}"
        )
    return SummaryFile(phenotype=phenotype, chrom=chrom, pos=pos, snp_id=snp, z=z)


def _stem(path) -> str:
    import os

    base = os.path.basename(str(path))
    for suffix in (".tsv", ".txt", ".gz"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
    return base


def _numeric(df, col, path, kind="float"):
    raw = df[col]
    converted = pd.to_numeric(raw, errors="coerce")
    bad = converted.isna() & raw.notna()
    if bad.any():
        line = int(np.nonzero(bad.to_numpy())[0][0])
        raise DataError(
            f"{path}: line {line + 2}: cannot parse {col}={raw.iloc[line]!r}"
        )
    if converted.isna().any():
        line = int(np.nonzero(converted.isna().to_numpy())[0][0])
        raise DataError(f"{path}: line {line + 2}: missing {col}")
    if kind == "int":
        return converted.astype(np.int64).to_numpy()
    return converted.astype(np.float64).to_numpy()


def ingest_merge(files) -> MergedPanel:
    """Merge per-phenotype files on the exact (chrom, pos) intersection.

    SNP identifiers are taken from the first file.  Row order is sorted by
    (numeric chromosome, position).  Per-file input and dropped counts are
    logged.
    """
    summaries = [f if isinstance(f, SummaryFile) else read_summary_file(f) for f in files]
    if len(summaries) < 2:
        raise DataError("merging needs at least two summary files")
    frames = []
    for s in summaries:
        frames.append(
            pd.DataFrame(
                {"chrom": s.chrom, "pos": s.pos, "snp": s.snp_id, s.phenotype: s.z}
            )
        )
    merged = frames[0]
    for frame in frames[1:]:
        merged = merged.merge(
            frame.drop(columns="snp"), on=("chrom", "pos"), how="inner"
        )
    if merged.empty:
        raise DataError("no SNPs shared by all input files (empty intersection)")
    for s in summaries:
        log.info(
            "%s: %d records, %d dropped in merge",
            s.phenotype, s.n_records, s.n_records - len(merged),
        )
    order = np.lexsort((merged["pos"].to_numpy(), _chrom_sort_key(merged["chrom"].to_numpy())))
    merged = merged.iloc[order]
    phen = tuple(s.phenotype for s in summaries)
    return MergedPanel(
        chrom=merged["chrom"].to_numpy(),
        pos=merged["pos"].to_numpy(),
        snp_id=merged["snp"].to_numpy(),
        z=np.ascontiguousarray(merged[list(phen)].to_numpy(dtype=np.float64)),
        phenotypes=phen,
    )


def write_panel(panel: MergedPanel, path) -> None:
    """Write a merged panel as TSV with full float precision (round-trips bit-identically)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("CHR\tPOS\tSNP\t" + "\t".join(panel.phenotypes) + "\n")
        for i in range(panel.n_snps):
            zs = "\t".join(repr(float(v)) for v in panel.z[i])
            fh.write(f"{panel.chrom[i]}\t{panel.pos[i]}\t{panel.snp_id[i]}\t{zs}\n")


def read_panel(path) -> MergedPanel:
    df = pd.read_csv(path, sep="\t", dtype={"CHR": str, "SNP": str})
    phen = tuple(c for c in df.columns if c not in ("CHR", "POS", "SNP"))
    return MergedPanel(
        chrom=df["CHR"].to_numpy(),
        pos=df["POS"].to_numpy(np.int64),
        snp_id=df["SNP"].to_numpy(),
        z=np.ascontiguousarray(df[list(phen)].to_numpy(np.float64)),
        phenotypes=phen,
    )


def estimate_sigma(
    panel: MergedPanel, prune_list=None, z_cut: float = 5.45
) -> CorrelationMatrix:
    """Sample correlation of Z-scores over approximately-null independent SNPs.

    Restricts to the prune list when given and drops every SNP whose largest
    |Z| reaches ``z_cut`` (strong signals would bias the null correlation).
    """
    keep = np.ones(panel.n_snps, dtype=bool)
    if prune_list is not None:
        wanted = frozenset(str(s) for s in prune_list)
        keep &= np.fromiter((s in wanted for s in panel.snp_id), bool, panel.n_snps)
    if z_cut is not None:
        keep &= np.abs(panel.z).max(axis=1) < z_cut
    n_kept = int(keep.sum())
    if n_kept < 1000:
        raise DataError(
            f"only {n_kept} SNPs survive filtering; at least 1000 are needed "
            "for a stable correlation estimate"
        )
    log.info("sigma estimated from %d of %d SNPs", n_kept, panel.n_snps)
    r = np.corrcoef(panel.z[keep], rowvar=False)
    return CorrelationMatrix(r, names=panel.phenotypes)


def _format_p(p: float, truncated: bool, floor: float) -> str:
    if truncated:
        return f"<{floor:.0e}"
    return f"{p:.5e}"


def run_genomewide(panel: MergedPanel, sigma: CorrelationMatrix, cfg: RunConfig, out_path):
    """Score every SNP with the requested tests and stream a TSV report.

    The TestContext (including R_X and adjustment curves) is built once.
    SNPs are processed in fixed-size chunks; worker threads fan out over
    chunks and rows are written back in panel order, so output bytes do not
    depend on the thread count.  Returns a per-test summary of significant
    counts at ``cfg.alpha`` and at genome-wide 5e-8.
    """
    if panel.dim != sigma.dim:
        raise DataError(
            f"panel has {panel.dim} phenotypes but sigma is {sigma.dim}-dimensional"
        )
    tests = tuple(cfg.tests)
    ctx = TestContext(sigma, rx_b=cfg.rx_b, rx_seed=cfg.seed, p_floor=cfg.p_floor)
    component_needed = set()
    for t in tests:
        if t == "PCAQ":
            component_needed.update(QUAD_TESTS)
        elif t == "PCO":
            component_needed.update(COMPONENT_TESTS)
        elif t == "MinP":
            ctx.tail_curve("minp")
        elif t == "Oracle":
            raise DataError("the Oracle test needs the true signal vector; not available genome-wide")
        else:
            component_needed.add(t)
    if "PCAQ" in tests:
        ctx.tail_curve("quad")
    if "PCO" in tests:
        ctx.tail_curve("omni")
    battery_tests = tuple(component_needed)

    starts = list(range(0, panel.n_snps, _CHUNK_SNPS))

    def run_chunk(start):
        stop = min(start + _CHUNK_SNPS, panel.n_snps)
        z = panel.z[start:stop]
        comp = ctx.component_pvalues(z, battery_tests) if battery_tests else {}
        out = {}
        for t in tests:
            if t == "PCAQ":
                mat = np.column_stack([comp[c] for c in QUAD_TESTS])
                out[t] = ctx.adjusted_min_pvalues(mat, "quad")
            elif t == "PCO":
                mat = np.column_stack([comp[c] for c in COMPONENT_TESTS])
                out[t] = ctx.adjusted_min_pvalues(mat, "omni")
            elif t == "MinP":
                out[t] = ctx.minp_pvalues(z)
            else:
                out[t] = comp[t]
        return out

    counts_alpha = {t: 0 for t in tests}
    counts_gw = {t: 0 for t in tests}
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(f"# rx_seed={cfg.seed.value} rx_b={cfg.rx_b}\n")
        fh.write("CHR\tPOS\tSNP\t" + "\t".join(tests) + "\n")
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                results = pool.map(run_chunk, starts)
                _write_chunks(fh, panel, tests, starts, results, cfg, counts_alpha, counts_gw)
        else:
            results = map(run_chunk, starts)
            _write_chunks(fh, panel, tests, starts, results, cfg, counts_alpha, counts_gw)
        summary = "# significant\t" + "\t".join(
            f"{t}:{counts_alpha[t]}@{cfg.alpha:g},{counts_gw[t]}@5e-08" for t in tests
        )
        fh.write(summary + "\n")
    log.info("scored %d SNPs x %d tests", panel.n_snps, len(tests))
    return {"alpha": counts_alpha, "genome_wide": counts_gw}


def _write_chunks(fh, panel, tests, starts, results, cfg, counts_alpha, counts_gw):
    for start, chunk in zip(starts, results):
        stop = min(start + _CHUNK_SNPS, panel.n_snps)
        cols = [chunk[t] for t in tests]
        for t, p in zip(tests, cols):
            counts_alpha[t] += int(np.sum(p <= cfg.alpha))
            counts_gw[t] += int(np.sum(p <= GENOME_WIDE_ALPHA))
        for i in range(stop - start):
            row = panel
            fields = [str(row.chrom[start + i]), str(row.pos[start + i]), str(row.snp_id[start + i])]
            for p in cols:
                v = float(p[i])
                fields.append(_format_p(v, v <= cfg.p_floor, cfg.p_floor))
            fh.write("\t".join(fields) + "\n")


def genomic_inflation(pvals) -> float:
    """Genomic control factor: median chi-square quantile over its null median.

    Accepts p-values in (0, 1]; at least 1000 are required.
    """
    p = np.asarray(pvals, dtype=np.float64)
    if p.size < 1000:
        raise DataError(f"genomic inflation needs >= 1000 p-values, got {p.size}")
    if np.any(p <= 0.0) or np.any(p > 1.0):
        raise DataError("p-values must lie in (0, 1]")
    stat = ndtri(np.minimum(p, 1.0 - 1e-16) / 2.0) ** 2
    return float(np.median(stat) / CHI2_MEDIAN)


def qq_data(pvals):
    """Expected and observed -log10 p pairs for a QQ plot.

    Observed values are sorted descending; expected_i = -log10((i - 0.5) / n).
    """
    p = np.asarray(pvals, dtype=np.float64)
    if p.size == 0:
        raise DataError("no p-values supplied")
    observed = -np.log10(np.sort(np.maximum(p, 1e-300)))[::-1]
    ranks = np.arange(1, p.size + 1)
    expected = -np.log10((ranks - 0.5) / p.size)
    return expected, observed


def write_qq_csv(pvals, path) -> None:
    expected, observed = qq_data(pvals)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("expected,observed\n")
        for e, o in zip(expected, observed):
            fh.write(f"{e:.8e},{o:.8e}\n")
