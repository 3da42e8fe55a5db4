"""End-to-end differential connectivity analysis of an aligned dataset."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._parallel import resolve_threads
from .fdr import FdrResult, adjust
from .io import AlignedDataset
from .pseudovalue import JackknifeConfig, PseudoValueMatrix, jackknife_pseudovalues, paired_difference_pseudovalues
from .regression import DesignMatrix, TaxonTestResult, build_design, taxon_tests
from .sparcc import SparccConfig, fraction_stack, sparcc_from_fractions


@dataclass(frozen=True)
class AnalysisConfig:
    alpha: float = 0.05
    fdr: str = "qvalue"
    coverage: float = 0.75
    sparcc: SparccConfig = field(default_factory=SparccConfig)
    threads: int | str = 1
    seed: int = 0
    loo_exclusions: str = "refit"
    exclusion_set: str = "group"

    def __post_init__(self):
        if self.exclusion_set not in ("group", "pooled"):
            raise ValueError("exclusion_set must be 'group' or 'pooled'")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass
class AnalysisResult:
    tests: list[TaxonTestResult]
    fdr: FdrResult
    pseudovalues: PseudoValueMatrix
    design: DesignMatrix
    timings: dict = field(default_factory=dict)

    @property
    def q_values(self) -> np.ndarray:
        return np.array([t.q_value for t in self.tests], dtype=float)

    @property
    def p_values(self) -> np.ndarray:
        return np.array([t.p_value for t in self.tests], dtype=float)

    def significant(self, alpha: float = 0.05) -> list[str]:
        return [t.taxon for t in self.tests if t.q_value < alpha]


def pooled_exclusions(table, sparcc_cfg: SparccConfig) -> tuple:
    """Exclusion set found by SparCC on all samples of `table` (first draw)."""
    return sparcc_from_fractions(fraction_stack(table.counts, sparcc_cfg), sparcc_cfg).excluded


def compute_pseudovalues(ds: AlignedDataset, cfg: AnalysisConfig) -> PseudoValueMatrix:
    """Per-group pseudo-values; paired when the dataset has a second time point.

    With ``cfg.exclusion_set == 'pooled'`` the strong pairs are chosen once
    on all samples and then held fixed in every group-wise fit, so the two
    groups' statistics differ only through their correlations.
    """
    jcfg = JackknifeConfig(resolve_threads(cfg.threads), cfg.sparcc, cfg.loo_exclusions)
    paired = ds.otu_after is not None
    excluded = None
    if cfg.exclusion_set == "pooled":
        excluded = pooled_exclusions(ds.otu, cfg.sparcc)
        if paired:
            excluded = (excluded, pooled_exclusions(ds.otu_after, cfg.sparcc))
    blocks = []
    for level in ds.group_levels:
        if paired:
            blocks.append(
                paired_difference_pseudovalues(
                    ds.group_table(level), ds.group_table(level, after=True), jcfg, label=level, excluded=excluded
                )
            )
        else:
            blocks.append(jackknife_pseudovalues(ds.group_table(level), jcfg, label=level, excluded=excluded))
    return PseudoValueMatrix.stack(blocks)


def fit_taxa(pv: PseudoValueMatrix, design: DesignMatrix, cfg: AnalysisConfig) -> list[TaxonTestResult]:
    return taxon_tests(pv, design, cfg.coverage, cfg.seed, resolve_threads(cfg.threads))


def apply_fdr(tests: list[TaxonTestResult], method: str = "qvalue") -> FdrResult:
    """Adjust the p-values of the taxa that were fitted and fill in their q-values."""
    ok = [i for i, t in enumerate(tests) if not t.failed and not math.isnan(t.p_value)]
    res = adjust(np.array([tests[i].p_value for i in ok]), method)
    for i, q in zip(ok, res.q_values):
        tests[i].q_value = float(q)
    return res


def analyze(ds: AlignedDataset, covariates=(), cfg: AnalysisConfig = AnalysisConfig()) -> AnalysisResult:
    """Group-wise SparCC, jackknife pseudo-values, per-taxon LTS tests and q-values.

    With no covariates the model holds the group indicator only. When the
    dataset carries a second time point the pseudo-values are built from
    the difference of the two time points' association matrices.
    """
    timings = {}
    t0 = time.perf_counter()
    pv = compute_pseudovalues(ds, cfg)
    timings["pseudovalues"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if isinstance(covariates, (set, frozenset)):
        covariates = sorted(covariates)
    design = build_design(ds.covariates, list(covariates))
    tests = fit_taxa(pv, design, cfg)
    timings["regression"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    res = apply_fdr(tests, cfg.fdr)
    timings["fdr"] = time.perf_counter() - t0
    return AnalysisResult(tests, res, pv, design, timings)
