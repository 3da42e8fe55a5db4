"""Differential co-abundance network analysis with jackknife pseudo-values."""

__version__ = "0.1.0"

from .fdr import bh_adjust, qvalue, significant_taxa
from .io import align, filter_rare_taxa, load_metadata, load_otu_table
from .metrics import confusion, summarize
from .pipeline import AnalysisConfig, analyze
from .pseudovalue import degree_centrality, jackknife_pseudovalues, paired_difference_pseudovalues
from .regression import build_design, lts_fit, taxon_tests
from .simulation import SimulationConfig, generate_synthetic_dataset, run_replicates
from .sparcc import SparccConfig, sparcc

__all__ = [
    "AnalysisConfig",
    "SimulationConfig",
    "SparccConfig",
    "align",
    "analyze",
    "bh_adjust",
    "build_design",
    "confusion",
    "degree_centrality",
    "filter_rare_taxa",
    "generate_synthetic_dataset",
    "jackknife_pseudovalues",
    "load_metadata",
    "load_otu_table",
    "lts_fit",
    "paired_difference_pseudovalues",
    "qvalue",
    "run_replicates",
    "significant_taxa",
    "sparcc",
    "summarize",
    "taxon_tests",
]
