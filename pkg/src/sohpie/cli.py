"""Command-line entry point: ``sohpie analyze | simulate | benchmark``.

Every command writes into its own output directory and leaves exactly one
``manifest.json`` there, with the full configuration, tool version, input
checksums and thread count needed to rerun it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
import warnings
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import ENV_THREADS, resolve_threads
from .io import align, filter_rare_taxa, format_exclusions, load_metadata, load_otu_table, prevalence_mask, write_matrix
from .metrics import METRICS, aggregate, score
from .pipeline import AnalysisConfig, apply_fdr, compute_pseudovalues, fit_taxa
from .regression import build_design
from .simulation import SCENARIOS, SimulationConfig, generate_synthetic_dataset, replicate_seed, run_replicates
from .sparcc import SparccConfig

LAYOUT_VERSION = 1

BENCHMARK_HEADER = (
    "# Synthetic benchmark from this package's own generator (scale-free network, Gaussian copula,\n"
    "# zero-inflated truncated log-normal marginals). Values depend on the generator and are not\n"
    "# comparable cell-for-cell with results obtained from other simulators.\n"
)


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


class _Stages:
    """Runs named steps, timing each and tagging failures with the step name."""

    def __init__(self):
        self.timings: dict[str, float] = {}

    def __call__(self, name, func, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return func(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:  # noqa: BLE001 - reported with the stage name
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _csv_list(text: str | None) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _float_list(text: str) -> list[float]:
    return [float(t) for t in _csv_list(text)]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in _csv_list(text)]


def _delta_pairs(text: str) -> list[tuple[float, float]]:
    out = []
    for item in _csv_list(text):
        a, _, b = item.partition(":")
        out.append((float(a), float(b or a)))
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return "NA" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def _write_tsv(path, header, rows, preamble: str = "") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(preamble)
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_manifest(outdir: Path, command: str, config: dict, seed, threads, inputs, timings, outputs) -> None:
    manifest = dict(
        layout_version=LAYOUT_VERSION,
        tool="sohpie",
        version=__version__,
        command=command,
        config=config,
        seed=seed,
        threads=threads,
        inputs={str(p): sha256(p) for p in inputs},
        outputs={name: sha256(outdir / name) for name in outputs},
    )
    if timings is not None:
        manifest["timings_seconds"] = timings
    with open(outdir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _analysis_flags(ap: argparse.ArgumentParser) -> None:
    g = ap.add_argument_group("analysis")
    g.add_argument("--alpha", type=float, default=0.05)
    g.add_argument("--fdr", choices=("qvalue", "bh"), default="qvalue")
    g.add_argument("--coverage", type=float, default=0.75, help="LTS inlier fraction (h = floor(n * coverage))")
    g.add_argument("--pseudocount", type=float, default=1.0)
    g.add_argument("--sparcc-threshold", type=float, default=0.1)
    g.add_argument("--sparcc-iters", type=int, default=20)
    g.add_argument("--dirichlet-draws", type=int, default=0, help="posterior fraction draws per fit (0: pseudocount)")
    g.add_argument("--exclusion-set", choices=("group", "pooled"), default="group",
                   help="search strong pairs within each group, or once on all samples")
    g.add_argument("--loo-exclusions", choices=("refit", "fixed"), default="refit",
                   help="re-run the exclusion search in every leave-one-out fit, or reuse the full-sample set")
    g.add_argument("--threads", default=None, help=f"worker count or 'auto' (default: ${ENV_THREADS} or auto)")
    g.add_argument("--seed", type=int, default=0)


def _analysis_config(args) -> AnalysisConfig:
    sc = SparccConfig(
        max_outer_iterations=args.sparcc_iters,
        exclusion_threshold=args.sparcc_threshold,
        pseudocount=args.pseudocount,
        inner_dirichlet_draws=args.dirichlet_draws,
        seed=args.seed,
    )
    return AnalysisConfig(
        alpha=args.alpha,
        fdr=args.fdr,
        coverage=args.coverage,
        sparcc=sc,
        threads=resolve_threads(args.threads),
        seed=args.seed,
        loo_exclusions=args.loo_exclusions,
        exclusion_set=args.exclusion_set,
    )


# analyze


def cmd_analyze(args) -> int:
    outdir = Path(args.out)
    stage = _Stages()
    cfg = stage("config", _analysis_config, args)
    covariates = _csv_list(args.covariates)
    if args.paired:
        before_path, after_path = map(Path, args.paired)
        otu = stage("load", load_otu_table, before_path)
        after = stage("load", load_otu_table, after_path)
        inputs = [before_path, after_path]
    else:
        otu_path = Path(args.otu)
        otu = stage("load", load_otu_table, otu_path)
        after = None
        inputs = [otu_path]
    meta_path = Path(args.metadata)
    covs = stage("load", load_metadata, meta_path, _csv_list(args.categorical), args.id_col)
    inputs.append(meta_path)

    def _filter():
        if args.prevalence <= 0:
            return otu, after
        if after is None:
            return filter_rare_taxa(otu, args.prevalence), None
        keep = prevalence_mask(otu, args.prevalence) & prevalence_mask(after, args.prevalence)
        if not keep.any():
            raise ValueError(f"no taxa reach prevalence {args.prevalence:g} at both time points")
        names = [t for t, k in zip(otu.taxon_names, keep) if k]
        return otu.select_taxa(names), after.select_taxa(names)

    otu, after = stage("filter", _filter)
    ds = stage(
        "align", align, otu, covs, args.group_col, covariates,
        reference_group=args.reference_group, otu_after=after,
    )
    pv = stage("pseudovalues", compute_pseudovalues, ds, cfg)
    design = stage("design", build_design, ds.covariates, covariates)
    tests = stage("regression", fit_taxa, pv, design, cfg)
    fdr = stage("fdr", apply_fdr, tests, cfg.fdr)

    def _write():
        outdir.mkdir(parents=True, exist_ok=True)
        extra = [c for c in design.columns if c != "group"]
        header = ["taxon", "beta", "se", "t", "p_value", "q_value"] + [f"coef:{c}" for c in extra] + ["status"]
        rows = [
            [t.taxon, t.beta, t.se, t.t, t.p_value, t.q_value]
            + [t.covariate_coefficients.get(c, math.nan) for c in extra]
            + [("failed: " + t.message) if t.failed else "ok"]
            for t in tests
        ]
        _write_tsv(outdir / "results.tsv", header, rows)
        _write_tsv(
            outdir / "pseudovalues.tsv",
            ["sample_id", "group"] + list(pv.taxon_names),
            [[sid, g, *vals] for sid, g, vals in zip(pv.sample_ids, pv.groups, pv.values)],
        )
        for i, level in enumerate(ds.group_levels, start=1):
            a = pv.association[level]
            write_matrix(outdir / f"assoc_group{i}.tsv", a.rho, a.taxon_names)
        (outdir / "exclusions.txt").write_text(format_exclusions(ds.report), encoding="utf-8")

    stage("write", _write)
    outputs = ["results.tsv", "pseudovalues.tsv", "assoc_group1.tsv", "assoc_group2.tsv", "exclusions.txt"]
    config = dict(
        vars(args) | {"func": None},
        analysis=asdict(cfg),
        mode="paired" if after is not None else "cross-sectional",
        group_levels=list(ds.group_levels),
        group_sizes={lvl: int(v) for lvl, v in zip(ds.group_levels, ds.group_sizes)},
        assoc_files={f"assoc_group{i}.tsv": lvl for i, lvl in enumerate(ds.group_levels, start=1)},
        design_columns=list(design.columns),
        design_coding=design.coding,
        dropped_columns=list(design.dropped),
        retained_taxa=list(otu.taxon_names),
        pi0=fdr.pi0,
        fdr_method=fdr.method,
    )
    config.pop("func")
    _write_manifest(outdir, "analyze", config, args.seed, cfg.threads, inputs, stage.timings, outputs)
    n_sig = int(np.sum([t.q_value < cfg.alpha for t in tests]))
    print(f"{len(tests)} taxa tested, {n_sig} with q < {cfg.alpha:g}; results in {outdir}")
    return 0


# simulate


def _sim_flags(ap: argparse.ArgumentParser, multi: bool = False) -> None:
    g = ap.add_argument_group("generator")
    if not multi:
        g.add_argument("--p", type=int, default=None)
        g.add_argument("--n", type=int, default=None)
        g.add_argument("--delta1", type=float, default=None)
        g.add_argument("--delta2", type=float, default=None)
    g.add_argument("--scenario", choices=SCENARIOS, default=None)
    g.add_argument("--read-depth", type=int, default=None, dest="read_depth_mean")
    g.add_argument("--zero-inflation", type=float, default=None)
    g.add_argument("--effect-strength", type=float, default=None)
    g.add_argument("--edge-weight", type=float, default=None)
    g.add_argument("--config", default=None, help="JSON file with generator settings; flags override it")


def _sim_config(args, **override) -> SimulationConfig:
    known = {f.name for f in fields(SimulationConfig)}
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
        unknown = set(base) - known
        if unknown:
            raise ValueError(f"unknown generator settings in {args.config}: {sorted(unknown)}")
    for name in known:
        v = getattr(args, name, None)
        if v is not None:
            base[name] = v
    base.update(override)
    return SimulationConfig(**base)


def cmd_simulate(args) -> int:
    outdir = Path(args.out)
    stage = _Stages()
    cfg = stage("config", _sim_config, args, seed=args.seed)
    data = stage("simulate", generate_synthetic_dataset, cfg)
    stage("write", data.write, outdir)
    outputs = ["otu_group1.tsv", "otu_group2.tsv", "metadata.csv", "truth.json"]
    inputs = [Path(args.config)] if args.config else []
    # no timings: reruns must be byte-identical
    _write_manifest(outdir, "simulate", asdict(cfg), cfg.seed, 1, inputs, None, outputs)
    print(f"simulated n={cfg.n}, p={cfg.p}, {int(data.truth.eta.sum())} DC taxa; written to {outdir}")
    return 0


# benchmark


def load_external(path) -> list[dict]:
    """Per-taxon q-values of another method.

    Required columns: ``replicate``, ``taxon``, ``q_value``. Optional
    ``p``, ``n``, ``delta1``, ``delta2`` restrict a row to one grid cell and
    ``method`` names the method (default ``external``).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader((line for line in fh if not line.startswith("#")), delimiter="\t"))
    if not rows:
        raise ValueError(f"{path}: no rows")
    missing = {"replicate", "taxon", "q_value"} - set(rows[0])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    for r in rows:
        r["replicate"] = int(r["replicate"])
        r["q_value"] = math.nan if r["q_value"] in ("", "NA", "nan") else float(r["q_value"])
        r.setdefault("method", "external")
        r["method"] = r["method"] or "external"
    return rows


def _external_scores(ext_rows, cell, rep_rows, taxon_names, alpha):
    """Score each external method on the replicates of one cell against the same truth."""
    p, n, d1, d2 = cell
    index = {t: k for k, t in enumerate(taxon_names)}
    by_method: dict[str, dict[int, np.ndarray]] = {}
    for r in ext_rows:
        if any(key in r and r[key] not in ("", None) and float(r[key]) != v
               for key, v in (("p", p), ("n", n), ("delta1", d1), ("delta2", d2))):
            continue
        if r["taxon"] not in index:
            raise ValueError(f"external taxon {r['taxon']!r} not in simulated taxa")
        qs = by_method.setdefault(r["method"], {}).setdefault(r["replicate"], np.ones(len(taxon_names)))
        qs[index[r["taxon"]]] = 1.0 if math.isnan(r["q_value"]) else r["q_value"]
    out = {}
    for method, reps in by_method.items():
        scored = {}
        for row in rep_rows:
            if row["failed"] or row["replicate"] not in reps:
                continue
            scored[row["replicate"]] = score(np.array(row["eta"]), reps[row["replicate"]], alpha)
        out[method] = scored
    return out


def cmd_benchmark(args) -> int:
    outdir = Path(args.out)
    if args.replicates < 1:
        raise StageError("config", ValueError("--replicates must be >= 1"))
    stage = _Stages()
    acfg = stage("config", _analysis_config, args)
    cells = [
        (p, n, d1, d2)
        for p in _int_list(args.p)
        for n in _int_list(args.n)
        for d1, d2 in (_delta_pairs(args.delta_pairs) if args.delta_pairs else [(d, d) for d in _float_list(args.delta)])
    ]
    ext = stage("import", load_external, args.import_external) if args.import_external else []
    methods = sorted({r["method"] for r in ext})

    rep_lines, summary_lines, failed_cells = [], [], 0
    for cell in cells:
        p, n, d1, d2 = cell
        try:
            scfg = _sim_config(args, p=p, n=n, delta1=d1, delta2=d2, seed=args.seed)
            res = stage(
                "replicates", run_replicates, scfg, args.replicates, acfg.alpha,
                analysis=acfg, threads=acfg.threads, undefined=args.undefined,
            )
            names = [f"taxon_{k + 1}" for k in range(p)]
            ext_scores = _external_scores(ext, cell, res.rows, names, acfg.alpha) if ext else {}
        except StageError as exc:
            failed_cells += 1
            print(f"cell p={p} n={n} delta=({d1:g},{d2:g}) failed in {exc}", file=sys.stderr)
            summary_lines.append(
                [p, n, d1, d2] + [math.nan] * (2 * len(METRICS)) + [0, 0, args.replicates]
                + [math.nan] * (len(METRICS) * len(methods)) + [f"failed: {exc}"]
            )
            continue
        for row in res.rows:
            line = [p, n, d1, d2, row["replicate"], replicate_seed(scfg.seed, row["replicate"])]
            if row["failed"]:
                line += [math.nan] * len(METRICS) + [math.nan, math.nan, math.nan, "failed: " + row["error"]]
            else:
                line += [row[m] for m in METRICS] + [row["n_undefined"], row["n_declared"], row["n_true_dc"], "ok"]
            for method in methods:
                s = ext_scores.get(method, {}).get(row["replicate"])
                line += [getattr(s, m) if s else math.nan for m in METRICS]
            rep_lines.append(line)
        line = [p, n, d1, d2]
        for m in METRICS:
            agg = res.summary.get(m, {})
            line += [agg.get("mean", math.nan), agg.get("sd", math.nan)]
        n_undef = sum(res.summary.get(m, {}).get("n_undefined", 0) for m in METRICS)
        line += [args.replicates - res.n_failed, n_undef, res.n_failed]
        for method in methods:
            summ = aggregate(list(ext_scores.get(method, {}).values()), args.undefined) if ext_scores.get(method) else {}
            line += [summ.get(m, {}).get("mean", math.nan) for m in METRICS]
        summary_lines.append(line + ["ok"])

    def _write():
        outdir.mkdir(parents=True, exist_ok=True)
        ext_cols = [f"{meth}:{m}" for meth in methods for m in METRICS]
        _write_tsv(
            outdir / "replicates.tsv",
            ["p", "n", "delta1", "delta2", "replicate", "seed", *METRICS, "n_undefined", "n_declared", "n_true_dc", "status", *ext_cols],
            rep_lines,
            BENCHMARK_HEADER,
        )
        conv = "left out of" if args.undefined == "skip" else "counted as 0 in"
        header = BENCHMARK_HEADER + f"# Undefined metric values (zero denominators) are {conv} the means (--undefined {args.undefined}).\n"
        cols = ["p", "n", "delta1", "delta2"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "sd")]
        cols += ["n_ok", "n_undefined", "n_failed"] + [f"{meth}:{m}_mean" for meth in methods for m in METRICS]
        cols.append("status")
        _write_tsv(outdir / "summary.tsv", cols, summary_lines, header)

    stage("write", _write)
    config = dict(vars(args) | {"func": None}, analysis=asdict(acfg), cells=[list(c) for c in cells])
    config.pop("func")
    inputs = [Path(a) for a in (args.import_external, args.config) if a]
    _write_manifest(outdir, "benchmark", config, args.seed, acfg.threads, inputs, stage.timings,
                    ["replicates.tsv", "summary.tsv"])
    print(f"{len(cells)} cell(s) x {args.replicates} replicates; summary in {outdir / 'summary.tsv'}")
    return 3 if failed_cells else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sohpie", description="Differential co-abundance network analysis")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="test taxa for differential connectivity between two groups")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--otu", help="OTU table (TSV/CSV, samples as rows)")
    src.add_argument("--paired", nargs=2, metavar=("BEFORE", "AFTER"),
                     help="OTU tables of two time points; tests the change in connectivity")
    a.add_argument("--metadata", required=True)
    a.add_argument("--group-col", default="group")
    a.add_argument("--covariates", default=None, help="comma-separated covariate columns (omit: group only)")
    a.add_argument("--categorical", default=None, help="comma-separated columns to treat as categorical")
    a.add_argument("--id-col", default="sample_id")
    a.add_argument("--reference-group", default=None, help="level coded 0 (default: first in sorted order)")
    a.add_argument("--prevalence", type=float, default=0.0, help="drop taxa present in fewer than this fraction of samples")
    a.add_argument("--out", required=True)
    _analysis_flags(a)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate", help="write one synthetic dataset with its ground truth")
    _sim_flags(s)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("benchmark", help="replicate simulations over a grid and score the calls")
    b.add_argument("--p", default="20", help="comma-separated taxon counts")
    b.add_argument("--n", default="20,50,200", help="comma-separated sample sizes")
    b.add_argument("--delta", default="0.2", help="comma-separated spike fractions used for both groups")
    b.add_argument("--delta-pairs", default=None, help="comma-separated d1:d2 pairs (overrides --delta)")
    b.add_argument("--replicates", type=int, default=100)
    b.add_argument("--undefined", choices=("skip", "zero"), default="skip")
    b.add_argument("--import-external", default=None, help="per-taxon q-values of another method to score alongside")
    b.add_argument("--out", required=True)
    _sim_flags(b, multi=True)
    _analysis_flags(b)
    b.set_defaults(func=cmd_benchmark)
    return ap


def _report_warnings(caught) -> None:
    by_kind: dict[str, list] = {}
    for w in caught:
        by_kind.setdefault(w.category.__name__, []).append(str(w.message))
    for kind, msgs in by_kind.items():
        more = f" (and {len(msgs) - 1} more)" if len(msgs) > 1 else ""
        print(f"warning: {kind}: {msgs[0]}{more}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            return args.func(args)
        except StageError as exc:
            print(f"sohpie {args.command}: error in stage {exc}", file=sys.stderr)
            return 1
        finally:
            _report_warnings(caught)


if __name__ == "__main__":
    sys.exit(main())
