"""Synthetic benchmark data with known differential connectivity.

A scale-free base network is grown by preferential attachment. Each group
gets its own copy with every edge at its spiked-in taxa removed; taxa whose
adjacency column differs between the copies are the true differentially
connected (DC) taxa. Abundances are drawn from a Gaussian copula whose
correlation follows each group's network, with zero-inflated truncated
log-normal marginals and a covariate-driven log-abundance shift for the
spiked taxa, then sequenced by multinomial sampling.

Every parameter of the abundance model here is a default chosen for this
generator, so benchmark numbers are specific to it.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from ._parallel import parallel_map, resolve_threads
from .io import AlignedDataset, CovariateFrame, OtuTable, align, write_metadata, write_otu_table
from .metrics import METRICS, aggregate, score

SCENARIOS = ("multivariable", "univariable")


@dataclass(frozen=True)
class SimulationConfig:
    p: int = 20
    n: int = 50
    delta1: float = 0.05
    delta2: float = 0.2
    scenario: str = "multivariable"
    read_depth_mean: int = 10000
    zero_inflation: float = 0.3
    effect_strength: float = 1.0
    ba_edges_per_node: int = 1
    edge_weight: float = 0.6
    age_mean: float = 55.0
    age_sd: float = 10.0
    age_shift: float = 5.0
    log_sd: float = 1.0
    truncation_quantile: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.n < 6:
            raise ValueError("n must be >= 6")
        if self.p < max(4, self.ba_edges_per_node + 1):
            raise ValueError("p must be >= 4 and exceed ba_edges_per_node")
        for d in (self.delta1, self.delta2):
            if not 0.0 <= d < 1.0:
                raise ValueError("spike-in fractions must lie in [0, 1)")
            if d > 0 and spike_count(self.p, d) < 1:
                raise ValueError(f"delta={d} spikes no taxa at p={self.p}")
        if not 0.0 <= self.zero_inflation < 1.0:
            raise ValueError("zero_inflation must lie in [0, 1)")
        if self.read_depth_mean < 1:
            raise ValueError("read_depth_mean must be positive")


def spike_count(p: int, delta: float) -> int:
    return int(math.floor(delta * p + 1e-9))


def generate_ba_network(p: int, m: int = 1, seed=None) -> np.ndarray:
    """Barabasi-Albert adjacency matrix.

    Growth starts from a clique on ``m`` nodes; each later node links to
    ``m`` distinct existing nodes chosen with probability proportional to
    their degree (uniformly while all degrees are zero).
    """
    if m < 1 or p < m + 1:
        raise ValueError(f"need p >= m + 1 and m >= 1, got p={p}, m={m}")
    rng = np.random.default_rng(seed)
    adj = np.zeros((p, p), dtype=np.int8)
    adj[:m, :m] = 1
    np.fill_diagonal(adj, 0)
    deg = adj.sum(axis=0).astype(float)
    for v in range(m, p):
        w = deg[:v]
        prob = w / w.sum() if w.sum() > 0 else np.full(v, 1.0 / v)
        targets = rng.choice(v, size=m, replace=False, p=prob)
        adj[v, targets] = adj[targets, v] = 1
        deg[targets] += 1
        deg[v] += m
    return adj


def perturb_networks(base, spikes1, spikes2) -> tuple[np.ndarray, np.ndarray]:
    """Copies of `base` with all edges incident to each group's spiked taxa removed."""
    base = np.asarray(base)
    p = base.shape[0]
    out = []
    for spikes in (spikes1, spikes2):
        spikes = np.asarray(sorted(spikes), dtype=int)
        if spikes.size and (spikes.min() < 0 or spikes.max() >= p):
            raise IndexError("spike index out of range")
        omega = base.copy()
        omega[spikes, :] = 0
        omega[:, spikes] = 0
        out.append(omega)
    return out[0], out[1]


def true_dc_labels(omega1, omega2) -> np.ndarray:
    o1, o2 = np.asarray(omega1), np.asarray(omega2)
    if o1.shape != o2.shape:
        raise ValueError("adjacency matrices differ in size")
    return (np.abs(o1.astype(int) - o2.astype(int)).sum(axis=0) > 0).astype(int)


def nearest_correlation(a, eps: float = 1e-6) -> np.ndarray:
    """Clip eigenvalues of a symmetric matrix at `eps`, then rescale to unit diagonal."""
    a = 0.5 * (np.asarray(a, dtype=float) + np.asarray(a, dtype=float).T)
    w, v = np.linalg.eigh(a)
    b = (v * np.maximum(w, eps)) @ v.T
    d = np.sqrt(np.diag(b))
    c = b / np.outer(d, d)
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return c


def network_correlation(omega, weight: float = 0.6, max_attempts: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """Positive-definite correlation matrix with `weight` on edges, and its Cholesky factor."""
    target = np.eye(omega.shape[0]) + weight * np.asarray(omega, dtype=float)
    jitter = 0.0
    for _ in range(max_attempts):
        c = nearest_correlation(target + jitter * np.eye(target.shape[0]))
        try:
            return c, np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            jitter = max(1e-6, 10 * jitter)
    raise np.linalg.LinAlgError("could not make the network correlation positive definite")


def sample_copula_abundances(
    corr_chol, log_mean, n, rng, log_sd=1.0, truncation_quantile=0.999, zero_inflation=0.0, shift=None
):
    """Absolute abundances from a Gaussian copula with truncated log-normal marginals.

    ``shift`` (n x p) is added to the log-abundances before the zero mask.
    """
    p = len(log_mean)
    z = rng.standard_normal((n, p)) @ corr_chol.T
    u = stats.norm.cdf(z) * truncation_quantile
    loga = log_mean[None, :] + log_sd * stats.norm.ppf(u)
    if shift is not None:
        loga = loga + shift
    x = np.exp(loga)
    if zero_inflation > 0:
        x[rng.random((n, p)) < zero_inflation] = 0.0
    return x


def sequence(abundance, depth_mean, rng) -> np.ndarray:
    """Multinomial read counts with Poisson(depth_mean) library sizes."""
    n, p = abundance.shape
    counts = np.zeros((n, p), dtype=np.int64)
    depth = rng.poisson(depth_mean, size=n)
    for i in range(n):
        total = abundance[i].sum()
        if total > 0 and depth[i] > 0:
            counts[i] = rng.multinomial(depth[i], abundance[i] / total)
    return counts


@dataclass(frozen=True, eq=False)
class SimulationTruth:
    base: np.ndarray
    omega1: np.ndarray
    omega2: np.ndarray
    eta: np.ndarray
    spikes1: tuple[int, ...]
    spikes2: tuple[int, ...]

    def to_json(self, cfg: SimulationConfig | None = None) -> dict:
        def edges(o):
            i, j = np.nonzero(np.triu(o, 1))
            return [[int(a), int(b)] for a, b in zip(i, j)]

        out = dict(
            p=int(self.eta.size),
            base_edges=edges(self.base),
            omega1_edges=edges(self.omega1),
            omega2_edges=edges(self.omega2),
            eta=[int(v) for v in self.eta],
            spikes1=list(self.spikes1),
            spikes2=list(self.spikes2),
        )
        if cfg is not None:
            out["config"] = asdict(cfg)
        return out


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    group1: OtuTable
    group2: OtuTable
    covariates: CovariateFrame
    truth: SimulationTruth
    config: SimulationConfig

    def combined(self) -> OtuTable:
        ids = self.covariates.sample_ids
        stacked = OtuTable(
            self.group1.sample_ids + self.group2.sample_ids,
            self.group1.taxon_names,
            np.vstack([self.group1.counts, self.group2.counts]),
        )
        return stacked.select_samples(ids)

    def aligned(self) -> AlignedDataset:
        covs = ["age"] if self.config.scenario == "multivariable" else []
        return align(self.combined(), self.covariates, "group", covs, reference_group="1")

    def write(self, outdir) -> None:
        from pathlib import Path

        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        write_otu_table(self.group1, outdir / "otu_group1.tsv")
        write_otu_table(self.group2, outdir / "otu_group2.tsv")
        write_metadata(self.covariates, outdir / "metadata.csv")
        with open(outdir / "truth.json", "w", encoding="utf-8") as fh:
            json.dump(self.truth.to_json(self.config), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _choose_spikes(rng, base, k):
    if k == 0:
        return ()
    candidates = np.flatnonzero(base.sum(axis=0) > 0)
    if k > candidates.size:
        raise ValueError(f"cannot spike {k} taxa; only {candidates.size} have edges")
    return tuple(sorted(int(v) for v in rng.choice(candidates, size=k, replace=False)))


def generate_synthetic_dataset(cfg: SimulationConfig) -> SyntheticDataset:
    """Draw one synthetic two-group dataset with its ground truth.

    Group labels are Bernoulli(1/2) (redrawn until each group has at least
    three samples); age is Normal(age_mean, age_sd), shifted by `age_shift`
    in group 2 under the multivariable scenario. Spiked taxa of group z have
    their log-abundance shifted by ``effect_strength`` times the
    standardised covariate: age when multivariable, the group indicator
    when univariable. The whole dataset is a function of `cfg` alone.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    n, p = cfg.n, cfg.p
    while True:
        z = rng.integers(0, 2, size=n)
        if min(np.sum(z == 0), np.sum(z == 1)) >= 3:
            break
    age = rng.normal(cfg.age_mean, cfg.age_sd, size=n)
    if cfg.scenario == "multivariable":
        age = age + cfg.age_shift * z

    base = generate_ba_network(p, cfg.ba_edges_per_node, rng)
    spikes1 = _choose_spikes(rng, base, spike_count(p, cfg.delta1))
    spikes2 = _choose_spikes(rng, base, spike_count(p, cfg.delta2))
    omega1, omega2 = perturb_networks(base, spikes1, spikes2)
    truth = SimulationTruth(base, omega1, omega2, true_dc_labels(omega1, omega2), spikes1, spikes2)

    log_mean = rng.normal(0.0, 1.0, size=p)
    driver = age if cfg.scenario == "multivariable" else z.astype(float)
    driver = (driver - driver.mean()) / driver.std()

    ids = np.array([f"S{i + 1:04d}" for i in range(n)])
    names = [f"taxon_{k + 1}" for k in range(p)]
    tables = []
    for g, (omega, spikes) in enumerate(((omega1, spikes1), (omega2, spikes2))):
        rows = np.flatnonzero(z == g)
        _, chol = network_correlation(omega, cfg.edge_weight)
        shift = np.zeros((rows.size, p))
        if spikes:
            shift[:, list(spikes)] = cfg.effect_strength * driver[rows, None]
        abundance = sample_copula_abundances(
            chol, log_mean, rows.size, rng, cfg.log_sd, cfg.truncation_quantile, cfg.zero_inflation, shift
        )
        counts = sequence(abundance, cfg.read_depth_mean, rng)
        tables.append(OtuTable(ids[rows], names, counts))

    covs = CovariateFrame(
        ids,
        {"group": np.array([str(v + 1) for v in z], dtype=object), "age": age},
        frozenset({"group"}),
    )
    return SyntheticDataset(tables[0], tables[1], covs, truth, cfg)


def replicate_seed(master: int, r: int) -> int:
    return int(np.random.SeedSequence([master, r]).generate_state(1, np.uint64)[0] >> 1)


@dataclass
class ReplicateResults:
    """Per-replicate metric rows and their across-replicate summary."""

    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    n_failed: int = 0
    undefined: str = "skip"


def _one_replicate(args):
    from .pipeline import analyze

    cfg, r, alpha, acfg = args
    rcfg = replace(cfg, seed=replicate_seed(cfg.seed, r))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            data = generate_synthetic_dataset(rcfg)
            ds = data.aligned()
            result = analyze(ds, ds.covariates.columns.keys() - {"group"}, acfg)
    except Exception as exc:  # noqa: BLE001 - replicate failures are counted, not fatal
        return dict(replicate=r, failed=True, error=repr(exc))
    m = score(data.truth.eta, result.q_values, alpha)
    row = dict(replicate=r, failed=False, **m.as_dict(), n_undefined=m.n_undefined)
    row["n_declared"] = int(np.sum(result.q_values < alpha))
    row["n_true_dc"] = int(data.truth.eta.sum())
    row["eta"] = [int(v) for v in data.truth.eta]
    return row


def run_replicates(
    cfg: SimulationConfig,
    replicates: int,
    alpha: float = 0.05,
    analysis=None,
    threads=1,
    undefined: str = "skip",
) -> ReplicateResults:
    """Simulate and analyse `replicates` datasets, each with a fresh network.

    Replicate r uses a seed derived from ``(cfg.seed, r)``, so rows do not
    depend on `threads`. Failed replicates are counted and left out of the
    summary.
    """
    from .pipeline import AnalysisConfig

    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    acfg = analysis if analysis is not None else AnalysisConfig(alpha=alpha)
    acfg = replace(acfg, threads=1)
    tasks = [(cfg, r, alpha, acfg) for r in range(replicates)]
    rows = parallel_map(_one_replicate, tasks, resolve_threads(threads))
    ok = [r for r in rows if not r["failed"]]
    from .metrics import MetricSummary

    summaries = [MetricSummary(*(r[m] for m in METRICS)) for r in ok]
    summary = aggregate(summaries, undefined) if summaries else {}
    return ReplicateResults(rows, summary, len(rows) - len(ok), undefined)
