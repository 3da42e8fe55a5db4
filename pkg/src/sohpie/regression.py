"""Per-taxon robust regression of pseudo-values on group and covariates.

The fitting engine is least trimmed squares (LTS): minimise the sum of the
``h`` smallest squared residuals. Small problems are solved by enumerating
all h-subsets; larger ones with the FAST-LTS search (random elemental starts
followed by concentration steps). Inference uses a one-step reweighted
least-squares fit, as robust regression software conventionally reports.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats

from ._parallel import parallel_map
from .io import CovariateFrame

REWEIGHT_CUTOFF = stats.norm.ppf(0.9875)


class DesignError(ValueError):
    pass


class CoverageError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Intercept, 0/1 group indicator, then expanded covariates."""

    matrix: np.ndarray
    columns: tuple[str, ...]
    sample_ids: tuple[str, ...] = ()
    dropped: tuple[str, ...] = ()
    coding: str = ""

    @property
    def shape(self):
        return self.matrix.shape

    def column(self, name: str) -> np.ndarray:
        return self.matrix[:, self.columns.index(name)]


GROUP_COLUMN = "group"


def _collinear_columns(x: np.ndarray, names) -> list[str]:
    bad, kept = [], []
    for j, name in enumerate(names):
        trial = x[:, kept + [j]]
        if np.linalg.matrix_rank(trial) < len(kept) + 1:
            bad.append(name)
        else:
            kept.append(j)
    return bad


def build_design(covs: CovariateFrame, covariates=(), group_col: str | None = None) -> DesignMatrix:
    """Design matrix for ``intercept + group + covariates``.

    The group indicator is 0 for the reference level (``covs.group_levels[0]``)
    and 1 otherwise. Categorical covariates are treatment coded against their
    alphabetically first level, producing columns ``name[level]``. Constant
    columns are dropped with a warning.

    Raises
    ------
    DesignError
        For unknown columns or when the expanded matrix is rank deficient.
    """
    group_col = group_col or covs.group_col
    if group_col is None or group_col not in covs.columns:
        raise DesignError(f"group column {group_col!r} not available")
    levels = covs.group_levels or tuple(covs.levels(group_col))
    if len(levels) != 2:
        raise DesignError(f"group column needs two levels, got {list(levels)}")
    g = covs.columns[group_col]
    n = covs.n
    cols = [np.ones(n), (g != levels[0]).astype(float)]
    names = ["intercept", GROUP_COLUMN]
    coding = [f"{GROUP_COLUMN}: 0={levels[0]}, 1={levels[1]}"]
    dropped = []
    for c in covariates:
        if c == group_col:
            continue
        if c not in covs.columns:
            raise DesignError(f"covariate {c!r} not in metadata")
        values = covs.columns[c]
        if c in covs.categorical:
            lev = covs.levels(c)
            if len(lev) < 2:
                warnings.warn(f"covariate {c!r} is constant; dropped", stacklevel=2)
                dropped.append(c)
                continue
            coding.append(f"{c}: reference={lev[0]}")
            for level in lev[1:]:
                cols.append((values == level).astype(float))
                names.append(f"{c}[{level}]")
        else:
            values = np.asarray(values, dtype=float)
            if np.any(np.isnan(values)):
                raise DesignError(f"covariate {c!r} has missing values")
            if np.ptp(values) == 0:
                warnings.warn(f"covariate {c!r} is constant; dropped", stacklevel=2)
                dropped.append(c)
                continue
            cols.append(values)
            names.append(c)
    x = np.column_stack(cols)
    if np.linalg.matrix_rank(x) < x.shape[1]:
        bad = _collinear_columns(x, names)
        raise DesignError(f"design is rank deficient; collinear columns: {', '.join(bad)}")
    return DesignMatrix(x, tuple(names), covs.sample_ids, tuple(dropped), "; ".join(coding))


@dataclass(frozen=True, eq=False)
class LtsFit:
    """Result of :func:`lts_fit`.

    ``inlier_indices`` is the optimal h-subset. ``weights`` marks the
    observations used by the final least-squares fit from which
    ``coefficients``, ``standard_errors``, ``scale`` and ``df`` come.
    """

    coefficients: np.ndarray
    standard_errors: np.ndarray
    names: tuple[str, ...]
    h: int
    inlier_indices: np.ndarray
    weights: np.ndarray
    scale: float
    df: int
    objective: float
    raw_coefficients: np.ndarray
    method: str = "fast"
    trace: list = field(default_factory=list, repr=False)

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def se(self, name: str) -> float:
        return float(self.standard_errors[self.names.index(name)])


def coverage_to_h(n: int, ncol: int, coverage: float) -> int:
    """``floor(n * coverage)`` raised to at least ``ceil((n + ncol + 1) / 2)``."""
    if not 0.5 <= coverage <= 1.0:
        raise CoverageError(f"coverage must lie in [0.5, 1], got {coverage}")
    h = int(math.floor(n * coverage + 1e-9))
    h = min(n, max(h, int(math.ceil((n + ncol + 1) / 2))))
    if h < ncol + 1:
        raise CoverageError(f"h={h} leaves no residual degrees of freedom for {ncol} coefficients")
    return h


def _consistency(alpha: float) -> float:
    """E[z^2 | |z| <= q] for standard normal z with P(|z| <= q) = alpha."""
    if alpha >= 1.0:
        return 1.0
    q = stats.norm.ppf((1.0 + alpha) / 2.0)
    return (alpha - 2.0 * q * stats.norm.pdf(q)) / alpha


def _batch_ols(x, y, subsets):
    xs = x[subsets]
    ys = y[subsets]
    beta = np.linalg.pinv(xs, rcond=1e-10) @ ys[..., None]
    return beta[..., 0]


def _h_subsets(x, y, beta, h):
    r2 = (y[None, :] - beta @ x.T) ** 2
    idx = np.argpartition(r2, h - 1, axis=1)[:, :h]
    obj = np.take_along_axis(r2, idx, axis=1).sum(axis=1)
    return np.sort(idx, axis=1), obj


def _check_monotone(new, old, trace):
    tol = 1e-9 * np.maximum(1.0, np.abs(old))
    if np.any(new > old + tol):
        raise AssertionError("concentration step increased the trimmed objective")
    trace.append(float(np.min(new)))


def _exhaustive(x, y, h, batch=4096):
    n = x.shape[0]
    best_obj, best_beta = np.inf, None
    it = combinations(range(n), h)
    while True:
        block = np.array([c for _, c in zip(range(batch), it)], dtype=np.intp)
        if block.size == 0:
            break
        beta = _batch_ols(x, y, block)
        res = y[block] - np.einsum("bmc,bc->bm", x[block], beta)
        rss = (res**2).sum(axis=1)
        k = int(np.argmin(rss))
        if rss[k] < best_obj:
            best_obj, best_beta = float(rss[k]), beta[k]
    idx, obj = _h_subsets(x, y, best_beta[None], h)
    return idx[0], float(obj[0])


def _fast_lts(x, y, h, rng, n_starts, n_csteps, n_best, max_refine, trace):
    n, c = x.shape
    starts = np.argsort(rng.random((n_starts, n)), axis=1)[:, :c]
    beta = _batch_ols(x, y, starts)
    idx, obj = _h_subsets(x, y, beta, h)
    for _ in range(n_csteps):
        beta = _batch_ols(x, y, idx)
        idx, new = _h_subsets(x, y, beta, h)
        _check_monotone(new, obj, trace)
        obj = new

    order = np.argsort(obj, kind="stable")
    seen, keep = set(), []
    for k in order:
        key = idx[k].tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(k)
        if len(keep) == n_best:
            break
    idx, obj = idx[keep], obj[keep]
    for _ in range(max_refine):
        beta = _batch_ols(x, y, idx)
        new_idx, new = _h_subsets(x, y, beta, h)
        _check_monotone(new, obj, trace)
        done = np.array_equal(new_idx, idx)
        idx, obj = new_idx, new
        if done:
            break
    k = int(np.argmin(obj))
    return idx[k], float(obj[k])


def _ols(x, y):
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    return beta


def lts_fit(
    x,
    y,
    coverage: float = 0.75,
    seed: int | np.random.SeedSequence = 0,
    *,
    method: str = "auto",
    n_starts: int = 500,
    n_csteps: int = 2,
    n_best: int = 10,
    exhaustive_cutoff: int = 12,
    max_refine: int = 100,
    reweight: bool = True,
) -> LtsFit:
    """Least trimmed squares regression with reweighted inference.

    Parameters
    ----------
    x : DesignMatrix or ndarray, shape (n, ncol)
    y : ndarray, shape (n,)
    coverage : float in [0.5, 1]
        Fraction of observations kept by the trimmed objective.
    seed : int or SeedSequence
        Drives the random elemental starts; has no effect for exhaustive search.
    method : {'auto', 'exhaustive', 'fast'}
        'auto' enumerates all h-subsets when ``n <= exhaustive_cutoff``.
    reweight : bool
        If True, observations whose residual from the LTS fit exceeds
        ``qnorm(0.9875)`` times the consistency-corrected LTS scale are
        dropped and least squares is refitted on the rest; the scale of that
        fit is again corrected for normal-theory trimming. If False the final
        fit is ordinary least squares on the h-subset.

    Notes
    -----
    With ``h == n`` the result is ordinary least squares.
    """
    names = tuple(x.columns) if isinstance(x, DesignMatrix) else tuple(f"x{j}" for j in range(np.shape(x)[1]))
    x = np.asarray(x.matrix if isinstance(x, DesignMatrix) else x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, c = x.shape
    if y.shape != (n,):
        raise ValueError("y length does not match design rows")
    h = coverage_to_h(n, c, coverage)
    trace: list = []

    if h == n:
        used = "ols"
        subset = np.arange(n)
        beta_raw = _ols(x, y)
        obj = float(((y - x @ beta_raw) ** 2).sum())
        weights = np.ones(n, dtype=bool)
    else:
        if method == "auto":
            method = "exhaustive" if n <= exhaustive_cutoff else "fast"
        if method == "exhaustive":
            subset, obj = _exhaustive(x, y, h)
        elif method == "fast":
            rng = np.random.default_rng(seed)
            subset, obj = _fast_lts(x, y, h, rng, n_starts, n_csteps, n_best, max_refine, trace)
        else:
            raise ValueError(f"unknown LTS method {method!r}")
        used = method
        beta_raw = _ols(x[subset], y[subset])
        obj = min(obj, float(np.sort((y - x @ beta_raw) ** 2)[:h].sum()))
        in_subset = np.zeros(n, dtype=bool)
        in_subset[subset] = True
        weights = in_subset
        if reweight:
            s0 = math.sqrt(obj / h / _consistency(h / n))
            if s0 > 1e-12 * max(1.0, float(np.abs(y).max())):
                w = np.abs(y - x @ beta_raw) <= REWEIGHT_CUTOFF * s0
                if w.sum() > c:
                    weights = w

    xw, yw = x[weights], y[weights]
    beta = _ols(xw, yw)
    df = int(weights.sum()) - c
    rss = float(((yw - xw @ beta) ** 2).sum())
    s2 = rss / df if df > 0 else 0.0
    if reweight and used != "ols":
        s2 /= _consistency(weights.sum() / n) if weights.sum() < n else 1.0
    xtx_inv = np.linalg.pinv(xw.T @ xw)
    se = np.sqrt(np.maximum(np.diag(xtx_inv) * s2, 0.0))
    return LtsFit(
        coefficients=beta,
        standard_errors=se,
        names=names,
        h=h,
        inlier_indices=np.sort(subset),
        weights=weights,
        scale=math.sqrt(s2),
        df=df,
        objective=obj,
        raw_coefficients=beta_raw,
        method=used,
        trace=trace,
    )


@dataclass
class TaxonTestResult:
    taxon: str
    beta: float
    se: float
    t: float
    p_value: float
    q_value: float = math.nan
    covariate_coefficients: dict = field(default_factory=dict)
    failed: bool = False
    message: str = ""


def t_test(beta: float, se: float, df: int, scale_hint: float = 1.0) -> tuple[float, float]:
    """Two-sided Student-t test of ``beta == 0``.

    A zero standard error (exact fit) gives ``t = 0, p = 1`` when the
    coefficient is numerically zero and ``t = +-inf, p = 0`` otherwise.
    """
    tiny = 1e-12 * max(1.0, scale_hint)
    if se <= tiny:
        if abs(beta) <= tiny:
            return 0.0, 1.0
        return math.copysign(math.inf, beta), 0.0
    t = beta / se
    return t, float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))


def _fit_one(args):
    k, name, y, design, coverage, seed = args
    try:
        fit = lts_fit(design, y, coverage, np.random.SeedSequence([seed, k]))
    except Exception as exc:  # noqa: BLE001 - recorded per taxon
        return TaxonTestResult(name, math.nan, math.nan, math.nan, math.nan, failed=True, message=repr(exc))
    beta, se = fit.coef(GROUP_COLUMN), fit.se(GROUP_COLUMN)
    t, p = t_test(beta, se, fit.df, float(np.abs(y).max()))
    cov = {nm: float(b) for nm, b in zip(fit.names, fit.coefficients) if nm != GROUP_COLUMN}
    return TaxonTestResult(name, beta, se, t, p, covariate_coefficients=cov)


def taxon_tests(pv, design: DesignMatrix, coverage: float = 0.75, seed: int = 0, threads: int = 1) -> list[TaxonTestResult]:
    """Fit :func:`lts_fit` to every pseudo-value column and test the group coefficient.

    Taxon k draws its random starts from ``SeedSequence([seed, k])``, so the
    results do not depend on `threads`. A failing fit is reported with
    ``failed=True`` and NaN statistics.
    """
    values = np.asarray(getattr(pv, "values", pv), dtype=float)
    names = getattr(pv, "taxon_names", tuple(f"taxon_{k}" for k in range(values.shape[1])))
    ids = getattr(pv, "sample_ids", None)
    if values.shape[0] != design.matrix.shape[0]:
        raise ValueError("pseudo-value rows do not match design rows")
    if ids is not None and design.sample_ids and tuple(ids) != tuple(design.sample_ids):
        raise ValueError("pseudo-value and design sample order differ")
    tasks = [(k, names[k], values[:, k], design, coverage, seed) for k in range(values.shape[1])]
    return parallel_map(_fit_one, tasks, threads)
