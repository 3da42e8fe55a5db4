"""SparCC correlation estimation for compositional count data.

Log-ratio variances ``t_jk = Var(log u_j / u_k)`` are decomposed into basis
variances ``sigma_j**2`` and correlations ``rho_jk`` under the assumption that
most basis correlations are weak. Strongly correlated pairs are excluded one
at a time from the variance system and the estimate is recomputed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

SIGMA2_FLOOR = 1e-10


class SparccWarning(UserWarning):
    pass


class ExclusionSaturatedError(np.linalg.LinAlgError):
    """The restricted basis-variance system became singular."""


@dataclass(frozen=True)
class SparccConfig:
    max_outer_iterations: int = 20
    exclusion_threshold: float = 0.1
    pseudocount: float = 1.0
    inner_dirichlet_draws: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.max_outer_iterations < 1:
            raise ValueError("max_outer_iterations must be >= 1")
        if not 0.0 < self.exclusion_threshold < 1.0:
            raise ValueError("exclusion_threshold must lie in (0, 1)")
        if not self.pseudocount > 0:
            raise ValueError("pseudocount must be positive")
        if self.inner_dirichlet_draws < 0:
            raise ValueError("inner_dirichlet_draws must be >= 0")


@dataclass(frozen=True, eq=False)
class AssociationMatrix:
    """Symmetric correlation matrix among taxa with unit diagonal.

    ``excluded`` lists the pairs removed from the variance system, in the
    order they were removed; ``n_clamped`` counts basis variances that had
    to be raised to the floor.
    """

    rho: np.ndarray
    taxon_names: tuple[str, ...]
    excluded: tuple[tuple[int, int], ...] = field(default=())
    iterations: int = 1
    n_clamped: int = 0
    draw_exclusions: tuple = field(default=(), repr=False)

    @property
    def p(self) -> int:
        return self.rho.shape[0]


def to_fractions(counts, pseudocount: float = 1.0) -> np.ndarray:
    """Row-normalise ``counts + pseudocount`` to relative abundances."""
    if not pseudocount > 0:
        raise ValueError("pseudocount must be positive")
    x = np.asarray(counts, dtype=float) + pseudocount
    return x / x.sum(axis=1, keepdims=True)


def variation_matrix(fractions) -> np.ndarray:
    """Sample variance (ddof=1) of every pairwise log-ratio across rows.

    Rows need not sum to one: the result depends on each row only up to a
    positive scale factor.
    """
    u = np.asarray(fractions, dtype=float)
    if u.ndim != 2:
        raise ValueError("fractions must be a 2-d array")
    if u.shape[0] < 2:
        raise ValueError(f"need at least 2 samples for a variance, got {u.shape[0]}")
    if np.any(u <= 0):
        raise ValueError("fractions must be strictly positive")
    logu = np.log(u)
    clr = logu - logu.mean(axis=1, keepdims=True)
    clr -= clr.mean(axis=0)
    cov = clr.T @ clr / (u.shape[0] - 1)
    d = np.diag(cov)
    t = d[:, None] + d[None, :] - 2.0 * cov
    t = 0.5 * (t + t.T)
    np.maximum(t, 0.0, out=t)
    np.fill_diagonal(t, 0.0)
    return t


def _restricted_system(t: np.ndarray, keep: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = keep.astype(float)
    np.fill_diagonal(m, keep.sum(axis=1))
    rhs = np.where(keep, t, 0.0).sum(axis=1)
    return m, rhs


def basis_variances(t, excluded=(), floor: float = SIGMA2_FLOOR, return_clamped: bool = False):
    """Solve for basis variances given a variation matrix.

    For taxon j with the set K_j of non-excluded partners,
    ``sum_{k in K_j} t_jk = |K_j| sigma_j**2 + sum_{k in K_j} sigma_k**2``.
    With nothing excluded this is ``(p-1) sigma_j**2 + sum_{k != j} sigma_k**2``.
    Non-positive solutions are raised to `floor`.

    Raises
    ------
    ExclusionSaturatedError
        If the restricted system is singular.
    """
    t = np.asarray(t, dtype=float)
    p = t.shape[0]
    if p < 4:
        raise ValueError(f"need at least 4 taxa, got {p}")
    keep = ~np.eye(p, dtype=bool)
    for j, k in excluded:
        keep[j, k] = keep[k, j] = False
    m, rhs = _restricted_system(t, keep)
    try:
        s2 = np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError:
        raise ExclusionSaturatedError("basis-variance system is singular") from None
    if not np.all(np.isfinite(s2)) or np.linalg.cond(m) > 1e12:
        raise ExclusionSaturatedError("basis-variance system is ill-conditioned")
    low = s2 <= floor
    n_clamped = int(low.sum())
    if n_clamped:
        warnings.warn(
            f"{n_clamped} basis variance(s) non-positive; clamped to {floor:g}",
            SparccWarning,
            stacklevel=2,
        )
        s2 = np.where(low, floor, s2)
    return (s2, n_clamped) if return_clamped else s2


def correlations(t, sigma2) -> np.ndarray:
    """Basis correlations ``(s_j + s_k - t_jk) / (2 sqrt(s_j s_k))``, clipped to [-1, 1]."""
    t = np.asarray(t, dtype=float)
    s2 = np.asarray(sigma2, dtype=float)
    if np.any(s2 <= 0):
        raise ValueError("basis variances must be positive")
    rho = (s2[:, None] + s2[None, :] - t) / (2.0 * np.sqrt(np.outer(s2, s2)))
    rho = 0.5 * (rho + rho.T)
    np.clip(rho, -1.0, 1.0, out=rho)
    np.fill_diagonal(rho, 1.0)
    return rho


def sparcc_from_variation(t: np.ndarray, cfg: SparccConfig = SparccConfig(), excluded=None):
    """Iterative SparCC on a precomputed variation matrix.

    Passing `excluded` skips the search and solves once with that set.
    Returns ``(rho, excluded, iterations, n_clamped)``.
    """
    p = t.shape[0]
    if excluded is not None:
        s2, n_clamped = basis_variances(t, excluded, return_clamped=True)
        return correlations(t, s2), tuple(excluded), 1, n_clamped
    excluded: list[tuple[int, int]] = []
    partners = np.full(p, p - 1)
    s2, n_clamped = basis_variances(t, excluded, return_clamped=True)
    rho = correlations(t, s2)
    iterations = 1
    iu = np.triu_indices(p, 1)
    active = np.ones(iu[0].size, dtype=bool)
    while iterations < cfg.max_outer_iterations:
        mag = np.where(active, np.abs(rho[iu]), -1.0)
        best = int(np.argmax(mag))
        if mag[best] < cfg.exclusion_threshold:
            break
        j, k = int(iu[0][best]), int(iu[1][best])
        if partners[j] <= 1 or partners[k] <= 1:
            break
        trial = excluded + [(j, k)]
        try:
            s2, clamped = basis_variances(t, trial, return_clamped=True)
        except ExclusionSaturatedError:
            warnings.warn("exclusion saturated; returning last estimate", SparccWarning, stacklevel=2)
            break
        excluded = trial
        active[best] = False
        partners[j] -= 1
        partners[k] -= 1
        n_clamped += clamped
        rho = correlations(t, s2)
        iterations += 1
    return rho, tuple(excluded), iterations, n_clamped


def dirichlet_fractions(counts, draws: int, seed: int) -> np.ndarray:
    """``draws`` posterior samples of Dirichlet(counts + 1) per row, shape (draws, n, p).

    Row i always consumes the same random stream, so dropping a row leaves
    the draws of the remaining rows unchanged.
    """
    counts = np.asarray(counts, dtype=float)
    out = np.empty((draws, *counts.shape))
    children = np.random.SeedSequence(seed).spawn(counts.shape[0])
    for i, ss in enumerate(children):
        g = np.random.default_rng(ss).gamma(counts[i] + 1.0, size=(draws, counts.shape[1]))
        out[:, i, :] = g / g.sum(axis=1, keepdims=True)
    return out


def fraction_stack(counts, cfg: SparccConfig) -> np.ndarray:
    """Fractions used by :func:`sparcc`, shape (max(1, draws), n, p)."""
    if cfg.inner_dirichlet_draws > 0:
        return dirichlet_fractions(counts, cfg.inner_dirichlet_draws, cfg.seed)
    return to_fractions(counts, cfg.pseudocount)[None]


def sparcc_from_fractions(stack: np.ndarray, cfg: SparccConfig, taxon_names=None, excluded=None) -> AssociationMatrix:
    """Run SparCC on each fraction draw in `stack` and average the correlations.

    `excluded`, one exclusion set per draw, fixes the excluded pairs instead
    of searching for them.
    """
    rhos, sets, info = [], [], None
    for d, u in enumerate(stack):
        fixed = None if excluded is None else excluded[d]
        rho, excl, iterations, n_clamped = sparcc_from_variation(variation_matrix(u), cfg, fixed)
        rhos.append(rho)
        sets.append(excl)
        if info is None:
            info = (iterations, n_clamped)
    rho = rhos[0] if len(rhos) == 1 else np.mean(rhos, axis=0)
    p = rho.shape[0]
    names = tuple(taxon_names) if taxon_names is not None else tuple(f"taxon_{j}" for j in range(p))
    return AssociationMatrix(rho, names, sets[0], *info, draw_exclusions=tuple(sets))


def sparcc(counts, cfg: SparccConfig = SparccConfig(), taxon_names=None) -> AssociationMatrix:
    """Estimate the basis correlation matrix of a group's counts.

    Parameters
    ----------
    counts : OtuTable or array_like, shape (n, p)
    cfg : SparccConfig

    Notes
    -----
    After the initial estimate, the not-yet-excluded pair with the largest
    ``|rho|`` is removed from the variance system whenever it reaches
    ``cfg.exclusion_threshold``. Iteration stops when no pair qualifies,
    after ``cfg.max_outer_iterations`` estimates, when a taxon would lose
    its last partner, or when the system becomes singular (a
    :class:`SparccWarning` is issued and the previous estimate returned).
    """
    if hasattr(counts, "counts"):
        taxon_names = counts.taxon_names if taxon_names is None else taxon_names
        counts = counts.counts
    counts = np.asarray(counts)
    n, p = counts.shape
    if n < 3:
        raise ValueError(f"SparCC needs at least 3 samples, got {n}")
    if p < 4:
        raise ValueError(f"SparCC needs at least 4 taxa, got {p}")
    return sparcc_from_fractions(fraction_stack(counts, cfg), cfg, taxon_names)
