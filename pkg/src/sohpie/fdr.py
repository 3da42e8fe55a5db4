"""False discovery rate adjustment: Benjamini-Hochberg and Storey q-values."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

DEFAULT_LAMBDAS = np.round(np.arange(0.05, 0.9001, 0.05), 10)


@dataclass(frozen=True, eq=False)
class FdrResult:
    p_values: np.ndarray
    q_values: np.ndarray
    pi0: float
    method: str


def _validate(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if np.any(np.isnan(p)) or np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    return p


def _step_up(p: np.ndarray, pi0: float) -> np.ndarray:
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    ranked = pi0 * p[order] * m / np.arange(1, m + 1)
    q_sorted = np.minimum.accumulate(ranked[::-1])[::-1]
    q = np.empty(m)
    q[order] = np.minimum(q_sorted, 1.0)
    return q


def bh_adjust(p) -> FdrResult:
    """Benjamini-Hochberg adjusted p-values ``min_{j>=i} p_(j) m / j``, capped at 1."""
    p = _validate(p)
    return FdrResult(p, _step_up(p, 1.0), 1.0, "bh")


def estimate_pi0(p, lambdas=DEFAULT_LAMBDAS) -> float:
    """Null proportion from ``#{p > lambda} / (m (1 - lambda))`` smoothed by a cubic.

    The least-squares cubic through the grid estimates is evaluated at the
    largest lambda; the result is clamped to ``[1/m, 1]``.
    """
    p = _validate(p)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any((lambdas < 0) | (lambdas > 0.95)):
        raise ValueError("lambda grid must lie in [0, 0.95]")
    m = p.size
    raw = np.array([(p > lam).sum() / (m * (1.0 - lam)) for lam in lambdas])
    if lambdas.size >= 4:
        coef = np.polyfit(lambdas, raw, 3)
        pi0 = float(np.polyval(coef, lambdas.max()))
    else:
        pi0 = float(raw[-1])
    return float(min(1.0, max(pi0, 1.0 / m)))


def qvalue(p, lambdas=DEFAULT_LAMBDAS, pi0: float | None = None) -> FdrResult:
    """Storey q-values ``min_{j>=i} pi0 p_(j) m / j``, capped at 1.

    Fewer than 10 p-values are too few to estimate ``pi0``; the function then
    warns and returns Benjamini-Hochberg values. Passing `pi0` skips the
    estimate.
    """
    p = _validate(p)
    if pi0 is None:
        if p.size < 10:
            warnings.warn(
                f"only {p.size} p-values; pi0 not estimated, using Benjamini-Hochberg",
                stacklevel=2,
            )
            return bh_adjust(p)
        pi0 = estimate_pi0(p, lambdas)
    elif not 0.0 < pi0 <= 1.0:
        raise ValueError("pi0 must lie in (0, 1]")
    return FdrResult(p, _step_up(p, pi0), float(pi0), "qvalue")


def adjust(p, method: str = "qvalue") -> FdrResult:
    if method == "qvalue":
        return qvalue(p)
    if method == "bh":
        return bh_adjust(p)
    raise ValueError(f"unknown FDR method {method!r}")


def significant_taxa(results, alpha: float = 0.05) -> np.ndarray:
    """Indices with ``q < alpha`` (strict)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    q = np.asarray(getattr(results, "q_values", results), dtype=float)
    return np.flatnonzero(q < alpha)
