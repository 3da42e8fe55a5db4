"""Jackknife pseudo-values of taxon degree centrality.

For a group of ``n_z`` subjects the statistic is ``theta_k``, the column sum
of the SparCC association matrix (self-correlation included). Subject i's
pseudo-value is ``n_z * theta_k - (n_z - 1) * theta_k(-i)``, where
``theta_k(-i)`` is recomputed after removing subject i from the group.
Groups never share data, except that an exclusion set chosen elsewhere
(for example on the pooled samples) can be imposed on a group's fits.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ._parallel import chunks, parallel_map, resolve_threads
from .io import OtuTable
from .sparcc import AssociationMatrix, SparccConfig, fraction_stack, sparcc_from_fractions


class JackknifeError(RuntimeError):
    pass


@dataclass(frozen=True)
class JackknifeConfig:
    threads: int | str = 1
    sparcc: SparccConfig = field(default_factory=SparccConfig)
    loo_exclusions: str = "refit"

    def __post_init__(self):
        if not isinstance(self.threads, str) and self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.loo_exclusions not in ("fixed", "refit"):
            raise ValueError("loo_exclusions must be 'fixed' or 'refit'")


@dataclass(frozen=True, eq=False)
class CentralityVector:
    theta: np.ndarray
    taxon_names: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class PseudoValueMatrix:
    """Rows are subjects, columns taxa.

    ``theta`` maps each group label to its full-sample statistic,
    ``loo_theta`` holds the leave-one-out statistics row-aligned with
    ``values`` and ``association`` the full-sample matrix each group's
    statistic was computed from (a difference matrix in paired mode).
    """

    values: np.ndarray
    sample_ids: tuple[str, ...]
    taxon_names: tuple[str, ...]
    groups: np.ndarray
    theta: dict = field(default_factory=dict)
    loo_theta: np.ndarray | None = None
    association: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    def group_mean(self, label) -> np.ndarray:
        return self.values[self.groups == label].mean(axis=0)

    @classmethod
    def stack(cls, blocks) -> "PseudoValueMatrix":
        blocks = list(blocks)
        names = blocks[0].taxon_names
        if any(b.taxon_names != names for b in blocks):
            raise ValueError("blocks have different taxa")
        theta, assoc = {}, {}
        for b in blocks:
            theta.update(b.theta)
            assoc.update(b.association)
        return cls(
            values=np.vstack([b.values for b in blocks]),
            sample_ids=tuple(s for b in blocks for s in b.sample_ids),
            taxon_names=names,
            groups=np.concatenate([b.groups for b in blocks]),
            theta=theta,
            loo_theta=np.vstack([b.loo_theta for b in blocks]),
            association=assoc,
        )


def degree_centrality(assoc) -> CentralityVector:
    """Column sums of the association matrix, unit diagonal included."""
    rho = assoc.rho if isinstance(assoc, AssociationMatrix) else np.asarray(assoc, dtype=float)
    names = assoc.taxon_names if isinstance(assoc, AssociationMatrix) else tuple(range(rho.shape[0]))
    return CentralityVector(rho.sum(axis=0), tuple(names))


def pseudovalues_from_estimates(theta_full, theta_loo) -> np.ndarray:
    theta_loo = np.asarray(theta_loo, dtype=float)
    n = theta_loo.shape[0]
    return n * np.asarray(theta_full, dtype=float)[None, :] - (n - 1) * theta_loo


def _drop(stack: np.ndarray, i: int) -> np.ndarray:
    return np.delete(stack, i, axis=1)


def _loo_single(args):
    stacks, idx, cfg, fixed = args
    out = np.empty((len(idx), stacks[0].shape[2]))
    for r, i in enumerate(idx):
        try:
            rhos = [
                sparcc_from_fractions(_drop(s, i), cfg, excluded=None if fixed is None else fixed[t]).rho
                for t, s in enumerate(stacks)
            ]
        except Exception as exc:  # noqa: BLE001 - re-raised with the sample index
            return ("error", int(i), repr(exc))
        rho = rhos[0] if len(rhos) == 1 else rhos[1] - rhos[0]
        out[r] = rho.sum(axis=0)
    return ("ok", idx, out)


def _loo_thetas(stacks, cfg: SparccConfig, threads: int, sample_ids, fixed=None) -> np.ndarray:
    n = stacks[0].shape[1]
    tasks = [(stacks, idx, cfg, fixed) for idx in chunks(n, threads)]
    out = np.empty((n, stacks[0].shape[2]))
    for status, idx, payload in parallel_map(_loo_single, tasks, threads):
        if status == "error":
            raise JackknifeError(
                f"leave-one-out SparCC failed without sample {sample_ids[idx]!r}: {payload}"
            )
        out[idx] = payload
    return out


def _check_group(table: OtuTable):
    if table.n < 3:
        raise ValueError(f"jackknife needs at least 3 subjects per group, got {table.n}")


def _draw_sets(excluded, cfg: SparccConfig):
    if excluded is None:
        return None
    return [tuple(excluded)] * max(1, cfg.inner_dirichlet_draws)


def jackknife_pseudovalues(
    group_counts: OtuTable, cfg: JackknifeConfig = JackknifeConfig(), label="1", excluded=None
) -> PseudoValueMatrix:
    """Pseudo-values of degree centrality for one group.

    Each leave-one-out SparCC fit is an independent task; results land in
    preassigned rows, so the output does not depend on ``cfg.threads``.
    With Dirichlet draws enabled, every subject keeps its own draws in the
    full and in each reduced fit.

    Parameters
    ----------
    excluded : sequence of (j, k) pairs, optional
        Use this exclusion set in every fit instead of searching for one.
    """
    _check_group(group_counts)
    threads = resolve_threads(cfg.threads)
    stack = fraction_stack(group_counts.counts, cfg.sparcc)
    given = _draw_sets(excluded, cfg.sparcc)
    full = sparcc_from_fractions(stack, cfg.sparcc, group_counts.taxon_names, excluded=given)
    theta = degree_centrality(full).theta
    fixed = [given] if given is not None else ([full.draw_exclusions] if cfg.loo_exclusions == "fixed" else None)
    loo = _loo_thetas([stack], cfg.sparcc, threads, group_counts.sample_ids, fixed)
    return PseudoValueMatrix(
        values=pseudovalues_from_estimates(theta, loo),
        sample_ids=group_counts.sample_ids,
        taxon_names=group_counts.taxon_names,
        groups=np.array([label] * group_counts.n, dtype=object),
        theta={label: theta},
        loo_theta=loo,
        association={label: full},
    )


def paired_difference_pseudovalues(
    before: OtuTable, after: OtuTable, cfg: JackknifeConfig = JackknifeConfig(), label="1", excluded=None
) -> PseudoValueMatrix:
    """Pseudo-values of the column sums of ``A_after - A_before`` for one group.

    Removing subject i drops it from both time points before both matrices
    are re-estimated. `excluded`, if given, is a pair ``(before_set,
    after_set)`` imposed on the fits of each time point.
    """
    if before.sample_ids != after.sample_ids or before.taxon_names != after.taxon_names:
        raise ValueError("before/after tables must share sample IDs and taxa in the same order")
    _check_group(before)
    threads = resolve_threads(cfg.threads)
    sc = cfg.sparcc
    stack_b = fraction_stack(before.counts, sc)
    if sc.inner_dirichlet_draws > 0:
        # separate streams for the second time point
        stack_a = fraction_stack(after.counts, replace(sc, seed=sc.seed + 1))
    else:
        stack_a = fraction_stack(after.counts, sc)
    given_b, given_a = (None, None) if excluded is None else (_draw_sets(e, sc) for e in excluded)
    a_b = sparcc_from_fractions(stack_b, sc, before.taxon_names, excluded=given_b)
    a_a = sparcc_from_fractions(stack_a, sc, before.taxon_names, excluded=given_a)
    diff = a_a.rho - a_b.rho
    theta = diff.sum(axis=0)
    if excluded is not None:
        fixed = [given_b, given_a]
    elif cfg.loo_exclusions == "fixed":
        fixed = [a_b.draw_exclusions, a_a.draw_exclusions]
    else:
        fixed = None
    loo = _loo_thetas([stack_b, stack_a], sc, threads, before.sample_ids, fixed)
    return PseudoValueMatrix(
        values=pseudovalues_from_estimates(theta, loo),
        sample_ids=before.sample_ids,
        taxon_names=before.taxon_names,
        groups=np.array([label] * before.n, dtype=object),
        theta={label: theta},
        loo_theta=loo,
        association={label: AssociationMatrix(diff, before.taxon_names)},
    )
