import numpy as np
import pytest

from conftest import lognormal_counts
from sohpie.io import OtuTable
from sohpie.pseudovalue import (
    JackknifeConfig,
    JackknifeError,
    PseudoValueMatrix,
    degree_centrality,
    jackknife_pseudovalues,
    paired_difference_pseudovalues,
    pseudovalues_from_estimates,
)
from sohpie.sparcc import AssociationMatrix, SparccConfig, sparcc


def _table(counts, prefix="s"):
    n, p = counts.shape
    return OtuTable([f"{prefix}{i}" for i in range(n)], [f"t{j}" for j in range(p)], counts)


def test_degree_centrality_examples():
    np.testing.assert_array_equal(degree_centrality(np.eye(5)).theta, np.ones(5))
    np.testing.assert_array_equal(degree_centrality(np.ones((3, 3))).theta, [3, 3, 3])
    m = np.eye(3)
    m[0, 1] = m[1, 0] = 0.5
    np.testing.assert_array_equal(degree_centrality(m).theta, [1.5, 1.5, 1.0])
    a = AssociationMatrix(m, ("a", "b", "c"))
    assert degree_centrality(a).taxon_names == ("a", "b", "c")


def test_pseudovalue_arithmetic():
    pv = pseudovalues_from_estimates([2.0], [[1.5], [2.0], [2.5]])
    assert pv[0, 0] == pytest.approx(3.0, abs=1e-12)


def test_unchanged_leave_one_out_returns_estimate():
    theta = np.array([1.2, 0.7, 3.0])
    pv = pseudovalues_from_estimates(theta, np.tile(theta, (6, 1)))
    np.testing.assert_allclose(pv, np.tile(theta, (6, 1)), atol=1e-12)


def _reference(counts, cfg):
    n = counts.shape[0]
    theta = sparcc(counts, cfg).rho.sum(axis=0)
    loo = np.array([sparcc(np.delete(counts, i, axis=0), cfg).rho.sum(axis=0) for i in range(n)])
    return n * theta[None, :] - (n - 1) * loo


def test_matches_sequential_loop():
    rng = np.random.default_rng(21)
    counts = lognormal_counts(rng, 5, 4, depth=300)
    out = jackknife_pseudovalues(_table(counts))
    np.testing.assert_array_equal(out.values, _reference(counts, SparccConfig()))
    assert out.values.shape == (5, 4)


def test_thread_count_invariance():
    rng = np.random.default_rng(22)
    table = _table(lognormal_counts(rng, 9, 6, depth=500))
    one = jackknife_pseudovalues(table, JackknifeConfig(threads=1))
    two = jackknife_pseudovalues(table, JackknifeConfig(threads=2))
    assert np.array_equal(one.values, two.values)


def test_column_means_equal_jackknife_estimator():
    rng = np.random.default_rng(23)
    counts = lognormal_counts(rng, 12, 6, depth=800)
    out = jackknife_pseudovalues(_table(counts))
    n = counts.shape[0]
    theta = out.theta["1"]
    est = n * theta - (n - 1) * out.loo_theta.mean(axis=0)
    np.testing.assert_allclose(out.group_mean("1"), est, atol=1e-9)


def test_subject_permutation_equivariance():
    rng = np.random.default_rng(24)
    counts = lognormal_counts(rng, 10, 5, depth=800)
    perm = rng.permutation(10)
    cfg = JackknifeConfig(sparcc=SparccConfig(max_outer_iterations=1))
    a = jackknife_pseudovalues(_table(counts), cfg).values
    b = jackknife_pseudovalues(_table(counts[perm]), cfg).values
    np.testing.assert_allclose(b, a[perm], atol=1e-9)


def test_fixed_and_given_exclusions():
    rng = np.random.default_rng(25)
    table = _table(lognormal_counts(rng, 10, 6, depth=800))
    fixed = jackknife_pseudovalues(table, JackknifeConfig(loo_exclusions="fixed"))
    full = fixed.association["1"].excluded
    given = jackknife_pseudovalues(table, excluded=full)
    np.testing.assert_array_equal(fixed.values, given.values)
    none = jackknife_pseudovalues(table, excluded=())
    single = jackknife_pseudovalues(table, JackknifeConfig(sparcc=SparccConfig(max_outer_iterations=1)))
    np.testing.assert_array_equal(none.values, single.values)


def test_failure_names_sample(monkeypatch):
    import sohpie.pseudovalue as pvmod

    real = pvmod.sparcc_from_fractions

    def flaky(stack, cfg, *a, **kw):
        # fails only for the fit that leaves out the first sample
        if not np.any(np.all(stack[0] == first_row, axis=1)):
            raise RuntimeError("boom")
        return real(stack, cfg, *a, **kw)

    rng = np.random.default_rng(26)
    counts = lognormal_counts(rng, 5, 4, depth=300)
    from sohpie.sparcc import to_fractions

    first_row = to_fractions(counts, 1.0)[0]
    monkeypatch.setattr(pvmod, "sparcc_from_fractions", flaky)
    with pytest.raises(JackknifeError, match="'s0'"):
        jackknife_pseudovalues(_table(counts))


def test_group_too_small():
    with pytest.raises(ValueError, match="at least 3"):
        jackknife_pseudovalues(_table(np.ones((2, 4), dtype=int)))


def test_paired_self_difference_is_zero():
    rng = np.random.default_rng(27)
    t = _table(lognormal_counts(rng, 6, 5, depth=500))
    out = paired_difference_pseudovalues(t, t)
    np.testing.assert_array_equal(out.values, np.zeros((6, 5)))


def test_paired_matches_sequential_loop():
    rng = np.random.default_rng(28)
    before = lognormal_counts(rng, 4, 5, depth=400)
    after = lognormal_counts(rng, 4, 5, depth=400)
    out = paired_difference_pseudovalues(_table(before), _table(after))
    cfg = SparccConfig()

    def stat(b, a):
        return (sparcc(a, cfg).rho - sparcc(b, cfg).rho).sum(axis=0)

    n = 4
    theta = stat(before, after)
    loo = np.array([stat(np.delete(before, i, 0), np.delete(after, i, 0)) for i in range(n)])
    np.testing.assert_array_equal(out.values, n * theta - (n - 1) * loo)


def test_paired_planted_edge_concentrates_on_endpoints():
    rng = np.random.default_rng(29)
    p = 8
    rho = np.eye(p)
    rho[1, 5] = rho[5, 1] = 0.9
    before = lognormal_counts(rng, 40, p)
    after = lognormal_counts(rng, 40, p, rho=rho)
    out = paired_difference_pseudovalues(_table(before), _table(after), JackknifeConfig(sparcc=SparccConfig(max_outer_iterations=1)))
    top2 = np.argsort(-np.abs(out.values.mean(axis=0)))[:2]
    assert set(top2) == {1, 5}


def test_paired_mismatch():
    a = _table(np.ones((4, 4), dtype=int))
    b = _table(np.ones((4, 4), dtype=int), prefix="x")
    with pytest.raises(ValueError):
        paired_difference_pseudovalues(a, b)


def test_stack_blocks():
    rng = np.random.default_rng(30)
    g1 = jackknife_pseudovalues(_table(lognormal_counts(rng, 5, 4, 300), "a"), label="A")
    g2 = jackknife_pseudovalues(_table(lognormal_counts(rng, 6, 4, 300), "b"), label="B")
    pv = PseudoValueMatrix.stack([g1, g2])
    assert pv.shape == (11, 4)
    assert list(pv.groups) == ["A"] * 5 + ["B"] * 6
    assert set(pv.theta) == {"A", "B"}
