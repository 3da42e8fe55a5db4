"""Randomised invariants; each property runs on at least 1000 generated cases."""

import math
import warnings

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sohpie.fdr import bh_adjust, qvalue
from sohpie.metrics import score
from sohpie.simulation import true_dc_labels
from sohpie.sparcc import SparccConfig, SparccWarning, sparcc, variation_matrix

FUZZ = settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def count_tables(draw):
    n = draw(st.integers(3, 12))
    p = draw(st.integers(4, 9))
    return draw(arrays(np.int64, (n, p), elements=st.integers(0, 500)))


@st.composite
def positive_fractions(draw):
    n = draw(st.integers(2, 10))
    p = draw(st.integers(2, 8))
    x = draw(arrays(np.float64, (n, p), elements=st.floats(1e-3, 1e3)))
    return x / x.sum(axis=1, keepdims=True)


@st.composite
def adjacency_pairs(draw):
    p = draw(st.integers(1, 10))
    n_upper = p * (p - 1) // 2

    def one():
        bits = draw(st.lists(st.booleans(), min_size=n_upper, max_size=n_upper))
        a = np.zeros((p, p), dtype=int)
        a[np.triu_indices(p, 1)] = bits
        return a + a.T

    return one(), one()


@st.composite
def labels_and_q(draw):
    p = draw(st.integers(1, 30))
    eta = draw(arrays(np.int64, p, elements=st.integers(0, 1)))
    q = draw(arrays(np.float64, p, elements=st.floats(0.0, 1.0)))
    return eta, q


p_vectors = arrays(np.float64, st.integers(1, 60), elements=st.floats(0.0, 1.0))


@FUZZ
@given(count_tables(), st.floats(0.05, 0.5), st.integers(1, 20))
def test_association_matrix_well_formed(counts, threshold, iters):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SparccWarning)
        rho = sparcc(counts, SparccConfig(max_outer_iterations=iters, exclusion_threshold=threshold)).rho
    assert np.all(np.isfinite(rho))
    assert np.array_equal(rho, rho.T)
    assert np.all(np.diag(rho) == 1.0)
    assert np.all((rho >= -1.0) & (rho <= 1.0))


@FUZZ
@given(positive_fractions(), st.data())
def test_variation_matrix_row_scale_invariant(u, data):
    scale = data.draw(arrays(np.float64, u.shape[0], elements=st.floats(1e-3, 1e3)))
    t = variation_matrix(u)
    assert np.allclose(variation_matrix(u * scale[:, None]), t, rtol=1e-7, atol=1e-9)
    assert np.array_equal(t, t.T) and np.all(np.diag(t) == 0)


@FUZZ
@given(adjacency_pairs())
def test_eta_matches_brute_force(pair):
    o1, o2 = pair
    p = o1.shape[0]
    expect = [int(any(o1[j, k] != o2[j, k] for j in range(p))) for k in range(p)]
    assert true_dc_labels(o1, o2).tolist() == expect


@FUZZ
@given(labels_and_q(), st.floats(0.01, 0.2))
def test_metrics_match_double_loop(case, alpha):
    eta, q = case
    cells = {}
    for truth in (1, 0):
        for called in (True, False):
            cells[truth, called] = sum(1 for e, qk in zip(eta, q) if e == truth and (qk < alpha) == called)
    tp, fp, fn, tn = cells[1, True], cells[0, True], cells[1, False], cells[0, False]
    got = score(eta, q, alpha)
    prec = tp / (tp + fp) if tp + fp else math.nan
    rec = tp / (tp + fn) if tp + fn else math.nan
    acc = (tp + tn) / len(eta)
    assert repr(got.precision) == repr(prec) or math.isclose(got.precision, prec, abs_tol=1e-12)
    assert repr(got.recall) == repr(rec) or math.isclose(got.recall, rec, abs_tol=1e-12)
    assert math.isclose(got.accuracy, acc, abs_tol=1e-12)
    if not (math.isnan(prec) or math.isnan(rec)) and prec + rec > 0:
        assert math.isclose(got.f1, 2 * prec * rec / (prec + rec), abs_tol=1e-12)
    perm = np.random.default_rng(len(eta)).permutation(len(eta))
    assert repr(score(eta[perm], q[perm], alpha)) == repr(got)


@FUZZ
@given(p_vectors, st.randoms(use_true_random=False))
def test_qvalues_bounded_and_order_invariant(p, rnd):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = qvalue(p)
        perm = np.array(rnd.sample(range(p.size), p.size))
        shuffled = qvalue(p[perm])
    q = res.q_values
    assert np.all((q >= 0) & (q <= 1))
    assert np.all(q <= bh_adjust(p).q_values + 1e-15)
    assert np.array_equal(shuffled.q_values, q[perm])
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(q[order]) >= -1e-15)


@FUZZ
@given(p_vectors, st.randoms(use_true_random=False))
def test_bh_order_invariant(p, rnd):
    perm = np.array(rnd.sample(range(p.size), p.size))
    q = bh_adjust(p).q_values
    assert np.array_equal(bh_adjust(p[perm]).q_values, q[perm])
    assert np.all(q >= p - 1e-15)


PROPERTY_SUITES = (
    test_association_matrix_well_formed,
    test_variation_matrix_row_scale_invariant,
    test_eta_matches_brute_force,
    test_metrics_match_double_loop,
    test_qvalues_bounded_and_order_invariant,
    test_bh_order_invariant,
)
