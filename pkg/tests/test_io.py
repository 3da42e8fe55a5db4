import hashlib

import numpy as np
import pytest

from sohpie.io import (
    AlignmentError,
    CovariateFrame,
    OtuFormatError,
    OtuTable,
    align,
    filter_rare_taxa,
    format_exclusions,
    load_metadata,
    load_otu_table,
    read_matrix,
    write_matrix,
    write_metadata,
    write_otu_table,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_two_by_two(tmp_path):
    f = _write(tmp_path / "t.tsv", "sample_id\ta\tb\ns1\t3\t0\ns2\t1\t5\n")
    otu = load_otu_table(f)
    assert (otu.n, otu.p) == (2, 2)
    assert otu.counts.tolist() == [[3, 0], [1, 5]]
    assert otu.counts.dtype == np.int64


def test_csv_accepted(tmp_path):
    f = _write(tmp_path / "t.csv", "sample_id,a,b\ns1,3,0\n")
    assert load_otu_table(f).counts.tolist() == [[3, 0]]


def test_negative_count_names_cell(tmp_path):
    f = _write(tmp_path / "t.tsv", "sample_id\ta\tb\ns1\t3\t-1\n")
    with pytest.raises(OtuFormatError, match=r"row 2.*column 3|s1.*b"):
        load_otu_table(f)


def test_malformed_cell_has_coordinates(tmp_path):
    f = _write(tmp_path / "t.tsv", "sample_id\ta\tb\ns1\t3\t1\ns2\tx7\t1\n")
    with pytest.raises(OtuFormatError, match="row 3"):
        load_otu_table(f)


def test_duplicate_sample_rejected(tmp_path):
    f = _write(tmp_path / "t.tsv", "sample_id\ta\ns1\t3\ns1\t4\n")
    with pytest.raises(OtuFormatError, match="duplicate"):
        load_otu_table(f)


def test_fixture_shape_and_checksum(data_dir):
    otu = load_otu_table(data_dir / "amgut_mini.tsv")
    assert (otu.n, otu.p) == (10, 12)
    sums = dict(line.split()[::-1] for line in (data_dir / "SHA256SUMS").read_text().splitlines())
    for name, digest in sums.items():
        assert hashlib.sha256((data_dir / name).read_bytes()).hexdigest() == digest, name


def test_round_trip(tmp_path, data_dir):
    otu = load_otu_table(data_dir / "amgut_mini.tsv")
    write_otu_table(otu, tmp_path / "copy.tsv")
    assert load_otu_table(tmp_path / "copy.tsv") == otu
    covs = load_metadata(data_dir / "amgut_mini_metadata.csv")
    write_metadata(covs, tmp_path / "meta.csv")
    assert load_metadata(tmp_path / "meta.csv") == covs


def test_matrix_round_trip(tmp_path):
    m = np.array([[1.0, 0.123456789012], [0.123456789012, 1.0]])
    write_matrix(tmp_path / "m.tsv", m, ["a", "b"])
    back, names = read_matrix(tmp_path / "m.tsv")
    assert names == ["a", "b"]
    np.testing.assert_allclose(back, m, rtol=1e-9)


def _frame(ids, **cols):
    cats = frozenset(k for k, v in cols.items() if any(isinstance(x, str) for x in v))
    return CovariateFrame(ids, cols, cats)


def _otu(ids, p=4):
    return OtuTable(ids, [f"t{j}" for j in range(p)], np.arange(len(ids) * p).reshape(len(ids), p))


def test_align_intersection_and_report():
    ids = ["a", "b", "c", "e", "f", "g", "h"]
    otu = _otu(ids)
    covs = _frame(
        ["b", "c", "d", "e", "f", "g", "h"],
        grp=["x", "x", "y", "x", "y", "y", "y"],
    )
    ds = align(otu, covs, "grp")
    assert set(ds.otu.sample_ids) == {"b", "c", "e", "f", "g", "h"}
    dropped = {e.sample_id: e.reason for e in ds.report}
    assert dropped == {"a": "not_in_metadata", "d": "not_in_otu_table"}
    assert "DROPPED a not_in_metadata" in format_exclusions(ds.report)


def test_align_single_group():
    ids = [f"s{i}" for i in range(6)]
    with pytest.raises(AlignmentError, match="single group"):
        align(_otu(ids), _frame(ids, grp=["x"] * 6), "grp")


def test_align_missing_covariate_drops_sample():
    # six samples cannot keep three per group after a drop, so relax the minimum
    ids = [f"s{i}" for i in range(6)]
    covs = _frame(ids, grp=["x", "x", "x", "y", "y", "y"], age=[30, 40, np.nan, 50, 60, 70])
    ds = align(_otu(ids), covs, "grp", ["age"], min_group_size=2)
    assert ds.otu.n == 5
    assert [str(e) for e in ds.report] == ["DROPPED s2 missing:age"]


def test_align_min_group_size():
    ids = [f"s{i}" for i in range(6)]
    covs = _frame(ids, grp=["x", "x", "y", "y", "y", "y"])
    with pytest.raises(AlignmentError):
        align(_otu(ids), covs, "grp")


def test_align_orders_reference_first_and_is_idempotent():
    ids = [f"s{i}" for i in range(8)]
    covs = _frame(ids, grp=["y", "x", "y", "x", "y", "x", "y", "x"], age=np.arange(8.0))
    ds = align(_otu(ids), covs, "grp", ["age"])
    assert ds.group_levels == ("x", "y")
    assert list(ds.groups) == ["x"] * 4 + ["y"] * 4
    assert list(ds.otu.sample_ids) == list(ds.covariates.sample_ids)
    again = align(ds.otu, ds.covariates, "grp", ["age"])
    assert again.otu == ds.otu and again.covariates == ds.covariates
    ds2 = align(_otu(ids), covs, "grp", ["age"], reference_group="y")
    assert ds2.group_levels == ("y", "x")


def test_single_level_categorical_dropped_with_warning():
    ids = [f"s{i}" for i in range(6)]
    covs = _frame(ids, grp=["x", "x", "x", "y", "y", "y"], sex=["F"] * 6)
    with pytest.warns(UserWarning, match="sex"):
        ds = align(_otu(ids), covs, "grp", ["sex"])
    assert "sex" not in ds.covariates.columns


def test_prevalence_one_of_twenty_dropped():
    counts = np.zeros((20, 2), dtype=int)
    counts[0, 0] = 5
    counts[:, 1] = 1
    otu = OtuTable([f"s{i}" for i in range(20)], ["rare", "common"], counts)
    assert filter_rare_taxa(otu, 0.10).taxon_names == ("common",)


def test_prevalence_zero_is_identity():
    otu = _otu([f"s{i}" for i in range(5)])
    assert filter_rare_taxa(otu, 0.0) == otu


def test_prevalence_direct_count_oracle():
    n = 100
    prev = [0.05, 0.5, 0.9, 0.09, 0.11]
    counts = np.zeros((n, 5), dtype=int)
    for j, f in enumerate(prev):
        counts[: int(round(f * n)), j] = 3
    otu = OtuTable([f"s{i}" for i in range(n)], [f"t{j}" for j in range(5)], counts)
    out = filter_rare_taxa(otu, 0.10)
    expected = [f"t{j}" for j in range(5) if np.count_nonzero(counts[:, j]) >= 0.10 * n]
    assert list(out.taxon_names) == expected and len(expected) == 3
    for t in out.taxon_names:
        j = otu.taxon_names.index(t)
        np.testing.assert_array_equal(out.counts[:, out.taxon_names.index(t)], counts[:, j])


def test_all_filtered_raises():
    otu = OtuTable(["a", "b"], ["t"], np.zeros((2, 1), dtype=int))
    with pytest.raises(ValueError):
        filter_rare_taxa(otu, 0.5)


def test_metadata_missing_tokens_and_forced_categorical(tmp_path):
    f = _write(tmp_path / "m.csv", "sample_id,grp,age,code\na,x,30,1\nb,y,NA,0\nc,x,,1\n")
    covs = load_metadata(f, categorical=["code"])
    assert np.isnan(covs.columns["age"][1]) and np.isnan(covs.columns["age"][2])
    assert "code" in covs.categorical and list(covs.columns["code"]) == ["1", "0", "1"]
