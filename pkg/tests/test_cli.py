import csv
import hashlib
import json

import pytest

from sohpie.cli import main


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader((ln for ln in fh if not ln.startswith("#")), delimiter="\t"))


@pytest.fixture(scope="module")
def analyzed(tmp_path_factory):
    from pathlib import Path

    data = Path(__file__).resolve().parent.parent / "data"
    out = tmp_path_factory.mktemp("a")
    code = main([
        "analyze", "--otu", str(data / "amgut_mini.tsv"), "--metadata", str(data / "amgut_mini_metadata.csv"),
        "--group-col", "bmi_group", "--covariates", "age,sex", "--out", str(out), "--threads", "1",
    ])
    return code, out


def test_analyze_outputs(analyzed):
    code, out = analyzed
    assert code == 0
    rows = _rows(out / "results.tsv")
    assert len(rows) == 12
    assert list(rows[0])[:6] == ["taxon", "beta", "se", "t", "p_value", "q_value"]
    assert "coef:age" in rows[0] and "coef:sex[M]" in rows[0]
    pv = _rows(out / "pseudovalues.tsv")
    assert len(pv) == 9 and list(pv[0])[:2] == ["sample_id", "group"]
    assert (out / "exclusions.txt").read_text() == "DROPPED AG07 missing:sex\n"
    for name in ("assoc_group1.tsv", "assoc_group2.tsv"):
        assert len((out / name).read_text().splitlines()) == 13


def test_manifest(analyzed):
    _, out = analyzed
    m = json.loads((out / "manifest.json").read_text())
    assert m["layout_version"] == 1 and m["version"] and m["threads"] == 1
    assert {"pseudovalues", "regression", "fdr"} <= set(m["timings_seconds"])
    for name, digest in m["outputs"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    for path, digest in m["inputs"].items():
        assert hashlib.sha256(open(path, "rb").read()).hexdigest() == digest
    assert m["config"]["analysis"]["coverage"] == 0.75
    assert m["config"]["assoc_files"] == {"assoc_group1.tsv": "lean", "assoc_group2.tsv": "obese"}


def test_univariable(data_dir, tmp_path):
    code = main([
        "analyze", "--otu", str(data_dir / "amgut_mini.tsv"), "--metadata", str(data_dir / "amgut_mini_metadata.csv"),
        "--group-col", "bmi_group", "--out", str(tmp_path), "--fdr", "bh",
    ])
    assert code == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["config"]["design_columns"] == ["intercept", "group"]
    assert (tmp_path / "exclusions.txt").read_text() == ""


def test_paired(data_dir, tmp_path):
    code = main([
        "analyze", "--paired", str(data_dir / "dietswap_before.tsv"), str(data_dir / "dietswap_after.tsv"),
        "--metadata", str(data_dir / "dietswap_metadata.csv"), "--group-col", "nationality",
        "--covariates", "age", "--prevalence", "0.1", "--out", str(tmp_path),
    ])
    assert code == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["config"]["mode"] == "paired" and len(m["inputs"]) == 3
    assert len(_rows(tmp_path / "results.tsv")) == len(m["config"]["retained_taxa"])


def test_stage_error(data_dir, tmp_path, capsys):
    code = main([
        "analyze", "--otu", str(data_dir / "amgut_mini.tsv"), "--metadata", str(data_dir / "amgut_mini_metadata.csv"),
        "--group-col", "nope", "--out", str(tmp_path / "o"),
    ])
    assert code != 0
    assert "stage align" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_simulate_byte_identical(tmp_path):
    args = ["simulate", "--p", "20", "--n", "50", "--delta1", "0.05", "--delta2", "0.2", "--scenario", "multivariable", "--seed", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["manifest.json", "metadata.csv", "otu_group1.tsv", "otu_group2.tsv", "truth.json"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_bounds_and_config(tmp_path):
    assert main(["simulate", "--delta1", "0.9", "--p", "5", "--out", str(tmp_path / "s")]) == 0
    truth = json.loads((tmp_path / "s" / "truth.json").read_text())
    assert len(truth["spikes1"]) == 4
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"p": 8, "n": 12, "zero_inflation": 0.1, "delta1": 0.25, "delta2": 0.25}))
    assert main(["simulate", "--config", str(cfg), "--n", "14", "--out", str(tmp_path / "c")]) == 0
    truth = json.loads((tmp_path / "c" / "truth.json").read_text())
    assert truth["config"]["n"] == 14 and truth["config"]["p"] == 8 and truth["config"]["zero_inflation"] == 0.1


def _bench(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["benchmark", "--p", "12", "--n", "20,30", "--delta", "0.2", "--replicates", "10", "--out", str(out), *extra])
    return code, out


def test_benchmark_shape_and_threads(tmp_path):
    code, one = _bench(tmp_path, "one", "--threads", "1")
    assert code == 0
    code, two = _bench(tmp_path, "two", "--threads", "8")
    assert code == 0
    assert (one / "summary.tsv").read_text() == (two / "summary.tsv").read_text()
    summary = _rows(one / "summary.tsv")
    assert [(r["n"], r["delta1"], r["delta2"]) for r in summary] == [("20", "0.2", "0.2"), ("30", "0.2", "0.2")]
    text = (one / "summary.tsv").read_text()
    assert "generator" in text.splitlines()[0] and "--undefined skip" in text
    reps = _rows(one / "replicates.tsv")
    assert len(reps) == 20
    assert {"replicate", "precision", "recall", "f1", "accuracy", "n_undefined"} <= set(reps[0])


def test_benchmark_import_external(tmp_path):
    ext = tmp_path / "other.tsv"
    ext.write_text("replicate\ttaxon\tq_value\tn\n0\ttaxon_1\t0.01\t20\n1\ttaxon_2\t0.5\t20\n2\ttaxon_3\t0.01\t20\n")
    code, out = _bench(tmp_path, "ext", "--import-external", str(ext))
    assert code == 0
    summary = _rows(out / "summary.tsv")
    assert "external:recall_mean" in summary[0]
    assert summary[0]["external:accuracy_mean"] != "NA" and summary[1]["external:accuracy_mean"] == "NA"
    m = json.loads((out / "manifest.json").read_text())
    assert str(ext) in m["inputs"]

    from sohpie.metrics import score
    import numpy as np

    reps = [r for r in _rows(out / "replicates.tsv") if r["n"] == "20"]
    from sohpie.simulation import SimulationConfig, generate_synthetic_dataset

    for r in reps:
        given = {0: (0, 0.01), 1: (1, 0.5), 2: (2, 0.01)}.get(int(r["replicate"]))
        if given is None:
            assert r["external:accuracy"] == "NA"
            continue
        truth = generate_synthetic_dataset(
            SimulationConfig(p=12, n=20, delta1=0.2, delta2=0.2, seed=int(r["seed"]))
        ).truth
        q = np.ones(12)
        q[given[0]] = given[1]
        assert float(r["external:accuracy"]) == pytest.approx(score(truth.eta, q).accuracy)
