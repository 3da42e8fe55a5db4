"""Rebuild the small fixtures in this directory (deterministic)."""

from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent


def _counts(rng, n, p, depth=2000):
    logits = rng.normal(0.0, 1.0, size=p) + rng.normal(0.0, 0.7, size=(n, p))
    prob = np.exp(logits)
    prob /= prob.sum(axis=1, keepdims=True)
    counts = np.vstack([rng.multinomial(depth, row) for row in prob])
    counts[rng.random(counts.shape) < 0.15] = 0
    return counts


def _write_otu(path, ids, names, counts):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(["sample_id", *names]) + "\n")
        for sid, row in zip(ids, counts):
            fh.write("\t".join([sid, *map(str, row)]) + "\n")


def amgut_mini(rng):
    ids = [f"AG{i:02d}" for i in range(1, 11)]
    names = [f"OTU{k:02d}" for k in range(1, 13)]
    _write_otu(HERE / "amgut_mini.tsv", ids, names, _counts(rng, 10, 12))
    groups = ["lean", "obese"] * 5
    ages = [34, 51, 46, 29, 62, 38, 57, 44, 41, 49]
    sexes = ["F", "M", "M", "F", "F", "M", "", "F", "M", "F"]
    with open(HERE / "amgut_mini_metadata.csv", "w", encoding="utf-8") as fh:
        fh.write("sample_id,bmi_group,age,sex\n")
        for sid, g, a, s in zip(ids, groups, ages, sexes):
            fh.write(f"{sid},{g},{a},{s}\n")


def dietswap_mini(rng):
    ids = [f"DS{i:02d}" for i in range(1, 13)]
    names = [f"genus_{k}" for k in range(1, 9)]
    before = _counts(rng, 12, 8)
    after = np.maximum(before + rng.integers(-40, 40, size=before.shape), 0)
    _write_otu(HERE / "dietswap_before.tsv", ids, names, before)
    _write_otu(HERE / "dietswap_after.tsv", ids, names, after)
    with open(HERE / "dietswap_metadata.csv", "w", encoding="utf-8") as fh:
        fh.write("sample_id,nationality,age\n")
        for i, sid in enumerate(ids):
            fh.write(f"{sid},{'AAM' if i % 2 else 'AFR'},{50 + (7 * i) % 13}\n")


if __name__ == "__main__":
    rng = np.random.default_rng(20240501)
    amgut_mini(rng)
    dietswap_mini(rng)
