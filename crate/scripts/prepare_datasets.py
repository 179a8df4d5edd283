#!/usr/bin/env python3
"""Convert the UCI benchmark files bundled in public PyPI wheels to LIBSVM format.

Sources:
  keel-ds  (pip download --no-deps keel-ds): sonar
  Orange3  (pip download --no-deps Orange3): ionosphere (full precision)

The remaining benchmark datasets (a1a, a3a, a4a, monks1, thyroid) have to be
placed in the data directory by hand; see data/datasets.json for file names.

Usage: prepare_datasets.py WHEEL_DIR OUT_DIR
"""
import glob
import os
import sys
import zipfile


def keel_rows(text):
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("@"):
            continue
        parts = [p.strip() for p in line.split(",")]
        rows.append((parts[:-1], parts[-1]))
    return rows


def write_libsvm(path, rows):
    with open(path, "w") as out:
        for feats, label in rows:
            items = [f"{i + 1}:{v}" for i, v in enumerate(feats) if float(v) != 0.0]
            out.write(" ".join([label] + items) + "\n")


def main():
    wheel_dir, out_dir = sys.argv[1], sys.argv[2]
    keel = zipfile.ZipFile(glob.glob(os.path.join(wheel_dir, "keel_ds-*.whl"))[0])
    orange = zipfile.ZipFile(glob.glob(os.path.join(wheel_dir, "orange3-*.whl"))[0])

    sonar = keel_rows(keel.read("keel_ds/data/balanced/raw/sonar.dat").decode())
    write_libsvm(
        os.path.join(out_dir, "sonar.libsvm"),
        [(f, "+1" if lab == "R" else "-1") for f, lab in sonar],
    )

    iono = []
    lines = orange.read("Orange/tests/datasets/ionosphere.tab").decode().splitlines()
    for line in lines[3:]:
        if not line.strip():
            continue
        parts = line.split("\t")
        iono.append((parts[:-1], "+1" if parts[-1].strip() == "g" else "-1"))
    write_libsvm(os.path.join(out_dir, "ionosphere.libsvm"), iono)


if __name__ == "__main__":
    main()
