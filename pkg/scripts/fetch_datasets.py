#!/usr/bin/env python3
"""Download the public binary-classification benchmark datasets.

Datasets are not vendored in this repository.  This script documents where
they come from and converts them to the CSV layout ``load_dataset`` expects
(features first, label last, labels in {-1, +1}).

Sources:
  * Gunnar Raetsch's benchmark collection (banana, breast_cancer, diabetis,
    flare_solar, german, heart, image, ringnorm, splice, thyroid, titanic,
    twonorm, waveform), mirrored at
    https://github.com/tdiethe/gunnar_raetsch_benchmark_datasets
    (single .mat file with 100 predefined splits; only the raw features and
    labels are used here, splitting is done by the runner's seeded shuffle).
  * LIBSVM binary datasets at
    https://www.csie.ntu.edu.tw/~cjlin/libsvmtools/datasets/binary.html
    can be used directly with ``--format libsvm``.

Usage:
    python scripts/fetch_datasets.py --dest data/ [--name banana ...]
"""

import argparse
import os
import sys
import urllib.request

RAETSCH_MAT_URL = (
    "https://github.com/tdiethe/gunnar_raetsch_benchmark_datasets/raw/master/"
    "benchmarks.mat"
)
NAMES = ["banana", "breast_cancer", "diabetis", "flare_solar", "german",
         "heart", "image", "ringnorm", "splice", "thyroid", "titanic",
         "twonorm", "waveform"]


def fetch_raetsch(dest, names):
    import numpy as np
    from scipy.io import loadmat

    mat_path = os.path.join(dest, "benchmarks.mat")
    if not os.path.exists(mat_path):
        print(f"downloading {RAETSCH_MAT_URL}")
        urllib.request.urlretrieve(RAETSCH_MAT_URL, mat_path)
    blob = loadmat(mat_path)
    for name in names:
        if name not in blob:
            print(f"  {name}: not found in benchmarks.mat, skipped")
            continue
        entry = blob[name][0, 0]
        features, labels = entry["x"], entry["t"].ravel()
        out = os.path.join(dest, f"{name}.csv")
        with open(out, "w") as fh:
            for row, lab in zip(features, labels):
                fh.write(",".join(f"{v:.12g}" for v in row))
                fh.write(f",{int(lab)}\n")
        print(f"  {name}: {features.shape[0]} rows x {features.shape[1]} "
              f"features -> {out}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", default="data", help="output directory")
    parser.add_argument("--name", action="append", default=None,
                        help="dataset name (repeatable; default: all)")
    args = parser.parse_args()
    os.makedirs(args.dest, exist_ok=True)
    fetch_raetsch(args.dest, args.name or NAMES)


if __name__ == "__main__":
    sys.exit(main())
