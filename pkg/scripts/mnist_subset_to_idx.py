"""Write the 5,000-digit MNIST sample bundled with mlxtend as IDX files.

The full MNIST files are not redistributable from here; this gives a small
real-digit stand-in laid out like an MNIST directory (train/t10k pairs).

    python scripts/mnist_subset_to_idx.py --out data/mnist5k --test 1000
"""

import argparse
from pathlib import Path

import numpy as np

from fisher_plane.data import write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--test", type=int, default=1000, help="examples held out as t10k files")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    from mlxtend.data import mnist_data

    x, y = mnist_data()
    order = np.random.default_rng(args.seed).permutation(len(y))
    x, y = x[order].astype(np.uint8), y[order]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_train = len(y) - args.test
    write_idx(out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte", x[:n_train], y[:n_train])
    write_idx(out / "t10k-images-idx3-ubyte", out / "t10k-labels-idx1-ubyte", x[n_train:], y[n_train:])
    print(f"wrote {n_train} train / {args.test} test digits to {out}")


if __name__ == "__main__":
    main()
