"""Convert a CSV of MNIST digits (784 pixel columns then the label) to IDX files.

The rows are shuffled with a fixed seed so that any tail slice used for
validation is class-balanced in expectation.

    python3 scripts/make_mnist_subset.py mnist_5k.csv data/mnist_subset
"""

import argparse
import os

import numpy as np

from holoprop.data import write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    table = np.loadtxt(args.csv, delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :784], table[:, 784]
    if pixels.min() < 0 or pixels.max() > 255 or labels.min() < 0 or labels.max() > 9:
        raise SystemExit("unexpected value range in CSV")
    order = np.random.default_rng(args.seed).permutation(len(labels))
    os.makedirs(args.out_dir, exist_ok=True)
    write_idx(os.path.join(args.out_dir, "train-images-idx3-ubyte.gz"), pixels[order].reshape(-1, 28, 28))
    write_idx(os.path.join(args.out_dir, "train-labels-idx1-ubyte.gz"), labels[order])
    print(f"wrote {len(labels)} examples to {args.out_dir}")


if __name__ == "__main__":
    main()
