#!/usr/bin/env python3
"""Write the scikit-learn 8x8 digits set as IDX files with a fixed train/test split."""
import argparse
import pathlib
import struct

import numpy as np
from sklearn.datasets import load_digits


def write_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="data/digits")
    parser.add_argument("--test-fraction", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=2021)
    args = parser.parse_args()

    digits = load_digits()
    # 0..16 gray levels -> 0..255
    images = np.rint(digits.images * (255.0 / 16.0)).astype(np.uint8)
    labels = digits.target.astype(np.uint8)

    order = np.random.RandomState(args.seed).permutation(len(labels))
    n_test = int(round(len(labels) * args.test_fraction))
    test, train = order[:n_test], order[n_test:]

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_images(out / "train-images.idx3-ubyte", images[train])
    write_labels(out / "train-labels.idx1-ubyte", labels[train])
    write_images(out / "test-images.idx3-ubyte", images[test])
    write_labels(out / "test-labels.idx1-ubyte", labels[test])
    print(f"train={len(train)} test={len(test)} -> {out}")


if __name__ == "__main__":
    main()
