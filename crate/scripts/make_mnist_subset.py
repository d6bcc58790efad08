#!/usr/bin/env python3
"""Build data/mnist-subset (2000 train / 500 test IDX files) from the 5000-image
MNIST sample shipped inside the mlxtend wheel (mlxtend/data/data/mnist_5k.csv.gz).

The CSV holds 500 images per digit, sorted by label, one image per row:
784 pixel values then the label. Per digit the first 200 rows go to train and
the next 50 to test; both splits interleave the digits (0,1,...,9,0,1,...) so
any prefix is class-balanced.

usage: make_mnist_subset.py <mlxtend wheel or mnist_5k.csv.gz> [out_dir]
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
TRAIN_PER_CLASS, TEST_PER_CLASS = 200, 50


def read_rows(src: Path):
    raw = zipfile.ZipFile(src).read(MEMBER) if src.suffix == ".whl" else src.read_bytes()
    rows = []
    for line in gzip.decompress(raw).decode().splitlines():
        vals = [int(float(v)) for v in line.split(",")]
        rows.append((bytes(vals[:784]), vals[784]))
    return rows


def write_idx(out: Path, prefix: str, items):
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(items), 28, 28))
        for px, _ in items:
            f.write(px)
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 2049, len(items)))
        f.write(bytes(label for _, label in items))


def main():
    src = Path(sys.argv[1])
    out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path("data/mnist-subset")
    out.mkdir(parents=True, exist_ok=True)
    by_class = {d: [] for d in range(10)}
    for px, label in read_rows(src):
        by_class[label].append((px, label))
    train = [by_class[d][i] for i in range(TRAIN_PER_CLASS) for d in range(10)]
    test = [by_class[d][TRAIN_PER_CLASS + i] for i in range(TEST_PER_CLASS) for d in range(10)]
    write_idx(out, "train", train)
    write_idx(out, "t10k", test)
    print(f"wrote {len(train)} train / {len(test)} test images to {out}")


if __name__ == "__main__":
    main()
