#!/usr/bin/env python3
"""Convert the `fashion-mnist` npm package into IDX files.

The npm package stores 7000 images per class as JSON pixel arrays. The first
6000 of each class become the training split and the remaining 1000 the test
split, interleaved by class so the files look like the upstream layout.

usage: npm pack fashion-mnist && tar xzf fashion-mnist-*.tgz
       python3 scripts/fmnist_from_npm.py package/src/clothes OUT_DIR
"""
import json
import os
import struct
import sys

TRAIN_PER_CLASS = 6000
TEST_PER_CLASS = 1000


def write_idx(out_dir, prefix, images, labels):
    with open(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    src, out_dir = sys.argv[1], sys.argv[2]
    os.makedirs(out_dir, exist_ok=True)
    per_class = []
    for c in range(10):
        with open(os.path.join(src, f"{c}.json")) as f:
            rows = [r for r in json.load(f)["data"] if len(r) == 784]
        if len(rows) < TRAIN_PER_CLASS + TEST_PER_CLASS:
            sys.exit(f"class {c}: only {len(rows)} images")
        per_class.append(rows)

    def interleave(lo, hi):
        images, labels = [], []
        for i in range(lo, hi):
            for c in range(10):
                images.append(per_class[c][i])
                labels.append(c)
        return images, labels

    write_idx(out_dir, "train", *interleave(0, TRAIN_PER_CLASS))
    write_idx(out_dir, "t10k", *interleave(TRAIN_PER_CLASS, TRAIN_PER_CLASS + TEST_PER_CLASS))


if __name__ == "__main__":
    main()
