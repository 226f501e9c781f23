#!/usr/bin/env python3
"""Build a class-balanced MNIST subset in IDX format from the digit JSON files
shipped with the `mnist` npm package (https://www.npmjs.com/package/mnist).

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/scripts/make_mnist_subset.py package/src/digits data/mnist

Writes train-{images-idx3,labels-idx1}-ubyte (400 per class) and
t10k-{images-idx3,labels-idx1}-ubyte (100 per class). Examples are interleaved
with a fixed shuffle so any prefix of either split stays roughly balanced.
"""
import json
import random
import struct
import sys
from pathlib import Path

TRAIN_PER_CLASS = 400
TEST_PER_CLASS = 100
SIDE = 28


def write_idx(out_dir, prefix, samples):
    images = bytearray(struct.pack(">IIII", 0x00000803, len(samples), SIDE, SIDE))
    labels = bytearray(struct.pack(">II", 0x00000801, len(samples)))
    for pixels, label in samples:
        images.extend(pixels)
        labels.append(label)
    (out_dir / f"{prefix}-images-idx3-ubyte").write_bytes(bytes(images))
    (out_dir / f"{prefix}-labels-idx1-ubyte").write_bytes(bytes(labels))


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    digits_dir, out_dir = Path(sys.argv[1]), Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        rows = json.loads((digits_dir / f"{digit}.json").read_text())["data"]
        size = SIDE * SIDE
        count = len(rows) // size
        needed = TRAIN_PER_CLASS + TEST_PER_CLASS
        if count < needed:
            sys.exit(f"digit {digit}: only {count} images, need {needed}")
        for i in range(needed):
            flat = rows[i * size:(i + 1) * size]
            pixels = bytes(max(0, min(255, round(v * 255))) for v in flat)
            (train if i < TRAIN_PER_CLASS else test).append((pixels, digit))
    rng = random.Random(20190124)
    rng.shuffle(train)
    rng.shuffle(test)
    write_idx(out_dir, "train", train)
    write_idx(out_dir, "t10k", test)
    print(f"wrote {len(train)} train / {len(test)} test examples to {out_dir}")


if __name__ == "__main__":
    main()
