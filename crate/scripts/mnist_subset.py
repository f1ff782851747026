#!/usr/bin/env python3
"""Convert the 10,000-digit MNIST sample bundled in the `mnist` npm package
(https://www.npmjs.com/package/mnist, src/digits/*.json) into gzipped IDX files.

Usage: mnist_subset.py <npm-package-dir> <out-dir>

Pixels are stored in the package as floats in [0, 1] rounded to three decimals;
they are mapped back to bytes with round(v * 255). Samples are shuffled with a
fixed seed and split 8000 train / 2000 test.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main():
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for digit in range(10):
        data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for k in range(len(data) // 784):
            px = bytes(min(255, max(0, round(v * 255))) for v in data[k * 784:(k + 1) * 784])
            samples.append((px, digit))
    random.Random(20190614).shuffle(samples)
    splits = {"train": samples[:8000], "t10k": samples[8000:]}
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in splits.items():
        write_idx(out / f"{name}-images-idx3-ubyte.gz", 0x803, [len(rows), 28, 28],
                  b"".join(px for px, _ in rows))
        write_idx(out / f"{name}-labels-idx1-ubyte.gz", 0x801, [len(rows)],
                  bytes(lbl for _, lbl in rows))
    print(f"{len(samples)} samples -> {out}")


if __name__ == "__main__":
    main()
