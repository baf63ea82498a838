"""Build a gzip IDX MNIST fixture from the digit JSON files of the `mnist` npm package.

The npm package ships 10,000 MNIST digits as per-class JSON arrays of
pixel intensities in [0, 1] rounded to three decimals. This script maps them
back to bytes, shuffles with a fixed seed and writes standard IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_fixture.py package/src/digits crates/core/tests/data
"""

import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main() -> None:
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for label in range(10):
        flat = json.loads((src / f"{label}.json").read_text())["data"]
        for start in range(0, len(flat), 784):
            pixels = bytes(min(255, max(0, round(v * 255))) for v in flat[start : start + 784])
            samples.append((pixels, label))
    random.Random(20250101).shuffle(samples)

    n = len(samples)
    images = struct.pack(">IIII", 0x00000803, n, 28, 28) + b"".join(p for p, _ in samples)
    labels = struct.pack(">II", 0x00000801, n) + bytes(l for _, l in samples)
    dst.mkdir(parents=True, exist_ok=True)
    # mtime=0 keeps the archives byte-stable across regenerations
    with open(dst / "mnist10k-images-idx3-ubyte.gz", "wb") as f:
        f.write(gzip.compress(images, mtime=0))
    with open(dst / "mnist10k-labels-idx1-ubyte.gz", "wb") as f:
        f.write(gzip.compress(labels, mtime=0))
    print(f"wrote {n} images to {dst}")


if __name__ == "__main__":
    main()
