"""Rebuild data/mnist/ from the `mnist` npm package (cazala/mnist).

That package ships 10,010 genuine MNIST training digits (1,001 per
class) as JSON arrays of pixel values rounded to 3 decimals of v/255.
The rounding is lossless for 8-bit pixels (round(round(v/255, 3) * 255)
== v for all v in 0..255), so the original bytes are recovered exactly
and written back out in the standard big-endian IDX format, gzipped with
a zeroed timestamp for reproducible bytes.

Usage:
    npm pack mnist && tar xf mnist-*.tgz
    python3 scripts/build_mnist_fixture.py package/src/digits data/mnist
"""
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

SHUFFLE_SEED = 20240614
ROWS = COLS = 28


def load_digits(src: Path):
    images, labels = [], []
    for digit in range(10):
        values = json.loads((src / f"{digit}.json").read_text())["data"]
        arr = np.array(values, dtype=np.float64).reshape(-1, ROWS * COLS)
        pixels = np.rint(arr * 255.0).astype(np.uint8)
        if not np.allclose(pixels / 255.0, arr, atol=5e-4):
            raise SystemExit(f"digit {digit}: values are not 3-decimal v/255")
        images.append(pixels)
        labels.append(np.full(len(pixels), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_idx(path: Path, header: tuple[int, ...], payload: np.ndarray):
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(struct.pack(f">{len(header)}I", *header))
        fh.write(payload.tobytes())


def main():
    src = Path(sys.argv[1] if len(sys.argv) > 1 else "package/src/digits")
    out = Path(sys.argv[2] if len(sys.argv) > 2 else "data/mnist")
    out.mkdir(parents=True, exist_ok=True)
    images, labels = load_digits(src)
    order = np.random.Generator(np.random.Philox(SHUFFLE_SEED)).permutation(
        len(labels)
    )
    images, labels = images[order], labels[order]
    n = len(labels)
    write_idx(
        out / "train-images-idx3-ubyte.gz",
        (0x00000803, n, ROWS, COLS),
        images,
    )
    write_idx(out / "train-labels-idx1-ubyte.gz", (0x00000801, n), labels)
    print(f"wrote {n} digits to {out}")


if __name__ == "__main__":
    main()
