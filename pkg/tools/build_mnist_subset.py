"""Build the desk-scale MNIST fixture used by the end-to-end acceptance run.

The source is the ``mnist`` npm package (``npm pack mnist``), which ships the
10,000 MNIST test digits as per-class JSON arrays of pixel/255 values rounded
to three decimals; rounding ``value * 255`` recovers the original bytes.
The first ``--per-class`` digits of every class are written as gzip IDX
files.

    npm pack mnist && tar xzf mnist-*.tgz
    python tools/build_mnist_subset.py package data/mnist-desk
"""

import argparse
import json
from pathlib import Path

import numpy as np

from fedwba.data import write_idx


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("package_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--per-class", type=int, default=600)
    args = parser.parse_args()

    images, labels = [], []
    for digit in range(10):
        raw = json.loads((args.package_dir / "src" / "digits" / f"{digit}.json").read_text())
        pix = np.rint(np.asarray(raw["data"]) * 255).astype(np.uint8).reshape(-1, 28, 28)
        if len(pix) < args.per_class:
            raise SystemExit(f"digit {digit} has only {len(pix)} samples")
        images.append(pix[: args.per_class])
        labels.append(np.full(args.per_class, digit, dtype=np.uint8))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_idx(args.out_dir / "images-idx3-ubyte.gz", args.out_dir / "labels-idx1-ubyte.gz",
              np.concatenate(images), np.concatenate(labels), compress=True)
    print(f"wrote {10 * args.per_class} digits to {args.out_dir}")


if __name__ == "__main__":
    main()
