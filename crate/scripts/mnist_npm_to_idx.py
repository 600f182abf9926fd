#!/usr/bin/env python3
"""Convert the per-digit JSON files of the npm `mnist` package to IDX.

Fetch the package out of band, e.g. `npm pack mnist && tar xzf mnist-*.tgz`,
then point --src at `package/src/digits`. The digits are interleaved with a
seeded shuffle so that any prefix is class-balanced in expectation.
"""

import argparse
import json
import struct
from pathlib import Path

import numpy as np


def write_images(path: Path, images: np.ndarray) -> None:
    n = images.shape[0]
    with path.open("wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path: Path, labels: np.ndarray) -> None:
    with path.open("wb") as f:
        f.write(struct.pack(">II", 0x801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--src", type=Path, required=True, help="directory holding 0.json .. 9.json")
    ap.add_argument("--out", type=Path, default=Path("data"))
    ap.add_argument("--prefix", default="mnist10k")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    images, labels = [], []
    for digit in range(10):
        data = np.asarray(json.loads((args.src / f"{digit}.json").read_text())["data"], dtype=np.float64)
        if data.size % 784:
            raise SystemExit(f"{digit}.json: {data.size} values is not a multiple of 784")
        block = data.reshape(-1, 784)
        images.append(np.rint(np.clip(block, 0.0, 1.0) * 255.0))
        labels.append(np.full(block.shape[0], digit))
    x = np.concatenate(images)
    y = np.concatenate(labels)
    order = np.random.default_rng(args.seed).permutation(x.shape[0])
    args.out.mkdir(parents=True, exist_ok=True)
    write_images(args.out / f"{args.prefix}-images.idx", x[order])
    write_labels(args.out / f"{args.prefix}-labels.idx", y[order])
    print(f"wrote {x.shape[0]} images to {args.out}")


if __name__ == "__main__":
    main()
