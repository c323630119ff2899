#!/usr/bin/env python3
"""Convert a CSV of MNIST digits (784 pixel columns + label column) to IDX files.

The 5000-sample subset bundled with mlxtend (mlxtend/data/data/mnist_5k.csv.gz)
is the expected input:

    pip download mlxtend --no-deps -d /tmp/mlx
    python3 -c "import zipfile,glob; zipfile.ZipFile(glob.glob('/tmp/mlx/*.whl')[0]).extract('mlxtend/data/data/mnist_5k.csv.gz', '/tmp/mlx')"
    tools/make_mnist_idx.py /tmp/mlx/mlxtend/data/data/mnist_5k.csv.gz data/mnist5k
"""
import argparse
import gzip
import pathlib
import struct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("out_dir")
    args = ap.parse_args()

    opener = gzip.open if args.csv.endswith(".gz") else open
    images, labels = bytearray(), bytearray()
    count = 0
    with opener(args.csv, "rt") as f:
        for line in f:
            fields = line.strip().split(",")
            if len(fields) != 785:
                continue
            images.extend(int(float(v)) for v in fields[:784])
            labels.append(int(float(fields[784])))
            count += 1

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train-images-idx3-ubyte").write_bytes(
        struct.pack(">IIII", 0x00000803, count, 28, 28) + bytes(images))
    (out / "train-labels-idx1-ubyte").write_bytes(
        struct.pack(">II", 0x00000801, count) + bytes(labels))
    print(f"wrote {count} samples to {out}")


if __name__ == "__main__":
    main()
