#!/usr/bin/env python3
"""Build the bundled 10k-digit MNIST subset as IDX files.

Source: the `mnist` npm package (10000 MNIST digits stored as JSON floats
rounded to three decimals). Usage:

    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/make_mnist_subset.py package/src/digits data/mnist-subset.tar.gz

The digits are shuffled with a fixed seed and split 8000 / 2000 into the
standard train-* / t10k-* file names.
"""
import io
import json
import random
import struct
import sys
import tarfile


def idx_images(images):
    out = struct.pack(">IIII", 0x00000803, len(images), 28, 28)
    return out + b"".join(bytes(img) for img in images)


def idx_labels(labels):
    return struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)


def main(digits_dir, out_path):
    samples = []
    for digit in range(10):
        with open(f"{digits_dir}/{digit}.json") as fh:
            flat = json.load(fh)["data"]
        for i in range(0, len(flat), 784):
            pixels = [int(round(v * 255)) for v in flat[i:i + 784]]
            samples.append((pixels, digit))
    random.Random(20210301).shuffle(samples)
    train, test = samples[:8000], samples[8000:]
    files = {
        "train-images-idx3-ubyte": idx_images([s[0] for s in train]),
        "train-labels-idx1-ubyte": idx_labels([s[1] for s in train]),
        "t10k-images-idx3-ubyte": idx_images([s[0] for s in test]),
        "t10k-labels-idx1-ubyte": idx_labels([s[1] for s in test]),
    }
    with tarfile.open(out_path, "w:gz") as tar:
        for name, payload in files.items():
            info = tarfile.TarInfo(f"mnist-subset/{name}")
            info.size = len(payload)
            info.mtime = 0
            tar.addfile(info, io.BytesIO(payload))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
