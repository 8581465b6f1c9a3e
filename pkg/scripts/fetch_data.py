#!/usr/bin/env python3
"""Fetch MNIST and Fashion-MNIST into IDX files under a data root.

The library itself never downloads. This helper pulls the datasets from
npm registry tarballs (reachable from package mirrors) and writes the four
standard IDX files per dataset:

    <root>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte
    <root>/fashion-mnist/...

MNIST ships as IDX already (npm package ``mnist-data``). The npm
``fashion-mnist`` package stores 7000 images per class as JSON; the first
1000 images of each class are taken as the test file and the remaining
6000 as the training file.

Usage: python scripts/fetch_data.py [ROOT]   (default: $TTN_DATA_ROOT or ./data)
"""
import io
import json
import os
import sys
import tarfile
import time
import urllib.request
from pathlib import Path

import numpy as np

from lowrank_ttn.data import IDX_FILES, write_idx

REGISTRY = os.environ.get("NPM_REGISTRY", "https://registry.npmjs.org")
MNIST_TGZ = f"{REGISTRY}/mnist-data/-/mnist-data-1.2.6.tgz"
FASHION_TGZ = f"{REGISTRY}/fashion-mnist/-/fashion-mnist-1.1.0.tgz"


def fetch(url, attempts=8):
    for k in range(attempts):
        try:
            with urllib.request.urlopen(url, timeout=600) as resp:
                return resp.read()
        except OSError as exc:
            print(f"  {url}: {exc}; retrying", file=sys.stderr)
            time.sleep(min(60, 5 * 2 ** k))
    raise SystemExit(f"could not download {url}")


def mnist(root: Path):
    out = root / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    with tarfile.open(fileobj=io.BytesIO(fetch(MNIST_TGZ))) as tar:
        for stem in IDX_FILES.values():
            (out / stem).write_bytes(tar.extractfile(f"package/data/{stem}").read())


def fashion(root: Path):
    out = root / "fashion-mnist"
    out.mkdir(parents=True, exist_ok=True)
    train_x, train_y, test_x, test_y = [], [], [], []
    with tarfile.open(fileobj=io.BytesIO(fetch(FASHION_TGZ))) as tar:
        for label in range(10):
            rows = json.load(tar.extractfile(f"package/src/clothes/{label}.json"))["data"]
            imgs = np.array([r for r in rows if len(r) == 784], dtype=np.uint8).reshape(-1, 28, 28)
            if len(imgs) != 7000:
                raise SystemExit(f"class {label}: expected 7000 images, found {len(imgs)}")
            test_x.append(imgs[:1000])
            train_x.append(imgs[1000:])
            test_y.append(np.full(1000, label, np.uint8))
            train_y.append(np.full(6000, label, np.uint8))
    for split, xs, ys in (("train", train_x, train_y), ("test", test_x, test_y)):
        x, y = np.concatenate(xs), np.concatenate(ys)
        # interleave classes so the files are not sorted by label
        order = np.argsort(np.tile(np.arange(len(x) // 10), 10), kind="stable")
        (out / IDX_FILES[f"{split}_images"]).write_bytes(write_idx(x[order]))
        (out / IDX_FILES[f"{split}_labels"]).write_bytes(write_idx(y[order]))


if __name__ == "__main__":
    root = Path(sys.argv[1] if len(sys.argv) > 1 else os.environ.get("TTN_DATA_ROOT", "data"))
    for name, job in (("mnist", mnist), ("fashion-mnist", fashion)):
        if all((root / name / s).exists() for s in IDX_FILES.values()):
            print(f"{name}: already present")
            continue
        print(f"{name}: downloading")
        job(root)
    print(f"datasets ready under {root}")
