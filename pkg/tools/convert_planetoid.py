#!/usr/bin/env python3
"""Convert the public Planetoid pickle files (ind.<name>.*) into the plain-text
dataset directory format used by this package.

The Planetoid distribution (x/y/tx/ty/allx/ally/graph/test.index) is available
from the original `planetoid` repository. This script reproduces the standard
fixed split: the first |y| nodes are training nodes, the following 500 are
validation nodes, and the nodes listed in test.index are test nodes.

Usage:
    python tools/convert_planetoid.py <planetoid-data-dir> <name> <out-dir>

e.g.
    python tools/convert_planetoid.py planetoid/data cora data/cora

Requires scipy (the pickles contain scipy.sparse matrices).
"""

import os
import pickle
import sys

import numpy as np


def _load(path, name, part):
    with open(os.path.join(path, f"ind.{name}.{part}"), "rb") as f:
        return pickle.load(f, encoding="latin1")


def convert(src_dir, name, out_dir):
    x, y, tx, ty, allx, ally, graph = (
        _load(src_dir, name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph")
    )
    test_idx = np.loadtxt(
        os.path.join(src_dir, f"ind.{name}.test.index"), dtype=int
    )
    test_sorted = np.sort(test_idx)

    features = np.vstack([np.asarray(allx.todense()), np.asarray(tx.todense())])
    labels_onehot = np.vstack([ally, ty]).astype(float)
    # test rows arrive in file order; put them back at their true indices
    features[test_idx, :] = features[test_sorted, :]
    labels_onehot[test_idx, :] = labels_onehot[test_sorted, :]

    n, d = features.shape
    c = labels_onehot.shape[1]
    labels = np.argmax(labels_onehot, axis=1)

    n_train = y.shape[0]
    split = np.full(n, "none", dtype=object)
    split[:n_train] = "train"
    split[n_train:n_train + 500] = "val"
    split[test_sorted] = "test"

    edges = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u == v or not (0 <= v < n):
                continue
            edges.add((min(u, v), max(u, v)))

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "meta"), "w") as f:
        f.write(f"{n} {d} {c}\n")
    with open(os.path.join(out_dir, "features.csv"), "w") as f:
        for row in features:
            f.write(",".join("%g" % v for v in row))
            f.write("\n")
    with open(os.path.join(out_dir, "edges.txt"), "w") as f:
        for u, v in sorted(edges):
            f.write(f"{u} {v}\n")
    with open(os.path.join(out_dir, "labels.txt"), "w") as f:
        f.write("\n".join(str(int(l)) for l in labels))
        f.write("\n")
    with open(os.path.join(out_dir, "split.txt"), "w") as f:
        f.write("\n".join(split))
        f.write("\n")
    print(f"{name}: n={n} d={d} c={c} edges={len(edges)} "
          f"train={n_train} val=500 test={len(test_sorted)} -> {out_dir}")


if __name__ == "__main__":
    if len(sys.argv) != 4:
        sys.exit(__doc__)
    convert(sys.argv[1], sys.argv[2], sys.argv[3])
