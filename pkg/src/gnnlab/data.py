"""Citation-graph datasets: plain-text loading, validation, normalization.

Directory layout (UTF-8, one record per line):
    meta          "n d c"
    features.csv  n lines of d comma-separated floats
    edges.txt     one "u v" pair per line, 0-indexed, undirected
    labels.txt    n integers in [0, c)
    split.txt     n tokens from {train, val, test, none}
"""

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import SparseMatrix


class DatasetError(ValueError):
    """Dataset directory is missing files or fails validation."""


@dataclass
class GraphDataset:
    """One citation graph with features, labels, edges and a fixed split.

    Edges are undirected, stored once with u < v, no self-loops. Instances
    are treated as immutable and can be shared across concurrent runs.
    """
    n: int
    d: int
    c: int
    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    dropped_self_loops: int = 0
    _feature_csr: SparseMatrix = field(default=None, repr=False, compare=False)

    def validate(self):
        if self.features.shape != (self.n, self.d):
            raise DatasetError("feature matrix shape disagrees with meta")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("non-finite feature values")
        if len(self.labels) != self.n:
            raise DatasetError("label count disagrees with meta")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.c:
            raise DatasetError("label outside [0, c)")
        if len(self.edges) and (self.edges.min() < 0 or self.edges.max() >= self.n):
            raise DatasetError("edge endpoint out of range")
        if len(self.edges) and np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise DatasetError("self-loop present after loading")
        for m in (self.train_mask, self.val_mask, self.test_mask):
            if m.shape != (self.n,):
                raise DatasetError("mask length disagrees with meta")
        overlap = (self.train_mask.astype(int) + self.val_mask + self.test_mask)
        if overlap.max(initial=0) > 1:
            raise DatasetError("train/val/test masks overlap")
        return self

    def feature_csr(self):
        """Features as CSR; cached. Pays off when the matrix is mostly zeros."""
        if self._feature_csr is None:
            self._feature_csr = SparseMatrix.from_dense(self.features)
        return self._feature_csr

    def feature_sparsity(self):
        return 1.0 - np.count_nonzero(self.features) / self.features.size

    def degrees(self):
        deg = np.zeros(self.n, dtype=np.int64)
        for col in (0, 1):
            np.add.at(deg, self.edges[:, col], 1)
        return deg


def _read_lines(path, name):
    fp = os.path.join(path, name)
    if not os.path.isfile(fp):
        raise DatasetError(f"missing dataset file: {fp}")
    with open(fp, encoding="utf-8") as f:
        return [ln.strip() for ln in f if ln.strip()]


def load_dataset(path, row_normalize=True):
    """Load and validate a dataset directory.

    Duplicate undirected edges collapse to one; self-loops are dropped (with
    a warning carrying the count). Feature rows are L1-normalized unless
    ``row_normalize`` is off; the raw file is the source of truth either way.
    """
    meta = _read_lines(path, "meta")[0].split()
    n, d, c = (int(v) for v in meta)

    feats = np.empty((n, d))
    lines = _read_lines(path, "features.csv")
    if len(lines) != n:
        raise DatasetError(f"features.csv has {len(lines)} rows, expected {n}")
    for i, ln in enumerate(lines):
        row = np.fromstring(ln, sep=",")
        if len(row) != d:
            raise DatasetError(f"features.csv row {i} has {len(row)} values")
        feats[i] = row

    labels = np.array([int(v) for v in _read_lines(path, "labels.txt")])

    edge_set = set()
    self_loops = 0
    for ln in _read_lines(path, "edges.txt"):
        u, v = (int(t) for t in ln.split())
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetError(f"edge ({u}, {v}) out of range for n={n}")
        if u == v:
            self_loops += 1
            continue
        edge_set.add((min(u, v), max(u, v)))
    if self_loops:
        warnings.warn(f"dropped {self_loops} self-loop(s) from edges.txt")
    edges = np.array(sorted(edge_set), dtype=np.int64).reshape(-1, 2)

    tokens = _read_lines(path, "split.txt")
    if len(tokens) != n:
        raise DatasetError(f"split.txt has {len(tokens)} tokens, expected {n}")
    valid = {"train", "val", "test", "none"}
    bad = set(tokens) - valid
    if bad:
        raise DatasetError(f"unknown split tokens: {sorted(bad)}")
    tokens = np.array(tokens)

    if row_normalize:
        sums = feats.sum(axis=1, keepdims=True)
        sums[sums == 0] = 1.0
        feats = feats / sums

    ds = GraphDataset(
        n=n, d=d, c=c, features=feats, labels=labels, edges=edges,
        train_mask=tokens == "train", val_mask=tokens == "val",
        test_mask=tokens == "test", dropped_self_loops=self_loops)
    return ds.validate()


def save_dataset(ds, path):
    """Write a dataset directory in the documented text format."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "meta"), "w", encoding="utf-8") as f:
        f.write(f"{ds.n} {ds.d} {ds.c}\n")
    with open(os.path.join(path, "features.csv"), "w", encoding="utf-8") as f:
        for row in ds.features:
            f.write(",".join(repr(float(v)) for v in row))
            f.write("\n")
    with open(os.path.join(path, "edges.txt"), "w", encoding="utf-8") as f:
        for u, v in ds.edges:
            f.write(f"{u} {v}\n")
    with open(os.path.join(path, "labels.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(str(int(l)) for l in ds.labels) + "\n")
    tokens = np.full(ds.n, "none", dtype=object)
    tokens[ds.train_mask] = "train"
    tokens[ds.val_mask] = "val"
    tokens[ds.test_mask] = "test"
    with open(os.path.join(path, "split.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(tokens) + "\n")


def build_normalized_adjacency(ds_or_edges, n=None):
    """Self-looped symmetric normalization (D+I)^(-1/2) (A+I) (D+I)^(-1/2).

    Accepts a GraphDataset or an (edges, n) pair. The result is exactly
    symmetric by construction and has a strictly positive diagonal.
    """
    if n is None:
        edges, n = ds_or_edges.edges, ds_or_edges.n
    else:
        edges = np.asarray(ds_or_edges, dtype=np.int64).reshape(-1, 2)

    deg = np.zeros(n, dtype=np.float64)
    for col in (0, 1):
        np.add.at(deg, edges[:, col], 1)
    inv_sqrt = 1.0 / np.sqrt(deg + 1.0)

    loops = np.arange(n)
    rows = np.concatenate([edges[:, 0], edges[:, 1], loops])
    cols = np.concatenate([edges[:, 1], edges[:, 0], loops])
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    return SparseMatrix.from_coo(n, n, rows, cols, vals)


def drop_edges(ds, rate, seed):
    """Remove each undirected edge independently with probability `rate`.

    Returns a new dataset; rebuild the normalized adjacency afterwards.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"drop-edge rate out of range: {rate}")
    if rate == 0.0 or len(ds.edges) == 0:
        kept = ds.edges
    else:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xED]))
        kept = ds.edges[rng.random(len(ds.edges)) >= rate]
    return GraphDataset(
        n=ds.n, d=ds.d, c=ds.c, features=ds.features, labels=ds.labels,
        edges=kept, train_mask=ds.train_mask, val_mask=ds.val_mask,
        test_mask=ds.test_mask, _feature_csr=ds._feature_csr)
