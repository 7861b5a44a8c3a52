"""Undirected graph container, dataset directory I/O, and split utilities.

Graphs are immutable after construction: edge arrays and feature matrices are
locked (numpy writeable flag cleared) so downstream stages cannot mutate a
shared instance in place.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

LaplacianKind = str  # "normalized" | "unnormalized"


class DatasetError(Exception):
    """Base class for dataset directory format violations."""

    def __init__(self, message, path=None, line=None):
        loc = str(path) if path is not None else "<memory>"
        if line is not None:
            loc = f"{loc}:{line}"
        super().__init__(f"{loc}: {message}")
        self.path = path
        self.line = line


class MissingFileError(DatasetError):
    pass


class MalformedLineError(DatasetError):
    pass


class ShapeMismatchError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


def _locked(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Graph:
    """Undirected graph with node features and optional node labels.

    edges holds each undirected edge exactly once as (u, v) with u < v,
    sorted lexicographically. labels uses -1 for unlabeled nodes; None means
    the dataset carries no labels at all.
    """

    name: str
    edges: np.ndarray  # (m, 2) int64, canonical u < v
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray | None = None  # (n,) int64, -1 = unlabeled
    n_classes: int | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-d array")
        n = feats.shape[0]
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise ValueError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ValueError("edges must be canonical (u < v, no self-loops)")
            keys = edges[:, 0] * n + edges[:, 1]
            if np.unique(keys).size != keys.size:
                raise ValueError("duplicate edges")
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
        if not np.all(np.isfinite(feats)):
            raise ValueError("features must be finite")
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ValueError("labels length must match node count")
            if labels.min(initial=0) < -1:
                raise ValueError("labels must be >= -1")
            if self.n_classes is not None and labels.max(initial=-1) >= self.n_classes:
                raise ValueError("label id exceeds n_classes")
        object.__setattr__(self, "features", _locked(feats))
        object.__setattr__(self, "edges", _locked(edges))
        object.__setattr__(self, "labels", _locked(labels) if labels is not None else None)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric binary adjacency in CSR form."""
        n = self.n_nodes
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        data = np.ones(rows.size, dtype=np.float64)
        return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.float64)
        np.add.at(deg, self.edges[:, 0], 1.0)
        np.add.at(deg, self.edges[:, 1], 1.0)
        return _locked(deg)


@dataclass(frozen=True)
class DatasetSplit:
    """K-shot evaluation split.

    shot_indices[c] lists exactly K training nodes of class c. The remaining
    labeled nodes are divided between val and test (sizes differ by at most
    one). All three index sets are pairwise disjoint.
    """

    shot_indices: tuple
    val_indices: np.ndarray
    test_indices: np.ndarray
    seed: int

    @property
    def train_indices(self) -> np.ndarray:
        return np.sort(np.concatenate(self.shot_indices))


def laplacian_from_edges(edges, n, kind="normalized") -> sp.csr_matrix:
    """Laplacian of the undirected graph given by a canonical edge array.

    normalized: I - D^{-1/2} A D^{-1/2}, with the convention D^{-1/2} = 0 on
    isolated nodes (their rows reduce to the identity row). unnormalized:
    D - A. Off-diagonal entries are built as symmetric products so the
    returned matrix is exactly symmetric.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    u, v = edges[:, 0], edges[:, 1]
    deg = (np.bincount(u, minlength=n) + np.bincount(v, minlength=n)).astype(np.float64)
    diag_idx = np.arange(n, dtype=np.int64)
    if kind == "normalized":
        dinv = np.zeros(n, dtype=np.float64)
        nz = deg > 0
        dinv[nz] = 1.0 / np.sqrt(deg[nz])
        off = -(dinv[u] * dinv[v])
        diag = np.ones(n, dtype=np.float64)
    elif kind == "unnormalized":
        off = -np.ones(u.size, dtype=np.float64)
        diag = deg
    else:
        raise ValueError(f"unknown laplacian kind: {kind!r}")
    rows = np.concatenate([u, v, diag_idx])
    cols = np.concatenate([v, u, diag_idx])
    data = np.concatenate([off, off, diag])
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def laplacian(g: Graph, kind: LaplacianKind = "normalized") -> sp.csr_matrix:
    return laplacian_from_edges(g.edges, g.n_nodes, kind)


def edge_homophily(g: Graph) -> float:
    """Fraction of edges whose endpoints share a label.

    Computed over edges with both endpoints labeled; on a fully labeled graph
    this is exactly (# same-label edges) / |E|.
    """
    if g.labels is None:
        raise ValueError("labels absent")
    if g.n_edges == 0:
        raise ValueError("graph has no edges")
    lu = g.labels[g.edges[:, 0]]
    lv = g.labels[g.edges[:, 1]]
    both = (lu >= 0) & (lv >= 0)
    if not np.any(both):
        raise ValueError("no edge has both endpoints labeled")
    return float(np.mean(lu[both] == lv[both]))


def kshot_split(g: Graph, k: int, seed: int) -> DatasetSplit:
    """Sample K labeled nodes per class; split the rest 50/50 into val/test."""
    if g.labels is None:
        raise ValueError("labels absent")
    if k < 1:
        raise ValueError("k must be >= 1")
    n_classes = g.n_classes if g.n_classes is not None else int(g.labels.max()) + 1
    rng = np.random.default_rng(seed)
    shots = []
    taken = np.zeros(g.n_nodes, dtype=bool)
    for c in range(n_classes):
        members = np.flatnonzero(g.labels == c)
        if members.size < k + 2:
            raise ValueError(
                f"class {c} has {members.size} labeled nodes, needs at least {k + 2}"
            )
        pick = rng.choice(members, size=k, replace=False)
        pick = np.sort(pick)
        shots.append(pick)
        taken[pick] = True
    rest = np.flatnonzero((g.labels >= 0) & ~taken)
    perm = rng.permutation(rest)
    half = perm.size // 2
    val = np.sort(perm[:half])
    test = np.sort(perm[half:])
    return DatasetSplit(
        shot_indices=tuple(shots), val_indices=val, test_indices=test, seed=seed
    )


def corrupt_features(g: Graph, seed: int) -> np.ndarray:
    """Row-permuted copy of the feature matrix (uniform permutation)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(g.n_nodes)
    return g.features[perm].copy()


def svd_reduce(features: np.ndarray, dim: int) -> np.ndarray:
    """Project features onto their top `dim` right singular vectors.

    Singular-vector signs are fixed so the largest-magnitude entry of each
    vector is positive, making the projection deterministic.
    """
    X = np.asarray(features, dtype=np.float64)
    if dim < 1 or dim > min(X.shape):
        raise ValueError(f"dim {dim} outside [1, min{X.shape}]")
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    v = vt.T[:, :dim].copy()
    for j in range(dim):
        i = int(np.argmax(np.abs(v[:, j])))
        if v[i, j] < 0:
            v[:, j] = -v[:, j]
    return X @ v


# ---------------------------------------------------------------------------
# dataset directory format
# ---------------------------------------------------------------------------

_META = "meta.json"
_EDGES = "edges.tsv"
_FEATURES_BIN = "features.bin"
_FEATURES_TSV = "features.tsv"
_LABELS = "labels.tsv"


def _require(path: Path):
    if not path.is_file():
        raise MissingFileError("file not found", path=path)
    return path


def _read_features_bin(path: Path, n: int, d: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 16:
        raise ShapeMismatchError("truncated header", path=path)
    counts = np.frombuffer(raw[:16], dtype="<u8")
    fn, fd = int(counts[0]), int(counts[1])
    if fn != n or fd != d:
        raise ShapeMismatchError(
            f"header says {fn}x{fd}, meta.json says {n}x{d}", path=path
        )
    data = np.frombuffer(raw[16:], dtype="<f8")
    if data.size != n * d:
        raise ShapeMismatchError(
            f"expected {n * d} float64 values, found {data.size}", path=path
        )
    return data.reshape(n, d).astype(np.float64)


def _read_features_tsv(path: Path, n: int, d: int) -> np.ndarray:
    out = np.empty((n, d), dtype=np.float64)
    with path.open() as fh:
        i = -1
        for i, line in enumerate(fh):
            parts = line.split()
            if i >= n:
                raise ShapeMismatchError(f"more than {n} feature rows", path=path, line=i + 1)
            if len(parts) != d:
                raise MalformedLineError(
                    f"expected {d} values, found {len(parts)}", path=path, line=i + 1
                )
            try:
                out[i] = [float(p) for p in parts]
            except ValueError:
                raise MalformedLineError("non-numeric feature value", path=path, line=i + 1)
        if i + 1 != n:
            raise ShapeMismatchError(f"expected {n} feature rows, found {i + 1}", path=path)
    return out


def _read_edges(path: Path, n: int):
    us, vs = [], []
    dropped = 0
    with path.open() as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise MalformedLineError(
                    f"expected 'u<TAB>v', found {len(parts)} tokens", path=path, line=i + 1
                )
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise MalformedLineError("non-integer node index", path=path, line=i + 1)
            if not (0 <= u < n and 0 <= v < n):
                raise MalformedLineError(
                    f"node index out of range [0, {n})", path=path, line=i + 1
                )
            if u == v:
                dropped += 1
                continue
            if u > v:
                u, v = v, u
            us.append(u)
            vs.append(v)
    if dropped:
        log.warning("%s: dropped %d self-loop(s)", path, dropped)
    if not us:
        return np.empty((0, 2), dtype=np.int64)
    edges = np.stack([np.asarray(us, dtype=np.int64), np.asarray(vs, dtype=np.int64)], axis=1)
    keys = edges[:, 0] * n + edges[:, 1]
    _, first = np.unique(keys, return_index=True)
    return edges[np.sort(first)]


def _read_labels(path: Path, n: int, n_classes: int):
    tokens = []
    with path.open() as fh:
        for i, line in enumerate(fh):
            tok = line.strip()
            if not tok:
                continue
            tokens.append((i + 1, tok))
    if len(tokens) != n:
        raise ShapeMismatchError(
            f"expected {n} label lines, found {len(tokens)}", path=path
        )
    ints = []
    numeric = True
    for lineno, tok in tokens:
        if tok == "-1":
            ints.append(-1)
            continue
        try:
            ints.append(int(tok))
        except ValueError:
            numeric = False
            break
    if numeric:
        labels = np.asarray(ints, dtype=np.int64)
        bad = np.flatnonzero((labels < -1) | (labels >= n_classes))
        if bad.size:
            lineno, tok = tokens[bad[0]]
            raise LabelRangeError(
                f"label {tok} outside [0, {n_classes})", path=path, line=lineno
            )
        return labels
    # string class names: remap sorted distinct names to dense ids
    names = sorted({tok for _, tok in tokens if tok != "-1"})
    if len(names) > n_classes:
        raise LabelRangeError(
            f"{len(names)} distinct labels exceed n_classes={n_classes}", path=path
        )
    lut = {name: i for i, name in enumerate(names)}
    return np.asarray(
        [-1 if tok == "-1" else lut[tok] for _, tok in tokens], dtype=np.int64
    )


def load_graph(path) -> Graph:
    """Load a dataset directory (meta.json, edges.tsv, features, labels.tsv).

    Features come from features.bin (two little-endian uint64 counts, then
    row-major little-endian float64) or, as a fallback, features.tsv. Edges
    are deduplicated and symmetrized; self-loops are dropped with a warning.
    """
    root = Path(path)
    if not root.is_dir():
        raise MissingFileError("dataset directory not found", path=root)
    meta_path = _require(root / _META)
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise MalformedLineError(f"invalid JSON: {e}", path=meta_path)
    for key in ("n_nodes", "feature_dim", "n_classes", "name"):
        if key not in meta:
            raise MalformedLineError(f"meta.json missing key {key!r}", path=meta_path)
    n = int(meta["n_nodes"])
    d = int(meta["feature_dim"])
    n_classes = int(meta["n_classes"])

    bin_path = root / _FEATURES_BIN
    if bin_path.is_file():
        features = _read_features_bin(bin_path, n, d)
    else:
        features = _read_features_tsv(_require(root / _FEATURES_TSV), n, d)
    if not np.all(np.isfinite(features)):
        raise MalformedLineError("non-finite feature value", path=bin_path)

    edges = _read_edges(_require(root / _EDGES), n)
    labels = _read_labels(_require(root / _LABELS), n, n_classes)
    if np.all(labels < 0):
        labels = None
    return Graph(
        name=str(meta["name"]),
        edges=edges,
        features=features,
        labels=labels,
        n_classes=n_classes if labels is not None else None,
    )


def save_graph(g: Graph, path) -> None:
    """Write a graph as a dataset directory (features stored as features.bin)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "feature_dim": g.feature_dim,
        "n_classes": g.n_classes if g.n_classes is not None else 0,
        "n_nodes": g.n_nodes,
        "name": g.name,
    }
    (root / _META).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    with (root / _EDGES).open("w") as fh:
        for u, v in g.edges:
            fh.write(f"{u}\t{v}\n")
    with (root / _FEATURES_BIN).open("wb") as fh:
        fh.write(np.asarray(g.features.shape, dtype="<u8").tobytes())
        fh.write(g.features.astype("<f8").tobytes())
    labels = g.labels if g.labels is not None else -np.ones(g.n_nodes, dtype=np.int64)
    with (root / _LABELS).open("w") as fh:
        for y in labels:
            fh.write(f"{y}\n")


# feature transforms applied by CLI flag, never by the loader
def transform_features(features: np.ndarray, mode: str) -> np.ndarray:
    if mode == "none":
        return features
    if mode == "row-normalize":
        norms = np.linalg.norm(features, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return features / norms
    if mode == "binarize":
        return (features > 0).astype(np.float64)
    raise ValueError(f"unknown feature transform: {mode!r}")


def with_features(g: Graph, features: np.ndarray, name: str | None = None) -> Graph:
    """Copy of g with a replaced feature matrix (same structure and labels)."""
    return Graph(
        name=name if name is not None else g.name,
        edges=g.edges,
        features=features,
        labels=g.labels,
        n_classes=g.n_classes,
    )
