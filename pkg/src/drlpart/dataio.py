"""Matrix Market ingestion, graph files, Delaunay graphs and training datasets."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .coarsen import heavy_edge_matching
from .delaunay import triangulate
from .errors import MatrixMarketError, NonSquareError
from .graph import Graph
from .ordering import SparsePattern

log = logging.getLogger(__name__)

FIELDS = ("real", "complex", "integer", "pattern")
SYMMETRIES = ("general", "symmetric", "skew-symmetric", "hermitian")
_VALUES_PER_ENTRY = {"real": 1, "integer": 1, "complex": 2, "pattern": 0}


@dataclass
class MatrixMarketInfo:
    rows: int
    cols: int
    entries: int
    field: str
    symmetry: str
    duplicates: int
    diagonal: int


def read_matrix_market_info(path) -> tuple[SparsePattern, MatrixMarketInfo]:
    """Parse a coordinate Matrix Market file into a symmetric sparsity pattern.

    Values are discarded (explicit zeros stay structural nonzeros), general
    matrices are symmetrized, symmetric-type files are mirrored, duplicates
    are merged and the diagonal is dropped.
    """
    text = Path(path).read_text().splitlines()
    if not text:
        raise MatrixMarketError("empty file", 1)
    head = text[0].split()
    if len(head) != 5 or head[0] != "%%MatrixMarket" or head[1].lower() != "matrix":
        raise MatrixMarketError("missing '%%MatrixMarket matrix' header", 1)
    fmt, fld, sym = (h.lower() for h in head[2:])
    if fmt != "coordinate":
        raise MatrixMarketError(f"only coordinate format is supported, got {fmt!r}", 1)
    if fld not in FIELDS:
        raise MatrixMarketError(f"unknown field {fld!r}", 1)
    if sym not in SYMMETRIES:
        raise MatrixMarketError(f"unknown symmetry {sym!r}", 1)
    lineno = 1
    size = None
    for lineno in range(2, len(text) + 1):
        line = text[lineno - 1].strip()
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise MatrixMarketError("size line must hold rows, columns and entry count", lineno)
        try:
            size = tuple(int(x) for x in parts)
        except ValueError:
            raise MatrixMarketError("size line must hold integers", lineno) from None
        break
    if size is None:
        raise MatrixMarketError("missing size line", len(text))
    nrows, ncols, nnz = size
    nvals = _VALUES_PER_ENTRY[fld]
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    k = 0
    for ln in range(lineno + 1, len(text) + 1):
        line = text[ln - 1].strip()
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        if len(parts) != 2 + nvals:
            raise MatrixMarketError(f"expected {2 + nvals} fields, got {len(parts)}", ln)
        if k >= nnz:
            raise MatrixMarketError(f"more entries than the declared {nnz}", ln)
        try:
            i, j = int(parts[0]), int(parts[1])
            for v in parts[2:]:
                float(v)
        except ValueError:
            raise MatrixMarketError(f"malformed entry {line!r}", ln) from None
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise MatrixMarketError(f"index ({i}, {j}) outside {nrows}x{ncols}", ln)
        rows[k], cols[k] = i - 1, j - 1
        k += 1
    if k != nnz:
        raise MatrixMarketError(f"declared {nnz} entries, found {k}", len(text))
    if nrows != ncols:
        raise NonSquareError(f"{path}: matrix is {nrows}x{ncols}")
    keys = rows * ncols + cols
    if sym != "general":
        keys = np.minimum(rows, cols) * ncols + np.maximum(rows, cols)
    duplicates = int(nnz - len(np.unique(keys)))
    if duplicates:
        log.info("%s: merged %d duplicate entries", path, duplicates)
    diagonal = int(np.count_nonzero(rows == cols))
    mat = sp.coo_matrix((np.ones(nnz, dtype=bool), (rows, cols)), shape=(nrows, ncols))
    pattern = SparsePattern(mat, symmetrize=True)
    return pattern, MatrixMarketInfo(nrows, ncols, nnz, fld, sym, duplicates, diagonal)


def read_matrix_market(path) -> SparsePattern:
    return read_matrix_market_info(path)[0]


def write_matrix_market(obj, path, comment: str | None = None) -> None:
    """Write a graph or pattern as a symmetric pattern file (lower triangle plus diagonal)."""
    pattern = SparsePattern.from_graph(obj) if isinstance(obj, Graph) else obj
    low = sp.tril(pattern.mat, k=-1).tocoo()
    order = np.lexsort((low.row, low.col))
    r = np.concatenate([np.arange(pattern.n), low.row[order]]) + 1
    c = np.concatenate([np.arange(pattern.n), low.col[order]]) + 1
    lines = ["%%MatrixMarket matrix coordinate pattern symmetric"]
    if comment:
        lines.extend(f"% {line}" for line in comment.splitlines())
    lines.append(f"{pattern.n} {pattern.n} {len(r)}")
    lines.extend(f"{a} {b}" for a, b in zip(r.tolist(), c.tolist()))
    Path(path).write_text("\n".join(lines) + "\n")


GRAPH_MAGIC = b"DRLPGRPH"


def write_graph_file(g: Graph, path) -> None:
    """Binary graph cache: magic, little-endian int64 n and m, then sorted (u < v) edge pairs."""
    e = np.ascontiguousarray(g.edge_array, dtype="<i8")
    Path(path).write_bytes(GRAPH_MAGIC + struct.pack("<qq", g.n, g.m) + e.tobytes())


def read_graph_file(path) -> Graph:
    data = Path(path).read_bytes()
    if data[:8] != GRAPH_MAGIC or len(data) < 24:
        raise ValueError(f"{path}: not a graph cache file")
    n, m = struct.unpack("<qq", data[8:24])
    if len(data) != 24 + 16 * m:
        raise ValueError(f"{path}: truncated graph cache file")
    e = np.frombuffer(data[24:], dtype="<i8").reshape(m, 2).astype(np.int64)
    return Graph.from_edges(n, e)


def largest_component(g: Graph) -> tuple[Graph, np.ndarray]:
    k, lab = g.component_labels()
    if k <= 1:
        return g, np.arange(g.n)
    big = int(np.argmax(np.bincount(lab)))
    nodes = np.flatnonzero(lab == big)
    return g.induced(nodes), nodes


def load_graph(path) -> Graph:
    """Graph from a Matrix Market file or a binary graph cache, chosen by extension."""
    p = Path(path)
    if p.suffix == ".mtx":
        return read_matrix_market(p).graph()
    return read_graph_file(p)


# ---------------------------------------------------------------- Delaunay graphs

def delaunay_points(n: int, seed=None) -> np.ndarray:
    return np.random.default_rng(seed).random((n, 2))


def generate_delaunay(n: int, seed=None, points: np.ndarray | None = None) -> Graph:
    """Graph of the Delaunay triangulation of ``n`` uniform random points in the unit square."""
    if n < 3:
        raise ValueError("need at least 3 points")
    pts = delaunay_points(n, seed) if points is None else np.asarray(points, dtype=float)
    _, edges = triangulate(pts)
    return Graph.from_edges(len(pts), edges)


# ---------------------------------------------------------------- datasets

@dataclass
class Dataset:
    graphs: list[Graph] = field(default_factory=list)
    tags: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i) -> Graph:
        return self.graphs[i]

    def add(self, g: Graph, **tag) -> None:
        self.graphs.append(g)
        self.tags.append(tag)


def _matrix_graphs(matrix_dir) -> list[tuple[str, Graph, int]]:
    """(file name, largest component, number of removed nodes) for every .mtx file."""
    files = sorted(Path(matrix_dir).glob("*.mtx"))
    if not files:
        raise FileNotFoundError(f"no .mtx files in {matrix_dir}")
    out = []
    for f in files:
        full = read_matrix_market(f).graph()
        g, kept = largest_component(full)
        out.append((f.name, g, full.n - len(kept)))
    return out


def build_training_dataset(kind: str, n_min: int, n_max: int, n_target: int, seed=None,
                           matrix_dir=None, coarsen: bool = True) -> Dataset:
    """Graphs with n in (n_min, n_max], each followed by its coarsenings while they exceed n_min.

    Stops once ``n_target`` graphs are collected (the last chain is truncated).
    """
    if n_min >= n_max:
        raise ValueError("n_min must be smaller than n_max")
    rng = np.random.default_rng(seed)
    ds = Dataset()
    pool = None
    if kind == "matrix-dir":
        pool = [(name, g, rm) for name, g, rm in _matrix_graphs(matrix_dir) if n_min < g.n <= n_max]
        if not pool:
            raise ValueError(f"no matrix in {matrix_dir} has n in ({n_min}, {n_max}]")
    elif kind != "delaunay":
        raise ValueError(f"unknown dataset kind {kind!r}")
    while len(ds) < n_target:
        if pool is None:
            n = int(rng.integers(n_min + 1, n_max + 1))
            gseed = int(rng.integers(2**31))
            g = generate_delaunay(n, gseed)
            src = {"source": "delaunay", "seed": gseed}
        else:
            name, g, removed = pool[int(rng.integers(len(pool)))]
            src = {"source": name, "seed": None, "removed_nodes": removed}
        ds.add(g, depth=0, **src)
        depth = 0
        cur = g
        while coarsen and len(ds) < n_target and cur.n > n_min:
            lvl = heavy_edge_matching(cur, seed=int(rng.integers(2**31)))
            if lvl.coarse.n == cur.n:
                break
            cur = lvl.coarse
            depth += 1
            ds.add(cur, depth=depth, **src)
    return ds


def save_dataset(ds: Dataset, directory) -> None:
    """One graph cache file per member plus ``tags.jsonl`` with the provenance tags."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "tags.jsonl", "w") as fh:
        for i, (g, tag) in enumerate(zip(ds.graphs, ds.tags)):
            name = f"g{i:06d}.graph"
            write_graph_file(g, d / name)
            fh.write(json.dumps({"file": name, **tag}, sort_keys=True) + "\n")


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    manifest = d / "tags.jsonl"
    if not manifest.is_file():
        raise FileNotFoundError(f"{d}: no dataset manifest (tags.jsonl)")
    ds = Dataset()
    for line in manifest.read_text().splitlines():
        if line.strip():
            tag = json.loads(line)
            ds.add(read_graph_file(d / tag.pop("file")), **tag)
    return ds


# ---------------------------------------------------------------- label and permutation files

LABEL_NAMES = "ABS"


def write_labels(labels: np.ndarray, path, letters: bool = False) -> None:
    """One line per node, "node_id label"; labels are 0/1 or A/B/S letters."""
    vals = [LABEL_NAMES[x] for x in labels.tolist()] if letters else labels.tolist()
    Path(path).write_text("".join(f"{i} {v}\n" for i, v in enumerate(vals)))


def read_labels(path) -> np.ndarray:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    out = np.empty(len(rows), dtype=np.int8)
    for k, (i, v) in enumerate(rows):
        if int(i) != k:
            raise ValueError(f"{path}: line {k + 1}: expected node {k}, got {i}")
        out[k] = LABEL_NAMES.index(v) if v in LABEL_NAMES else int(v)
    return out


def write_permutation(perm: np.ndarray, path) -> None:
    """One node id per line, in elimination order."""
    Path(path).write_text("".join(f"{v}\n" for v in np.asarray(perm).tolist()))


def read_permutation(path) -> np.ndarray:
    return np.array([int(x) for x in Path(path).read_text().split()], dtype=np.int64)
