"""Graph loading, generation and the dense matrices built from them."""
from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAX_DENSE_NODES = 5000


class GraphError(ValueError):
    """Raised for malformed graph input or contract violations."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class IdRemap:
    """Maps original node identifiers to dense ids.

    ``source_ids`` lists every identifier seen in the edge file in sorted
    order (this is the row order expected of a feature file).
    ``kept_ids[d]`` is the original id of dense node ``d``.
    """

    source_ids: tuple
    kept_ids: tuple
    dropped_ids: tuple = ()

    @classmethod
    def identity(cls, n: int) -> "IdRemap":
        ids = tuple(range(n))
        return cls(source_ids=ids, kept_ids=ids)

    def source_rows(self) -> np.ndarray:
        """Row index into the source order for each dense node."""
        pos = {sid: i for i, sid in enumerate(self.source_ids)}
        return np.array([pos[k] for k in self.kept_ids], dtype=np.int64)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["original_id", "dense_id"])
            for dense, orig in enumerate(self.kept_ids):
                w.writerow([orig, dense])

    @classmethod
    def read_csv(cls, path) -> "IdRemap":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        body = rows[1:] if rows and rows[0] == ["original_id", "dense_id"] else rows
        pairs = sorted(((int(d), _parse_id(o)) for o, d in body))
        kept = tuple(o for _, o in pairs)
        return cls(source_ids=tuple(sorted(kept, key=_id_sort_key)), kept_ids=kept)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted simple graph stored as an edge array.

    ``edges`` is an (m, 2) int array with ``edges[:, 0] < edges[:, 1]``,
    sorted lexicographically and free of duplicates.
    """

    n: int
    edges: np.ndarray
    features: Optional[np.ndarray] = None
    name: str = field(default="graph", compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise GraphError("graph must have at least one node")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size:
            if e.min() < 0 or e.max() >= self.n:
                raise GraphError(f"edge endpoint outside [0, {self.n})")
            if np.any(e[:, 0] == e[:, 1]):
                raise GraphError("self-loops are not allowed")
        e = _canonical_edges(e)
        object.__setattr__(self, "edges", _freeze(e))
        if self.features is not None:
            x = np.array(self.features, dtype=np.float64)
            if x.ndim != 2 or x.shape[0] != self.n or x.shape[1] < 1:
                raise GraphError(f"features must have shape ({self.n}, F>=1), got {x.shape}")
            object.__setattr__(self, "features", _freeze(x))

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        if self.n != other.n or not np.array_equal(self.edges, other.edges):
            return False
        if (self.features is None) != (other.features is None):
            return False
        return self.features is None or np.array_equal(self.features, other.features)

    __hash__ = None

    def with_features(self, features: np.ndarray) -> "Graph":
        return Graph(self.n, self.edges, features, name=self.name)

    def with_identity_features(self) -> "Graph":
        """One-hot node features, the fallback when a dataset ships none."""
        return self.with_features(np.eye(self.n))

    def adjacency(self) -> np.ndarray:
        _check_dense_cap(self.n)
        a = np.zeros((self.n, self.n))
        if self.num_edges:
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def fingerprint(self, include_features: bool = True) -> str:
        """SHA-256 of the structure (and optionally features)."""
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        h.update(np.ascontiguousarray(self.edges, dtype="<i8").tobytes())
        if include_features and self.features is not None:
            h.update(np.asarray(self.features.shape, dtype="<i8").tobytes())
            h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_edge_list_text(self) -> str:
        return "".join(f"{i} {j}\n" for i, j in self.edges.tolist())


def _canonical_edges(e: np.ndarray) -> np.ndarray:
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.sort(e, axis=1)
    e = np.unique(e, axis=0)
    return np.ascontiguousarray(e)


def _check_dense_cap(n: int) -> None:
    if n > MAX_DENSE_NODES:
        raise GraphError(
            f"graph has {n} nodes; dense matrices are capped at {MAX_DENSE_NODES} nodes"
        )


def _parse_id(token: str):
    try:
        return int(token)
    except ValueError:
        return token


def _id_sort_key(x):
    return (0, x, "") if isinstance(x, int) else (1, 0, str(x))


def load_edge_list(path) -> tuple[Graph, IdRemap]:
    """Read a whitespace-separated edge list.

    Lines starting with ``#`` and blank lines are ignored. Node ids are
    remapped to ``[0, n)`` (numeric ids sort numerically), duplicate edges
    and self-loops are dropped, and nodes left without any edge are removed
    with a warning.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise GraphError(f"cannot read edge list {path}: {exc}") from exc

    raw: list[tuple] = []
    seen: set = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 2:
            raise GraphError(f"{path}, line {lineno}: expected two node ids, got {len(parts)} tokens")
        a, b = _parse_id(parts[0]), _parse_id(parts[1])
        seen.add(a)
        seen.add(b)
        if a != b:
            raw.append((a, b))

    source_ids = tuple(sorted(seen, key=_id_sort_key))
    connected = {x for pair in raw for x in pair}
    kept = tuple(x for x in source_ids if x in connected)
    dropped = tuple(x for x in source_ids if x not in connected)
    if not kept:
        raise GraphError(f"{path}: graph is empty after dropping self-loops and isolated nodes")
    if dropped:
        warnings.warn(f"{path}: dropped {len(dropped)} isolated node(s)", stacklevel=2)

    dense = {x: i for i, x in enumerate(kept)}
    edges = np.array([(dense[a], dense[b]) for a, b in raw], dtype=np.int64).reshape(-1, 2)
    remap = IdRemap(source_ids=source_ids, kept_ids=kept, dropped_ids=dropped)
    return Graph(len(kept), edges, name=path.stem), remap


def write_edge_list(g: Graph, path) -> None:
    Path(path).write_text(g.to_edge_list_text())


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_features(path, graph: Graph, remap: Optional[IdRemap] = None) -> Graph:
    """Attach a CSV feature matrix to ``graph``.

    Rows follow the sorted original node order; a first row made only of
    non-numeric cells is treated as a header.
    """
    remap = remap or IdRemap.identity(graph.n)
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise GraphError(f"cannot read features {path}: {exc}") from exc
    if rows and all(not _is_number(c) for c in rows[0]):
        rows = rows[1:]
    if len(rows) != len(remap.source_ids):
        raise GraphError(
            f"{path}: feature file has {len(rows)} rows, expected {len(remap.source_ids)}"
        )
    width = len(rows[0])
    x = np.empty((len(rows), width))
    for i, r in enumerate(rows):
        if len(r) != width:
            raise GraphError(f"{path}:{i + 1}: expected {width} columns, got {len(r)}")
        for j, c in enumerate(r):
            try:
                x[i, j] = float(c)
            except ValueError:
                raise GraphError(f"{path}:{i + 1}: non-numeric cell {c!r}") from None
    return graph.with_features(x[remap.source_rows()])


def _drop_isolated(n: int, edges: np.ndarray, name: str) -> Graph:
    deg = np.bincount(edges.ravel(), minlength=n) if edges.size else np.zeros(n, int)
    keep = np.flatnonzero(deg > 0)
    if keep.size == n:
        return Graph(n, edges, name=name)
    if keep.size == 0:
        raise GraphError(f"{name}: generated graph has no edges")
    warnings.warn(f"{name}: dropped {n - keep.size} isolated node(s)", stacklevel=3)
    new = np.full(n, -1, dtype=np.int64)
    new[keep] = np.arange(keep.size)
    return Graph(int(keep.size), new[edges], name=name)


def sbm_edges(sizes: Sequence[int], p_in: float, p_out: float, seed: int) -> np.ndarray:
    sizes = [int(s) for s in sizes]
    n = sum(sizes)
    block = np.repeat(np.arange(len(sizes)), sizes)
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(block[iu] == block[ju], p_in, p_out)
    hit = rng.random(iu.size) < p
    return np.stack([iu[hit], ju[hit]], axis=1)


def generate_graph(kind: str, params: dict, seed: int = 0) -> Graph:
    """Deterministic synthetic graphs: ``cycle``, ``path``, ``star`` or ``sbm``.

    ``sbm`` takes ``sizes`` (block sizes), ``p_in`` and ``p_out``; the others
    take ``n``. Isolated SBM nodes are dropped with a warning.
    """
    params = dict(params)
    if kind in ("cycle", "path", "star"):
        n = int(params.get("n", 0))
        minimum = {"cycle": 3, "path": 2, "star": 2}[kind]
        if n < minimum:
            raise GraphError(f"{kind} needs n >= {minimum}, got {n}")
        idx = np.arange(n)
        if kind == "path":
            edges = np.stack([idx[:-1], idx[1:]], axis=1)
        elif kind == "cycle":
            edges = np.stack([idx, (idx + 1) % n], axis=1)
        else:
            edges = np.stack([np.zeros(n - 1, int), idx[1:]], axis=1)
        return Graph(n, edges, name=f"{kind}{n}")
    if kind == "sbm":
        sizes = params.get("sizes")
        if sizes is None and "blocks" in params and "block_size" in params:
            sizes = [int(params["block_size"])] * int(params["blocks"])
        if not sizes or any(int(s) < 1 for s in sizes):
            raise GraphError("sbm needs block sizes >= 1")
        p_in, p_out = float(params.get("p_in", -1)), float(params.get("p_out", -1))
        if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
            raise GraphError("sbm probabilities must lie in [0, 1]")
        _check_dense_cap(sum(int(s) for s in sizes))
        edges = sbm_edges(sizes, p_in, p_out, seed)
        return _drop_isolated(sum(int(s) for s in sizes), edges, f"sbm{len(sizes)}x{sizes[0]}")
    raise GraphError(f"unknown generator kind {kind!r}")


def degree_vector(g: Graph) -> np.ndarray:
    if g.num_edges == 0:
        return np.zeros(g.n, dtype=np.int64)
    return np.bincount(g.edges.ravel(), minlength=g.n).astype(np.int64)


def normalized_laplacian(g: Graph) -> np.ndarray:
    """``I - D^{-1/2} A D^{-1/2}``; every node must have an edge."""
    d = degree_vector(g)
    if np.any(d == 0):
        raise GraphError(
            f"{int(np.sum(d == 0))} zero-degree node(s); isolated nodes must be removed at load time"
        )
    s = 1.0 / np.sqrt(d)
    lap = -(s[:, None] * g.adjacency() * s[None, :])
    lap[np.diag_indices(g.n)] = 1.0
    return lap


def normalized_adjacency_with_self_loops(g: Graph) -> np.ndarray:
    """GCN propagation matrix ``D̂^{-1/2} (A + I) D̂^{-1/2}`` with ``d̂ = d + 1``."""
    a = g.adjacency()
    a[np.diag_indices(g.n)] = 1.0
    s = 1.0 / np.sqrt(degree_vector(g) + 1.0)
    return s[:, None] * a * s[None, :]
