"""Attributed-graph data model, dataset ingestion, group views, edge splits."""

from __future__ import annotations

import gzip
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "Graph",
    "GroupView",
    "EdgeSplit",
    "load_dataset",
    "save_graph",
    "split_groups",
    "split_edges",
    "sample_non_edges",
]

# Weights at or below this are treated as absent edges by consumers of the
# adjacency matrix (walkers, edge listings).
EDGE_EPS = 1e-12


class DatasetError(ValueError):
    """A node or edge file is malformed or internally inconsistent."""


def _open_text(path: str | Path) -> IO[str]:
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "rt", encoding="utf-8")


def _frozen_array(values, dtype) -> np.ndarray:
    out = np.array(values, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected attributed graph with one categorical sensitive value per node.

    ``adjacency`` holds edge weights in [0, 1]: freshly ingested graphs are
    binary, repaired graphs carry real weights. All arrays are read-only after
    construction, so instances are safe to share across workers.
    """

    attributes: np.ndarray        # (n_nodes, d)
    adjacency: np.ndarray         # (n_nodes, n_nodes), symmetric, zero diagonal
    sensitive: np.ndarray         # (n_nodes,) category ids in 0..k-1
    node_ids: tuple[str, ...] = ()
    sensitive_names: tuple[str, ...] = ()

    def __post_init__(self):
        attributes = _frozen_array(self.attributes, np.float64)
        adjacency = _frozen_array(self.adjacency, np.float64)
        sensitive = _frozen_array(self.sensitive, np.int64)

        if attributes.ndim != 2:
            raise ValueError("attributes must be a 2-D matrix")
        n = attributes.shape[0]
        if adjacency.shape != (n, n):
            raise ValueError(
                f"adjacency must be {n}x{n} to match attributes, got {adjacency.shape}"
            )
        if sensitive.shape != (n,):
            raise ValueError("sensitive must hold one category id per node")
        if n and sensitive.min() < 0:
            raise ValueError("sensitive category ids must be non-negative")
        if not np.array_equal(adjacency, adjacency.T):
            raise ValueError("adjacency must be symmetric")
        if n and np.any(np.diag(adjacency) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if n and (adjacency.min() < 0 or adjacency.max() > 1):
            raise ValueError("adjacency entries must lie in [0, 1]")

        node_ids = tuple(str(i) for i in self.node_ids)
        if not node_ids:
            node_ids = tuple(str(i) for i in range(n))
        if len(node_ids) != n:
            raise ValueError("node_ids must name every node exactly once")
        if len(set(node_ids)) != n:
            raise ValueError("node_ids must be unique")

        names = tuple(str(s) for s in self.sensitive_names)
        n_groups = int(sensitive.max()) + 1 if n else 0
        if not names:
            names = tuple(str(k) for k in range(n_groups))
        if len(names) < n_groups:
            raise ValueError("sensitive_names must cover every category id")

        object.__setattr__(self, "attributes", attributes)
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "sensitive", sensitive)
        object.__setattr__(self, "node_ids", node_ids)
        object.__setattr__(self, "sensitive_names", names)

    @property
    def n_nodes(self) -> int:
        return self.attributes.shape[0]

    @property
    def n_attributes(self) -> int:
        return self.attributes.shape[1]

    @property
    def is_binary(self) -> bool:
        a = self.adjacency
        return bool(np.all((a == 0) | (a == 1)))

    def edge_list(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array of node indices with u < v."""
        u, v = np.nonzero(np.triu(self.adjacency, k=1) > EDGE_EPS)
        return np.column_stack([u, v]).astype(np.int64)

    @property
    def n_edges(self) -> int:
        return len(self.edge_list())

    def edge_weights(self, pairs: np.ndarray) -> np.ndarray:
        pairs = np.asarray(pairs, dtype=np.int64)
        return self.adjacency[pairs[:, 0], pairs[:, 1]]

    def with_adjacency(self, adjacency: np.ndarray) -> "Graph":
        return Graph(
            attributes=self.attributes,
            adjacency=adjacency,
            sensitive=self.sensitive,
            node_ids=self.node_ids,
            sensitive_names=self.sensitive_names,
        )


@dataclass(frozen=True, eq=False)
class GroupView:
    """All nodes sharing one sensitive value, as concatenated [attributes | adjacency] rows."""

    group_id: int
    rows: np.ndarray           # (n_members, d + n_nodes)
    member_index: np.ndarray   # (n_members,) node indices in the parent graph
    n_attributes: int          # width of the attribute block inside ``rows``

    def __post_init__(self):
        rows = _frozen_array(self.rows, np.float64)
        member_index = _frozen_array(self.member_index, np.int64)
        if rows.ndim != 2:
            raise ValueError("rows must be a 2-D matrix")
        if member_index.shape != (rows.shape[0],):
            raise ValueError("member_index must map every row to a node")
        if len(np.unique(member_index)) != len(member_index):
            raise ValueError("member_index must not repeat nodes")
        if not 0 <= self.n_attributes <= rows.shape[1]:
            raise ValueError("n_attributes exceeds row width")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "member_index", member_index)

    @property
    def n_members(self) -> int:
        return self.rows.shape[0]

    @property
    def attribute_block(self) -> np.ndarray:
        return self.rows[:, : self.n_attributes]

    @property
    def adjacency_block(self) -> np.ndarray:
        return self.rows[:, self.n_attributes :]


@dataclass(frozen=True, eq=False)
class EdgeSplit:
    """Train/test partition of a graph's edges plus sampled non-edges."""

    train_edges: np.ndarray
    test_pos: np.ndarray
    test_neg: np.ndarray
    seed: int

    def __post_init__(self):
        for name in ("train_edges", "test_pos", "test_neg"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1, 2)
            object.__setattr__(self, name, _frozen_array(arr, np.int64))
        if len(self.test_neg) != len(self.test_pos):
            raise ValueError("test_neg must match test_pos in size")


def load_dataset(node_file: str | Path, edge_file: str | Path) -> Graph:
    """Load a graph from tab-separated node and edge files.

    Node lines are ``id  a_1 ... a_d  label``; edge lines are ``id  id`` with
    an optional third weight column in [0, 1]. Edges are stored undirected:
    reciprocal duplicates collapse and self-loops are dropped. The node order
    of the file fixes the node indexing; sensitive ids are assigned to the
    sorted distinct labels. Gzip-compressed files (``.gz``) are accepted.
    """
    ids: list[str] = []
    attr_rows: list[list[float]] = []
    labels: list[str] = []
    index: dict[str, int] = {}
    width: int | None = None

    with _open_text(node_file) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) < 2:
                raise DatasetError(
                    f"{node_file}:{lineno}: expected 'id attributes... label'"
                )
            node_id, label = tokens[0], tokens[-1]
            if node_id in index:
                raise DatasetError(f"{node_file}:{lineno}: duplicate node id {node_id!r}")
            try:
                values = [float(t) for t in tokens[1:-1]]
            except ValueError as exc:
                raise DatasetError(
                    f"{node_file}:{lineno}: non-numeric attribute value ({exc})"
                ) from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DatasetError(
                    f"{node_file}:{lineno}: attribute width {len(values)} differs "
                    f"from {width} seen earlier"
                )
            index[node_id] = len(ids)
            ids.append(node_id)
            attr_rows.append(values)
            labels.append(label)

    if not ids:
        raise DatasetError(f"{node_file}: no nodes found")

    n = len(ids)
    attributes = np.array(attr_rows, dtype=np.float64).reshape(n, width or 0)
    names = tuple(sorted(set(labels)))
    code = {name: k for k, name in enumerate(names)}
    sensitive = np.array([code[lab] for lab in labels], dtype=np.int64)

    adjacency = np.zeros((n, n), dtype=np.float64)
    with _open_text(edge_file) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) not in (2, 3):
                raise DatasetError(
                    f"{edge_file}:{lineno}: expected 'id id' or 'id id weight'"
                )
            for node_id in tokens[:2]:
                if node_id not in index:
                    raise DatasetError(
                        f"{edge_file}:{lineno}: unknown node id {node_id!r}"
                    )
            u, v = index[tokens[0]], index[tokens[1]]
            if u == v:
                continue
            if len(tokens) == 3:
                try:
                    w = float(tokens[2])
                except ValueError:
                    raise DatasetError(
                        f"{edge_file}:{lineno}: non-numeric edge weight {tokens[2]!r}"
                    ) from None
                if not 0.0 <= w <= 1.0:
                    raise DatasetError(
                        f"{edge_file}:{lineno}: edge weight {w} outside [0, 1]"
                    )
            else:
                w = 1.0
            adjacency[u, v] = adjacency[v, u] = w

    return Graph(
        attributes=attributes,
        adjacency=adjacency,
        sensitive=sensitive,
        node_ids=tuple(ids),
        sensitive_names=names,
    )


def save_graph(
    g: Graph,
    node_file: str | Path,
    edge_file: str | Path,
    weighted: bool | None = None,
) -> None:
    """Write a graph back to the ingestion format.

    Weighted output (``id  id  weight``) is chosen automatically for
    non-binary adjacencies; float fields use a round-trip-exact format.
    """
    if weighted is None:
        weighted = not g.is_binary
    with open(node_file, "w", encoding="utf-8") as fh:
        for i, node_id in enumerate(g.node_ids):
            parts = [node_id]
            parts.extend(f"{v:.17g}" for v in g.attributes[i])
            parts.append(g.sensitive_names[g.sensitive[i]])
            fh.write("\t".join(parts) + "\n")
    with open(edge_file, "w", encoding="utf-8") as fh:
        for u, v in g.edge_list():
            if weighted:
                fh.write(
                    f"{g.node_ids[u]}\t{g.node_ids[v]}\t{g.adjacency[u, v]:.17g}\n"
                )
            else:
                fh.write(f"{g.node_ids[u]}\t{g.node_ids[v]}\n")


def split_groups(g: Graph) -> list[GroupView]:
    """Partition nodes by sensitive value into [attributes | adjacency] row views."""
    values = np.unique(g.sensitive)
    if len(values) < 2:
        raise ValueError("fairness undefined for one group")
    full_rows = np.hstack([g.attributes, g.adjacency])
    views = []
    for k in values:
        member_index = np.nonzero(g.sensitive == k)[0]
        views.append(
            GroupView(
                group_id=int(k),
                rows=full_rows[member_index],
                member_index=member_index,
                n_attributes=g.n_attributes,
            )
        )
    return views


def _pair_codes(pairs: np.ndarray, n: int) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    return lo * n + hi


def sample_non_edges(
    g: Graph,
    count: int,
    rng: np.random.Generator,
    exclude: Iterable[Sequence[int]] = (),
) -> np.ndarray:
    """Sample ``count`` distinct unordered node pairs that are not edges of ``g``.

    Pairs listed in ``exclude`` are also avoided. Deterministic given the
    generator state.
    """
    if count == 0:
        return np.empty((0, 2), dtype=np.int64)
    n = g.n_nodes
    forbidden = set(_pair_codes(g.edge_list(), n).tolist())
    exclude = np.asarray(list(exclude), dtype=np.int64).reshape(-1, 2)
    if len(exclude):
        forbidden.update(_pair_codes(exclude, n).tolist())
    max_pairs = n * (n - 1) // 2
    if count + len(forbidden) > max_pairs:
        raise ValueError("not enough non-edges available to sample")

    chosen: list[tuple[int, int]] = []
    seen: set[int] = set()
    for _ in range(200):
        draw = rng.integers(0, n, size=(max(4 * (count - len(chosen)), 16), 2))
        for u, v in draw:
            if u == v:
                continue
            lo, hi = (int(u), int(v)) if u < v else (int(v), int(u))
            code = lo * n + hi
            if code in forbidden or code in seen:
                continue
            seen.add(code)
            chosen.append((lo, hi))
            if len(chosen) == count:
                return np.array(chosen, dtype=np.int64)
    raise ValueError("non-edge sampling did not finish; graph too dense")


def split_edges(g: Graph, test_fraction: float, seed: int) -> EdgeSplit:
    """Uniformly hold out ``round(test_fraction * n_edges)`` edges plus matched non-edges."""
    if not 0.0 <= test_fraction < 1.0:
        raise ValueError("test_fraction must lie in [0, 1)")
    edges = g.edge_list()
    if len(edges) == 0:
        raise ValueError("graph has no edges to split")
    n_test = int(round(test_fraction * len(edges)))
    if len(edges) - n_test < 1:
        raise ValueError("test_fraction leaves no training edges")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(edges))
    test_pos = edges[perm[:n_test]]
    train_edges = edges[perm[n_test:]]
    test_neg = sample_non_edges(g, n_test, rng)
    return EdgeSplit(
        train_edges=train_edges, test_pos=test_pos, test_neg=test_neg, seed=seed
    )
