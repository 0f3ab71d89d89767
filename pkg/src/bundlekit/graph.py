"""Item co-purchase graph: counts, thresholding, neighborhood queries.

The co-purchase matrix counts, for every item pair, the users who interacted
with both. Thresholding at ``epsilon`` keeps pairs with count >= epsilon
(diagonal excluded), yielding an unweighted symmetric graph. Counts are
computed sparsely; the dense product is only ever used as a test oracle.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import InteractionMatrix
from .errors import ConfigError, DataFormatError


@dataclass(frozen=True)
class ItemGraph:
    """Unweighted symmetric item graph without self-loops."""

    n_items: int
    neighbors: tuple[np.ndarray, ...]  # per item, sorted neighbor indices
    epsilon: int

    @property
    def degree(self) -> np.ndarray:
        return np.asarray([len(n) for n in self.neighbors], dtype=np.int64)

    @property
    def n_edges(self) -> int:
        """Undirected edge count."""
        return int(self.degree.sum()) // 2

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(source, target) index arrays covering both directions of each edge."""
        tgt = np.repeat(np.arange(self.n_items, dtype=np.int64), self.degree)
        src = (
            np.concatenate(self.neighbors)
            if self.n_edges
            else np.empty(0, dtype=np.int64)
        ).astype(np.int64)
        return src, tgt

    def undirected_pairs(self) -> list[tuple[int, int]]:
        return [(i, int(j)) for i in range(self.n_items) for j in self.neighbors[i] if i < j]


def copurchase_counts(interactions: InteractionMatrix) -> sp.csr_matrix:
    """Pairwise co-interaction counts (the Gram matrix of the binary X)."""
    x = interactions.matrix.astype(np.int64)
    return (x.T @ x).tocsr()


def threshold_graph(counts: sp.spmatrix, epsilon: int) -> ItemGraph:
    """Keep off-diagonal pairs with count >= epsilon."""
    if epsilon <= 0:
        raise ConfigError(f"epsilon must be a positive integer, got {epsilon}")
    coo = counts.tocoo()
    keep = (coo.data >= epsilon) & (coo.row != coo.col)
    n = counts.shape[0]
    adj = sp.coo_matrix(
        (np.ones(int(keep.sum()), dtype=np.int8), (coo.row[keep], coo.col[keep])), shape=(n, n)
    ).tocsr()
    adj.sum_duplicates()
    neighbors = tuple(
        np.sort(adj.indices[adj.indptr[i] : adj.indptr[i + 1]]).astype(np.int64) for i in range(n)
    )
    return ItemGraph(n_items=n, neighbors=neighbors, epsilon=int(epsilon))


def build_item_graph(interactions: InteractionMatrix, epsilon: int) -> ItemGraph:
    return threshold_graph(copurchase_counts(interactions), epsilon)


def interactions_checksum(interactions: InteractionMatrix) -> str:
    """Stable digest of the sparse pattern of X, for cache invalidation."""
    m = interactions.matrix.tocsr()
    m.sort_indices()
    h = hashlib.sha256()
    h.update(np.asarray(m.shape, dtype=np.int64).tobytes())
    h.update(m.indptr.astype(np.int64).tobytes())
    h.update(m.indices.astype(np.int64).tobytes())
    return h.hexdigest()


def save_graph_cache(graph: ItemGraph, path: Path | str, x_checksum: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# epsilon={graph.epsilon} n_items={graph.n_items} xhash={x_checksum}\n")
        for i, j in graph.undirected_pairs():
            fh.write(f"{i}\t{j}\n")


def load_graph_cache(path: Path | str, epsilon: int, x_checksum: str) -> ItemGraph | None:
    """Return the cached graph, or None when epsilon/X changed or no cache exists."""
    path = Path(path)
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        fields = dict(part.split("=", 1) for part in header.lstrip("# ").split())
        if fields.get("epsilon") != str(epsilon) or fields.get("xhash") != x_checksum:
            return None
        n = int(fields["n_items"])
        lists: list[list[int]] = [[] for _ in range(n)]
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            try:
                i, j = (int(p) for p in line.split("\t"))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad edge line {line!r}") from None
            lists[i].append(j)
            lists[j].append(i)
    neighbors = tuple(np.asarray(sorted(l), dtype=np.int64) for l in lists)
    return ItemGraph(n_items=n, neighbors=neighbors, epsilon=epsilon)
