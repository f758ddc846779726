"""
Natural visibility graphs of time series.

Points (i, s_i) and (j, s_j) are linked when every intermediate point k lies
strictly below the straight segment joining them:

    s_k < s_j + (s_i - s_j) * (j - k) / (j - i)   for all i < k < j

``build_nvg_naive`` evaluates this directly and is the reference;
``build_nvg_fast`` splits at the maximum and scans slopes outward.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, Tuple

import numpy as np

from app.errors import GraphError, SeriesValueError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VisibilityGraph:
    n_vertices: int
    edges: FrozenSet[Tuple[int, int]]

    @property
    def n_edges(self):
        return len(self.edges)

    def edge_array(self):
        """Edges as a sorted (m, 2) integer array with i < j per row."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array(sorted(self.edges), dtype=np.int64)

    def adjacency(self):
        """Neighbour lists, ascending."""
        neighbours = [[] for _ in range(self.n_vertices)]
        for i, j in sorted(self.edges):
            neighbours[i].append(j)
            neighbours[j].append(i)
        for row in neighbours:
            row.sort()
        return neighbours


def _as_series(series):
    values = np.asarray(series, dtype=np.float64)
    if values.ndim != 1 or values.size < 1:
        raise GraphError(f"Series must be one-dimensional and non-empty, got shape {values.shape}")
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise SeriesValueError(int(bad[0]), values[bad[0]])
    return values


def _make_graph(n, pairs):
    return VisibilityGraph(n, frozenset((int(i), int(j)) for i, j in pairs))


def build_nvg_naive(series):
    """
    Reference construction evaluating the visibility inequality for every triple.

    Args:
        series (array-like): Finite samples, length >= 1.

    Returns:
        VisibilityGraph: Graph on the series indices.
    """
    s = _as_series(series)
    n = len(s)
    pairs = []
    k = np.arange(n)
    for i in range(n - 1):
        j = np.arange(i + 1, n)
        # threshold[a, b] is the segment height over k[b] for target j[a]
        threshold = s[j, None] + (s[i] - s[j, None]) * (j[:, None] - k[None, :]) / (j[:, None] - i)
        between = (k[None, :] > i) & (k[None, :] < j[:, None])
        visible = np.all((s[None, :] < threshold) | ~between, axis=1)
        pairs.extend((i, int(jj)) for jj in j[visible])
    return _make_graph(n, pairs)


def _visible_from_peak(s, peak, side):
    """Indices on one side of ``peak`` (ordered outward) that the peak sees."""
    distance = np.arange(1, len(side) + 1, dtype=np.float64)
    slope = (s[peak] - s[side]) / distance
    steepest_before = np.concatenate(([np.inf], np.minimum.accumulate(slope)[:-1]))
    return side[slope < steepest_before]


def build_nvg_fast(series):
    """
    Divide-and-conquer construction on the leftmost maximum.

    No pair straddling the maximum can see over it, so each half is solved
    independently; the maximum sees exactly the points whose slope towards it
    is below every slope nearer to it. Expected O(n log n) on typical signals.

    Args:
        series (array-like): Finite samples, length >= 1.

    Returns:
        VisibilityGraph: Same edge set as build_nvg_naive.
    """
    s = _as_series(series)
    n = len(s)
    pairs = []
    stack = [(0, n - 1)]
    while stack:
        lo, hi = stack.pop()
        if lo >= hi:
            continue
        peak = lo + int(np.argmax(s[lo:hi + 1]))
        left = np.arange(peak - 1, lo - 1, -1)
        right = np.arange(peak + 1, hi + 1)
        pairs.extend((int(i), peak) for i in _visible_from_peak(s, peak, left))
        pairs.extend((peak, int(j)) for j in _visible_from_peak(s, peak, right))
        stack.append((lo, peak - 1))
        stack.append((peak + 1, hi))
    return _make_graph(n, pairs)


build_nvg = build_nvg_fast


def degree_sequence(graph):
    """Per-vertex degree; sums to twice the edge count."""
    edges = graph.edge_array()
    return np.bincount(edges.reshape(-1), minlength=graph.n_vertices).astype(np.int64).tolist()


def write_edge_list(graph, path):
    """Write ``i j`` pairs, one per line, after a ``# n=<vertices>`` line."""
    path = Path(path)
    lines = [f"# n={graph.n_vertices}"] + [f"{i} {j}" for i, j in sorted(graph.edges)]
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_edge_list(path):
    """Read a file written by write_edge_list."""
    n = None
    pairs = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line[1:].strip().startswith("n="):
                n = int(line[1:].strip()[2:])
            continue
        i, j = (int(x) for x in line.split())
        pairs.append((min(i, j), max(i, j)))
    if n is None:
        n = max((j for _, j in pairs), default=0) + 1
    return _make_graph(n, pairs)
