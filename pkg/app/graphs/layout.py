"""
Kamada-Kawai force-directed layout.

Every vertex pair (i, j) is joined by a spring of rest length l_ij = L * d_ij
and stiffness k_ij = K / d_ij**2, d_ij being the graph distance. The layout
minimises

    E = sum_{i<j} 1/2 * k_ij * (|P_i - P_j| - l_ij)**2

by moving one vertex at a time, always the one with the largest gradient.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy import sparse

from app.errors import ConfigError, GraphError

logger = logging.getLogger(__name__)

_JITTER = 1e-9
_MIN_DISTANCE = 1e-12
_MAX_HALVINGS = 40


@dataclass
class LayoutConfig:
    """
    Attributes:
        L: display length per unit of graph distance
        K: spring constant numerator
        tolerance: stop once every vertex gradient norm is below this; None means 1e-4 * L
        max_iterations: vertex moves allowed; None means 200 * n
        seed: seeds the coincident-vertex jitter
    """
    L: float = 1.0
    K: float = 1.0
    tolerance: Optional[float] = None
    max_iterations: Optional[int] = None
    seed: int = 0

    def validate(self):
        problems = []
        if not self.L > 0:
            problems.append(f"layout.L must be > 0 (got {self.L})")
        if not self.K > 0:
            problems.append(f"layout.K must be > 0 (got {self.K})")
        if self.tolerance is not None and not self.tolerance > 0:
            problems.append(f"layout.tolerance must be > 0 (got {self.tolerance})")
        if self.max_iterations is not None and not self.max_iterations > 0:
            problems.append(f"layout.max_iterations must be > 0 (got {self.max_iterations})")
        return problems

    def resolved_tolerance(self):
        return self.tolerance if self.tolerance is not None else 1e-4 * self.L

    def resolved_max_iterations(self, n):
        return self.max_iterations if self.max_iterations is not None else 200 * max(n, 1)


@dataclass
class LayoutResult:
    positions: np.ndarray
    energy: float
    iterations_used: int
    distances: np.ndarray
    converged: bool = True
    energy_history: List[float] = field(default_factory=list)


def bfs_apsp(graph):
    """
    Unit-weight all-pairs shortest paths by breadth-first search.

    All sources advance one BFS level together through a sparse adjacency
    product, so the cost stays O(n * (n + m)).

    Raises:
        GraphError: the graph is disconnected.
    """
    n = graph.n_vertices
    if n == 0:
        return np.zeros((0, 0))
    edges = graph.edge_array()
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adjacency = sparse.csr_matrix((np.ones(len(rows), dtype=np.int32), (rows, cols)), shape=(n, n))

    distances = np.full((n, n), -1, dtype=np.int64)
    np.fill_diagonal(distances, 0)
    frontier = sparse.identity(n, dtype=np.int32, format="csr")
    level = 0
    while frontier.nnz:
        level += 1
        reached = (frontier @ adjacency).tocoo()
        fresh = distances[reached.row, reached.col] < 0
        src, dst = reached.row[fresh], reached.col[fresh]
        distances[src, dst] = level
        frontier = sparse.csr_matrix((np.ones(len(src), dtype=np.int32), (src, dst)), shape=(n, n))

    if (distances < 0).any():
        raise GraphError("Graph is disconnected; shortest paths are undefined")
    return distances.astype(np.float64)


def _springs(distances, L, K):
    d = np.asarray(distances, dtype=np.float64)
    safe = np.where(d > 0, d, 1.0)
    k = np.where(d > 0, K / safe ** 2, 0.0)
    return L * d, k


def layout_energy(positions, distances, L=1.0, K=1.0):
    """Total spring energy summed over unordered vertex pairs."""
    P = np.asarray(positions, dtype=np.float64)
    lengths, stiffness = _springs(distances, L, K)
    r = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
    i, j = np.triu_indices(len(P), k=1)
    return float(0.5 * np.sum(stiffness[i, j] * (r[i, j] - lengths[i, j]) ** 2))


def _separate_coincident(P, L, seed):
    """Nudge coincident vertices apart by a seeded, tiny offset."""
    rng = np.random.default_rng(seed)
    P = P.copy()
    for _ in range(16):
        r = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
        np.fill_diagonal(r, np.inf)
        clash = np.flatnonzero((r == 0).any(axis=1))
        if clash.size == 0:
            break
        P[clash] += rng.normal(scale=_JITTER * L, size=(clash.size, 2))
    return P


def energy_gradient(positions, distances, L=1.0, K=1.0, seed=0):
    """
    Analytic gradient: dE/dP_i = sum_j k_ij * (1 - l_ij / |P_i - P_j|) * (P_i - P_j).

    Coincident vertices are first separated by a deterministic jitter.

    Returns:
        np.ndarray: (n, 2) gradient.
    """
    P = _separate_coincident(np.asarray(positions, dtype=np.float64), L, seed)
    lengths, stiffness = _springs(distances, L, K)
    diff = P[:, None, :] - P[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(r, 1.0)
    coefficient = stiffness * (1.0 - lengths / r)
    np.fill_diagonal(coefficient, 0.0)
    return np.einsum("ij,ijk->ik", coefficient, diff)


def circle_placement(n, L=1.0):
    """Vertices on a circle of radius n * L / (2 pi), in index order."""
    if n == 1:
        return np.zeros((1, 2))
    radius = n * L / (2.0 * math.pi)
    angles = 2.0 * math.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


class _VertexSprings:
    """Energy and derivatives restricted to the springs of one vertex."""

    def __init__(self, P, lengths, stiffness, m):
        self.others = np.delete(P, m, axis=0)
        self.l = np.delete(lengths[m], m)
        self.k = np.delete(stiffness[m], m)

    def energy(self, p):
        r = np.maximum(np.linalg.norm(p - self.others, axis=1), _MIN_DISTANCE)
        return float(0.5 * np.sum(self.k * (r - self.l) ** 2))

    def newton_step(self, p, gradient):
        diff = p - self.others
        r = np.maximum(np.linalg.norm(diff, axis=1), _MIN_DISTANCE)
        r3 = r ** 3
        dxx = np.sum(self.k * (1.0 - self.l * diff[:, 1] ** 2 / r3))
        dyy = np.sum(self.k * (1.0 - self.l * diff[:, 0] ** 2 / r3))
        dxy = np.sum(self.k * self.l * diff[:, 0] * diff[:, 1] / r3)
        det = dxx * dyy - dxy * dxy
        if det <= 0 or dxx <= 0:
            return None
        return -np.array([dyy * gradient[0] - dxy * gradient[1],
                          dxx * gradient[1] - dxy * gradient[0]]) / det


def _contributions(P, lengths, stiffness, m):
    """Row of pair terms k_jm * (1 - l_jm / r_jm) * (P_j - P_m) for every j."""
    diff = P - P[m]
    r = np.linalg.norm(diff, axis=1)
    r[m] = 1.0
    coefficient = stiffness[m] * (1.0 - lengths[m] / np.maximum(r, _MIN_DISTANCE))
    coefficient[m] = 0.0
    return coefficient[:, None] * diff


def kamada_kawai(graph, config=None):
    """
    Lay out a connected graph by per-vertex Newton moves.

    Starting from the circle placement, the vertex with the largest gradient
    norm takes a 2-D Newton step; if that does not lower the energy a halving
    gradient step is tried instead. Only energy-lowering moves are accepted.

    Args:
        graph (VisibilityGraph): Connected graph with at least one vertex.
        config (LayoutConfig): Spring constants and stopping rule.

    Returns:
        LayoutResult: Final positions, exact energy and convergence flag.
    """
    config = config or LayoutConfig()
    problems = config.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    n = graph.n_vertices
    if n == 0:
        raise GraphError("Cannot lay out an empty graph")

    distances = bfs_apsp(graph)
    P = circle_placement(n, config.L)
    if n == 1:
        return LayoutResult(P, 0.0, 0, distances, True, [0.0])

    lengths, stiffness = _springs(distances, config.L, config.K)
    P = _separate_coincident(P, config.L, config.seed)
    gradient = energy_gradient(P, distances, config.L, config.K, config.seed)
    energy = layout_energy(P, distances, config.L, config.K)
    history = [energy]
    tolerance = config.resolved_tolerance()
    max_iterations = config.resolved_max_iterations(n)

    converged = False
    iterations = 0
    while iterations < max_iterations:
        norms = np.linalg.norm(gradient, axis=1)
        m = int(np.argmax(norms))
        if norms[m] < tolerance:
            converged = True
            break

        springs = _VertexSprings(P, lengths, stiffness, m)
        old = P[m].copy()
        before = springs.energy(old)
        accepted = None
        step = springs.newton_step(old, gradient[m])
        if step is not None and springs.energy(old + step) < before:
            accepted = old + step
        else:
            alpha = 1.0 / max(np.sum(springs.k), _MIN_DISTANCE)
            for _ in range(_MAX_HALVINGS):
                candidate = old - alpha * gradient[m]
                if springs.energy(candidate) < before:
                    accepted = candidate
                    break
                alpha *= 0.5
        if accepted is None:
            logger.debug(f"event=layout_stalled vertex={m} gradient_norm={norms[m]:.3e}")
            break

        energy += springs.energy(accepted) - before
        previous = _contributions(P, lengths, stiffness, m)
        P[m] = accepted
        current = _contributions(P, lengths, stiffness, m)
        gradient += current - previous
        gradient[m] = -current.sum(axis=0)
        history.append(energy)
        iterations += 1

    final_energy = layout_energy(P, distances, config.L, config.K)
    if not converged:
        logger.warning(f"event=layout_not_converged n={n} iterations={iterations} energy={final_energy:.6g}")
    return LayoutResult(P, final_energy, iterations, distances, converged, history)


def write_positions_csv(result, path):
    """Write ``index,x,y`` rows."""
    path = Path(path)
    frame = pd.DataFrame(result.positions, columns=["x", "y"])
    frame.index.name = "index"
    frame.to_csv(path)
    return path
