from __future__ import annotations

import numpy as np

from .series import SensorGraph


def build_adjacency(coordinates, k: int = 4) -> SensorGraph:
    """Symmetric k-nearest-neighbour graph over node positions.

    Distance ties resolve toward the lower node index.  The kNN relation is
    symmetrised by union, so a node can end up with more than ``k`` edges.
    """
    coords = np.asarray(coordinates, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coordinates must be N x 2, got {coords.shape}")
    n = coords.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < N, got k={k}, N={n}")
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    a = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        nearest = np.argsort(dist[i], kind="stable")[:k]
        a[i, nearest] = 1
    a = np.maximum(a, a.T)
    np.fill_diagonal(a, 0)
    return SensorGraph(a, coords)


def grid_coordinates(n: int, spacing: float = 5.0) -> np.ndarray:
    """Lay ``n`` nodes on a near-square grid (meters), row-major."""
    cols = int(np.ceil(np.sqrt(n)))
    idx = np.arange(n)
    return np.stack([(idx % cols) * spacing, (idx // cols) * spacing], axis=1).astype(np.float64)
