from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IBRL_MODALITIES = ("temperature", "humidity", "light", "voltage")
IBRL_INTERVAL_S = 31.0


@dataclass
class SensorSeries:
    """Multi-node multi-modal series, ``values[node, modality, step]``."""

    values: np.ndarray
    node_ids: list[int]
    modality_names: list[str]
    sample_interval: float = IBRL_INTERVAL_S
    start_epoch: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ValueError(f"values must be N x M x T with N, M, T >= 1, got {self.values.shape}")
        n, m, _ = self.values.shape
        if len(self.node_ids) != n:
            raise ValueError(f"{len(self.node_ids)} node ids for {n} nodes")
        if len(self.modality_names) != m:
            raise ValueError(f"{len(self.modality_names)} modality names for {m} modalities")
        if not np.isfinite(self.values).all():
            raise ValueError("series contains missing or non-finite cells")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_modalities(self) -> int:
        return self.values.shape[1]

    @property
    def n_steps(self) -> int:
        return self.values.shape[2]

    def slice_steps(self, start: int, stop: int) -> SensorSeries:
        return SensorSeries(
            self.values[:, :, start:stop].copy(),
            list(self.node_ids),
            list(self.modality_names),
            self.sample_interval,
            self.start_epoch + start,
        )

    def equals(self, other: SensorSeries) -> bool:
        return (
            self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
            and list(self.node_ids) == list(other.node_ids)
            and list(self.modality_names) == list(other.modality_names)
            and self.sample_interval == other.sample_interval
            and self.start_epoch == other.start_epoch
        )


@dataclass
class SensorGraph:
    adjacency: np.ndarray
    coordinates: np.ndarray | None = None

    def __post_init__(self) -> None:
        a = np.asarray(self.adjacency)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got {a.shape}")
        if not np.isin(a, (0, 1)).all():
            raise ValueError("adjacency must be binary")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        self.adjacency = a.astype(np.int64)
        if self.coordinates is not None:
            c = np.asarray(self.coordinates, dtype=np.float64)
            if c.shape != (a.shape[0], 2):
                raise ValueError(f"coordinates must be N x 2, got {c.shape}")
            self.coordinates = c

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum() // 2)

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def subgraph(self, keep: list[int] | np.ndarray) -> SensorGraph:
        keep = np.asarray(keep, dtype=np.int64)
        coords = None if self.coordinates is None else self.coordinates[keep]
        return SensorGraph(self.adjacency[np.ix_(keep, keep)], coords)


@dataclass
class IngestReport:
    n_lines: int = 0
    malformed: int = 0
    duplicates: int = 0
    impossible: int = 0
    filled_ffill: int = 0
    filled_interp: int = 0
    dropped_nodes: list[int] = field(default_factory=list)
