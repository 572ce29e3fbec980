"""The 12-node montage graph: channels are nodes, shared electrodes are edges."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import CHANNEL_NAMES, CHANNELS


@dataclass(frozen=True)
class MontageGraph:
    nodes: tuple[str, ...]
    adjacency: np.ndarray  # (12, 12) {0, 1}, symmetric, ones on the diagonal
    electrode_map: dict

    @property
    def n(self) -> int:
        return len(self.nodes)

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def mask(self) -> np.ndarray:
        return self.adjacency.astype(bool)

    def edges(self) -> list[tuple[str, str]]:
        """Undirected edges without self-loops, in node order."""
        return [
            (self.nodes[i], self.nodes[j])
            for i in range(self.n)
            for j in range(i + 1, self.n)
            if self.adjacency[i, j]
        ]

    def write_edge_list(self, path) -> Path:
        path = Path(path)
        lines = ["# source target"] + [f"{a} {b}" for a, b in self.edges()]
        path.write_text("\n".join(lines) + "\n")
        return path


def build_graph() -> MontageGraph:
    n = len(CHANNELS)
    adj = np.eye(n, dtype=np.int8)
    for i in range(n):
        for j in range(n):
            if set(CHANNELS[i]) & set(CHANNELS[j]):
                adj[i, j] = 1
    adj.setflags(write=False)
    return MontageGraph(
        nodes=CHANNEL_NAMES,
        adjacency=adj,
        electrode_map=dict(zip(CHANNEL_NAMES, CHANNELS)),
    )


def hop_distances(adjacency: np.ndarray) -> np.ndarray:
    """All-pairs BFS distances; unreachable pairs are ``inf``."""
    n = adjacency.shape[0]
    dist = np.full((n, n), np.inf)
    for src in range(n):
        dist[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in np.flatnonzero(adjacency[u]):
                if dist[src, v] == np.inf:
                    dist[src, v] = dist[src, u] + 1
                    queue.append(v)
    return dist


def k_hop_reach(graph: MontageGraph, k: int) -> float:
    """Fraction of ordered pairs ``(i, j), i != j`` within ``k`` hops."""
    if k < 1:
        raise ValueError("k must be >= 1")
    dist = hop_distances(graph.adjacency)
    off = ~np.eye(graph.n, dtype=bool)
    return float(np.mean(dist[off] <= k))


def diameter(graph: MontageGraph) -> int:
    return int(hop_distances(graph.adjacency).max())
