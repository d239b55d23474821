"""
Undirected communication graphs, their Laplacian spectra and topology generators.
"""
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import FrozenSet, Iterable, List, Optional, Set, Tuple

import networkx as nx
import numpy as np

from app.core.errors import IndexOutOfRange, InvalidParam, NotConnected

logger = logging.getLogger(__name__)

EIG_TOL = 1e-10
ER_MAX_ATTEMPTS = 1000
TOPOLOGY_KINDS = ("ring", "path", "complete", "star", "erdos_renyi")

Edge = Tuple[int, int]


def _canonical(edges: Iterable[Iterable[int]]) -> FrozenSet[Edge]:
    out = set()
    for e in edges:
        m, l = (int(v) for v in e)
        out.add((min(m, l), max(m, l)))
    return frozenset(out)


@dataclass(frozen=True)
class Topology:
    """
    Undirected simple graph over agents 0..M-1.

    Structural invariants (no self-loops, indices in range) are checked here;
    connectivity is checked by `Topology.connected` and `build_topology`.
    """
    num_agents: int
    edges: FrozenSet[Edge]

    def __post_init__(self):
        if self.num_agents < 1:
            raise InvalidParam(f"num_agents must be positive, got {self.num_agents}")
        object.__setattr__(self, "edges", _canonical(self.edges))
        for m, l in self.edges:
            if m == l:
                raise InvalidParam(f"self-loop at agent {m}")
            if l >= self.num_agents or m < 0:
                raise IndexOutOfRange(f"edge ({m},{l}) outside 0..{self.num_agents - 1}")

    @classmethod
    def connected(cls, num_agents: int, edges: Iterable[Iterable[int]]) -> "Topology":
        t = cls(num_agents, _canonical(edges))
        if not is_connected(t):
            raise NotConnected(f"graph on {num_agents} agents with {len(t.edges)} edges is not connected")
        return t

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.num_agents))
        g.add_edges_from(self.edges)
        return g

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_agents, self.num_agents), dtype=np.int64)
        for m, l in self.edges:
            a[m, l] = 1
            a[l, m] = 1
        a.setflags(write=False)
        return a

    @cached_property
    def degrees(self) -> np.ndarray:
        d = self.adjacency.sum(axis=1)
        d.setflags(write=False)
        return d

    @cached_property
    def laplacian(self) -> np.ndarray:
        # integer arithmetic: row sums are exactly zero
        lap = np.diag(self.degrees) - self.adjacency
        lap.setflags(write=False)
        return lap

    def sorted_edges(self) -> List[Edge]:
        return sorted(self.edges)

    @cached_property
    def edge_array(self) -> np.ndarray:
        """Sorted edges as an (|E|, 2) integer array."""
        out = np.array(self.sorted_edges(), dtype=np.int64).reshape(-1, 2)
        out.setflags(write=False)
        return out

    def to_dict(self) -> dict:
        return {"num_agents": self.num_agents, "edges": [list(e) for e in self.sorted_edges()]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, payload: dict, require_connected: bool = True) -> "Topology":
        if require_connected:
            return cls.connected(payload["num_agents"], payload["edges"])
        return cls(payload["num_agents"], _canonical(payload["edges"]))


@dataclass(frozen=True)
class LaplacianSpectrum:
    eigenvalues: Tuple[float, ...]
    d_min: int
    d_max: int

    @property
    def lambda_2(self) -> float:
        return self.eigenvalues[1] if len(self.eigenvalues) > 1 else 0.0

    @property
    def lambda_max(self) -> float:
        return self.eigenvalues[-1]


def sample_erdos_renyi(M: int, edge_prob: float, seed: int) -> Topology:
    """Raw G(M, p) candidate, connected or not."""
    g = nx.gnp_random_graph(M, edge_prob, seed=seed)
    return Topology(M, _canonical(g.edges()))


def build_topology(kind: str, M: int, edge_prob: Optional[float] = None, seed: int = 0) -> Topology:
    """
    Builds a connected topology of the given kind.

    erdos_renyi resamples with seed+attempt until the candidate is connected,
    giving up after ER_MAX_ATTEMPTS.
    """
    if M < 2:
        raise InvalidParam(f"need at least 2 agents, got M={M}")
    if kind not in TOPOLOGY_KINDS:
        raise InvalidParam(f"unknown topology kind '{kind}'")
    if kind == "erdos_renyi":
        if edge_prob is None or not (0.0 < edge_prob <= 1.0):
            raise InvalidParam(f"erdos_renyi needs edge_prob in (0,1], got {edge_prob}")
    elif edge_prob is not None:
        raise InvalidParam(f"edge_prob is only meaningful for erdos_renyi, got kind '{kind}'")

    if kind == "ring":
        g = nx.cycle_graph(M)
    elif kind == "path":
        g = nx.path_graph(M)
    elif kind == "complete":
        g = nx.complete_graph(M)
    elif kind == "star":
        g = nx.star_graph(M - 1)
    else:
        for attempt in range(ER_MAX_ATTEMPTS):
            candidate = sample_erdos_renyi(M, edge_prob, seed + attempt)
            if is_connected(candidate):
                if attempt:
                    logger.debug(f"erdos_renyi(M={M}, p={edge_prob}) connected after {attempt + 1} samples")
                return candidate
        raise NotConnected(f"erdos_renyi(M={M}, p={edge_prob}) stayed disconnected after {ER_MAX_ATTEMPTS} attempts")
    return Topology.connected(M, g.edges())


def neighbors(t: Topology, m: int) -> Set[int]:
    if not 0 <= m < t.num_agents:
        raise IndexOutOfRange(f"agent {m} outside 0..{t.num_agents - 1}")
    return set(t.graph.neighbors(m))


def spectrum(t: Topology) -> LaplacianSpectrum:
    values = np.linalg.eigvalsh(t.laplacian.astype(float))
    values = np.where(np.abs(values) < EIG_TOL, 0.0, values)
    return LaplacianSpectrum(
        eigenvalues=tuple(float(v) for v in np.sort(values)),
        d_min=int(t.degrees.min()),
        d_max=int(t.degrees.max()),
    )


def is_connected(t: Topology) -> bool:
    return nx.is_connected(t.graph)
