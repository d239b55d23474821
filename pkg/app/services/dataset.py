"""
Federated datasets: agent-partitioned points in R^p, seeded Gaussian-mixture
generation and the data-dependent constants used by the bounds (R0, boxes).
"""
import json
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import DimensionMismatch, EmptyData, InvalidParam
from app.schemas.experiment import MixtureComponent, MixtureSpec

logger = logging.getLogger(__name__)

# Recorded in provenance sidecars; bump the suffix if the sampling method changes.
PRNG_NAME = "numpy.random.PCG64/standard_normal-ziggurat/v1"

# A data point is a length-p float vector.
DataPoint = np.ndarray


def _as_block(points, dim: int) -> np.ndarray:
    block = np.asarray(points, dtype=float)
    if block.size == 0:
        block = np.zeros((0, dim))
    if block.ndim != 2 or block.shape[1] != dim:
        raise DimensionMismatch(f"expected points of dimension {dim}, got array of shape {block.shape}")
    if not np.all(np.isfinite(block)):
        raise InvalidParam("data points must be finite")
    block = np.array(block, copy=True)
    block.setflags(write=False)
    return block


@dataclass(frozen=True, eq=False)
class FederatedDataset:
    """
    The collective dataset D = D_1 ∪ ... ∪ D_M; agent m holds an (N_m, p) block.
    Agents may hold no points at all.
    """
    agents: Tuple[np.ndarray, ...]
    dim: int

    @classmethod
    def from_agents(cls, agents: Iterable, dim: Optional[int] = None) -> "FederatedDataset":
        agents = list(agents)
        if dim is None:
            dims = {np.asarray(a, dtype=float).reshape(len(a), -1).shape[1] for a in agents if len(a)}
            if len(dims) != 1:
                raise DimensionMismatch(f"cannot infer a single dimension from agents, got {sorted(dims)}")
            dim = dims.pop()
        return cls(tuple(_as_block(a, dim) for a in agents), dim)

    @classmethod
    def from_scalars(cls, agents: Iterable[Iterable[float]]) -> "FederatedDataset":
        """Shorthand for p = 1: each agent given as a flat list of reals."""
        return cls.from_agents([np.asarray(list(a), dtype=float).reshape(-1, 1) for a in agents], 1)

    @property
    def num_agents(self) -> int:
        return len(self.agents)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([len(a) for a in self.agents], dtype=np.int64)

    @property
    def N(self) -> int:
        return int(self.sizes.sum())

    @property
    def n_star(self) -> int:
        return int(self.sizes.max()) if self.num_agents else 0

    @cached_property
    def points(self) -> np.ndarray:
        """All points stacked agent by agent, shape (N, p)."""
        out = np.concatenate(self.agents, axis=0) if self.agents else np.zeros((0, self.dim))
        out.setflags(write=False)
        return out

    @cached_property
    def owner(self) -> np.ndarray:
        """Agent index of every row of `points`."""
        out = np.repeat(np.arange(self.num_agents), self.sizes)
        out.setflags(write=False)
        return out

    def to_dict(self) -> dict:
        return {"dim": self.dim, "agents": [a.tolist() for a in self.agents]}

    def to_json(self) -> str:
        # repr-based floats are the shortest exact round-trip form
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, payload: dict) -> "FederatedDataset":
        return cls.from_agents(payload["agents"], int(payload["dim"]))

    @classmethod
    def load(cls, path: str) -> "FederatedDataset":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def ring_mixture_spec(n: int = 50, std: float = 1.0) -> MixtureSpec:
    """Ten agents on the real line, five distinct means each held by two agents."""
    means = (5, 20, 30, 60, 100, 5, 20, 30, 60, 100)
    return MixtureSpec(components=[MixtureComponent(mean=[float(mu)], std=std, count=n) for mu in means])


def generate_mixture(spec: MixtureSpec, seed: int) -> FederatedDataset:
    """
    Agent m receives count_m samples from N(mean_m, std_m^2 I).
    One PCG64 stream seeded with `seed` is consumed agent by agent.
    """
    for c in spec.components:
        if not c.std > 0 or c.count < 0:
            raise InvalidParam(f"invalid mixture component: std={c.std}, count={c.count}")
    rng = np.random.Generator(np.random.PCG64(seed))
    agents = []
    for c in spec.components:
        z = rng.standard_normal((c.count, spec.dim))
        agents.append(np.asarray(c.mean, dtype=float) + c.std * z)
    data = FederatedDataset.from_agents(agents, spec.dim)
    logger.info(f"Generated mixture dataset: M={data.num_agents}, p={data.dim}, N={data.N}, seed={seed}")
    return data


def validate_k_distinct(d: FederatedDataset, K: int) -> bool:
    """True iff D holds at least K pairwise-distinct points (exact comparison)."""
    if K < 1:
        raise InvalidParam(f"K must be at least 1, got {K}")
    distinct = {tuple(row) for row in d.points.tolist()}
    return len(distinct) >= K


def hull_radius(d: FederatedDataset) -> float:
    """R0: the largest norm over co(D), attained at a data point."""
    if d.N == 0:
        raise EmptyData("hull radius of an empty dataset")
    return float(np.linalg.norm(d.points, axis=1).max())


def bounding_box(d: FederatedDataset, extra_points: Sequence[DataPoint] = ()) -> Tuple[np.ndarray, np.ndarray]:
    blocks: List[np.ndarray] = [d.points]
    if len(extra_points):
        blocks.append(_as_block(np.asarray(extra_points, dtype=float).reshape(-1, d.dim), d.dim))
    stacked = np.concatenate(blocks, axis=0)
    if stacked.shape[0] == 0:
        raise EmptyData("bounding box of an empty point set")
    return stacked.min(axis=0), stacked.max(axis=0)


def in_box(points: np.ndarray, box: Tuple[np.ndarray, np.ndarray], slack: float = 0.0) -> bool:
    lower, upper = box
    pts = np.asarray(points, dtype=float).reshape(-1, lower.shape[0])
    return bool(np.all(pts >= lower - slack) and np.all(pts <= upper + slack))
