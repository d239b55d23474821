"""
Centralized K-means machinery: the costs F and H, Lloyd's algorithm, the
fixed-point test and an exhaustive global oracle for tiny instances.

Heads are (K, p) arrays. A global partition is an (N,) array of 0-based
cluster labels over `FederatedDataset.points` (agent-major order); empty
clusters are allowed.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from app.config import get_settings
from app.core.errors import DimensionMismatch, InvalidParam, MaxItersExceeded, TooLarge
from app.services.dataset import FederatedDataset, validate_k_distinct

logger = logging.getLogger(__name__)

HEAD_QUIET_TOL = 1e-12
_ENUM_CHUNK = 1 << 15

HeadTuple = np.ndarray
GlobalPartition = np.ndarray


def as_heads(x, dim: int) -> HeadTuple:
    heads = np.asarray(x, dtype=float)
    if heads.ndim == 1 and dim == 1:
        heads = heads.reshape(-1, 1)
    if heads.ndim != 2 or heads.shape[1] != dim:
        raise DimensionMismatch(f"heads of shape {heads.shape} do not match data dimension {dim}")
    if not np.all(np.isfinite(heads)):
        raise InvalidParam("heads must be finite")
    return heads


def squared_distances(points: np.ndarray, heads: np.ndarray) -> np.ndarray:
    """(N, K) matrix of ||y - x^k||^2."""
    diff = points[:, None, :] - heads[None, :, :]
    return np.einsum("nkp,nkp->nk", diff, diff)


def nearest(points: np.ndarray, heads: np.ndarray) -> np.ndarray:
    # argmin keeps the lowest index among ties
    return np.argmin(squared_distances(points, heads), axis=1)


def _check_partition(P, d: FederatedDataset, K: int) -> np.ndarray:
    labels = np.asarray(P, dtype=np.int64)
    if labels.shape != (d.N,):
        raise DimensionMismatch(f"partition of shape {labels.shape} does not cover N={d.N} points")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DimensionMismatch(f"partition labels must lie in 0..{K - 1}")
    return labels


def cost_F(x, d: FederatedDataset) -> float:
    heads = as_heads(x, d.dim)
    if d.N == 0:
        return 0.0
    return float(squared_distances(d.points, heads).min(axis=1).sum())


def cost_H(x, P, d: FederatedDataset) -> float:
    heads = as_heads(x, d.dim)
    labels = _check_partition(P, d, heads.shape[0])
    if d.N == 0:
        return 0.0
    diff = d.points - heads[labels]
    return float(np.einsum("np,np->", diff, diff))


def cluster_stats(labels: np.ndarray, points: np.ndarray, K: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-cluster counts (K,) and coordinate sums (K, p)."""
    counts = np.bincount(labels, minlength=K)
    sums = np.zeros((K, points.shape[1]))
    np.add.at(sums, labels, points)
    return counts, sums


def centroids(P, d: FederatedDataset, fallback) -> HeadTuple:
    """Centroids of the non-empty clusters; empty clusters keep `fallback[k]`."""
    heads = as_heads(fallback, d.dim).copy()
    labels = _check_partition(P, d, heads.shape[0])
    counts, sums = cluster_stats(labels, d.points, heads.shape[0])
    filled = counts > 0
    heads[filled] = sums[filled] / counts[filled, None]
    return heads


@dataclass
class LloydResult:
    heads: HeadTuple
    partition: GlobalPartition
    iters: int
    # per iteration: (H(x_t, P_t), H(x_t, P_{t+1}), H(x_{t+1}, P_{t+1})); the first H is nan
    cost_trace: List[Tuple[float, float, float]] = field(default_factory=list)

    @property
    def cost(self) -> float:
        return self.cost_trace[-1][2] if self.cost_trace else 0.0


def _iterate(d: FederatedDataset, init: HeadTuple, max_iters: int) -> LloydResult:
    x = init.copy()
    P: Optional[np.ndarray] = None
    trace: List[Tuple[float, float, float]] = []
    points = d.points
    for it in range(1, max_iters + 1):
        d2 = squared_distances(points, x)
        best = np.argmin(d2, axis=1)
        if P is None:
            new_P = best
            h_before = float("nan")
        else:
            rows = np.arange(len(P))
            # move a point only on strict improvement; exact ties keep the current cluster
            improve = d2[rows, best] < d2[rows, P]
            new_P = np.where(improve, best, P)
            h_before = float(d2[rows, P].sum())
        rows = np.arange(len(new_P))
        h_reassigned = float(d2[rows, new_P].sum())
        new_x = centroids(new_P, d, x)
        diff = points - new_x[new_P]
        h_updated = float(np.einsum("np,np->", diff, diff))
        trace.append((h_before, h_reassigned, h_updated))

        moved = float(np.abs(new_x - x).max()) if x.size else 0.0
        stable = P is None or np.array_equal(new_P, P)
        if stable and moved < HEAD_QUIET_TOL:
            return LloydResult(heads=x, partition=new_P, iters=it, cost_trace=trace)
        x, P = new_x, new_P
    raise MaxItersExceeded(max_iters)


def lloyd_run(d: FederatedDataset, K: int, init, max_iters: int = 10_000) -> LloydResult:
    """
    Reassign-then-centroid until the (heads, partition) pair repeats.

    Reassignment picks the lowest-index nearest head on the first pass and
    afterwards moves a point only on strict improvement. Empty clusters keep
    their previous head.
    """
    heads = as_heads(init, d.dim)
    if heads.shape[0] != K:
        raise DimensionMismatch(f"init has {heads.shape[0]} heads, expected K={K}")
    if not validate_k_distinct(d, K):
        raise InvalidParam(f"dataset has fewer than K={K} distinct points")
    result = _iterate(d, heads, max_iters)
    logger.debug(f"Lloyd converged in {result.iters} iterations, cost={result.cost:.6g}")
    return result


def is_lloyd_minimum(x, P, d: FederatedDataset, tol: float, ignore_empty: bool = False) -> bool:
    """
    Every point sits at its nearest head and every non-empty cluster's head is
    its centroid. With `ignore_empty`, heads of empty clusters are placeholders
    and take no part in the nearest test.
    """
    heads = as_heads(x, d.dim)
    labels = _check_partition(P, d, heads.shape[0])
    if d.N == 0:
        return True
    counts, sums = cluster_stats(labels, d.points, heads.shape[0])
    filled = counts > 0
    d2 = squared_distances(d.points, heads)
    assigned = d2[np.arange(d.N), labels]
    rivals = d2[:, filled] if ignore_empty else d2
    if np.any(assigned > rivals.min(axis=1) + tol):
        return False
    if not np.any(filled):
        return True
    gap = np.abs(heads[filled] - sums[filled] / counts[filled, None])
    return bool(gap.max() <= tol)


def _guard(N: int, K: int, limit: Optional[int]) -> int:
    limit = get_settings().ORACLE_MAX_ASSIGNMENTS if limit is None else limit
    size = K ** N
    if size > limit:
        raise TooLarge(size, limit)
    return size


def decode_assignments(codes: np.ndarray, N: int, K: int) -> np.ndarray:
    """Base-K digits of `codes`, point 0 most significant (lexicographic order)."""
    powers = K ** np.arange(N - 1, -1, -1, dtype=np.int64)
    return (codes[:, None] // powers[None, :]) % K


def _enumerate_costs(d: FederatedDataset, K: int, limit: Optional[int]) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yields (codes, H at centroids) for every assignment, chunk by chunk."""
    size = _guard(d.N, K, limit)
    points = d.points
    total = float(np.einsum("np,np->", points, points))
    for start in range(0, size, _ENUM_CHUNK):
        codes = np.arange(start, min(start + _ENUM_CHUNK, size), dtype=np.int64)
        labels = decode_assignments(codes, d.N, K)
        onehot = (labels[:, :, None] == np.arange(K)[None, None, :]).astype(float)
        counts = onehot.sum(axis=1)
        sums = np.einsum("bnk,np->bkp", onehot, points)
        sq = np.einsum("bkp,bkp->bk", sums, sums)
        explained = np.divide(sq, counts, out=np.zeros_like(sq), where=counts > 0).sum(axis=1)
        yield codes, np.maximum(total - explained, 0.0)


def _tie_tol(value: float) -> float:
    return 1e-12 * (1.0 + abs(value))


@dataclass
class GlobalOptimum:
    heads: HeadTuple
    partition: GlobalPartition
    cost: float


def brute_force_global(d: FederatedDataset, K: int, limit: Optional[int] = None) -> GlobalOptimum:
    """
    Exhaustive minimum of H over all K^N assignments with centroid heads.
    Among cost ties the lexicographically smallest assignment wins; heads of
    empty clusters sit at the first data point.
    """
    if not validate_k_distinct(d, K):
        raise InvalidParam(f"dataset has fewer than K={K} distinct points")
    best_cost, best_code = np.inf, -1
    for codes, costs in _enumerate_costs(d, K, limit):
        low = float(costs.min())
        if low < best_cost - _tie_tol(best_cost if np.isfinite(best_cost) else 0.0):
            first = int(np.flatnonzero(costs <= low + _tie_tol(low))[0])
            best_cost, best_code = low, int(codes[first])
    labels = decode_assignments(np.array([best_code]), d.N, K)[0]
    fallback = np.repeat(d.points[:1], K, axis=0)
    heads = centroids(labels, d, fallback)
    cost = cost_H(heads, labels, d)
    logger.info(f"Brute-force K-means oracle: N={d.N}, K={K}, F*={cost:.10g}")
    return GlobalOptimum(heads=heads, partition=labels, cost=cost)


def _canonical_labels(labels: np.ndarray) -> Tuple[int, ...]:
    order = {}
    return tuple(order.setdefault(int(l), len(order)) for l in labels)


def global_minima(d: FederatedDataset, K: int, tol: float = 1e-9, limit: Optional[int] = None) -> List[HeadTuple]:
    """The finite set Z_g: head tuples of every optimal partition, one per relabeling class."""
    f_star = brute_force_global(d, K, limit).cost
    seen = set()
    out: List[HeadTuple] = []
    fallback = np.repeat(d.points[:1], K, axis=0)
    for codes, costs in _enumerate_costs(d, K, limit):
        for code in codes[costs <= f_star + tol * (1.0 + f_star)]:
            labels = decode_assignments(np.array([code]), d.N, K)[0]
            key = _canonical_labels(labels)
            if key in seen:
                continue
            seen.add(key)
            out.append(centroids(np.array(key), d, fallback))
    return out


def local_baseline(d: FederatedDataset, K: int, init, max_iters: int = 10_000) -> List[HeadTuple]:
    """
    Every agent runs Lloyd on its own data only. Agents without data keep
    the initial heads.
    """
    heads = as_heads(init, d.dim)
    out = []
    for block in d.agents:
        if len(block) == 0:
            out.append(heads.copy())
            continue
        local = FederatedDataset.from_agents([block], d.dim)
        out.append(_iterate(local, heads, max_iters).heads)
    return out
