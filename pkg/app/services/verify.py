"""
Optimality verifiers and independent oracles for the multi-agent objective.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from app.core.errors import DimensionMismatch, InvalidParam, SingularCluster
from app.schemas.reports import GapCheck, GenMinReport
from app.services.dataset import FederatedDataset, bounding_box, in_box, validate_k_distinct
from app.services.graph import Topology, is_connected
from app.services.lloyd import (
    _guard,
    as_heads,
    brute_force_global,
    centroids,
    cost_F,
    decode_assignments,
    global_minima,
    is_lloyd_minimum,
    squared_distances,
)
from app.services.nkmeans import (
    BOX_SLACK,
    LocalClustering,
    NetworkHeads,
    _check_state,
    cost_J,
    gap_bound,
    generated_partition,
    mean_heads,
)

logger = logging.getLogger(__name__)


def _labels(C, d: FederatedDataset, K: int) -> np.ndarray:
    labels = np.asarray(C, dtype=np.int64)
    if labels.shape != (d.N,):
        raise DimensionMismatch(f"clustering of shape {labels.shape} does not cover N={d.N} points")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DimensionMismatch(f"cluster labels must lie in 0..{K - 1}")
    return labels


def local_cluster_stats(C, d: FederatedDataset, K: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-agent cluster sizes (M, K) and coordinate sums (M, K, p)."""
    labels = _labels(C, d, K)
    counts = np.zeros((d.num_agents, K))
    sums = np.zeros((d.num_agents, K, d.dim))
    np.add.at(counts, (d.owner, labels), 1.0)
    np.add.at(sums, (d.owner, labels), d.points)
    return counts, sums


def fixed_point_targets(x: NetworkHeads, C, t: Topology, d: FederatedDataset, rho: float) -> np.ndarray:
    """mu(x, C) for every agent and cluster, as an (M, K, p) array."""
    counts, sums = local_cluster_stats(C, d, x.shape[1])
    adjacency = t.adjacency.astype(float)
    w = 1.0 / rho
    neighbor_sum = np.einsum("ml,lkp->mkp", adjacency, x)
    denom = w * counts + t.degrees.astype(float)[:, None]
    return (w * sums + neighbor_sum) / denom[:, :, None]


def is_generalized_minimum(
    x: NetworkHeads, C: LocalClustering, t: Topology, d: FederatedDataset, rho: float, tol: float
) -> GenMinReport:
    """
    Residuals of the two defining conditions: nearest assignment at every
    agent, and every head equal to its consensus+innovations target.
    """
    x = _check_state(x, t, d)
    if not is_connected(t):
        raise InvalidParam("generalized minima are defined for connected graphs only")
    labels = _labels(C, d, x.shape[1])
    nearest_violation = 0.0
    for m, block in enumerate(d.agents):
        if len(block) == 0:
            continue
        d2 = squared_distances(block, x[m])
        assigned = d2[np.arange(len(block)), labels[d.owner == m]]
        nearest_violation = max(nearest_violation, float((assigned - d2.min(axis=1)).max()))
    residual = float(np.linalg.norm(x - fixed_point_targets(x, labels, t, d, rho), axis=2).max())
    in_hull = d.N > 0 and in_box(x.reshape(-1, d.dim), bounding_box(d), BOX_SLACK)
    return GenMinReport(
        nearest_violation=nearest_violation,
        fixed_point_residual=residual,
        passes=nearest_violation <= tol and residual <= tol,
        in_hull_box=bool(in_hull),
    )


def solve_centers(C: LocalClustering, t: Topology, d: FederatedDataset, rho: float, K: Optional[int] = None) -> NetworkHeads:
    """
    argmin_x J(x, C): for each cluster k solve the SPD system
    ((1/rho) diag(|C_m^k|) + L) x^k = (1/rho) b^k, b_m^k the local cluster sum.
    """
    labels = np.asarray(C, dtype=np.int64)
    K = int(labels.max()) + 1 if K is None else K
    counts, sums = local_cluster_stats(labels, d, K)
    lap = t.laplacian.astype(float)
    w = 1.0 / rho
    x = np.zeros((d.num_agents, K, d.dim))
    for k in range(K):
        if counts[:, k].sum() == 0:
            raise SingularCluster(k)
        factor = cho_factor(w * np.diag(counts[:, k]) + lap)
        x[:, k, :] = cho_solve(factor, w * sums[:, k, :])
    return x


def centroid_tolerance(tol: float, t: Topology, d: FederatedDataset, rho: float) -> float:
    # a fixed-point residual r moves sum_m |C_m^k| x_m^k by at most (N + 2 rho |E|) r
    return tol * (d.N + 2.0 * rho * len(t.edges))


def weighted_centroid_check(x: NetworkHeads, C: LocalClustering, d: FederatedDataset, tol: float) -> bool:
    """For every k: || sum_m |C_m^k| x_m^k - sum_m sum_{y in C_m^k} y || <= tol."""
    x = np.asarray(x, dtype=float)
    counts, sums = local_cluster_stats(C, d, x.shape[1])
    weighted = np.einsum("mk,mkp->kp", counts, x)
    gap = np.linalg.norm(weighted - sums.sum(axis=0), axis=1)
    return bool(gap.max() <= tol) if gap.size else True


@dataclass
class QGlobalOptimum:
    heads: NetworkHeads
    clustering: LocalClustering
    cost: float


def brute_force_Q_global(
    t: Topology, d: FederatedDataset, K: int, rho: float, limit: Optional[int] = None
) -> QGlobalOptimum:
    """
    Global minimum of Q^rho by enumerating every joint local clustering.
    Clusterings that leave some cluster empty at every agent cannot be global
    minima and are skipped; the lexicographically smallest clustering wins ties.
    """
    size = _guard(d.N, K, limit)
    if not validate_k_distinct(d, K):
        raise InvalidParam(f"dataset has fewer than K={K} distinct points")
    best: Optional[QGlobalOptimum] = None
    for start in range(0, size, 4096):
        codes = np.arange(start, min(start + 4096, size), dtype=np.int64)
        labels = decode_assignments(codes, d.N, K)
        covered = np.all((labels[:, :, None] == np.arange(K)).any(axis=1), axis=1)
        for row in labels[covered]:
            x = solve_centers(row, t, d, rho, K)
            cost = cost_J(x, row, t, d, rho)
            if best is None or cost < best.cost - 1e-12 * (1.0 + best.cost):
                best = QGlobalOptimum(heads=x, clustering=row.copy(), cost=cost)
    logger.info(f"Brute-force Q oracle: N={d.N}, K={K}, rho={rho:g}, cost={best.cost:.10g}")
    return best


def check_gap_bound(
    t: Topology, d: FederatedDataset, K: int, rho: float, limit: Optional[int] = None
) -> GapCheck:
    """max_m F(x_m) at the Q^rho-global oracle against F* + the additive gap bound."""
    f_star = brute_force_global(d, K, limit).cost
    oracle = brute_force_Q_global(t, d, K, rho, limit)
    lhs = max(cost_F(oracle.heads[m], d) for m in range(d.num_agents))
    rhs = f_star + gap_bound(t, d, rho)
    return GapCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs + 1e-9)


def cost_equivalence_check(x: NetworkHeads, C: LocalClustering, d: FederatedDataset, tol: float) -> bool:
    """
    Builds the generated partition, takes the centroids of its non-empty
    clusters and asks whether that pair is a fixed point of centralized Lloyd.
    Clusters empty across the whole network carry no head.
    """
    x = np.asarray(x, dtype=float)
    partition = generated_partition(C)
    z = centroids(partition, d, mean_heads(x))
    return is_lloyd_minimum(z, partition, d, tol, ignore_empty=True)


def distance_to_set(x_m, Z: Sequence[np.ndarray]) -> float:
    """Distance of one agent's head tuple to a finite set, minimised over relabelings."""
    heads = np.asarray(x_m, dtype=float)
    if not len(Z):
        return float("inf")
    K = heads.shape[0]
    best = float("inf")
    for z in Z:
        z = as_heads(z, heads.shape[1])
        for perm in itertools.permutations(range(K)):
            best = min(best, float(np.linalg.norm(heads[list(perm)] - z)))
    return best


def oracle_distance_trend(
    t: Topology, d: FederatedDataset, K: int, rhos: Sequence[float], limit: Optional[int] = None
) -> List[Tuple[float, float]]:
    """For each rho: the largest per-agent distance from the Q^rho-global heads to Z_g."""
    Z = global_minima(d, K, limit=limit)
    out = []
    for rho in rhos:
        heads = brute_force_Q_global(t, d, K, rho, limit).heads
        out.append((float(rho), max(distance_to_set(heads[m], Z) for m in range(d.num_agents))))
    return out
