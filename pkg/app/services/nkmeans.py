"""
NK-means: synchronous round-based distributed K-means over a communication graph.

Every round each agent
  1. reassigns its local points to the nearest of its own heads, then
  2. moves every head towards mu = ((1/rho) * local cluster sum + sum of the
     neighbours' heads) / ((1/rho) * local cluster size + |neighbours|),
     x <- x - alpha * (x - mu),
reading only the round-start snapshot of the neighbours' heads.

State layout: heads are an (M, K, p) array; a local clustering is an (N,)
label array aligned with `FederatedDataset.points`, so it doubles as the
generated global partition P^k = C_1^k ∪ ... ∪ C_M^k.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from app.config import get_settings
from app.core.errors import DimensionMismatch, InvalidParam, MaxRoundsExceeded, NoNeighbors, NotConnected
from app.services.dataset import FederatedDataset, bounding_box, hull_radius, in_box, validate_k_distinct
from app.services.graph import LaplacianSpectrum, Topology, is_connected, spectrum
from app.services.lloyd import squared_distances

logger = logging.getLogger(__name__)

DESCENT_RTOL = 1e-9
BOX_SLACK = 1e-12
PROGRESS_EVERY = 1000

NetworkHeads = np.ndarray
LocalClustering = np.ndarray


@dataclass(frozen=True)
class RunConfig:
    rho: float
    alpha: Union[float, str] = "auto"
    max_rounds: int = 100_000
    head_tol: float = 1e-10
    stability_window: int = 10
    seed: int = 0
    # keep every n-th round's heads in RunResult.trajectory (0 = off)
    record_every: int = 0

    def __post_init__(self):
        if not self.rho > 0:
            raise InvalidParam(f"rho must be positive, got {self.rho}")
        if self.alpha != "auto" and not (isinstance(self.alpha, (int, float)) and self.alpha > 0):
            raise InvalidParam(f"alpha must be positive or 'auto', got {self.alpha}")
        if self.max_rounds < 1 or self.stability_window < 1 or not self.head_tol > 0:
            raise InvalidParam("max_rounds, stability_window and head_tol must be positive")

    @classmethod
    def with_defaults(cls, rho: float, **overrides) -> "RunConfig":
        s = get_settings()
        base = dict(
            max_rounds=s.DEFAULT_MAX_ROUNDS,
            head_tol=s.DEFAULT_HEAD_TOL,
            stability_window=s.DEFAULT_STABILITY_WINDOW,
        )
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(rho=rho, **base)


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    cost_J: float
    cost_Q: float
    descent_slack: float
    innovation_norm: float
    consensus_dev: float
    partition_changed: bool
    head_step: float = 0.0
    mean_drift: float = 0.0


TRACE_COLUMNS = [
    "round", "cost_J", "cost_Q", "descent_slack", "innovation_norm",
    "consensus_dev", "partition_changed", "head_step", "mean_drift",
]


@dataclass
class RunResult:
    heads: NetworkHeads
    clustering: LocalClustering
    trace: List[RoundMetrics]
    partition_convergence_round: Optional[int]
    rounds_run: int
    converged: bool
    alpha: float
    descent_violations: int = 0
    boundedness_violations: int = 0
    q_ascent_violations: int = 0
    trajectory: List[Tuple[int, np.ndarray]] = field(default_factory=list)


# --- step-size machinery -----------------------------------------------------

def alpha_max(t: Topology, d: FederatedDataset, rho: float) -> float:
    """Upper end of the admissible step sizes: d_min / ((1/rho) N* + lambda_M)."""
    sp = spectrum(t)
    return sp.d_min / (d.n_star / rho + sp.lambda_max)


def c_alpha(t: Topology, d: FederatedDataset, rho: float, alpha: float) -> float:
    """Guaranteed per-round descent constant 2a(d_min - a((1/rho) N* + lambda_M))."""
    sp = spectrum(t)
    return 2.0 * alpha * (sp.d_min - alpha * (d.n_star / rho + sp.lambda_max))


def resolve_alpha(t: Topology, d: FederatedDataset, cfg: RunConfig) -> float:
    upper = alpha_max(t, d, cfg.rho)
    if cfg.alpha == "auto":
        return 0.5 * upper
    alpha = float(cfg.alpha)
    if not 0.0 < alpha < upper:
        raise InvalidParam(f"alpha={alpha} outside the admissible interval (0, {upper:.6g})")
    return alpha


# --- per-agent primitives ----------------------------------------------------

def reassign(x_m: np.ndarray, D_m: np.ndarray) -> np.ndarray:
    """Nearest own head for every local point; ties go to the lowest index."""
    if len(D_m) == 0:
        return np.zeros(0, dtype=np.int64)
    if D_m.shape[1] != x_m.shape[1]:
        raise DimensionMismatch(f"points of dimension {D_m.shape[1]} vs heads of dimension {x_m.shape[1]}")
    return np.argmin(squared_distances(D_m, x_m), axis=1)


def mu(m: int, k: int, cluster: Sequence, neighbor_heads: Sequence, rho: float) -> np.ndarray:
    """The consensus+innovations target of head k at agent m."""
    neighbor_heads = np.asarray(neighbor_heads, dtype=float)
    if len(neighbor_heads) == 0:
        raise NoNeighbors(f"agent {m} has no neighbours (cluster {k})")
    neighbor_heads = neighbor_heads.reshape(len(neighbor_heads), -1)
    cluster = np.asarray(cluster, dtype=float).reshape(-1, neighbor_heads.shape[1])
    w = 1.0 / rho
    return (w * cluster.sum(axis=0) + neighbor_heads.sum(axis=0)) / (w * len(cluster) + len(neighbor_heads))


def reassign_all(x: NetworkHeads, d: FederatedDataset) -> LocalClustering:
    """`reassign` at every agent at once, labels aligned with `d.points`."""
    if d.N == 0:
        return np.zeros(0, dtype=np.int64)
    x = np.asarray(x, dtype=float)
    if x.shape[2] != d.dim:
        raise DimensionMismatch(f"points of dimension {d.dim} vs heads of dimension {x.shape[2]}")
    diff = d.points[:, None, :] - x[d.owner]
    return np.argmin(np.einsum("nkp,nkp->nk", diff, diff), axis=1).astype(np.int64)


def generated_partition(C: LocalClustering) -> np.ndarray:
    """P^k = ∪_m C_m^k, as labels over the stacked points."""
    return np.asarray(C, dtype=np.int64)


def mean_heads(x: NetworkHeads) -> np.ndarray:
    return np.asarray(x, dtype=float).mean(axis=0)


# --- costs and bounds --------------------------------------------------------

def _check_state(x: NetworkHeads, t: Topology, d: FederatedDataset) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[0] != t.num_agents or x.shape[2] != d.dim:
        raise DimensionMismatch(f"heads of shape {x.shape} do not match M={t.num_agents}, p={d.dim}")
    if d.num_agents != t.num_agents:
        raise DimensionMismatch(f"dataset has {d.num_agents} agents, topology has {t.num_agents}")
    return x


def consensus_penalty(x: NetworkHeads, t: Topology) -> float:
    if not t.edges:
        return 0.0
    e = t.edge_array
    diff = x[e[:, 0]] - x[e[:, 1]]
    return float(np.einsum("ekp,ekp->", diff, diff))


def cost_J(x: NetworkHeads, C: LocalClustering, t: Topology, d: FederatedDataset, rho: float) -> float:
    x = _check_state(x, t, d)
    labels = np.asarray(C, dtype=np.int64)
    if labels.shape != (d.N,):
        raise DimensionMismatch(f"clustering of shape {labels.shape} does not cover N={d.N} points")
    clustering = 0.0
    if d.N:
        diff = d.points - x[d.owner, labels]
        clustering = float(np.einsum("np,np->", diff, diff))
    return clustering / rho + consensus_penalty(x, t)


def cost_Q(x: NetworkHeads, t: Topology, d: FederatedDataset, rho: float) -> float:
    x = _check_state(x, t, d)
    return cost_J(x, reassign_all(x, d), t, d, rho)


def consensus_deviation(x: NetworkHeads) -> float:
    """max over k and agent pairs of ||x_m^k - x_l^k||."""
    x = np.asarray(x, dtype=float)
    diff = x[:, None, :, :] - x[None, :, :, :]
    return float(np.sqrt(np.einsum("mlkp,mlkp->mlk", diff, diff).max()))


def _require_connected(t: Topology) -> LaplacianSpectrum:
    if not is_connected(t):
        raise NotConnected("the bound needs a connected communication graph")
    return spectrum(t)


def consensus_bound(t: Topology, d: FederatedDataset, rho: float) -> float:
    sp = _require_connected(t)
    return 4.0 * np.sqrt(t.num_agents) * hull_radius(d) * d.N / (rho * sp.lambda_2)


def gap_bound(t: Topology, d: FederatedDataset, rho: float) -> float:
    sp = _require_connected(t)
    return 16.0 * np.sqrt(t.num_agents) * hull_radius(d) ** 2 * d.N ** 2 / (rho * sp.lambda_2)


# --- initialisation ----------------------------------------------------------

def init_heads(
    d: FederatedDataset,
    M: int,
    K: int,
    scheme: str = "random_datapoints",
    heads: Optional[Sequence] = None,
    seed: int = 0,
) -> NetworkHeads:
    """
    `shared`: every agent starts from the same K heads.
    `random_datapoints`: every agent draws K distinct data points of D (keeps
    the start inside co(D)).
    """
    if scheme == "shared":
        shared = np.asarray(heads, dtype=float).reshape(K, d.dim)
        return np.repeat(shared[None, :, :], M, axis=0)
    if scheme != "random_datapoints":
        raise InvalidParam(f"unknown init scheme '{scheme}'")
    if not validate_k_distinct(d, K):
        raise InvalidParam(f"need at least K={K} distinct points to seed heads")
    pool = np.unique(d.points, axis=0)
    rng = np.random.Generator(np.random.PCG64(seed))
    return np.stack([pool[rng.choice(len(pool), size=K, replace=False)] for _ in range(M)])


# --- the engine --------------------------------------------------------------

class NKMeansEngine:
    """
    Holds the per-run constants (neighbour lists, step size, descent constant,
    boundedness box) and advances the network one synchronous round at a time.
    """

    def __init__(self, d: FederatedDataset, t: Topology, K: int, cfg: RunConfig, alpha: Optional[float] = None):
        if d.num_agents != t.num_agents:
            raise DimensionMismatch(f"dataset has {d.num_agents} agents, topology has {t.num_agents}")
        if not is_connected(t):
            raise NotConnected("NK-means needs a connected communication graph")
        self.d = d
        self.t = t
        self.K = K
        self.cfg = cfg
        self.alpha = resolve_alpha(t, d, cfg) if alpha is None else alpha
        self.c_alpha = c_alpha(t, d, cfg.rho, self.alpha)
        self.neighbors = [sorted(t.graph.neighbors(m)) for m in range(t.num_agents)]
        for m, nbrs in enumerate(self.neighbors):
            if not nbrs:
                raise NoNeighbors(f"agent {m} has no neighbours")
        self._adjacency = t.adjacency.astype(float)
        self._degrees = t.degrees.astype(float)

    def agent_update(self, m: int, snapshot: NetworkHeads) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        One agent's reassign + center update from the round-start snapshot.
        Returns (new heads (K,p), local labels, mu (K,p)).
        """
        x_m = snapshot[m]
        D_m = self.d.agents[m]
        labels = reassign(x_m, D_m)
        counts = np.bincount(labels, minlength=self.K).astype(float)
        sums = np.zeros_like(x_m)
        np.add.at(sums, labels, D_m)
        nbrs = self.neighbors[m]
        w = 1.0 / self.cfg.rho
        target = (w * sums + snapshot[nbrs].sum(axis=0)) / (w * counts + len(nbrs))[:, None]
        return x_m - self.alpha * (x_m - target), labels, target

    def advance(
        self,
        x: NetworkHeads,
        agent_order: Optional[Sequence[int]] = None,
        labels: Optional[LocalClustering] = None,
    ):
        """
        New heads, the clustering used for them, and mu, for one round.

        Without `agent_order` the whole network is evaluated at once (`labels`
        may carry reassign_all(x) from the previous round). With it, agents
        update one by one in that order, each reading only the snapshot.
        """
        if agent_order is not None:
            return self._advance_agents(x, agent_order)
        C = reassign_all(x, self.d) if labels is None else labels
        M, K = x.shape[0], x.shape[1]
        counts = np.zeros((M, K))
        sums = np.zeros_like(x)
        if self.d.N:
            cell = self.d.owner * K + C
            counts = np.bincount(cell, minlength=M * K).reshape(M, K).astype(float)
            sums = np.stack(
                [np.bincount(cell, weights=self.d.points[:, i], minlength=M * K) for i in range(self.d.dim)],
                axis=1,
            ).reshape(M, K, self.d.dim)
        w = 1.0 / self.cfg.rho
        neighbor_sum = np.einsum("ml,lkp->mkp", self._adjacency, x)
        targets = (w * sums + neighbor_sum) / (w * counts + self._degrees[:, None])[:, :, None]
        return x - self.alpha * (x - targets), C, targets

    def _advance_agents(self, x: NetworkHeads, agent_order: Sequence[int]):
        new_x = np.empty_like(x)
        targets = np.empty_like(x)
        labels: List[Optional[np.ndarray]] = [None] * self.t.num_agents
        for m in agent_order:
            new_x[m], labels[m], targets[m] = self.agent_update(m, x)
        if any(l is None for l in labels):
            raise InvalidParam("agent_order must visit every agent exactly once")
        C = np.concatenate(labels).astype(np.int64) if self.d.N else np.zeros(0, dtype=np.int64)
        return new_x, C, targets

    def metrics(
        self,
        round_index: int,
        x: NetworkHeads,
        new_x: NetworkHeads,
        targets: NetworkHeads,
        C: LocalClustering,
        next_C: LocalClustering,
        J_prev: float,
        partition_changed: bool,
    ) -> RoundMetrics:
        rho = self.cfg.rho
        J_new = cost_J(new_x, C, self.t, self.d, rho)
        innovation = float(np.linalg.norm(x - targets))
        return RoundMetrics(
            round=round_index,
            cost_J=J_new,
            cost_Q=cost_J(new_x, next_C, self.t, self.d, rho),
            descent_slack=J_prev - self.c_alpha * innovation ** 2 - J_new,
            innovation_norm=innovation,
            consensus_dev=consensus_deviation(new_x),
            partition_changed=partition_changed,
            head_step=float(np.abs(new_x - x).max()),
            mean_drift=float(np.abs(mean_heads(new_x) - mean_heads(x)).max()),
        )

    def run(self, init: NetworkHeads) -> RunResult:
        cfg = self.cfg
        x = _check_state(init, self.t, self.d).copy()
        if x.shape[1] != self.K:
            raise DimensionMismatch(f"init holds {x.shape[1]} heads per agent, expected K={self.K}")
        box = bounding_box(self.d, x.reshape(-1, self.d.dim))
        C_prev: Optional[np.ndarray] = None
        C_now = reassign_all(x, self.d)
        J_prev = cost_Q(x, self.t, self.d, cfg.rho)
        Q_prev = J_prev
        trace: List[RoundMetrics] = []
        trajectory: List[Tuple[int, np.ndarray]] = [(0, x.copy())] if cfg.record_every else []
        last_change = None
        stable_rounds = 0
        descent_violations = 0
        boundedness_violations = 0
        q_ascent_violations = 0

        for r in range(1, cfg.max_rounds + 1):
            new_x, C, targets = self.advance(x, labels=C_now)
            next_C = reassign_all(new_x, self.d)
            changed = C_prev is None or not np.array_equal(C, C_prev)
            m = self.metrics(r, x, new_x, targets, C, next_C, J_prev, changed)
            trace.append(m)

            if m.descent_slack < -DESCENT_RTOL * (1.0 + J_prev):
                descent_violations += 1
                logger.warning(f"Descent violated at round {r}: slack={m.descent_slack:.3e}, J={J_prev:.6g}")
            if m.cost_Q > Q_prev + DESCENT_RTOL * (1.0 + Q_prev):
                q_ascent_violations += 1
                logger.warning(f"Q increased at round {r}: {Q_prev:.17g} -> {m.cost_Q:.17g}")
            if not in_box(new_x.reshape(-1, self.d.dim), box, BOX_SLACK):
                boundedness_violations += 1
                logger.warning(f"Heads left the data/init box at round {r}")

            if changed:
                last_change = r
                stable_rounds = 0
            else:
                stable_rounds += 1
            residual = float(np.linalg.norm(x - targets, axis=2).max())
            x, C_prev, C_now, J_prev, Q_prev = new_x, C, next_C, m.cost_J, m.cost_Q
            if cfg.record_every and r % cfg.record_every == 0:
                trajectory.append((r, x.copy()))
            if r % PROGRESS_EVERY == 0:
                logger.debug(f"round {r}: J={m.cost_J:.6g} step={m.head_step:.3e} stable={stable_rounds}")

            if m.head_step < cfg.head_tol and residual < cfg.head_tol and stable_rounds >= cfg.stability_window:
                logger.info(
                    f"NK-means converged: rho={cfg.rho:g}, rounds={r}, partition stable since round {last_change}"
                )
                return RunResult(
                    heads=x, clustering=next_C, trace=trace, partition_convergence_round=last_change,
                    rounds_run=r, converged=True, alpha=self.alpha,
                    descent_violations=descent_violations, boundedness_violations=boundedness_violations,
                    q_ascent_violations=q_ascent_violations,
                    trajectory=trajectory,
                )

        partial = RunResult(
            heads=x, clustering=reassign_all(x, self.d), trace=trace,
            partition_convergence_round=last_change if stable_rounds >= cfg.stability_window else None,
            rounds_run=cfg.max_rounds, converged=False, alpha=self.alpha,
            descent_violations=descent_violations, boundedness_violations=boundedness_violations,
            q_ascent_violations=q_ascent_violations,
            trajectory=trajectory,
        )
        logger.warning(f"NK-means hit max_rounds={cfg.max_rounds} at rho={cfg.rho:g}")
        raise MaxRoundsExceeded(cfg.max_rounds, partial)


def step(
    state: NetworkHeads,
    d: FederatedDataset,
    t: Topology,
    cfg: RunConfig,
    prev_clustering: Optional[LocalClustering] = None,
    round_index: int = 1,
    agent_order: Optional[Sequence[int]] = None,
) -> Tuple[NetworkHeads, LocalClustering, RoundMetrics]:
    """
    One synchronous round. The descent slack is measured against
    J(x_t, prev_clustering), or Q(x_t) when no previous clustering is given.
    """
    x = _check_state(state, t, d)
    engine = NKMeansEngine(d, t, x.shape[1], cfg)
    new_x, C, targets = engine.advance(x, agent_order)
    if prev_clustering is None:
        J_prev = cost_Q(x, t, d, cfg.rho)
        changed = True
    else:
        J_prev = cost_J(x, prev_clustering, t, d, cfg.rho)
        changed = not np.array_equal(C, prev_clustering)
    metrics = engine.metrics(round_index, x, new_x, targets, C, reassign_all(new_x, d), J_prev, changed)
    return new_x, C, metrics


def run(
    d: FederatedDataset,
    t: Topology,
    K: int,
    init: Optional[NetworkHeads],
    cfg: RunConfig,
) -> RunResult:
    """
    Iterates rounds until the heads are quiet (step and fixed-point residual
    below head_tol) and no assignment changed for `stability_window` rounds.
    Without `init`, heads start at random data points drawn with cfg.seed.
    """
    if not validate_k_distinct(d, K):
        raise InvalidParam(f"dataset has fewer than K={K} distinct points")
    if init is None:
        init = init_heads(d, t.num_agents, K, "random_datapoints", seed=cfg.seed)
    return NKMeansEngine(d, t, K, cfg).run(init)
