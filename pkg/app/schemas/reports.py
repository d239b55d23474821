from typing import Dict, List, Optional

from pydantic import BaseModel


class GenMinReport(BaseModel):
    nearest_violation: float
    fixed_point_residual: float
    passes: bool
    in_hull_box: bool


class GapCheck(BaseModel):
    lhs: float
    rhs: float
    holds: bool


class DatasetProvenance(BaseModel):
    seed: int
    prng: str
    numpy_version: str
    num_points: int
    spec: dict


class RunReport(BaseModel):
    rho: float
    alpha: float
    c_alpha: float
    rounds_run: int
    converged: bool
    partition_convergence_round: Optional[int] = None
    final_cost_J: float
    final_cost_Q: float
    consensus_dev: float
    consensus_bound: float
    # None when some terminal head leaves the data box (bound not applicable)
    within_consensus_bound: Optional[bool] = None
    descent_violations: int
    boundedness_violations: int
    q_ascent_violations: int = 0
    verification: GenMinReport
    verification_tol: float
    weighted_centroid_ok: bool
    cost_equivalent: bool
    final_heads: List[List[List[float]]]
    files: Dict[str, str] = {}


class SweepRow(BaseModel):
    rho: float
    status: str
    final_cost_Q: Optional[float] = None
    rho_cost_Q: Optional[float] = None
    consensus_dev: Optional[float] = None
    consensus_bound: Optional[float] = None
    # rho * consensus_dev: flat when the deviation follows the 1/rho trend
    rho_consensus_dev: Optional[float] = None
    partition_convergence_round: Optional[int] = None
    rounds_run: Optional[int] = None
    nearest_violation: Optional[float] = None
    fixed_point_residual: Optional[float] = None
    passes: Optional[bool] = None
    error: Optional[str] = None


class OracleReport(BaseModel):
    rho: float
    K: int
    N: int
    f_star: float
    lloyd_global_heads: List[List[float]]
    z_g: List[List[List[float]]]
    q_global_cost: float
    q_global_heads: List[List[List[float]]]
    gap: GapCheck
    max_distance_to_z_g: float


class LloydReport(BaseModel):
    K: int
    iters: int
    heads: List[List[float]]
    cost: float
    is_lloyd_minimum: bool
    local_baseline_heads: List[List[List[float]]]
    local_baseline_costs: List[float]


class VerifyReport(BaseModel):
    rho: float
    state_file: str
    verification: GenMinReport
    weighted_centroid_ok: bool
    cost_equivalent: bool
    cost_J: float
    cost_Q: float
