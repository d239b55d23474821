"""
Experiment harness: turns an ExperimentConfig into datasets, runs, sweeps,
oracle reports and verifier reports on disk.
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from app.config import get_settings
from app.core.errors import ConfigError, InvalidParam, InvariantViolation, MaxRoundsExceeded, NKMeansError
from app.schemas.experiment import ExperimentConfig
from app.schemas.reports import (
    DatasetProvenance,
    GapCheck,
    LloydReport,
    OracleReport,
    RunReport,
    SweepRow,
    VerifyReport,
)
from app.services import codec
from app.services.dataset import PRNG_NAME, FederatedDataset, bounding_box, generate_mixture, in_box
from app.services.graph import Topology, build_topology
from app.services.lloyd import brute_force_global, cost_F, global_minima, is_lloyd_minimum, local_baseline, lloyd_run
from app.services.nkmeans import (
    BOX_SLACK,
    NetworkHeads,
    RunConfig,
    RunResult,
    NKMeansEngine,
    c_alpha,
    consensus_bound,
    consensus_deviation,
    cost_J,
    cost_Q,
    gap_bound,
    init_heads,
)
from app.services.verify import (
    brute_force_Q_global,
    centroid_tolerance,
    cost_equivalence_check,
    distance_to_set,
    is_generalized_minimum,
    weighted_centroid_check,
)

logger = logging.getLogger(__name__)

# verifier tolerance relative to the engine's head_tol
VERIFY_TOL_FACTOR = 10.0
COST_EQUIVALENCE_TOL = 1e-6
BOUND_TOL = 1e-9


def with_seed(config: ExperimentConfig, seed: Optional[int]) -> ExperimentConfig:
    """Overrides the dataset and init seeds (the --seed flag)."""
    if seed is None:
        return config
    return config.model_copy(
        update={
            "dataset": config.dataset.model_copy(update={"seed": seed}),
            "init": config.init.model_copy(update={"seed": seed}),
        }
    )


class ExperimentService:
    def load_config(self, path: str, seed: Optional[int] = None) -> ExperimentConfig:
        return with_seed(ExperimentConfig.load(path), seed)

    def output_dir(self, config: ExperimentConfig, out: Optional[str] = None) -> str:
        path = out or config.output_dir or get_settings().OUTPUT_DIR
        os.makedirs(path, exist_ok=True)
        return path

    def load_dataset(self, config: ExperimentConfig) -> FederatedDataset:
        source = config.dataset
        if source.path is not None:
            try:
                return FederatedDataset.load(source.path)
            except (OSError, ValueError, KeyError) as e:
                raise ConfigError(f"cannot read dataset {source.path}: {e}") from e
        return generate_mixture(source.mixture, source.seed)

    def build_topology(self, config: ExperimentConfig) -> Topology:
        spec = config.topology
        return build_topology(spec.kind, spec.num_agents, spec.edge_prob, spec.seed)

    def initial_heads(self, config: ExperimentConfig, d: FederatedDataset) -> NetworkHeads:
        init = config.init
        return init_heads(d, config.topology.num_agents, config.K, init.scheme, init.heads, init.seed)

    def run_config(self, config: ExperimentConfig, rho: float) -> RunConfig:
        record_every = config.trajectory_every
        if record_every is None:
            record_every = get_settings().TRAJECTORY_EVERY
        return RunConfig.with_defaults(
            rho,
            alpha=config.alpha,
            max_rounds=config.max_rounds,
            head_tol=config.head_tol,
            stability_window=config.stability_window,
            seed=config.init.seed,
            record_every=record_every,
        )

    # --- generate --------------------------------------------------------

    def cmd_generate(self, config: ExperimentConfig, out: Optional[str] = None) -> str:
        source = config.dataset
        if source.mixture is None:
            raise InvalidParam("generate needs a mixture dataset source")
        d = generate_mixture(source.mixture, source.seed)
        out_dir = self.output_dir(config, out)
        path = codec.write_json(os.path.join(out_dir, "dataset.json"), d.to_dict())
        provenance = DatasetProvenance(
            seed=source.seed,
            prng=PRNG_NAME,
            numpy_version=np.__version__,
            num_points=d.N,
            spec=source.mixture.model_dump(),
        )
        codec.write_json(os.path.join(out_dir, "dataset.provenance.json"), provenance.model_dump())
        return path

    # --- run -------------------------------------------------------------

    def _execute(
        self, config: ExperimentConfig, rho: float, out: Optional[str] = None
    ) -> Tuple[RunReport, Optional[NKMeansError]]:
        """Runs one rho, writes every output file and returns the report plus the error to raise, if any."""
        d = self.load_dataset(config)
        t = self.build_topology(config)
        cfg = self.run_config(config, rho)
        x0 = self.initial_heads(config, d)
        engine = NKMeansEngine(d, t, config.K, cfg)

        error: Optional[NKMeansError] = None
        try:
            result = engine.run(x0)
        except MaxRoundsExceeded as e:
            result, error = e.result, e

        out_dir = self.output_dir(config, out)
        tag = codec.rho_tag(rho)
        files = {
            "trace": codec.write_csv(os.path.join(out_dir, f"trace_rho={tag}.csv"), codec.trace_frame(result.trace)),
            "state": codec.write_json(
                os.path.join(out_dir, f"state_rho={tag}.json"),
                {
                    "rho": float(rho),
                    "alpha": result.alpha,
                    "K": config.K,
                    "converged": result.converged,
                    "rounds_run": result.rounds_run,
                    "heads": result.heads,
                    "clustering": result.clustering,
                },
            ),
        }
        if result.trajectory:
            files["trajectory"] = codec.write_csv(
                os.path.join(out_dir, f"trajectory_rho={tag}.csv"), codec.trajectory_frame(result.trajectory)
            )

        files["report"] = os.path.join(out_dir, f"report_rho={tag}.json")
        report = self._report(d, t, cfg, result, files)
        codec.write_json(files["report"], report.model_dump())

        if error is None:
            error = self._invariant_error(report)
        return report, error

    def _report(
        self,
        d: FederatedDataset,
        t: Topology,
        cfg: RunConfig,
        result: RunResult,
        files: dict,
    ) -> RunReport:
        rho = cfg.rho
        x, C = result.heads, result.clustering
        tol = VERIFY_TOL_FACTOR * cfg.head_tol
        verification = is_generalized_minimum(x, C, t, d, rho, tol)
        centroid_tol = centroid_tolerance(tol, t, d, rho)
        dev = consensus_deviation(x)
        bound = consensus_bound(t, d, rho)
        within = None
        if in_box(x.reshape(-1, d.dim), bounding_box(d), BOX_SLACK):
            within = dev <= bound + BOUND_TOL
        else:
            logger.warning(f"rho={rho:g}: terminal heads leave the data box, consensus bound not applicable")
        return RunReport(
            rho=rho,
            alpha=result.alpha,
            c_alpha=c_alpha(t, d, rho, result.alpha),
            rounds_run=result.rounds_run,
            converged=result.converged,
            partition_convergence_round=result.partition_convergence_round,
            final_cost_J=cost_J(x, C, t, d, rho),
            final_cost_Q=cost_Q(x, t, d, rho),
            consensus_dev=dev,
            consensus_bound=bound,
            within_consensus_bound=within,
            descent_violations=result.descent_violations,
            boundedness_violations=result.boundedness_violations,
            q_ascent_violations=result.q_ascent_violations,
            verification=verification,
            verification_tol=tol,
            weighted_centroid_ok=weighted_centroid_check(x, C, d, centroid_tol),
            cost_equivalent=cost_equivalence_check(x, C, d, COST_EQUIVALENCE_TOL),
            final_heads=np.asarray(x).tolist(),
            files=dict(files),
        )

    def _invariant_error(self, report: RunReport) -> Optional[NKMeansError]:
        if report.descent_violations or report.boundedness_violations or report.q_ascent_violations:
            return InvariantViolation(
                f"rho={report.rho:g}: {report.descent_violations} descent, "
                f"{report.boundedness_violations} boundedness and {report.q_ascent_violations} Q-ascent violations"
            )
        if report.converged and not report.verification.passes:
            return InvariantViolation(
                f"rho={report.rho:g}: engine converged but the verifier rejects the state "
                f"(nearest={report.verification.nearest_violation:.3e}, "
                f"residual={report.verification.fixed_point_residual:.3e})"
            )
        return None

    def cmd_run(self, config: ExperimentConfig, rho: float, out: Optional[str] = None) -> RunReport:
        logger.info(f"Running NK-means: K={config.K}, M={config.topology.num_agents}, rho={rho:g}")
        report, error = self._execute(config, rho, out)
        if error is not None:
            raise error
        return report

    # --- sweep -----------------------------------------------------------

    def sweep_row(self, config: ExperimentConfig, rho: float, out: Optional[str] = None) -> SweepRow:
        try:
            report, error = self._execute(config, rho, out)
        except NKMeansError as e:
            logger.warning(f"Sweep: rho={rho:g} failed: {e}")
            return SweepRow(rho=rho, status="error", error=str(e))
        status = "ok"
        if isinstance(error, MaxRoundsExceeded):
            status = "max_rounds"
        elif error is not None:
            status = "invariant_violation"
        if error is not None:
            logger.warning(f"Sweep: rho={rho:g} finished with status {status}: {error}")
        return SweepRow(
            rho=rho,
            status=status,
            final_cost_Q=report.final_cost_Q,
            rho_cost_Q=rho * report.final_cost_Q,
            consensus_dev=report.consensus_dev,
            consensus_bound=report.consensus_bound,
            rho_consensus_dev=rho * report.consensus_dev,
            partition_convergence_round=report.partition_convergence_round,
            rounds_run=report.rounds_run,
            nearest_violation=report.verification.nearest_violation,
            fixed_point_residual=report.verification.fixed_point_residual,
            passes=report.verification.passes,
            error=None if error is None else str(error),
        )

    def cmd_sweep(self, config: ExperimentConfig, out: Optional[str] = None) -> List[SweepRow]:
        out_dir = self.output_dir(config, out)
        workers = get_settings().SWEEP_WORKERS
        logger.info(f"Sweeping rho over {config.rhos} with {workers} worker(s)")
        if workers > 1 and len(config.rhos) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_sweep_row, config.model_dump(), rho, out_dir) for rho in config.rhos]
                rows = [SweepRow.model_validate(f.result()) for f in futures]
        else:
            rows = [self.sweep_row(config, rho, out_dir) for rho in config.rhos]
        frame = pd.DataFrame([r.model_dump() for r in rows], columns=list(SweepRow.model_fields))
        codec.write_csv(os.path.join(out_dir, "sweep_summary.csv"), frame)
        return rows

    # --- oracles ---------------------------------------------------------

    def cmd_oracle(self, config: ExperimentConfig, rho: float, out: Optional[str] = None) -> OracleReport:
        if not rho > 0:
            raise InvalidParam(f"rho must be positive, got {rho}")
        d = self.load_dataset(config)
        t = self.build_topology(config)
        K = config.K
        lloyd_opt = brute_force_global(d, K)
        Z = global_minima(d, K)
        q_opt = brute_force_Q_global(t, d, K, rho)
        lhs = max(cost_F(q_opt.heads[m], d) for m in range(d.num_agents))
        rhs = lloyd_opt.cost + gap_bound(t, d, rho)
        report = OracleReport(
            rho=rho,
            K=K,
            N=d.N,
            f_star=lloyd_opt.cost,
            lloyd_global_heads=lloyd_opt.heads.tolist(),
            z_g=[z.tolist() for z in Z],
            q_global_cost=q_opt.cost,
            q_global_heads=q_opt.heads.tolist(),
            gap=GapCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs + BOUND_TOL),
            max_distance_to_z_g=max(distance_to_set(q_opt.heads[m], Z) for m in range(d.num_agents)),
        )
        out_dir = self.output_dir(config, out)
        codec.write_json(os.path.join(out_dir, f"oracle_rho={codec.rho_tag(rho)}.json"), report.model_dump())
        return report

    def cmd_lloyd(self, config: ExperimentConfig, out: Optional[str] = None) -> LloydReport:
        """Centralized Lloyd on the joint data plus the local-only baseline, from agent 0's initial heads."""
        d = self.load_dataset(config)
        init = self.initial_heads(config, d)[0]
        result = lloyd_run(d, config.K, init)
        baseline = local_baseline(d, config.K, init)
        report = LloydReport(
            K=config.K,
            iters=result.iters,
            heads=result.heads.tolist(),
            cost=result.cost,
            is_lloyd_minimum=is_lloyd_minimum(result.heads, result.partition, d, COST_EQUIVALENCE_TOL),
            local_baseline_heads=[h.tolist() for h in baseline],
            local_baseline_costs=[cost_F(h, d) for h in baseline],
        )
        codec.write_json(os.path.join(self.output_dir(config, out), "lloyd.json"), report.model_dump())
        return report

    def cmd_verify(
        self, config: ExperimentConfig, state_file: str, rho: Optional[float] = None, out: Optional[str] = None
    ) -> VerifyReport:
        try:
            state = codec.read_json(state_file)
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read state file {state_file}: {e}") from e
        rho = float(state["rho"] if rho is None else rho)
        d = self.load_dataset(config)
        t = self.build_topology(config)
        x = np.asarray(state["heads"], dtype=float)
        C = np.asarray(state["clustering"], dtype=np.int64)
        tol = VERIFY_TOL_FACTOR * self.run_config(config, rho).head_tol
        verification = is_generalized_minimum(x, C, t, d, rho, tol)
        centroid_tol = centroid_tolerance(tol, t, d, rho)
        report = VerifyReport(
            rho=rho,
            state_file=state_file,
            verification=verification,
            weighted_centroid_ok=weighted_centroid_check(x, C, d, centroid_tol),
            cost_equivalent=cost_equivalence_check(x, C, d, COST_EQUIVALENCE_TOL),
            cost_J=cost_J(x, C, t, d, rho),
            cost_Q=cost_Q(x, t, d, rho),
        )
        out_dir = self.output_dir(config, out)
        codec.write_json(os.path.join(out_dir, f"verify_rho={codec.rho_tag(rho)}.json"), report.model_dump())
        return report


def _sweep_row(payload: dict, rho: float, out_dir: str) -> dict:
    # process-pool entry point: configs cross the boundary as plain dicts
    config = ExperimentConfig.parse(payload)
    return ExperimentService().sweep_row(config, rho, out_dir).model_dump()


experiment_service = ExperimentService()
