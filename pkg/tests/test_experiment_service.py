import json
import os
import shutil
import tempfile
import unittest

import pandas as pd

from app.core.errors import ConfigError, InvalidParam, InvariantViolation, MaxRoundsExceeded, TooLarge
from app.schemas.experiment import ExperimentConfig
from app.services.codec import TRAJECTORY_COLUMNS
from app.services.experiment_service import ExperimentService, with_seed
from app.services.nkmeans import TRACE_COLUMNS

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")


def two_agent_config(**overrides) -> ExperimentConfig:
    config = ExperimentConfig.load(os.path.join(CONFIGS, "two_agent.json"))
    return config.model_copy(update=overrides)


def mixture_config(counts, K, topology="path", **extra) -> ExperimentConfig:
    payload = {
        "dataset": {
            "mixture": {"components": [{"mean": [10.0 * i], "std": 1.0, "count": c} for i, c in enumerate(counts)]},
            "seed": 3,
        },
        "topology": {"kind": topology, "num_agents": len(counts)},
        "K": K,
        "rhos": [1.0],
        "init": {"scheme": "random_datapoints", "seed": 3},
    }
    payload.update(extra)
    return ExperimentConfig.parse(payload)


class ServiceTestCase(unittest.TestCase):
    def setUp(self):
        self.service = ExperimentService()
        self.out = tempfile.mkdtemp(prefix="nkmeans-test-")

    def tearDown(self):
        shutil.rmtree(self.out, ignore_errors=True)

    def read(self, name: str) -> bytes:
        with open(os.path.join(self.out, name), "rb") as fh:
            return fh.read()


class TestConfig(unittest.TestCase):
    def test_relative_dataset_path_resolved(self):
        config = two_agent_config()
        self.assertTrue(os.path.isabs(config.dataset.path))
        self.assertTrue(os.path.isfile(config.dataset.path))

    def test_non_positive_rho_rejected(self):
        with self.assertRaises(ConfigError):
            mixture_config([2, 2], 2, rhos=[1.0, 0.0])
        with self.assertRaises(ConfigError):
            mixture_config([2, 2], 2, rhos=[])

    def test_missing_dataset_file(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.parse({
                "dataset": {"path": "/nonexistent/data.json"},
                "topology": {"kind": "path", "num_agents": 2},
                "K": 1,
                "rhos": [1.0],
            })

    def test_mixture_agent_count_must_match_topology(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.parse({
                "dataset": {"mixture": {"components": [{"mean": [0.0], "count": 2}]}},
                "topology": {"kind": "path", "num_agents": 2},
                "K": 2,
                "rhos": [1.0],
            })

    def test_with_seed(self):
        config = with_seed(mixture_config([2, 2], 2), 99)
        self.assertEqual((config.dataset.seed, config.init.seed), (99, 99))


class TestGenerate(ServiceTestCase):
    def test_ring_of_ten(self):
        config = self.service.load_config(os.path.join(CONFIGS, "ring_of_ten.json"))
        path = self.service.cmd_generate(config, self.out)
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        self.assertEqual(len(payload["agents"]), 10)
        self.assertEqual(sum(len(a) for a in payload["agents"]), 500)
        provenance = json.loads(self.read("dataset.provenance.json"))
        self.assertEqual(provenance["seed"], 7)
        self.assertIn("PCG64", provenance["prng"])

    def test_same_seed_same_bytes(self):
        config = mixture_config([1, 1], 1)
        self.service.cmd_generate(config, self.out)
        first = self.read("dataset.json")
        self.service.cmd_generate(config, self.out)
        self.assertEqual(first, self.read("dataset.json"))
        self.assertEqual(len(json.loads(first)["agents"]), 2)

    def test_needs_mixture(self):
        with self.assertRaises(InvalidParam):
            self.service.cmd_generate(two_agent_config(), self.out)


class TestRun(ServiceTestCase):
    def test_two_agent_fixture(self):
        report = self.service.cmd_run(two_agent_config(), 1.0, self.out)
        self.assertTrue(report.converged)
        self.assertTrue(report.verification.passes)
        self.assertTrue(report.weighted_centroid_ok)
        self.assertAlmostEqual(report.final_heads[0][0][0], 2.0 / 3.0, delta=1e-9)
        self.assertAlmostEqual(report.final_heads[1][0][0], 4.0 / 3.0, delta=1e-9)
        self.assertTrue(report.within_consensus_bound)
        self.assertEqual(report.descent_violations, 0)

        trace = pd.read_csv(os.path.join(self.out, "trace_rho=1.csv"))
        self.assertEqual(list(trace.columns), TRACE_COLUMNS)
        self.assertEqual(len(trace), report.rounds_run)
        trajectory = pd.read_csv(os.path.join(self.out, "trajectory_rho=1.csv"))
        self.assertEqual(list(trajectory.columns), TRAJECTORY_COLUMNS)
        self.assertEqual(TRAJECTORY_COLUMNS, ["round", "agent", "cluster", "coord_index", "value"])
        self.assertEqual(trajectory["round"].iloc[0], 0)
        for name in ("state_rho=1.json", "report_rho=1.json", "trajectory_rho=1.csv"):
            self.assertTrue(os.path.isfile(os.path.join(self.out, name)))

    def test_outputs_are_deterministic(self):
        config = mixture_config([3, 4, 2], 2, topology="ring")
        self.service.cmd_run(config, 10.0, self.out)
        first = [self.read(n) for n in ("trace_rho=10.csv", "report_rho=10.json", "state_rho=10.json")]
        self.service.cmd_run(config, 10.0, self.out)
        second = [self.read(n) for n in ("trace_rho=10.csv", "report_rho=10.json", "state_rho=10.json")]
        self.assertEqual(first, second)

    def test_negative_rho(self):
        with self.assertRaises(InvalidParam):
            self.service.cmd_run(two_agent_config(), -1.0, self.out)

    def test_max_rounds_writes_partial_outputs(self):
        config = two_agent_config(max_rounds=3)
        with self.assertRaises(MaxRoundsExceeded) as ctx:
            self.service.cmd_run(config, 1.0, self.out)
        self.assertEqual(ctx.exception.exit_code, 5)
        trace = pd.read_csv(os.path.join(self.out, "trace_rho=1.csv"))
        self.assertEqual(len(trace), 3)
        report = json.loads(self.read("report_rho=1.json"))
        self.assertFalse(report["converged"])

    def test_invariant_error(self):
        report = self.service.cmd_run(two_agent_config(), 1.0, self.out)
        broken = report.model_copy(update={"descent_violations": 2})
        self.assertIsInstance(self.service._invariant_error(broken), InvariantViolation)
        self.assertIsNone(self.service._invariant_error(report))

    def test_verify_saved_state(self):
        self.service.cmd_run(two_agent_config(), 1.0, self.out)
        report = self.service.cmd_verify(two_agent_config(), os.path.join(self.out, "state_rho=1.json"), out=self.out)
        self.assertEqual(report.rho, 1.0)
        self.assertTrue(report.verification.passes)
        self.assertAlmostEqual(report.cost_J, 4.0 / 3.0, places=8)
        self.assertAlmostEqual(report.cost_Q, report.cost_J, places=12)

    def test_verify_missing_state(self):
        with self.assertRaises(ConfigError):
            self.service.cmd_verify(two_agent_config(), os.path.join(self.out, "nope.json"), out=self.out)


class TestSweep(ServiceTestCase):
    def test_rows_follow_request_order(self):
        config = two_agent_config(rhos=[10.0, 1.0])
        rows = self.service.cmd_sweep(config, self.out)
        self.assertEqual([r.rho for r in rows], [10.0, 1.0])
        self.assertTrue(all(r.status == "ok" for r in rows))
        summary = pd.read_csv(os.path.join(self.out, "sweep_summary.csv"))
        self.assertEqual(summary["rho"].tolist(), [10.0, 1.0])

    def test_single_rho(self):
        rows = self.service.cmd_sweep(two_agent_config(rhos=[1.0]), self.out)
        self.assertEqual(len(rows), 1)

    def test_consensus_bound_scales_as_inverse_rho(self):
        config = mixture_config([2, 2], 2, rhos=[1.0, 10.0, 100.0, 1000.0], max_rounds=200)
        rows = self.service.cmd_sweep(config, self.out)
        base = rows[0].consensus_bound
        for row in rows:
            self.assertAlmostEqual(row.consensus_bound * row.rho, base, delta=1e-12 * base)

    def test_failures_stay_in_row(self):
        rows = self.service.cmd_sweep(two_agent_config(rhos=[1.0], max_rounds=2), self.out)
        self.assertEqual(rows[0].status, "max_rounds")
        self.assertEqual(rows[0].rounds_run, 2)
        self.assertIsNotNone(rows[0].error)

    def test_budget_exhausted_row_keeps_partition_round(self):
        rows = self.service.cmd_sweep(two_agent_config(rhos=[1.0], max_rounds=50), self.out)
        self.assertEqual(rows[0].status, "max_rounds")
        self.assertEqual(rows[0].partition_convergence_round, 1)


class TestOracleAndLloyd(ServiceTestCase):
    def test_two_agent_oracle(self):
        report = self.service.cmd_oracle(two_agent_config(), 1.0, self.out)
        self.assertEqual(report.f_star, 2.0)
        self.assertTrue(report.gap.holds)
        self.assertAlmostEqual(report.q_global_cost, 4.0 / 3.0, places=12)
        self.assertTrue(os.path.isfile(os.path.join(self.out, "oracle_rho=1.json")))

    def test_guard(self):
        with self.assertRaises(TooLarge) as ctx:
            self.service.cmd_oracle(mixture_config([15, 15], 3), 1.0, self.out)
        self.assertEqual(ctx.exception.size, 3 ** 30)
        self.assertEqual(ctx.exception.exit_code, 4)

    def test_lloyd_report(self):
        report = self.service.cmd_lloyd(two_agent_config(), self.out)
        self.assertEqual(report.heads, [[1.0]])
        self.assertEqual(report.cost, 2.0)
        self.assertTrue(report.is_lloyd_minimum)
        self.assertEqual(report.local_baseline_heads, [[[0.0]], [[2.0]]])
        self.assertEqual(report.local_baseline_costs, [4.0, 4.0])


if __name__ == '__main__':
    unittest.main()
