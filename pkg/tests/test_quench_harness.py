"""
Tests for campaign orchestration with the solvers patched out
"""

import unittest
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace
from unittest.mock import MagicMock, patch

import pytest

from config.schema import load_campaign_config, run_hash
from enhanced_modules.resilience_module import SEED_STRIDE, CheckpointManager
from harness.persistence import RunManifest, read_json
from harness.quench_harness import (
    EXIT_FATAL,
    EXIT_OK,
    EXIT_PARTIAL,
    Campaign,
    CampaignPaths,
    GroundRecord,
    cmd_analyze,
    cmd_ground,
    cmd_quench,
    run_quench_job,
    run_sweep_job,
)
from solvers.errors import ConfigurationError, EnvironmentSolveError, MixedConfigError
from solvers.umps_state import product_state
from solvers.vumps_solver import GroundStateResult
from tests import TestUtilities

TAU, CHI, MU = 1.0, 2, 0.25


def _config(directory, **overrides):
    return load_campaign_config(profile="smoke", overrides={"output_dir": directory, **overrides})


def _vacuum():
    return product_state(TestUtilities.vacuum_vector(4))


@pytest.mark.unit
class TestCampaignPaths(unittest.TestCase):

    def test_names(self):
        paths = CampaignPaths("/data")
        self.assertEqual(paths.run_id(8.0, 4, 0.25), "tau8_chi4_mu+0.2500")
        self.assertEqual(paths.run_dir(0.5, 2, -1.0), Path("/data/runs/tau0.5_chi2_mu-1.0000"))
        self.assertEqual(paths.ground(4, -0.5, 0.0).name, "chi4_mu-0.5000_sym.npz")
        self.assertEqual(paths.ground(4, -0.5, 1.0).name, "chi4_mu-0.5000.npz")
        self.assertEqual(paths.sweep(8), Path("/data/sweep/chi8.csv"))
        self.assertEqual(paths.manifest("quench").name, "campaign_quench.json")


@pytest.mark.unit
class TestCampaign(unittest.TestCase):

    def setUp(self):
        self.dir = TestUtilities.temp_dir("campaign")
        self.config = _config(self.dir)

    @patch("harness.quench_harness.os.access", return_value=False)
    def test_unwritable_output_dir(self, _):
        with self.assertRaises(ConfigurationError) as ctx:
            Campaign(self.config)
        self.assertEqual(ctx.exception.details["field"], "output_dir")

    def test_ground_state_is_cached(self):
        campaign = Campaign(self.config)
        result = GroundStateResult(state=_vacuum(), energy_density=0.5, gradient_norm=1e-9, vev=0.0,
                                   iterations=3)
        campaign._solve = MagicMock(return_value=result)
        first = campaign.ground_state(0.5, CHI, bias=0.0)
        second = Campaign(self.config)
        second._solve = MagicMock()
        cached = second.ground_state(0.5, CHI, bias=0.0)

        campaign._solve.assert_called_once()
        second._solve.assert_not_called()
        self.assertEqual(cached.summary["energy_density"], 0.5)
        self.assertIsNone(cached.summary["m_S"])
        self.assertEqual(first.summary["xi"], 0.0)
        self.assertTrue(campaign.paths.ground(CHI, 0.5, 0.0).with_suffix(".json").exists())

    def test_run_jobs_inline(self):
        def job(data, x, shutdown=None):
            return {"run_id": f"job{x}", "status": "complete" if x else "failed", "wall_clock": 0.1}

        campaign = Campaign(self.config)
        outcomes = campaign.run_jobs(job, [(0,), (1,)], "test")
        self.assertEqual([o["run_id"] for o in outcomes], ["job0", "job1"])
        self.assertEqual(campaign.monitor.exit_code(), EXIT_PARTIAL)


@pytest.mark.unit
class TestRunQuench(unittest.TestCase):
    """Run lifecycle: fresh, resumed, skipped and failed"""

    def setUp(self):
        self.dir = TestUtilities.temp_dir("quench")
        self.config = _config(self.dir, resume=True)
        self.campaign = Campaign(self.config)
        self.run_dir = self.campaign.paths.run_dir(TAU, CHI, MU)
        self.rhash = run_hash(self.config, TAU, CHI, MU)

    def _manifest(self, status, rhash=None):
        manifest = RunManifest(run_id=self.run_dir.name, tauQ=TAU, chi=CHI, mu0sq_final=MU,
                               run_hash=rhash or self.rhash, config_hash=self.campaign.hash,
                               software_version="1.0.0", status=status)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        manifest.save(self.run_dir / "manifest.json")

    @patch("harness.quench_harness.TdvpEvolver")
    def test_fresh_run_completes(self, mock_evolver):
        mock_evolver.return_value.evolve.return_value = SimpleNamespace(completed=True, state=_vacuum(), step=42)
        with patch.object(Campaign, "ground_state", return_value=GroundRecord(_vacuum(), {})) as ground:
            outcome = self.campaign.run_quench(TAU, CHI, MU)

        self.assertEqual(outcome["status"], "complete")
        ground.assert_called_once_with(self.config.model.mu0sq_initial, CHI, bias=0.0)
        self.assertEqual(mock_evolver.return_value.evolve.call_args.kwargs["start_step"], 0)
        manifest = RunManifest.load(self.run_dir / "manifest.json")
        self.assertEqual(manifest.status, "complete")
        self.assertEqual(manifest.step, 42)
        self.assertEqual([e["event"] for e in manifest.history], ["started", "complete"])
        _, step, meta = CheckpointManager(self.run_dir / "checkpoint.npz").load()
        self.assertEqual(step, 42)
        self.assertEqual(meta["run_hash"], self.rhash)

    @patch("harness.quench_harness.TdvpEvolver")
    def test_resume_from_checkpoint(self, mock_evolver):
        self._manifest("interrupted")
        CheckpointManager(self.run_dir / "checkpoint.npz").save(_vacuum().with_time(1.0), 20,
                                                                {"run_hash": self.rhash})
        mock_evolver.return_value.evolve.return_value = SimpleNamespace(completed=False, state=_vacuum(), step=30)
        with patch.object(Campaign, "ground_state") as ground:
            outcome = self.campaign.run_quench(TAU, CHI, MU)

        ground.assert_not_called()
        args, kwargs = mock_evolver.return_value.evolve.call_args
        self.assertEqual(kwargs["start_step"], 20)
        self.assertEqual(args[0].time, 1.0)
        self.assertEqual(outcome["status"], "interrupted")
        history = RunManifest.load(self.run_dir / "manifest.json").history
        self.assertEqual(history[0], {**history[0], "event": "resumed", "step": 20})

    def test_complete_run_is_skipped(self):
        self._manifest("complete")
        outcome = self.campaign.run_quench(TAU, CHI, MU)
        self.assertTrue(outcome["skipped"])
        self.assertEqual(outcome["status"], "complete")

    def test_mismatched_run_refused(self):
        self._manifest("complete", rhash="other")
        with self.assertRaises(MixedConfigError) as ctx:
            self.campaign.run_quench(TAU, CHI, MU)
        self.assertEqual(ctx.exception.details["found"], "other")

    def test_failure_is_recorded(self):
        error = EnvironmentSolveError("stagnated", residual=1e-3)
        with patch.object(Campaign, "ground_state", side_effect=error):
            outcome = self.campaign.run_quench(TAU, CHI, MU)
        self.assertEqual(outcome["status"], "failed")
        self.assertEqual(outcome["error"]["error_type"], "EnvironmentSolveError")
        manifest = RunManifest.load(self.run_dir / "manifest.json")
        self.assertEqual(manifest.status, "failed")
        self.assertEqual(self.campaign.monitor.exit_code(), EXIT_FATAL)

    @patch("harness.quench_harness.Campaign", side_effect=ConfigurationError("bad", field="output_dir"))
    def test_job_reports_refusal(self, _):
        outcome = run_quench_job(self.config.model_dump(mode="json"), TAU, CHI, MU)
        self.assertEqual(outcome["status"], "failed")
        self.assertEqual(outcome["run_id"], "tau1_chi2_mu+0.2500")
        self.assertEqual(outcome["error"]["error_type"], "ConfigurationError")


@pytest.mark.unit
class TestSweepRetry(unittest.TestCase):
    """Sweep points go through the sweep_point retry policy"""

    def setUp(self):
        self.dir = TestUtilities.temp_dir("sweep")
        self.config = _config(self.dir)

    @patch("harness.quench_harness.find_ground_state")
    def test_retry_starts_cold_with_new_seed(self, mock_find):
        result = GroundStateResult(state=_vacuum(), energy_density=0.5, gradient_norm=1e-9, vev=0.0,
                                   iterations=3)
        mock_find.side_effect = [EnvironmentSolveError("stagnated", residual=1e-3), result]
        campaign = Campaign(self.config)
        options = replace(campaign.vumps_options(), seed=5, noise=0.1)
        warm = _vacuum()

        self.assertIs(campaign.sweep_point(campaign.model_params(0.5), CHI, options, warm), result)

        first, second = mock_find.call_args_list
        self.assertIs(first.kwargs["initial"], warm)
        self.assertEqual(first.args[3].seed, 5)
        self.assertIsNone(second.kwargs["initial"])
        self.assertEqual(second.args[3].seed, 5 + SEED_STRIDE)
        self.assertAlmostEqual(second.args[3].noise, 0.2)

    @patch("harness.quench_harness.find_ground_state",
           side_effect=EnvironmentSolveError("stagnated", residual=1e-3))
    def test_retries_are_bounded(self, mock_find):
        campaign = Campaign(self.config)
        with self.assertRaises(EnvironmentSolveError):
            campaign.sweep_point(campaign.model_params(0.5), CHI, campaign.vumps_options(), None)
        max_retries = campaign.retry.retry_configs["sweep_point"]["max_retries"]
        self.assertEqual(mock_find.call_count, max_retries + 1)

    @patch("harness.quench_harness.sweep_mass", return_value=[])
    def test_sweep_job_uses_retrying_solver(self, mock_sweep):
        outcome = run_sweep_job(self.config.model_dump(mode="json"), CHI)
        solver = mock_sweep.call_args.kwargs["solver"]
        self.assertIs(solver.__func__, Campaign.sweep_point)
        self.assertEqual(outcome["run_id"], "sweep_chi2")


@pytest.mark.unit
class TestCollectRuns(unittest.TestCase):

    def setUp(self):
        self.dir = TestUtilities.temp_dir("collect")
        self.config = _config(self.dir)
        self.campaign = Campaign(self.config)

    def _manifest(self, tauQ, status="complete", rhash=None):
        run_dir = self.campaign.paths.run_dir(tauQ, CHI, MU)
        run_dir.mkdir(parents=True, exist_ok=True)
        RunManifest(run_id=run_dir.name, tauQ=tauQ, chi=CHI, mu0sq_final=MU,
                    run_hash=rhash or run_hash(self.config, tauQ, CHI, MU), config_hash=self.campaign.hash,
                    software_version="1.0.0", status=status).save(run_dir / "manifest.json")

    def test_missing_and_incomplete(self):
        self._manifest(1.0, status="failed")
        found, problems = self.campaign.collect_runs()
        self.assertEqual(found, {})
        self.assertIn("missing run tau0.5_chi2_mu+0.2500", problems)
        self.assertIn("run tau1_chi2_mu+0.2500 is failed", problems)

    def test_mismatch_needs_force(self):
        self._manifest(0.5)
        self._manifest(1.0, rhash="stale")
        with self.assertRaises(MixedConfigError):
            self.campaign.collect_runs()
        found, problems = self.campaign.collect_runs(force=True)
        self.assertEqual(set(found), {(0.5, CHI, MU), (1.0, CHI, MU)})
        self.assertTrue(any("forced" in p for p in problems))


@pytest.mark.unit
class TestCommands(unittest.TestCase):

    def setUp(self):
        self.dir = TestUtilities.temp_dir("commands")

    def test_analyze_without_runs(self):
        config = _config(self.dir)
        self.assertEqual(cmd_analyze(config), EXIT_FATAL)
        report = read_json(Path(self.dir) / "campaign_analyze.json")
        self.assertEqual(len(report["problems"]), 2)

    def test_ground_partial(self):
        config = _config(self.dir, campaign={"chi": [2, 3]})
        outcomes = [GroundRecord(_vacuum(), {"chi": 2}), EnvironmentSolveError("stagnated", residual=1e-3)]
        with patch.object(Campaign, "ground_state", side_effect=outcomes):
            self.assertEqual(cmd_ground(config, mu0sq=0.5), EXIT_PARTIAL)
        report = read_json(Path(self.dir) / "campaign_ground.json")
        self.assertEqual(report["summaries"], [{"chi": 2}])
        self.assertEqual(report["status"], "partial")

    def test_quench_stops_without_initial_state(self):
        config = _config(self.dir)
        with patch.object(Campaign, "ground_state", side_effect=EnvironmentSolveError("stagnated", residual=1e-3)), \
                patch.object(Campaign, "run_jobs") as run_jobs:
            self.assertEqual(cmd_quench(config), EXIT_FATAL)
        run_jobs.assert_not_called()

    @patch.object(Campaign, "run_jobs", return_value=[])
    def test_quench_runs_full_grid(self, run_jobs):
        config = _config(self.dir)
        with patch.object(Campaign, "ground_state", return_value=GroundRecord(_vacuum(), {})):
            self.assertEqual(cmd_quench(config), EXIT_OK)
        jobs = run_jobs.call_args.args[1]
        self.assertEqual(jobs, [(0.5, 2, 0.25), (1.0, 2, 0.25)])


if __name__ == "__main__":
    unittest.main()
