"""
Tests for retry-with-reseed, run monitoring, checkpoints and shutdown handling
"""

import logging
import os
import signal
import unittest
from unittest.mock import MagicMock

import numpy as np
import pytest

from enhanced_modules.resilience_module import (
    SEED_STRIDE,
    CheckpointManager,
    GracefulShutdown,
    RetryManager,
    RunMonitor,
    setup_logging,
)
from solvers.errors import CanonicalizationError, EnvironmentSolveError
from solvers.umps_state import canonicalize, product_state
from tests import TestUtilities


@pytest.mark.unit
class TestRetryManager(unittest.TestCase):

    def test_reseeds_after_domain_error(self):
        """Seeds advance by SEED_STRIDE and noise grows by noise_factor"""
        calls = []

        def solve(x, seed=None, noise=0.1):
            calls.append((seed, noise))
            if len(calls) < 3:
                raise EnvironmentSolveError("stagnated", residual=1e-4)
            return x * 2

        manager = RetryManager({'ground_state': {'max_retries': 2, 'noise_factor': 2.0}})
        wrapped = manager.retry_with_reseed('ground_state')(solve)
        self.assertEqual(wrapped(21, seed=5, noise=0.1), 42)
        self.assertEqual([c[0] for c in calls], [5, 5 + SEED_STRIDE, 5 + 2 * SEED_STRIDE])
        np.testing.assert_allclose([c[1] for c in calls], [0.1, 0.2, 0.4])

    def test_last_error_is_raised(self):
        solve = MagicMock(side_effect=CanonicalizationError("no gauge"))
        solve.__name__ = "solve"
        wrapped = RetryManager({'ground_state': {'max_retries': 1, 'noise_factor': 1.5}}) \
            .retry_with_reseed()(solve)
        with self.assertRaises(CanonicalizationError):
            wrapped(seed=None)
        self.assertEqual(solve.call_count, 2)
        self.assertIsNone(solve.call_args.kwargs["seed"])

    def test_other_errors_are_not_retried(self):
        solve = MagicMock(side_effect=KeyError("bug"))
        solve.__name__ = "solve"
        wrapped = RetryManager().retry_with_reseed('sweep_point')(solve)
        with self.assertRaises(KeyError):
            wrapped(seed=1)
        self.assertEqual(solve.call_count, 1)


@pytest.mark.unit
class TestRunMonitor(unittest.TestCase):

    def test_exit_codes(self):
        monitor = RunMonitor()
        self.assertEqual(monitor.get_status()['status'], 'idle')
        self.assertEqual(monitor.exit_code(), 0)

        monitor.start_run('a')
        self.assertEqual(monitor.get_status()['status'], 'running')
        monitor.finish_run('a', 'complete')
        self.assertEqual(monitor.exit_code(), 0)

        monitor.finish_run('b', 'failed')
        self.assertEqual(monitor.get_status()['status'], 'partial')
        self.assertEqual(monitor.exit_code(), 2)

    def test_all_failed(self):
        monitor = RunMonitor()
        monitor.finish_run('a', 'failed', wall_clock=1.0)
        monitor.finish_run('b', 'failed', wall_clock=2.0)
        status = monitor.get_status()
        self.assertEqual(status['status'], 'failed')
        self.assertEqual(status['counts'], {'failed': 2})
        self.assertEqual(monitor.exit_code(), 1)

    def test_interrupted_runs_are_partial(self):
        monitor = RunMonitor()
        monitor.finish_run('a', 'complete')
        monitor.finish_run('b', 'interrupted')
        self.assertEqual(monitor.exit_code(), 2)

    def test_peak_memory_is_kept(self):
        monitor = RunMonitor()
        monitor.start_run('a')
        monitor.finish_run('a', 'complete', peak_rss_mb=1e6)
        self.assertEqual(monitor.runs['a']['peak_rss_mb'], 1e6)
        self.assertEqual(monitor.get_status()['peak_rss_mb'], 1e6)

    def test_record_error(self):
        monitor = RunMonitor()
        try:
            raise EnvironmentSolveError("stagnated", residual=0.5)
        except EnvironmentSolveError as e:
            monitor.record_error('a', e, {'tauQ': 8.0})
        recent = monitor.get_status()['recent_errors']
        self.assertEqual(recent[0]['error_type'], 'EnvironmentSolveError')
        self.assertEqual(monitor.errors[0]['details']['residual'], 0.5)


@pytest.mark.unit
class TestCheckpointManager(unittest.TestCase):

    def setUp(self):
        self.dir = TestUtilities.temp_dir("checkpoint")
        self.manager = CheckpointManager(os.path.join(self.dir, "checkpoint.npz"))

    def test_save_and_load(self):
        self.assertIsNone(self.manager.load())
        state = canonicalize(TestUtilities.random_tensor(3, 2)).with_time(1.5)
        self.manager.save(state, 150, {"run_hash": "abc"})
        loaded, step, meta = self.manager.load()
        self.assertEqual(step, 150)
        self.assertEqual(meta["run_hash"], "abc")
        np.testing.assert_array_equal(loaded.AL, state.AL)
        self.assertTrue(self.manager.exists())

    def test_backup_fallback(self):
        first = product_state(TestUtilities.vacuum_vector(3))
        self.manager.save(first, 10)
        self.manager.save(first.with_time(2.0), 20)
        self.assertTrue(self.manager.backup.exists())
        with open(self.manager.path, "wb") as f:
            f.write(b"corrupted")
        state, step, _ = self.manager.load()
        self.assertEqual(step, 10)
        self.assertEqual(state.time, 0.0)


@pytest.mark.unit
class TestGracefulShutdown(unittest.TestCase):

    def test_flag_and_handlers(self):
        shutdown = GracefulShutdown(install=False)
        seen = []

        def on_stop():
            seen.append("stopped")

        shutdown.register_shutdown_handler(on_stop)
        self.assertFalse(shutdown.should_stop())
        shutdown.initiate_shutdown()
        shutdown.initiate_shutdown()
        self.assertTrue(shutdown.should_stop())
        self.assertEqual(seen, ["stopped"])

    def test_signal_handlers_are_restored(self):
        previous = signal.getsignal(signal.SIGTERM)
        shutdown = GracefulShutdown()
        self.assertIsNot(signal.getsignal(signal.SIGTERM), previous)
        shutdown.restore()
        self.assertEqual(signal.getsignal(signal.SIGTERM), previous)

    def test_failing_handler_does_not_block_others(self):
        shutdown = GracefulShutdown(install=False)
        seen = []

        def broken():
            raise RuntimeError("boom")

        def fine():
            seen.append(True)

        shutdown.register_shutdown_handler(broken)
        shutdown.register_shutdown_handler(fine)
        shutdown.initiate_shutdown()
        self.assertEqual(seen, [True])


@pytest.mark.unit
class TestLogging(unittest.TestCase):

    def tearDown(self):
        setup_logging("ERROR")

    def test_file_handlers(self):
        directory = TestUtilities.temp_dir("logs")
        log_file = os.path.join(directory, "run.log")
        json_file = os.path.join(directory, "run.jsonl")
        root = setup_logging("INFO", log_file=log_file, error_file=log_file + ".errors", json_file=json_file)
        self.assertEqual(root.level, logging.INFO)
        self.assertEqual(len(root.handlers), 4)
        logging.getLogger("Campaign").error("run failed")
        for handler in root.handlers:
            handler.flush()
        with open(json_file) as f:
            self.assertIn('"message": "run failed"', f.read())
        with open(log_file + ".errors") as f:
            self.assertIn("run failed", f.read())

    def test_unknown_level_defaults_to_info(self):
        self.assertEqual(setup_logging("chatty").level, logging.INFO)


if __name__ == "__main__":
    unittest.main()
