"""
Tests for profiles, environment settings and the validated campaign schema
"""

import os
import unittest
from pathlib import Path
from unittest.mock import patch

import pytest
import yaml

from config import Settings
from config.profiles_config import deep_merge, get_environment_config, get_profile, validate_profile
from config.schema import config_hash, ground_hash, load_campaign_config, run_hash
from solvers.errors import ConfigurationError
from tests import TestUtilities


@pytest.mark.unit
class TestProfiles(unittest.TestCase):

    def test_profiles_are_valid(self):
        for name in ("desk", "full", "smoke"):
            with self.subTest(profile=name):
                self.assertTrue(validate_profile(get_profile(name)))

    def test_full_profile_overrides(self):
        full = get_profile("full")
        self.assertEqual(full["model"]["d"], 18)
        self.assertEqual(full["campaign"]["tauQ"][0], 32.0)
        self.assertEqual(full["campaign"]["tauQ"][-1], 128.0)
        self.assertEqual(full["model"]["lambda0"], 3.0)

    def test_unknown_profile(self):
        with self.assertRaises(ValueError):
            get_profile("cluster")

    def test_deep_merge_leaves_base_untouched(self):
        base = {"a": {"b": 1, "c": [1, 2]}}
        merged = deep_merge(base, {"a": {"b": 2}})
        self.assertEqual(merged, {"a": {"b": 2, "c": [1, 2]}})
        merged["a"]["c"].append(3)
        self.assertEqual(base["a"]["c"], [1, 2])

    @patch.dict(os.environ, {"KZ_OUTPUT_DIR": "/tmp/kz", "KZ_WORKERS": "3", "KZ_ENVIRONMENT": "testing"})
    def test_environment_overrides(self):
        config = get_environment_config("desk")
        self.assertEqual(config["output_dir"], "/tmp/kz")
        self.assertEqual(config["workers"], 3)
        self.assertFalse(config["analysis"]["plots"])

    @patch.dict(os.environ, {"KZ_WORKERS": "many"})
    def test_bad_worker_count_ignored(self):
        self.assertEqual(get_environment_config("desk")["workers"], 1)


@pytest.mark.unit
class TestSettings(unittest.TestCase):

    @patch.dict(os.environ, {"KZ_PROFILE": "smoke", "KZ_LOG_LEVEL": "debug", "KZ_WORKERS": "4"})
    def test_reads_environment(self):
        settings = Settings()
        self.assertEqual(settings.get("PROFILE"), "smoke")
        self.assertEqual(settings.get("LOG_LEVEL"), "DEBUG")
        self.assertEqual(settings.workers(), 4)
        self.assertTrue(settings.validate_settings()["valid"])

    @patch.dict(os.environ, {"KZ_PROFILE": "nowhere", "KZ_WORKERS": "0"})
    def test_reports_invalid_values(self):
        report = Settings().validate_settings()
        self.assertFalse(report["valid"])
        self.assertIn("KZ_PROFILE", report["invalid"])
        self.assertIn("KZ_WORKERS", report["invalid"])

    def test_set_and_get_all(self):
        settings = Settings()
        settings.set("LOG_FILE", "kz.log")
        self.assertEqual(settings.get_all()["LOG_FILE"], "kz.log")


@pytest.mark.unit
class TestCampaignSchema(unittest.TestCase):
    """Validation and identity hashes"""

    def setUp(self):
        self.dir = TestUtilities.temp_dir("config")

    def _write(self, payload) -> Path:
        path = Path(self.dir) / "campaign.yaml"
        with open(path, "w") as f:
            yaml.safe_dump(payload, f)
        return path

    def test_profile_loads(self):
        config = load_campaign_config(profile="smoke")
        self.assertEqual(config.model.d, 4)
        self.assertEqual(config.campaign.chi, [2])
        self.assertEqual(config.t_R, config.campaign.t_relax)

    def test_yaml_and_overrides_merge(self):
        path = self._write({"campaign": {"tauQ": [64.0, 16.0]}, "analysis": {"t_R": 5.0}})
        config = load_campaign_config(path, "smoke", {"workers": 2, "resume": None})
        self.assertEqual(config.campaign.tauQ, [16.0, 64.0])
        self.assertEqual(config.t_R, 5.0)
        self.assertEqual(config.workers, 2)
        self.assertFalse(config.resume)

    def test_unknown_key_rejected(self):
        path = self._write({"vumps": {"tolerance": 1e-9}})
        with self.assertRaises(ConfigurationError) as ctx:
            load_campaign_config(path, "smoke")
        self.assertTrue(ctx.exception.details["field"].startswith("vumps"))

    def test_invalid_values_rejected(self):
        cases = [
            {"campaign": {"tauQ": [0.0]}},
            {"campaign": {"chi": [0]}},
            {"campaign": {"mu0sq_final": [1.0]}},
            {"sweep": {"mu0sq_min": 1.0, "mu0sq_max": 0.0}},
            {"model": {"lambda0": -1.0}},
        ]
        for payload in cases:
            with self.subTest(payload=payload):
                with self.assertRaises(ConfigurationError):
                    load_campaign_config(self._write(payload), "smoke")

    def test_unreadable_file(self):
        path = Path(self.dir) / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with self.assertRaises(ConfigurationError):
            load_campaign_config(path, "smoke")
        with self.assertRaises(ConfigurationError):
            load_campaign_config(profile="nowhere")

    def test_hash_ignores_execution_options(self):
        first = load_campaign_config(profile="smoke", overrides={"output_dir": "/tmp/a", "workers": 1})
        second = load_campaign_config(profile="smoke", overrides={"output_dir": "/tmp/b", "workers": 4})
        self.assertEqual(config_hash(first), config_hash(second))
        self.assertEqual(run_hash(first, 1.0, 2, 0.25), run_hash(second, 1.0, 2, 0.25))

    def test_hash_tracks_physics(self):
        base = load_campaign_config(profile="smoke")
        heavier = load_campaign_config(profile="smoke", overrides={"model": {"lambda0": 4.0}})
        self.assertNotEqual(config_hash(base), config_hash(heavier))
        self.assertNotEqual(run_hash(base, 1.0, 2, 0.25), run_hash(base, 0.5, 2, 0.25))
        self.assertNotEqual(ground_hash(base, 0.5, 2, 0.0), ground_hash(base, 0.5, 2, 1.0))

    def test_run_hash_independent_of_grid(self):
        base = load_campaign_config(profile="smoke")
        wider = load_campaign_config(profile="smoke", overrides={"campaign": {"tauQ": [0.5, 1.0, 2.0]}})
        self.assertEqual(run_hash(base, 1.0, 2, 0.25), run_hash(wider, 1.0, 2, 0.25))
        self.assertNotEqual(config_hash(base), config_hash(wider))


if __name__ == "__main__":
    unittest.main()
