import json
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import config
from equilibrium import EcsConfig

ENV_KEYS = (
    "ECS_N_DIRS",
    "ECS_K",
    "ECS_MERGE_TAU",
    "ECS_FLAT_FLOOR",
    "ECS_SEED",
    "ECS_IDENTIFY_ANTIPODES",
    "ECS_RESOLUTION",
    "ECS_MERGE_RULE",
)


class TestCreateEcsConfig(unittest.TestCase):
    def setUp(self) -> None:
        self._env = patch.dict(os.environ, {}, clear=False)
        self._env.start()
        for key in ENV_KEYS:
            os.environ.pop(key, None)

    def tearDown(self) -> None:
        self._env.stop()

    def test_defaults_without_env(self):
        self.assertEqual(config.create_ecs_config(), EcsConfig())

    def test_env_overrides_defaults(self):
        os.environ["ECS_N_DIRS"] = "3000"
        os.environ["ECS_MERGE_TAU"] = "0.05"
        os.environ["ECS_IDENTIFY_ANTIPODES"] = "true"
        os.environ["ECS_RESOLUTION"] = "80x160"

        result = config.create_ecs_config()

        self.assertEqual(result.n_dirs, 3000)
        self.assertEqual(result.merge_tau, 0.05)
        self.assertTrue(result.identify_antipodes)
        self.assertEqual(result.resolution, (80, 160))
        self.assertEqual(result.k, 12)

    def test_explicit_arguments_win_over_env(self):
        os.environ["ECS_N_DIRS"] = "3000"
        os.environ["ECS_SEED"] = "9"

        result = config.create_ecs_config(n_dirs=1500, resolution="40x80")

        self.assertEqual(result.n_dirs, 1500)
        self.assertEqual(result.seed, 9)
        self.assertEqual(result.resolution, (40, 80))

    def test_base_is_used_for_unset_fields(self):
        base = EcsConfig(n_dirs=2000, k=8)
        result = config.create_ecs_config(merge_tau=0.02, base=base)
        self.assertEqual((result.n_dirs, result.k, result.merge_tau), (2000, 8, 0.02))

    def test_blank_env_is_ignored(self):
        os.environ["ECS_K"] = "   "
        self.assertEqual(config.create_ecs_config().k, 12)

    def test_bad_env_raises_config_error(self):
        os.environ["ECS_N_DIRS"] = "many"
        with self.assertRaises(config.ConfigError) as ctx:
            config.create_ecs_config()
        self.assertIn("ECS_N_DIRS", str(ctx.exception))

    def test_out_of_range_value_raises_config_error(self):
        os.environ["ECS_MERGE_TAU"] = "1.5"
        with self.assertRaises(config.ConfigError):
            config.create_ecs_config()

    def test_merge_rule_from_env(self):
        os.environ["ECS_MERGE_RULE"] = "Sink_Height"
        self.assertEqual(config.create_ecs_config().merge_rule, "sink_height")
        self.assertEqual(config.create_ecs_config(merge_rule="spill").merge_rule, "spill")

    def test_unknown_merge_rule_raises_config_error(self):
        os.environ["ECS_MERGE_RULE"] = "flood"
        with self.assertRaises(config.ConfigError):
            config.create_ecs_config()

    def test_parse_resolution(self):
        self.assertEqual(config.parse_resolution("100x200"), (100, 200))
        self.assertEqual(config.parse_resolution("24X48"), (24, 48))
        for bad in ("100", "100x", "axb", "1x2x3"):
            with self.subTest(text=bad):
                with self.assertRaises(config.ConfigError):
                    config.parse_resolution(bad)


class TestCampaignFile(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def write(self, payload) -> Path:
        path = self.tmp / "campaign.json"
        path.write_text(payload if isinstance(payload, str) else json.dumps(payload), encoding="utf-8")
        return path

    def test_valid_campaign_overlays_oracle_section(self):
        campaign = config.load_campaign(
            self.write(
                {
                    "oracle": {"n_dirs": 2500, "resolution": "60x120", "identify_antipodes": True},
                    "search": {"fourier_orders": [2], "beta_bounds": [0.01, 0.05]},
                    "de": {"population": 20, "seed": 3},
                }
            )
        )
        result = config.campaign_ecs_config(campaign, base=EcsConfig(k=10))
        self.assertEqual(result.n_dirs, 2500)
        self.assertEqual(result.resolution, (60, 120))
        self.assertTrue(result.identify_antipodes)
        self.assertEqual(result.k, 10)

    def test_merge_rule_must_be_known(self):
        campaign = config.load_campaign(self.write({"oracle": {"merge_rule": "sink_height"}}))
        self.assertEqual(config.campaign_ecs_config(campaign, base=EcsConfig()).merge_rule, "sink_height")
        with self.assertRaises(config.ConfigError) as ctx:
            config.load_campaign(self.write({"oracle": {"merge_rule": "flood"}}))
        self.assertIn("oracle/merge_rule", str(ctx.exception))

    def test_unknown_key_names_its_location(self):
        path = self.write({"oracle": {"n_dirs": 2500, "tau": 0.1}})
        with self.assertRaises(config.ConfigError) as ctx:
            config.load_campaign(path)
        self.assertIn("oracle", str(ctx.exception))

    def test_wrong_type_names_its_location(self):
        path = self.write({"de": {"population": "large"}})
        with self.assertRaises(config.ConfigError) as ctx:
            config.load_campaign(path)
        self.assertIn("de/population", str(ctx.exception))

    def test_interval_must_have_two_numbers(self):
        path = self.write({"search": {"coeff_bounds": [0.1]}})
        with self.assertRaises(config.ConfigError):
            config.load_campaign(path)

    def test_invalid_json(self):
        with self.assertRaises(config.ConfigError):
            config.load_campaign(self.write("{not json"))


if __name__ == "__main__":
    unittest.main()
