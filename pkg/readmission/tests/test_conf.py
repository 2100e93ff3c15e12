import json
import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from readmission.compute import ConfigurationError
from readmission.conf import deep_merge, env_overrides, load_run_config
from readmission.ehr import Stream
from readmission.sequence_models import ArchitectureSpec


class ConfigFileMixin:
    def write_config(self, data):
        handle = tempfile.NamedTemporaryFile("w", suffix=".json", delete=False, encoding="utf-8")
        with handle:
            if isinstance(data, str):
                handle.write(data)
            else:
                json.dump(data, handle)
        self.addCleanup(Path(handle.name).unlink)
        return Path(handle.name)


class MergeTests(SimpleTestCase):
    def test_nested_values_are_merged(self):
        base = {"train": {"lr": 0.001, "epochs": 80}, "seed": 1}
        merged = deep_merge(base, {"train": {"epochs": 5}})
        self.assertEqual(merged, {"train": {"lr": 0.001, "epochs": 5}, "seed": 1})
        self.assertEqual(base["train"]["epochs"], 80)

    def test_environment_overrides(self):
        overrides = env_overrides(
            {
                "READMISSION_TRAIN__EPOCHS": "3",
                "READMISSION_SEED": "7",
                "READMISSION_ARCHITECTURES": '["OdeRnn"]',
                "READMISSION_DB": "/tmp/runs.sqlite3",
                "READMISSION_LOG_LEVEL": "DEBUG",
                "READMISSION_NOPE__X": "1",
                "HOME": "/root",
            }
        )
        self.assertEqual(overrides, {"train": {"epochs": 3}, "seed": 7, "architectures": ["OdeRnn"]})

    def test_unparseable_env_values_stay_strings(self):
        self.assertEqual(env_overrides({"READMISSION_OUT": "runs/a"}), {"out": "runs/a"})


class LoadRunConfigTests(ConfigFileMixin, SimpleTestCase):
    def test_settings_defaults(self):
        config = load_run_config(overrides={"seed": 0}, environ={})
        self.assertEqual(config.train.epochs, 80)
        self.assertEqual(config.architectures, tuple(ArchitectureSpec))
        self.assertEqual(config.n_resamples, 100)
        self.assertEqual(config.mce_config(Stream.DP).window, 365.0)
        self.assertEqual(config.mce_config(Stream.MV).window, 24.0)

    def test_later_layers_win(self):
        path = self.write_config({"seed": 3, "train": {"epochs": 10, "lr": 0.01}, "jobs": 2})
        config = load_run_config(path, overrides={"seed": 11}, environ={"READMISSION_TRAIN__EPOCHS": "4"})
        self.assertEqual(config.seed, 11)
        self.assertEqual(config.train.epochs, 4)
        self.assertEqual(config.train.lr, 0.01)
        self.assertEqual(config.jobs, 2)

    def test_empty_overrides_do_not_clear_the_file(self):
        path = self.write_config({"seed": 3, "architectures": ["OdeRnn"]})
        config = load_run_config(path, overrides={"seed": None, "architectures": None}, environ={})
        self.assertEqual(config.seed, 3)
        self.assertEqual(config.architectures, (ArchitectureSpec.ODE_RNN,))

    def test_seed_is_required(self):
        with self.assertRaisesMessage(ConfigurationError, "seed"):
            load_run_config(environ={})

    def test_unknown_section(self):
        path = self.write_config({"seed": 1, "optimiser": {}})
        with self.assertRaisesMessage(ConfigurationError, "optimiser"):
            load_run_config(path, environ={})

    def test_unknown_key_inside_a_section(self):
        path = self.write_config({"seed": 1, "interpret": {"samples": 5}})
        with self.assertRaises(ConfigurationError):
            load_run_config(path, environ={})

    def test_invalid_json(self):
        path = self.write_config('{"seed": 1,')
        with self.assertRaisesMessage(ConfigurationError, "invalid JSON"):
            load_run_config(path, environ={})

    def test_missing_file(self):
        with self.assertRaisesMessage(ConfigurationError, "not found"):
            load_run_config(Path("/nonexistent/run.json"), environ={})

    def test_repeated_architectures(self):
        path = self.write_config({"seed": 1, "architectures": ["OdeRnn", "OdeRnn"]})
        with self.assertRaises(ConfigurationError):
            load_run_config(path, environ={})

    def test_unknown_architecture(self):
        with self.assertRaisesMessage(ConfigurationError, "LogisticBaseline"):
            load_run_config(overrides={"seed": 1, "architectures": ["Transformer"]}, environ={})

    def test_stays_without_events(self):
        path = self.write_config({"seed": 1, "data": {"stays": "stays.csv"}})
        with self.assertRaisesMessage(ConfigurationError, "events"):
            load_run_config(path, environ={})

    def test_synthetic_block_inherits_data_settings(self):
        path = self.write_config({"seed": 1, "data": {"min_code_stays": 5, "synthetic": {"n_patients": 10}}})
        config = load_run_config(path, environ={})
        self.assertEqual(config.data.synthetic.n_patients, 10)
        self.assertEqual(config.data.synthetic.min_code_stays, 5)
        self.assertFalse(config.data.has_files)
