import json
import shutil
import tempfile
from io import StringIO
from pathlib import Path

import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from readmission import services
from readmission.conf import load_run_config
from readmission.models import ArchitectureResult, BenchmarkRun

SMALL_RUN = {
    "seed": 5,
    "data": {
        "synthetic": {
            "n_patients": 300,
            "dp_vocab": 12,
            "mv_vocab": 6,
            "n_planted": 3,
            "dp_events_mean": 4,
            "mv_events_mean": 3,
            "vitals_per_kind": 1,
            "intercept": -1.0,
        },
        "min_code_stays": 1,
    },
    "architectures": ["LogisticBaseline"],
    "train": {"epochs": 2, "batch_size": 32},
    "evaluation": {"n_resamples": 10},
    "bayes": {"max_epochs": 2, "batch_size": 64},
    "interpret": {"or_samples": 50, "code_samples": 50, "patient_samples": 50, "top_k": 3},
}


class CommandTestCase(TestCase):
    def setUp(self):
        self.tmp = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.tmp, True)
        self.config = self.write_config(SMALL_RUN)

    def write_config(self, data, name="run.json"):
        path = self.tmp / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    def call(self, name, **options):
        stdout = StringIO()
        call_command(name, stdout=stdout, stderr=StringIO(), **options)
        return stdout.getvalue()


class SynthCommandTests(CommandTestCase):
    def test_same_seed_same_bytes(self):
        for out in ("a", "b"):
            self.call("synth", config=self.config, out=self.tmp / out)
        for name in ("stays.csv", "events.csv", "planted.csv"):
            self.assertEqual((self.tmp / "a" / name).read_bytes(), (self.tmp / "b" / name).read_bytes())

    def test_empty_cohort_writes_headers_only(self):
        empty = json.loads(json.dumps(SMALL_RUN))
        empty["data"]["synthetic"]["n_patients"] = 0
        self.call("synth", config=self.write_config(empty, "empty.json"), out=self.tmp / "empty")
        stays = pd.read_csv(self.tmp / "empty" / "stays.csv")
        self.assertEqual(len(stays), 0)
        self.assertIn("stay_id", stays.columns)

    def test_missing_seed(self):
        config = self.write_config({k: v for k, v in SMALL_RUN.items() if k != "seed"}, "noseed.json")
        with self.assertRaisesMessage(CommandError, "seed"):
            self.call("synth", config=config, out=self.tmp / "x")


class BenchmarkCommandTests(CommandTestCase):
    def test_benchmark_stores_the_run_and_writes_tables(self):
        out = self.tmp / "bench"
        stdout = self.call("benchmark", config=self.config, out=out)
        self.assertIn("benchmark run", stdout)
        self.assertEqual(BenchmarkRun.objects.count(), 1)
        result = ArchitectureResult.objects.get()
        self.assertEqual(result.architecture, "LogisticBaseline")
        for name in ("table1.csv", "table1.md", "epochs.csv", "timings.csv"):
            self.assertTrue((out / name).is_file(), name)

        self.call("report", out=self.tmp / "again")
        self.assertEqual((out / "table1.md").read_bytes(), (self.tmp / "again" / "table1.md").read_bytes())

    def test_report_without_runs_or_config(self):
        with self.assertRaises(CommandError):
            self.call("report", out=self.tmp / "nothing")


class TrainCommandTests(CommandTestCase):
    def test_single_architecture(self):
        out = self.tmp / "train"
        stdout = self.call("train", config=self.config, out=out, arch="LogisticBaseline")
        self.assertIn("LogisticBaseline: AP", stdout)
        self.assertTrue((out / "predictions" / "LogisticBaseline.csv").is_file())
        self.assertTrue((out / "checkpoints" / "LogisticBaseline").is_dir())
        self.assertTrue((out / "metrics_LogisticBaseline.csv").is_file())

    def test_unknown_architecture(self):
        with self.assertRaisesMessage(CommandError, "unknown architecture"):
            self.call("train", config=self.config, out=self.tmp / "x", arch="Transformer")


class InterpretCommandTests(CommandTestCase):
    def test_query_needs_a_stored_posterior(self):
        with self.assertRaisesMessage(CommandError, "run interpret first"):
            self.call("interpret", config=self.config, out=self.tmp / "empty", stay_id="S1")

    def test_interpret_then_query_a_stay(self):
        out = self.tmp / "interpret"
        self.call("interpret", config=self.config, out=out)
        for name in ("odds_ratios.csv", "odds_ratios.md", "elbo.csv", "top_codes_dp.md", "code_scores_mv.csv"):
            self.assertTrue((out / "bayes" / name).is_file(), name)

        stay_id = services.load_data(load_run_config(self.config, environ={})).cohort.records[0].stay_id
        stdout = self.call("interpret", config=self.config, out=out, stay_id=stay_id)
        self.assertIn(f"{stay_id}: risk", stdout)

        with self.assertRaisesMessage(CommandError, "unknown stay id"):
            self.call("interpret", config=self.config, out=out, stay_id="no-such-stay")
