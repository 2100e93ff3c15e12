import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy.special import expit

from readmission.compute import ConfigurationError
from readmission.ehr import (
    N_STATIC,
    OTHER,
    STATIC_FEATURES,
    CohortFormatError,
    Stream,
    SyntheticConfig,
    VitalBinner,
    build_cohort,
    cohort_summary,
    dump_cohort,
    fold_rare_statics,
    generate_synthetic,
    load_cohort,
    simulate_frames,
    split_patients,
    stay_risk,
)

from . import factories


class StaticArityTests(SimpleTestCase):
    def test_twenty_three_static_features(self):
        self.assertEqual(N_STATIC, 23)
        self.assertEqual(len(set(STATIC_FEATURES)), 23)


class VitalBinnerTests(SimpleTestCase):
    def setUp(self):
        self.binner = VitalBinner()

    def test_thirty_two_vital_codes(self):
        self.assertEqual(len(self.binner), 32)

    def test_temperature_bin(self):
        code = self.binner.codes[self.binner.bin_vital("temperature", 34.0)]
        self.assertEqual(code, "vital:temperature:33.22-35.93")

    def test_mean_arterial_pressure_bin(self):
        code = self.binner.codes[self.binner.bin_vital("mean_arterial_pressure", 55)]
        self.assertEqual(code, "vital:mean_arterial_pressure:51-61.32")

    def test_respiratory_rate_bin(self):
        code = self.binner.codes[self.binner.bin_vital("respiratory_rate", 35)]
        self.assertEqual(code, "vital:respiratory_rate:31-44")

    def test_breakpoint_falls_in_upper_bin(self):
        code = self.binner.codes[self.binner.bin_vital("heart_rate", 89)]
        self.assertEqual(code, "vital:heart_rate:89-106")

    def test_unknown_kind(self):
        with self.assertRaises(CohortFormatError):
            self.binner.bin_vital("blood_sugar", 5.0)

    def test_raw_and_binned_codes_normalise(self):
        self.assertEqual(self.binner.normalise("vital:ventilation=1"), "vital:ventilation:ventilated")
        self.assertEqual(self.binner.normalise("vital:gcs:15"), "vital:gcs:15")


class BuildCohortTests(SimpleTestCase):
    def stays(self, n=3):
        return factories.stay_rows(
            [{"stay_id": f"S{i}", "patient_id": f"P{i}", "label": i % 2, "age_years": 50 + i} for i in range(n)]
        )

    def test_empty_events_keep_statics(self):
        cohort = build_cohort(self.stays(), factories.event_rows([]), min_code_stays=1)
        self.assertEqual(len(cohort), 3)
        self.assertTrue(all(len(r.dp) == 0 and len(r.mv) == 0 for r in cohort.records))
        self.assertEqual(cohort.records[2].statics[STATIC_FEATURES.index("age_years")], 52.0)

    def test_consecutive_vital_repeats_keep_latest(self):
        events = factories.event_rows(
            [
                ("S0", "mv", "vital:heart_rate=95", 3.0),
                ("S0", "mv", "vital:heart_rate=100", 2.0),
                ("S0", "mv", "vital:heart_rate=101", 1.0),
            ]
        )
        cohort = build_cohort(self.stays(), events, min_code_stays=1)
        mv = cohort.records[0].mv
        self.assertEqual(len(mv), 1)
        self.assertEqual(mv.elapsed[0], 1.0)
        self.assertEqual(cohort.vocab.mv.code_of(int(mv.codes[0])), "vital:heart_rate:89-106")

    def test_interrupted_vital_run_is_kept(self):
        events = factories.event_rows(
            [
                ("S0", "mv", "vital:heart_rate=95", 3.0),
                ("S0", "mv", "vital:heart_rate=130", 2.0),
                ("S0", "mv", "vital:heart_rate=95", 1.0),
            ]
        )
        cohort = build_cohort(self.stays(), events, min_code_stays=1)
        self.assertEqual(len(cohort.records[0].mv), 3)

    def test_code_in_fewer_stays_than_threshold_becomes_other(self):
        n = 120
        rows = [("S%d" % i, "mv", "med:common", 1.0) for i in range(n)]
        rows += [("S%d" % i, "mv", "med:rare", 2.0) for i in range(99)]
        cohort = build_cohort(self.stays(n), factories.event_rows(rows))
        self.assertIn("med:common", cohort.vocab.mv.codes)
        self.assertNotIn("med:rare", cohort.vocab.mv.codes)
        self.assertEqual(cohort.vocab.mv.codes[0], OTHER)
        self.assertIn(0, cohort.records[0].mv.codes)

    def test_events_sorted_oldest_first_with_code_tie_break(self):
        events = factories.event_rows(
            [("S0", "dp", "dp:b", 1.0), ("S0", "dp", "dp:a", 5.0), ("S0", "dp", "dp:c", 1.0)]
        )
        cohort = build_cohort(self.stays(), events, min_code_stays=1)
        dp = cohort.records[0].dp
        np.testing.assert_array_equal(dp.elapsed, [5.0, 1.0, 1.0])
        self.assertLess(dp.codes[1], dp.codes[2])

    def test_unknown_stream_reports_line(self):
        events = factories.event_rows([("S0", "dp", "dp:a", 1.0), ("S0", "lab", "x", 1.0)])
        with self.assertRaises(CohortFormatError) as caught:
            build_cohort(self.stays(), events)
        self.assertEqual(caught.exception.line, 3)

    def test_bad_label_reports_line(self):
        stays = factories.stay_rows([{"stay_id": "S0", "patient_id": "P0", "label": 2}])
        with self.assertRaises(CohortFormatError) as caught:
            build_cohort(stays, factories.event_rows([]))
        self.assertEqual(caught.exception.line, 2)

    def test_negative_elapsed_is_rejected(self):
        events = factories.event_rows([("S0", "dp", "dp:a", -1.0)])
        with self.assertRaises(CohortFormatError):
            build_cohort(self.stays(), events)

    def test_max_events_keeps_newest(self):
        events = factories.event_rows([("S0", "dp", f"dp:{i}", float(i)) for i in range(5)])
        cohort = build_cohort(self.stays(), events, min_code_stays=1, max_events=2)
        np.testing.assert_array_equal(cohort.records[0].dp.elapsed, [1.0, 0.0])


class FoldRareStaticsTests(SimpleTestCase):
    def test_rare_ethnicity_folds_into_other_unknown(self):
        matrix = np.zeros((5, N_STATIC))
        asian = STATIC_FEATURES.index("ethnicity_asian")
        other = STATIC_FEATURES.index("ethnicity_other_unknown")
        matrix[0, asian] = 1.0
        folded = fold_rare_statics(matrix, min_stays=2)
        self.assertEqual(folded[0, asian], 0.0)
        self.assertEqual(folded[0, other], 1.0)

    def test_rare_insurance_folds_into_reference(self):
        matrix = np.zeros((5, N_STATIC))
        self_pay = STATIC_FEATURES.index("insurance_self_pay")
        matrix[1, self_pay] = 1.0
        folded = fold_rare_statics(matrix, min_stays=2)
        self.assertEqual(folded[1, [STATIC_FEATURES.index(c) for c in STATIC_FEATURES if c.startswith("insurance")]].sum(), 0.0)


class SplitTests(SimpleTestCase):
    def test_patient_stays_stay_together(self):
        split = split_patients(["P1", "P1", "P1"], seed=4)
        sizes = sorted(len(part) for part in (split.train, split.val, split.test))
        self.assertEqual(sizes, [0, 0, 3])

    def test_same_seed_same_split(self):
        ids = [f"P{i % 40}" for i in range(100)]
        a, b = split_patients(ids, seed=9), split_patients(ids, seed=9)
        for name in ("train", "val", "test"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_disjoint_patients_over_random_cohorts(self):
        rng = np.random.default_rng(0)
        for seed in range(1000):
            ids = [f"P{p}" for p in rng.integers(0, 30, size=int(rng.integers(1, 60)))]
            split = split_patients(ids, seed=seed)
            parts = [{ids[i] for i in getattr(split, name)} for name in ("train", "val", "test")]
            self.assertFalse(parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
            self.assertEqual(sum(len(getattr(split, n)) for n in ("train", "val", "test")), len(ids))

    def test_test_fraction_on_thousand_patients(self):
        ids = [f"P{i}" for i in range(1000)]
        split = split_patients(ids, seed=3)
        self.assertAlmostEqual(len(split.test) / 1000, 0.10, delta=0.02)

    def test_empty_cohort_is_an_error(self):
        with self.assertRaises(ConfigurationError):
            split_patients([])


class SyntheticTests(SimpleTestCase):
    def test_prevalence_follows_the_link_function(self):
        cfg = SyntheticConfig(
            n_patients=10_000, effect=0.0, intercept=-2.0, static_effects={}, extra_stays_mean=0.0,
            dp_events_mean=1.0, mv_events_mean=0.0, vitals_per_kind=0, ventilation_rate=0.0,
        )
        frames = simulate_frames(cfg, seed=1)
        self.assertAlmostEqual(frames.stays["label"].mean(), expit(-2.0), delta=0.01)

    def test_planted_code_at_discharge_gives_even_odds(self):
        cfg = SyntheticConfig(intercept=-2.0, effect=2.0, static_effects={})
        self.assertAlmostEqual(stay_risk(cfg, [0.0], np.zeros(N_STATIC)), 0.5)

    def test_zero_patients_gives_empty_frames(self):
        frames = simulate_frames(SyntheticConfig(n_patients=0), seed=0)
        self.assertTrue(frames.stays.empty and frames.events.empty)
        self.assertEqual(list(frames.stays.columns)[:3], ["stay_id", "patient_id", "label"])

    def test_same_seed_gives_identical_dump(self):
        with tempfile.TemporaryDirectory() as tmp:
            texts = []
            for run in ("a", "b"):
                synthetic = factories.small_synthetic(seed=5)
                stays, events = Path(tmp, run, "stays.csv"), Path(tmp, run, "events.csv")
                dump_cohort(synthetic.cohort, stays, events)
                texts.append((stays.read_bytes(), events.read_bytes()))
            self.assertEqual(texts[0], texts[1])

    def test_dump_reloads_to_the_same_records(self):
        synthetic = factories.small_synthetic(n_patients=30, seed=2)
        with tempfile.TemporaryDirectory() as tmp:
            stays, events = Path(tmp, "stays.csv"), Path(tmp, "events.csv")
            dump_cohort(synthetic.cohort, stays, events)
            reloaded = load_cohort(stays, events, min_code_stays=1)
        self.assertEqual(len(reloaded), len(synthetic.cohort))
        self.assertEqual(list(reloaded.labels), list(synthetic.cohort.labels))

    def test_planted_frame_lists_codes_and_statics(self):
        synthetic = factories.small_synthetic(n_patients=20)
        codes = list(synthetic.planted["code"])
        self.assertEqual(sum(c.startswith("dp:") for c in codes), 3)
        self.assertIn("static:elective_surgery", codes)

    def test_invalid_sizes_are_rejected(self):
        with self.assertRaises(ConfigurationError):
            SyntheticConfig(dp_vocab=5, n_planted=6)
        with self.assertRaises(ConfigurationError):
            generate_synthetic(SyntheticConfig(n_patients=-1), seed=0)


class CohortSummaryTests(SimpleTestCase):
    def test_summary_counts(self):
        cohort = factories.cohort(
            [
                factories.record("S1", "P1", dp=[(1, 2.0)], label=1),
                factories.record("S2", "P1", dp=[(1, 2.0), (2, 1.0)], mv=[(1, 1.0)]),
            ]
        )
        summary = dict(cohort_summary(cohort).itertuples(index=False))
        self.assertEqual(summary["ICU stays"], "2")
        self.assertEqual(summary["Patients"], "1")
        self.assertEqual(summary["Readmitted within 30 days"], "1 (50.0%)")
        self.assertEqual(summary[f"Max {Stream.DP.value} sequence length"], "2")
