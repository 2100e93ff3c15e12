import math
import tempfile

import numpy as np
from django.test import SimpleTestCase

from readmission.compute import ConfigurationError, Value, grad_check, parameter, weighted_bce
from readmission.ehr import N_STATIC, Stream
from readmission.embeddings import EmbeddingTable
from readmission.sequence_models import (
    LAYOUTS,
    ArchitectureSpec,
    ModelDims,
    ReadmissionModel,
    StreamBatch,
    TimeMode,
    apply_exp_decay,
    attend,
    build_model,
    collate,
    gru_step,
    latest_vitals,
    parameter_shapes,
    predict_risk,
    run_bigru,
    score,
)

from . import factories


def mce_tables(dims=None):
    dims = dims or factories.toy_dims()
    rng = np.random.default_rng(21)
    return {
        Stream.DP: EmbeddingTable(
            tuple(f"dp:{i}" for i in range(dims.dp_vocab)), rng.normal(size=(dims.dp_vocab, dims.dp_dim))
        ),
        Stream.MV: EmbeddingTable(
            tuple(f"med:{i}" for i in range(dims.mv_vocab)), rng.normal(size=(dims.mv_vocab, dims.mv_dim))
        ),
    }


def tables_for(spec):
    return mce_tables() if spec.uses_mce else None


def gru_params(hidden, value=0.0):
    params = {}
    for gate in ("z", "r", "n"):
        params[f"cell.W_{gate}"] = parameter(np.full((hidden, hidden), value))
        params[f"cell.U_{gate}"] = parameter(np.full((hidden, hidden), value))
        params[f"cell.b_{gate}"] = parameter(np.full(hidden, value))
    return params


def batch_of(*sequences):
    return StreamBatch.from_sequences([factories.sequence(Stream.DP, events) for events in sequences])


class ArchitectureSpecTests(SimpleTestCase):
    def test_fourteen_architectures(self):
        self.assertEqual(len(ArchitectureSpec), 14)
        self.assertEqual(len(LAYOUTS), 13)

    def test_unknown_name(self):
        with self.assertRaises(ConfigurationError) as caught:
            ArchitectureSpec.parse("Transformer")
        self.assertIn("LogisticBaseline", str(caught.exception))

    def test_mce_family(self):
        self.assertEqual({s for s in ArchitectureSpec if s.uses_mce}, {
            ArchitectureSpec.MCE_RNN_ATTN, ArchitectureSpec.MCE_RNN, ArchitectureSpec.MCE_ATTN,
        })


class GruTests(SimpleTestCase):
    def test_zero_weights_halve_the_state(self):
        out = gru_step(gru_params(2), "cell", np.array([[1.0, 2.0]]), Value(np.array([[3.0, -1.0]])))
        np.testing.assert_allclose(out.data, [[0.5, 1.0]])

    def test_exp_decay_halves_state_after_log_two(self):
        gamma_raw = np.array([math.log(math.e - 1.0)])
        out = apply_exp_decay(np.array([[4.0]]), np.array([[math.log(2.0)]]), gamma_raw)
        self.assertAlmostEqual(float(out.data[0, 0]), 2.0, places=10)

    def test_empty_sequences(self):
        params = build_model(ArchitectureSpec.RNN_CONCAT, factories.toy_dims(), seed=0).params
        batch = batch_of([], [])
        outputs, final = run_bigru(params, "dp", Value(np.zeros((2, 0, 3))), batch, TimeMode.CONCAT_DELTA)
        self.assertEqual(outputs.shape, (2, 0, 8))
        np.testing.assert_array_equal(final.data, np.zeros((2, 8)))

    def test_single_event_is_one_step_from_zero(self):
        params = build_model(ArchitectureSpec.MCE_RNN, factories.toy_dims(), seed=0, mce_tables=mce_tables()).params
        x = Value(np.random.default_rng(1).normal(size=(1, 1, 3)))
        outputs, final = run_bigru(params, "dp", x, batch_of([(2, 1.0)]), TimeMode.NONE)
        expected = gru_step(params, "dp.gru_fwd", np.zeros((1, 3)), x[:, 0, :])
        np.testing.assert_allclose(outputs.data[:, 0, :3], expected.data)
        np.testing.assert_allclose(final.data[:, :3], expected.data)

    def test_padding_does_not_change_final_state(self):
        params = build_model(ArchitectureSpec.RNN_EXP_DECAY, factories.toy_dims(), seed=2).params
        x = np.random.default_rng(3).normal(size=(2, 3, 3))
        short = [(1, 5.0), (2, 1.0)]
        _, alone = run_bigru(params, "dp", Value(x[:1, :2]), batch_of(short), TimeMode.EXP_DECAY)
        _, padded = run_bigru(params, "dp", Value(x), batch_of(short, [(1, 5.0), (2, 3.0), (4, 0.0)]), TimeMode.EXP_DECAY)
        np.testing.assert_allclose(padded.data[0], alone.data[0], atol=1e-12)

    def test_exp_decay_without_gaps_matches_plain_recurrence(self):
        params = build_model(ArchitectureSpec.RNN_EXP_DECAY, factories.toy_dims(), seed=4).params
        x = Value(np.random.default_rng(5).normal(size=(1, 3, 3)))
        same_time = batch_of([(1, 2.0), (2, 2.0), (3, 2.0)])
        _, plain = run_bigru(params, "dp", x, same_time, TimeMode.NONE)
        _, decayed = run_bigru(params, "dp", x, same_time, TimeMode.EXP_DECAY)
        np.testing.assert_array_equal(plain.data, decayed.data)

        spread = batch_of([(1, 9.0), (2, 4.0), (3, 0.0)])
        _, plain = run_bigru(params, "dp", x, spread, TimeMode.NONE)
        _, decayed = run_bigru(params, "dp", x, spread, TimeMode.EXP_DECAY)
        self.assertFalse(np.allclose(plain.data, decayed.data))


class AttentionTests(SimpleTestCase):
    def params(self, dim, u_c=None):
        rng = np.random.default_rng(6)
        return {
            "att.W": parameter(rng.normal(size=(dim, dim))),
            "att.b": parameter(np.zeros(dim)),
            "att.u_c": parameter(np.zeros(dim) if u_c is None else u_c),
        }

    def test_zero_context_vector_gives_plain_average(self):
        values = np.random.default_rng(7).normal(size=(1, 4, 3))
        mask = np.array([[True, True, True, False]])
        weights, context = attend(self.params(3), "att", values, mask)
        np.testing.assert_allclose(weights.data, [[1 / 3, 1 / 3, 1 / 3, 0.0]])
        np.testing.assert_allclose(context.data[0], values[0, :3].mean(axis=0))

    def test_single_event_gets_all_weight(self):
        values = np.random.default_rng(8).normal(size=(1, 1, 3))
        weights, context = attend(self.params(3, np.array([1.0, -2.0, 0.5])), "att", values, np.ones((1, 1), bool))
        np.testing.assert_allclose(weights.data, [[1.0]])
        np.testing.assert_allclose(context.data, values[:, 0])

    def test_event_order_does_not_matter(self):
        params = self.params(3, np.array([0.3, 1.0, -0.7]))
        values = np.random.default_rng(9).normal(size=(1, 3, 3))
        _, forward = attend(params, "att", values)
        _, backward = attend(params, "att", values[:, ::-1])
        np.testing.assert_allclose(forward.data, backward.data, atol=1e-12)


class BatchTests(SimpleTestCase):
    def test_out_of_vocabulary_code_is_rejected(self):
        with self.assertRaises(ConfigurationError):
            collate([factories.record(dp=[(9, 1.0)])], factories.toy_dims())

    def test_gaps_run_between_neighbours(self):
        batch = batch_of([(1, 10.0), (2, 4.0), (3, 1.0)], [(1, 2.0)])
        np.testing.assert_allclose(batch.dt_fwd, [[0.0, 6.0, 3.0], [0.0, 0.0, 0.0]])
        np.testing.assert_allclose(batch.dt_bwd, [[0.0, 3.0, 6.0], [0.0, 0.0, 0.0]])

    def test_latest_vital_per_kind(self):
        dims = ModelDims(dp_vocab=5, mv_vocab=4, dp_dim=3, mv_dim=2, vital_columns=(1, 2, 3), vital_kinds=(0, 0, 1))
        record = factories.record(mv=[(1, 3.0), (2, 2.0), (3, 1.0)])
        np.testing.assert_array_equal(latest_vitals(record, dims), [0.0, 1.0, 1.0])


class ParameterShapeTests(SimpleTestCase):
    def test_baseline_is_statics_plus_vitals(self):
        self.assertEqual(
            parameter_shapes(ArchitectureSpec.LOGISTIC_BASELINE, factories.toy_dims()),
            {"final.w": (N_STATIC,), "final.b": ()},
        )
        dims = ModelDims(5, 4, 3, 2, vital_columns=tuple(range(32)), vital_kinds=tuple(range(32)))
        self.assertEqual(parameter_shapes(ArchitectureSpec.LOGISTIC_BASELINE, dims)["final.w"], (N_STATIC + 32,))

    def test_concat_delta_widens_the_hidden_state(self):
        shapes = parameter_shapes(ArchitectureSpec.RNN_CONCAT_ATTN, factories.toy_dims())
        self.assertEqual(shapes["dp.gru_fwd.U_z"], (4, 4))
        self.assertEqual(shapes["dp.attention.W"], (8, 8))
        self.assertEqual(shapes["mv.score.w"], (6,))

    def test_attention_over_concat_time_embedding(self):
        shapes = parameter_shapes(ArchitectureSpec.ATTN_CONCAT_TIME, factories.toy_dims())
        self.assertEqual(shapes["dp.attention.W"], (4, 4))
        self.assertNotIn("dp.gru_fwd.U_z", shapes)

    def test_mce_models_have_no_trainable_embedding(self):
        shapes = parameter_shapes(ArchitectureSpec.MCE_ATTN, factories.toy_dims())
        self.assertNotIn("dp.embedding", shapes)
        self.assertEqual(shapes["final.w"], (N_STATIC + 2,))


class ModelTests(SimpleTestCase):
    def test_untrained_final_layer_predicts_one_half(self):
        for spec in ArchitectureSpec:
            with self.subTest(spec=spec.value):
                model = build_model(spec, factories.toy_dims(), seed=1, mce_tables=tables_for(spec))
                self.assertAlmostEqual(predict_risk(model, factories.toy_record()), 0.5, places=12)

    def test_empty_stay_has_finite_risk(self):
        for spec in ArchitectureSpec:
            with self.subTest(spec=spec.value):
                model = factories.toy_model(spec, mce_tables=tables_for(spec))
                self.assertTrue(0.0 < predict_risk(model, factories.record()) < 1.0)

    def test_gradients_match_finite_differences(self):
        record = factories.toy_record()
        for spec in ArchitectureSpec:
            with self.subTest(spec=spec.value):
                model = factories.toy_model(spec, mce_tables=tables_for(spec))
                batch = collate([record], model.dims)
                loss = lambda: weighted_bce(model.forward(batch), batch.labels, 2.0).mean()  # noqa: E731
                report = grad_check(loss, model.params, tolerance=1e-4)
                self.assertTrue(report.passed, f"{report.worst}: {report.max_error:.2e}")

    def test_same_seed_same_initial_parameters(self):
        a = build_model(ArchitectureSpec.ODE_RNN_ATTN, factories.toy_dims(), seed=8).snapshot()
        b = build_model(ArchitectureSpec.ODE_RNN_ATTN, factories.toy_dims(), seed=8).snapshot()
        c = build_model(ArchitectureSpec.ODE_RNN_ATTN, factories.toy_dims(), seed=9).snapshot()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])
        self.assertFalse(np.array_equal(a["dp.embedding"], c["dp.embedding"]))

    def test_mce_tables_are_required_and_exclusive(self):
        with self.assertRaises(ConfigurationError):
            build_model(ArchitectureSpec.MCE_RNN_ATTN, factories.toy_dims(), seed=0)
        with self.assertRaises(ConfigurationError):
            build_model(ArchitectureSpec.RNN_CONCAT, factories.toy_dims(), seed=0, mce_tables=mce_tables())

    def test_mce_table_must_cover_vocabulary(self):
        tables = mce_tables(factories.toy_dims(dp_vocab=3))
        with self.assertRaises(ConfigurationError):
            build_model(ArchitectureSpec.MCE_ATTN, factories.toy_dims(), seed=0, mce_tables=tables)

    def test_checkpoint_round_trip(self):
        record = factories.toy_record()
        for spec in (ArchitectureSpec.RNN_ODE_DECAY_ATTN, ArchitectureSpec.MCE_RNN, ArchitectureSpec.LOGISTIC_BASELINE):
            with self.subTest(spec=spec.value), tempfile.TemporaryDirectory() as tmp:
                model = factories.toy_model(spec, mce_tables=tables_for(spec))
                model.save(tmp)
                loaded = ReadmissionModel.load(tmp)
                self.assertEqual(loaded.spec, spec)
                self.assertEqual(loaded.n_parameters, model.n_parameters)
                self.assertEqual(predict_risk(loaded, record), predict_risk(model, record))

    def test_predict_on_no_records(self):
        model = build_model(ArchitectureSpec.LOGISTIC_BASELINE, factories.toy_dims(), seed=0)
        self.assertEqual(model.predict([]).shape, (0,))

    def test_odd_sequence_lengths_in_one_batch(self):
        model = factories.toy_model(ArchitectureSpec.RNN_CONCAT_ATTN)
        records = [factories.toy_record(), factories.record(dp=[(2, 1.0)]), factories.record()]
        together = model.predict(records)
        alone = np.array([predict_risk(model, r) for r in records])
        np.testing.assert_allclose(together, alone, atol=1e-12)



def random_params(shapes, seed):
    rng = np.random.default_rng(seed)
    return {name: parameter(np.asarray(rng.normal(0.0, 0.5, shape)), name) for name, shape in shapes.items()}


class LayerGradientTests(SimpleTestCase):
    tolerance = 1e-6

    def assertGradientsMatch(self, loss, params):
        report = grad_check(loss, params, tolerance=self.tolerance)
        self.assertTrue(report.passed, f"{report.worst}: {report.max_error:.2e}")

    def test_gru_step(self):
        shapes = {f"cell.{kind}_{gate}": (4, 4) for kind in ("W", "U") for gate in ("z", "r", "n")}
        shapes.update({f"cell.b_{gate}": (4,) for gate in ("z", "r", "n")})
        shapes.update({"h": (2, 4), "x": (2, 4)})
        params = random_params(shapes, 30)
        target = np.random.default_rng(31).normal(size=(2, 4))
        self.assertGradientsMatch(lambda: (gru_step(params, "cell", params["h"], params["x"]) * target).sum(), params)

    def test_exp_decay(self):
        params = random_params({"h": (2, 3), "gamma_raw": (3,)}, 32)
        dt = np.array([[0.5], [2.0]])
        target = np.random.default_rng(33).normal(size=(2, 3))
        self.assertGradientsMatch(
            lambda: (apply_exp_decay(params["h"], dt, params["gamma_raw"]) * target).sum(), params
        )

    def test_attention(self):
        params = random_params({"att.W": (4, 4), "att.b": (4,), "att.u_c": (4,), "values": (2, 3, 4)}, 34)
        mask = np.array([[True, True, True], [True, True, False]])
        target = np.random.default_rng(35).normal(size=(2, 4))
        self.assertGradientsMatch(lambda: (attend(params, "att", params["values"], mask)[1] * target).sum(), params)

    def test_score_head(self):
        params = random_params({"head.w": (4,), "head.b": (), "context": (3, 4)}, 36)
        target = np.random.default_rng(37).normal(size=3)
        self.assertGradientsMatch(lambda: (score(params, "head", params["context"]) * target).sum(), params)

    def test_logistic_head(self):
        model = factories.toy_model(ArchitectureSpec.LOGISTIC_BASELINE)
        batch = collate([factories.toy_record(), factories.toy_record(label=0)], model.dims)
        self.assertGradientsMatch(lambda: weighted_bce(model.forward(batch), batch.labels, 3.0).mean(), model.params)


class InvarianceTests(SimpleTestCase):
    def test_rescaled_score_head_keeps_the_risk(self):
        record = factories.toy_record()
        for spec in (ArchitectureSpec.ATTN_CONCAT_TIME, ArchitectureSpec.RNN_EXP_DECAY_ATTN, ArchitectureSpec.ODE_RNN):
            with self.subTest(spec=spec.value):
                model = factories.toy_model(spec)
                before = predict_risk(model, record)
                c = 3.7
                model.params["dp.score.w"].data *= c
                model.params["dp.score.b"].data *= c
                model.params["final.w"].data[N_STATIC] /= c
                self.assertAlmostEqual(predict_risk(model, record), before, places=10)

    def test_concat_delta_without_gaps_matches_a_zero_time_column(self):
        params = factories.toy_model(ArchitectureSpec.RNN_CONCAT).params
        x = np.random.default_rng(12).normal(size=(2, 3, 3))
        batch = batch_of([(1, 2.0), (2, 2.0), (3, 2.0)], [(4, 5.0), (1, 5.0)])
        padded = np.concatenate([x, np.zeros((2, 3, 1))], axis=-1)
        outputs, final = run_bigru(params, "dp", Value(x), batch, TimeMode.CONCAT_DELTA)
        plain_outputs, plain_final = run_bigru(params, "dp", Value(padded), batch, TimeMode.NONE)
        np.testing.assert_allclose(outputs.data, plain_outputs.data, atol=1e-12)
        np.testing.assert_allclose(final.data, plain_final.data, atol=1e-12)

    def test_same_time_events_in_any_order_give_one_risk(self):
        dp = [(1, 3.0), (3, 3.0), (2, 3.0), (4, 1.0)]
        mv = [(1, 2.0), (3, 2.0), (2, 0.5)]
        for spec in ArchitectureSpec:
            with self.subTest(spec=spec.value):
                model = factories.toy_model(spec, mce_tables=tables_for(spec))
                listed = predict_risk(model, factories.record(dp=dp, mv=mv))
                shuffled = predict_risk(model, factories.record(dp=[dp[2], dp[3], dp[0], dp[1]], mv=mv[::-1]))
                self.assertEqual(listed, shuffled)

    def test_attention_adds_only_attention_parameters(self):
        dims = factories.toy_dims()
        plain = parameter_shapes(ArchitectureSpec.ODE_RNN, dims)
        attn = parameter_shapes(ArchitectureSpec.ODE_RNN_ATTN, dims)
        extra = {f"{stream.value}.attention.{leaf}" for stream in Stream for leaf in ("W", "b", "u_c")}
        self.assertEqual(set(attn) - set(plain), extra)
        self.assertEqual({name: attn[name] for name in plain}, plain)
