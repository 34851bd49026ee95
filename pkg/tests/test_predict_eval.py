import dataclasses
import io
import math

import numpy as np
import pytest

from cofactor.corpus import (EvalSplit, SyntheticConfig, generate_synthetic,
                             make_split)
from cofactor.errors import ValidationError
from cofactor.factor import Hyperparams, ModelState, TrainData, train
from cofactor.predict_eval import (EvalReport, PredictionRequest, evaluate,
                                   predict, predict_in_matrix,
                                   predict_out_of_matrix, rmse, sweep_lambda_s,
                                   write_trace_csv)

from test_factor import synthetic_train_data
from test_sdae import tiny_net


class TestPredictInMatrix:
    def test_zero_user(self):
        assert predict_in_matrix(np.zeros(3), np.array([1.0, -2.0, 5.0])) == 0.0

    def test_hand_dot_product(self):
        assert predict_in_matrix(np.array([1.0, 2.0]),
                                 np.array([3.0, -1.0])) == pytest.approx(1.0)

    def test_sign_flip_invariance(self, rng):
        theta, beta = rng.standard_normal(4), rng.standard_normal(4)
        assert predict_in_matrix(theta, beta) == pytest.approx(
            predict_in_matrix(-theta, -beta))

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            predict_in_matrix(np.zeros(3), np.zeros(4))


class TestPredictOutOfMatrix:
    def test_zero_user(self, rng):
        assert predict_out_of_matrix(np.zeros(1), rng.random(2), tiny_net()) == 0.0

    def test_identical_text_identical_prediction(self, rng):
        params = tiny_net()
        theta = rng.standard_normal(1)
        x = rng.random(2)
        assert predict_out_of_matrix(theta, x, params) == \
            predict_out_of_matrix(theta, x.copy(), params)

    def test_tiny_net_composition(self):
        value = predict_out_of_matrix(np.array([2.0]), np.array([1.0, 1.0]), tiny_net())
        assert value == pytest.approx(2.0 / (1.0 + math.exp(-2.0)), abs=1e-12)
        assert value == pytest.approx(1.7616, abs=1e-4)

    def test_vocabulary_mismatch(self):
        with pytest.raises(ValidationError):
            predict_out_of_matrix(np.zeros(1), np.ones(5), tiny_net())


class TestPredictDispatch:
    def test_in_matrix_request(self, rng):
        state = ModelState(rng.standard_normal((3, 2)), rng.standard_normal((4, 2)),
                           np.zeros((4, 2)), None, rating_offset=1.5)
        request = PredictionRequest(user=1, mode="in_matrix", item=2)
        expected = state.user_factors[1] @ state.item_factors[2] + 1.5
        assert predict(state, request) == pytest.approx(expected)

    def test_out_of_matrix_request_uses_text(self, rng):
        state = ModelState(rng.standard_normal((2, 1)), np.full((3, 1), np.nan),
                           np.full((3, 1), np.nan), tiny_net())
        request = PredictionRequest(user=0, mode="out_of_matrix",
                                    text_row=np.array([1.0, 1.0]))
        expected = predict_out_of_matrix(state.user_factors[0],
                                         np.array([1.0, 1.0]), tiny_net())
        assert predict(state, request) == pytest.approx(expected)

    def test_invariants_enforced(self, rng):
        state = ModelState(rng.standard_normal((2, 1)), rng.standard_normal((2, 1)),
                           np.zeros((2, 1)), None)
        with pytest.raises(ValidationError, match="item index"):
            predict(state, PredictionRequest(user=0, mode="in_matrix"))
        with pytest.raises(ValidationError, match="bag-of-words"):
            predict(state, PredictionRequest(user=0, mode="out_of_matrix"))
        with pytest.raises(ValidationError, match="text encoder"):
            predict(state, PredictionRequest(user=0, mode="out_of_matrix",
                                             text_row=np.ones(2)))


class TestRmse:
    def test_perfect_fit(self):
        assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_hand_value(self):
        assert rmse([2.0, 1.0], [1.0, 2.0]) == pytest.approx(1.0)

    def test_permutation_invariant(self, rng):
        p, t = rng.random(20), rng.random(20)
        order = rng.permutation(20)
        assert rmse(p, t) == pytest.approx(rmse(p[order], t[order]), rel=1e-12)

    def test_symmetric_in_arguments(self, rng):
        p, t = rng.random(15), rng.random(15)
        assert rmse(p, t) == rmse(t, p)

    def test_empty_and_mismatched(self):
        with pytest.raises(ValidationError):
            rmse([], [])
        with pytest.raises(ValidationError):
            rmse([1.0], [1.0, 2.0])


def _true_state_split(seed=3):
    config = SyntheticConfig(n_users=25, n_items=20, n_factors=3,
                             rating_density=0.5, sigma_rating=0.0,
                             rating_offset=5.0)
    ratings, _, docs, state = generate_synthetic(config, seed=seed)
    return ratings, docs, state


class TestEvaluate:
    def test_memorization_on_zero_noise_fit(self):
        ratings, docs, state = _true_state_split()
        split = EvalSplit(train=ratings, validation=ratings, test=ratings,
                          mode="in_matrix", seed=0)
        report = evaluate(state, split, docs)
        assert report.rmse < 1e-6
        assert report.n_predictions == ratings.n_entries

    def test_out_of_matrix_ignores_item_and_context_factors(self):
        data = synthetic_train_data(seed=12)
        config = SyntheticConfig(n_users=40, n_items=30, n_factors=3,
                                 vocab_size=12, rating_density=0.3,
                                 rating_offset=4.0, encoder_hidden=(6,))
        ratings, _, docs, _ = generate_synthetic(config, seed=12)
        split = make_split(ratings, "out_of_matrix", 0.2, 0.1, seed=12)
        from cofactor.sdae import SdaeConfig
        hyper = Hyperparams(n_factors=3, lambda_s=0.0, lambda_user=0.05,
                            lambda_item=1.0, lambda_context=0.05,
                            lambda_recon=1.0,
                            sdae=SdaeConfig(layer_widths=[12, 6, 3, 6, 12],
                                            pretrain_epochs=3),
                            max_epochs=3, patience=0, seed=12)
        state, _ = train(TrainData(split=split, docs=docs), hyper)
        report = evaluate(state, split, docs)
        poisoned = state.copy()
        poisoned.item_factors[:] = np.nan
        poisoned.context_factors[:] = np.nan
        report_poisoned = evaluate(poisoned, split, docs)
        assert report.rmse == report_poisoned.rmse

    def test_cold_users_counted_and_predicted_at_offset(self):
        ratings, docs, state = _true_state_split()
        # hold user 0's ratings out of train entirely
        keep = ratings.users != 0
        train_ds = ratings.replace_entries(ratings.users[keep], ratings.items[keep],
                                           ratings.ratings[keep])
        test_ds = ratings.replace_entries(ratings.users[~keep], ratings.items[~keep],
                                          ratings.ratings[~keep])
        split = EvalSplit(train=train_ds, validation=train_ds, test=test_ds,
                          mode="in_matrix", seed=0)
        cold_state = state.copy()
        cold_state.user_factors[0] = 0.0
        report = evaluate(cold_state, split, docs)
        assert report.n_cold_user_predictions == test_ds.n_entries

    def test_missing_text_counted(self):
        ratings, docs, state = _true_state_split()
        blank = docs.rows.tolil()
        blank[3, :] = 0
        docs_blank = dataclasses.replace(docs, rows=blank.tocsr())
        mask = ratings.items == 3
        test_ds = ratings.replace_entries(ratings.users[mask], ratings.items[mask],
                                          ratings.ratings[mask])
        keep = ~mask
        train_ds = ratings.replace_entries(ratings.users[keep], ratings.items[keep],
                                           ratings.ratings[keep])
        split = EvalSplit(train=train_ds, validation=train_ds, test=test_ds,
                          mode="out_of_matrix", seed=0)
        report = evaluate(state, split, docs_blank)
        assert report.n_missing_text_items == 1
        assert np.isfinite(report.rmse)

    def test_clamping(self):
        state = ModelState(np.array([[10.0]]), np.array([[10.0]]),
                           np.zeros((1, 1)), None)
        from conftest import make_ratings
        ds = make_ratings([(0, 0, 8.0)])
        split = EvalSplit(train=ds, validation=ds, test=ds, mode="in_matrix", seed=0)
        raw = evaluate(state, split)
        clamped = evaluate(state, split, clamp=(1.0, 10.0))
        assert raw.rmse == pytest.approx(92.0)
        assert clamped.rmse == pytest.approx(2.0)

    def test_deterministic(self):
        ratings, docs, state = _true_state_split()
        split = EvalSplit(train=ratings, validation=ratings, test=ratings,
                          mode="in_matrix", seed=0)
        assert evaluate(state, split, docs) == evaluate(state, split, docs)

    def test_report_serialization(self, tmp_path):
        report = EvalReport(mode="in_matrix", rmse=1.25, n_predictions=10,
                            n_cold_user_predictions=1, n_missing_text_items=0,
                            config_fingerprint="deadbeef")
        sink = io.StringIO()
        report.write_text(sink)
        text = sink.getvalue()
        assert "rmse: 1.25" in text and "mode: in_matrix" in text
        sink = io.StringIO()
        report.write_csv(sink, lambda_s=0.5, epoch=7)
        lines = sink.getvalue().strip().splitlines()
        assert lines[0] == "mode,lambda_s,epoch,rmse,n_predictions,config"
        assert lines[1].startswith("in_matrix,0.5,7,1.25,10,deadbeef")


class TestSweep:
    def test_single_point_equals_direct_train(self):
        data = synthetic_train_data(seed=21)
        hyper = Hyperparams(n_factors=3, lambda_s=0.4, lambda_user=0.05,
                            lambda_item=0.5, lambda_context=0.05, sdae=None,
                            max_epochs=4, patience=0, seed=21)
        points = sweep_lambda_s(data, hyper, [0.4])
        state, trace = train(data, hyper)
        direct = evaluate(state, data.split, data.docs)
        assert len(points) == 1
        assert points[0].lambda_s == 0.4
        assert points[0].validation_rmse == pytest.approx(trace.best_validation_rmse)
        assert points[0].test_rmse == pytest.approx(direct.rmse)

    def test_zero_entry_is_the_degenerate_run(self):
        data = synthetic_train_data(seed=22)
        hyper = Hyperparams(n_factors=3, lambda_s=5.0, lambda_user=0.05,
                            lambda_item=0.5, lambda_context=0.05, sdae=None,
                            max_epochs=4, patience=0, seed=22)
        points = sweep_lambda_s(data, hyper, [0.0, 1.0])
        degenerate = dataclasses.replace(hyper, lambda_s=0.0)
        state, _ = train(data, degenerate)
        direct = evaluate(state, data.split, data.docs)
        assert points[0].test_rmse == pytest.approx(direct.rmse, rel=1e-12)

    def test_empty_grid_rejected(self):
        data = synthetic_train_data(seed=23)
        with pytest.raises(ValidationError):
            sweep_lambda_s(data, Hyperparams(n_factors=3, sdae=None), [])

    def test_errors_tagged_with_lambda(self):
        data = synthetic_train_data(seed=24)
        bad = Hyperparams(n_factors=3, lambda_user=-1.0, sdae=None)
        from cofactor.errors import CofactorError
        with pytest.raises(CofactorError, match="lambda_s=2.0"):
            sweep_lambda_s(data, bad, [2.0])


class TestTraceCsv:
    def test_header_labels_run_and_rows_parse(self):
        data = synthetic_train_data(seed=25, with_text=False, with_clicks=False)
        hyper = Hyperparams(n_factors=3, lambda_s=0.0, lambda_user=0.05,
                            lambda_item=0.5, lambda_context=0.05, sdae=None,
                            max_epochs=3, patience=0, seed=25)
        _, trace = train(data, hyper)
        sink = io.StringIO()
        write_trace_csv(trace, sink, config_fingerprint="cafe01")
        lines = sink.getvalue().strip().splitlines()
        assert lines[0] == "# run: pmf-degenerate, config: cafe01"
        assert lines[1].split(",")[0] == "epoch"
        assert len(lines) == 2 + len(trace.epochs)
        table = np.loadtxt(io.StringIO("\n".join(lines)), delimiter=",", skiprows=2)
        assert table.shape == (3, 7)
