import numpy as np
import pytest
from sklearn.base import clone

from nodec.estimators import EpidemicNodec, KuramotoNodec


def tiny_kuramoto(**overrides):
    kwargs = dict(graph_nodes=12, edge_prob=0.35, graph_seed=2, omega_seed=5,
                  epochs=3, lr=0.02, batch_size=2, max_horizon=3.0,
                  tau=0.1, eval_horizon=5.0)
    kwargs.update(overrides)
    return KuramotoNodec(**kwargs)


def tiny_epidemic(**overrides):
    kwargs = dict(rows=6, cols=6, budget=20.0, epochs=2, horizon=1.0,
                  tau=0.02, control_interval=0.02)
    kwargs.update(overrides)
    return EpidemicNodec(**kwargs)


class TestSklearnContract:
    def test_get_params_round_trip(self):
        est = tiny_kuramoto()
        params = est.get_params()
        est2 = KuramotoNodec(**params)
        assert est2.get_params() == params

    def test_clone_unfitted_state(self):
        est = tiny_kuramoto().fit()
        cloned = clone(est)
        assert not hasattr(cloned, "controller_")
        assert cloned.get_params() == est.get_params()

    def test_set_params_chains(self):
        est = tiny_epidemic().set_params(epochs=1, lr=0.01)
        assert est.epochs == 1 and est.lr == 0.01


class TestKuramotoEstimator:
    def test_fit_predict_shapes(self):
        est = tiny_kuramoto().fit()
        X = np.random.default_rng(0).uniform(0, 1, size=(3, 12))
        controls = est.predict(X)
        assert controls.shape == (3, est.controller_.m)
        assert np.all(np.isfinite(controls))

    def test_predict_before_fit_raises(self):
        with pytest.raises(RuntimeError):
            tiny_kuramoto().predict(np.zeros((1, 12)))

    def test_input_validation(self):
        est = tiny_kuramoto().fit()
        with pytest.raises(ValueError):
            est.predict(np.zeros((2, 5)))
        with pytest.raises(ValueError):
            est.predict(np.full((1, 12), np.nan))

    def test_score_in_unit_interval(self):
        est = tiny_kuramoto().fit()
        x0 = est.bench_.x_star * 0.95
        score = est.score(x0.reshape(1, -1))
        assert 0.0 <= score <= 1.0

    def test_fit_deterministic(self):
        a = tiny_kuramoto().fit()
        b = tiny_kuramoto().fit()
        assert a.history_ == b.history_


class TestEpidemicEstimator:
    def test_fit_predict_budget(self):
        est = tiny_epidemic().fit()
        x = est.bench_.x0.reshape(1, -1)
        u = est.predict(x)
        assert u.shape == (1, est.controller_.m)
        assert np.all(u > 0)
        assert abs(u.sum() - est.budget) <= 1e-9

    def test_score_improves_over_untrained(self):
        trained = tiny_epidemic(epochs=8).fit()
        untrained = tiny_epidemic(epochs=8)
        untrained.bench_ = trained.bench_
        from nodec.pipelines import make_controller
        untrained.controller_ = make_controller(untrained._config(), "nodec",
                                                trained.bench_)
        untrained.n_features_in_ = trained.n_features_in_
        assert trained.score() >= untrained.score()
