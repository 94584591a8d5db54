import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import qmc

from glidermdo import surrogate as sg

BOX = np.array([[-1.0, 1.0], [-1.0, 1.0]])


def design(n, dim=2, seed=0):
    return qmc.scale(qmc.Halton(dim, scramble=True, seed=seed).random(n), BOX[:dim, 0], BOX[:dim, 1])


def smooth(X):
    X = np.atleast_2d(X)
    return np.sin(2.0 * X[:, 0]) + X[:, 1] ** 2


def linear(X):
    X = np.atleast_2d(X)
    return 0.7 - 1.3 * X[:, 0] + 2.1 * X[:, 1]


class TestTrainingSet:
    def test_duplicates_rejected(self):
        with pytest.raises(sg.SurrogateError):
            sg.TrainingSet([[0.0, 0.0], [0.0, 0.0]], [1.0, 2.0])

    def test_non_finite_rejected(self):
        with pytest.raises(sg.SurrogateError):
            sg.TrainingSet([[0.0, 0.0], [1.0, np.nan]], [1.0, 2.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            sg.TrainingSet([[0.0, 0.0]], [1.0, 2.0])


class TestEpsilonSamples:
    def test_range_and_determinism(self):
        e = sg.epsilon_samples(16, seed=3)
        assert len(e) == 16
        assert np.all((e >= 1.0) & (e <= 3.0))
        np.testing.assert_array_equal(e, sg.epsilon_samples(16, seed=3))

    def test_stratified(self):
        # one draw per stratum of width 2/16
        e = sg.epsilon_samples(16, seed=0)
        np.testing.assert_array_equal(np.sort(np.floor((e - 1.0) / 0.125)), np.arange(16))

    def test_model_rejects_out_of_range_exponent(self):
        X = design(8)
        with pytest.raises(sg.SurrogateError):
            sg.SrbfModel(sg.TrainingSet(X, smooth(X)), eps=[3.5])


class TestSrbf:
    def test_linear_reproduction(self):
        X = design(12)
        model = sg.SrbfModel(sg.TrainingSet(X, linear(X)), mu=0.0, eps=[1.7], bounds=BOX)
        probe = design(50, seed=9)
        np.testing.assert_allclose(model.predict(probe)[0], linear(probe), atol=1e-8)

    def test_interpolation(self):
        X = design(16)
        y = smooth(X)
        model = sg.SrbfModel(sg.TrainingSet(X, y), mu=0.0, bounds=BOX)
        np.testing.assert_allclose(model.predict_ensemble(X), np.broadcast_to(y, (16, 16)), rtol=1e-8, atol=1e-8)

    def test_heavy_penalty_gives_linear_fit(self):
        X = design(20)
        y = smooth(X)
        model = sg.SrbfModel(sg.TrainingSet(X, y), mu=1e12, eps=[2.0], bounds=BOX)
        P = np.column_stack([np.ones(20), X])
        coef = np.linalg.lstsq(P, y, rcond=None)[0]
        probe = design(30, seed=4)
        ls = np.column_stack([np.ones(30), probe]) @ coef
        np.testing.assert_allclose(model.predict(probe)[0], ls, atol=1e-4)
        assert np.abs(model.weights).max() < 1e-4

    def test_zero_uncertainty_at_training_points(self):
        X = design(16)
        model = sg.SrbfModel(sg.TrainingSet(X, smooth(X)), mu=0.0, bounds=BOX)
        assert model.predict(X)[1].max() < 1e-8

    def test_single_exponent_has_no_uncertainty(self):
        X = design(16)
        model = sg.SrbfModel(sg.TrainingSet(X, smooth(X)), eps=[2.2], bounds=BOX)
        assert np.all(model.predict(design(40, seed=5))[1] == 0.0)

    def test_uncertainty_grows_outside_hull(self):
        x = np.linspace(0.0, 1.0, 9)[:, None]
        model = sg.SrbfModel(sg.TrainingSet(x, np.sin(4.0 * x[:, 0])), mu=0.0, bounds=[[0.0, 1.0]])
        grid = np.linspace(1.0, 4.0, 31)[:, None]
        u = model.predict(grid)[1]
        assert u[0] < 1e-8
        assert np.all(np.diff(u[5:]) > 0)
        assert u[-1] > u[10] > u[0]

    def test_permutation_invariant(self):
        X = design(16)
        y = smooth(X)
        perm = np.random.default_rng(0).permutation(16)
        a = sg.SrbfModel(sg.TrainingSet(X, y), mu=1e-8, bounds=BOX)
        b = sg.SrbfModel(sg.TrainingSet(X[perm], y[perm]), mu=1e-8, bounds=BOX)
        probe = design(25, seed=2)
        np.testing.assert_allclose(a.predict(probe)[0], b.predict(probe)[0], rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(a.predict(probe)[1], b.predict(probe)[1], rtol=1e-6, atol=1e-10)

    @given(seed=st.integers(0, 1000))
    def test_added_point_keeps_interpolation(self, seed):
        X = design(12)
        extra = np.random.default_rng(seed).uniform(-1.0, 1.0, (1, 2))
        if np.min(np.linalg.norm(X - extra, axis=1)) < 1e-3:
            return
        X2 = np.vstack([X, extra])
        model = sg.SrbfModel(sg.TrainingSet(X2, smooth(X2)), mu=0.0, eps=[1.5, 2.5], bounds=BOX)
        np.testing.assert_allclose(model.predict(X)[0], smooth(X), rtol=1e-8, atol=1e-8)

    def test_rank_deficient_interpolation(self):
        t = np.linspace(-1.0, 1.0, 8)
        X = np.column_stack([t, 0.5 * t])
        with pytest.raises(sg.SurrogateError, match="mu > 0"):
            sg.SrbfModel(sg.TrainingSet(X, t**2), mu=0.0, eps=[2.0], bounds=BOX)

    def test_too_few_points(self):
        X = design(3)
        with pytest.raises(sg.SurrogateError):
            sg.SrbfModel(sg.TrainingSet(X, smooth(X)))

    def test_negative_mu(self):
        X = design(8)
        with pytest.raises(ValueError):
            sg.SrbfModel(sg.TrainingSet(X, smooth(X)), mu=-1.0)

    def test_gcv_selects_from_grid(self):
        X = design(16)
        y = smooth(X) + 0.05 * np.random.default_rng(1).normal(size=16)
        model = sg.SrbfModel(sg.TrainingSet(X, y), mu="gcv", eps=[1.5, 2.5], bounds=BOX)
        assert np.all(model.mu_abs > 0)

    def test_deterministic_and_serializable(self):
        X = design(16)
        model = sg.SrbfModel(sg.TrainingSet(X, smooth(X)), bounds=BOX)
        back = sg.SrbfModel.from_dict(model.to_dict())
        probe = design(10, seed=8)
        np.testing.assert_array_equal(back.predict_ensemble(probe), model.predict_ensemble(probe))


class TestMultiFidelity:
    def test_identical_fidelities(self):
        X = design(16)
        lf = sg.TrainingSet(X, smooth(X), 1)
        mf = sg.train_mf(lf, sg.TrainingSet(X[:6], smooth(X[:6]), 2), mu=0.0, bounds=BOX)
        probe = design(20, seed=3)
        np.testing.assert_allclose(mf.predict(probe)[0], mf.predict_lf(probe)[0], atol=1e-8)

    def test_constant_shift(self):
        X = design(16)
        Xh = design(6, seed=11)
        mf = sg.train_mf(
            sg.TrainingSet(X, linear(X), 1), sg.TrainingSet(Xh, linear(Xh) + 1.0, 2), mu=0.0, bounds=BOX
        )
        probe = design(40, seed=12) * 0.9
        disc_mean = mf.discrepancy_model.predict(probe)[0]
        np.testing.assert_allclose(disc_mean, 1.0, atol=1e-6)

    def test_combined_uncertainty_matches_components(self):
        X = design(16)
        Xh = design(8, seed=5)
        mf = sg.train_mf(sg.TrainingSet(X, smooth(X)), sg.TrainingSet(Xh, smooth(Xh) + Xh[:, 0]), bounds=BOX)
        probe = design(30, seed=6)
        _, u = mf.predict(probe)
        _, u1, ud = mf.predict_components(probe)
        np.testing.assert_allclose(u, np.sqrt(u1**2 + ud**2), rtol=1e-12)

    def test_three_four_five(self):
        assert sg.combine_uncertainty(3.0, 4.0) == 5.0
        assert sg.combine_uncertainty(2.5, 0.0) == 2.5

    @given(a=st.one_of(st.just(0.0), st.floats(1e-100, 1e6)), b=st.one_of(st.just(0.0), st.floats(1e-100, 1e6)))
    def test_root_sum_square(self, a, b):
        assert sg.combine_uncertainty(a, b) == pytest.approx(np.sqrt(a * a + b * b), rel=1e-12, abs=1e-300)

    def test_empty_high_fidelity(self):
        X = design(16)
        lf = sg.TrainingSet(X, smooth(X))
        empty = sg.TrainingSet(np.zeros((0, 2)), [], 2)
        mf = sg.train_mf(lf, empty, bounds=BOX)
        assert mf.hf_empty
        probe = design(10, seed=7)
        mean, u1, ud = mf.predict_components(probe)
        assert np.all(ud == 0.0)
        np.testing.assert_array_equal(mean, mf.predict_lf(probe)[0])

    def test_sparse_high_fidelity_uses_constant(self):
        X = design(16)
        Xh = X[:2]  # LF interpolates here, so the residual is exactly the shift
        mf = sg.train_mf(sg.TrainingSet(X, smooth(X)), sg.TrainingSet(Xh, smooth(Xh) + 0.5), mu=0.0, bounds=BOX)
        assert isinstance(mf.discrepancy_model, sg.ConstantModel)
        assert mf.discrepancy_model.value == pytest.approx(0.5, abs=1e-8)

    def test_save_load(self, tmp_path):
        X = design(16)
        Xh = design(8, seed=5)
        mf = sg.train_mf(sg.TrainingSet(X, smooth(X)), sg.TrainingSet(Xh, smooth(Xh) + 0.2), bounds=BOX)
        mf.save(tmp_path / "mf.json")
        back = sg.load_surrogate(tmp_path / "mf.json")
        probe = design(10, seed=9)
        for a, b in zip(mf.predict(probe), back.predict(probe)):
            np.testing.assert_array_equal(a, b)


class TestLogSurrogate:
    def test_positive_predictions(self):
        X = design(16)
        y = np.exp(smooth(X))
        s = sg.train_mf_log(sg.TrainingSet(X, y), sg.TrainingSet(X[:8], 1.1 * y[:8]), bounds=BOX)
        mean, u = s.predict(design(40, seed=3))
        assert np.all(mean > 0) and np.all(u >= 0)

    def test_interpolates_positive_data(self):
        X = design(16)
        y = np.exp(smooth(X))
        s = sg.train_mf_log(sg.TrainingSet(X, y), None, mu=0.0, bounds=BOX)
        np.testing.assert_allclose(s.predict(X)[0], y, rtol=1e-8)

    def test_rejects_nonpositive(self):
        X = design(8)
        with pytest.raises(sg.SurrogateError):
            sg.train_mf_log(sg.TrainingSet(X, smooth(X) - 10.0), None)

    def test_round_trip(self, tmp_path):
        X = design(16)
        y = np.exp(smooth(X))
        s = sg.train_mf_log(sg.TrainingSet(X, y), sg.TrainingSet(X[:8], 1.1 * y[:8]), bounds=BOX)
        s.save(tmp_path / "log.json")
        back = sg.load_surrogate(tmp_path / "log.json")
        assert isinstance(back, sg.LogSurrogate)
        np.testing.assert_array_equal(back.predict(X)[0], s.predict(X)[0])
