import numpy as np
import pytest

from incwealth.bart import (
    BartConfig,
    BartError,
    PersonEncoder,
    fit_probit,
    fit_regression,
)
from incwealth.data import PersonRecord
from incwealth.metrics import sample_spearman


def friedman(n, rng, noise=1.0):
    x = rng.random((n, 10))
    y = (
        10 * np.sin(np.pi * x[:, 0] * x[:, 1])
        + 20 * (x[:, 2] - 0.5) ** 2
        + 10 * x[:, 3]
        + 5 * x[:, 4]
        + noise * rng.standard_normal(n)
    )
    return x, y


SMALL = BartConfig(n_trees=20, iterations=400, burn_in=100, keep_every=4)


class TestRegression:
    def test_forced_stump_recovers_mean(self):
        rng = np.random.Generator(np.random.PCG64(0))
        x = rng.random((60, 3))
        c = 5.0
        y = c + rng.uniform(-1e-7, 1e-7, 60)  # exactly constant y is a domain error
        cfg = BartConfig(n_trees=1, iterations=400, burn_in=100, max_depth=0, keep_every=2)
        ens = fit_regression(x, y, cfg, seed=1)
        assert np.max(np.abs(ens.predict(x) - c)) < 1e-6

    def test_constant_response_rejected(self):
        rng = np.random.Generator(np.random.PCG64(1))
        with pytest.raises(BartError):
            fit_regression(rng.random((50, 2)), np.full(50, 2.0), SMALL, seed=0)

    def test_too_small_sample_rejected(self):
        rng = np.random.Generator(np.random.PCG64(2))
        with pytest.raises(BartError):
            fit_regression(rng.random((20, 2)), rng.random(20), SMALL, seed=0)

    def test_friedman_beats_linear_baseline(self):
        rng = np.random.Generator(np.random.PCG64(3))
        xtr, ytr = friedman(500, rng)
        xte, yte = friedman(200, rng)
        cfg = BartConfig(n_trees=50, iterations=1200, burn_in=300, keep_every=6)
        ens = fit_regression(xtr, ytr, cfg, seed=3)
        rmse = float(np.sqrt(np.mean((ens.predict(xte) - yte) ** 2)))
        a = np.column_stack([np.ones(len(ytr)), xtr])
        beta = np.linalg.lstsq(a, ytr, rcond=None)[0]
        ols_pred = np.column_stack([np.ones(len(yte)), xte]) @ beta
        rmse_ols = float(np.sqrt(np.mean((ols_pred - yte) ** 2)))
        assert rmse < rmse_ols

    def test_same_seed_identical_predictions(self):
        rng = np.random.Generator(np.random.PCG64(4))
        x, y = friedman(120, rng)
        e1 = fit_regression(x, y, SMALL, seed=9)
        e2 = fit_regression(x, y, SMALL, seed=9)
        assert np.array_equal(e1.predict(x), e2.predict(x))

    def test_monotone_signal_monotone_predictions(self):
        rng = np.random.Generator(np.random.PCG64(5))
        x = rng.uniform(0, 1, (400, 1))
        y = 3 * x[:, 0] + 0.1 * rng.standard_normal(400)
        ens = fit_regression(x, y, SMALL, seed=2)
        grid = np.linspace(0.02, 0.98, 40)[:, None]
        pred = ens.predict(grid)
        assert sample_spearman(grid[:, 0], pred) > 0.9

    def test_sigma2_chain_positive_and_mixing(self):
        # mixing bound holds at the default chain configuration
        rng = np.random.Generator(np.random.PCG64(6))
        x, y = friedman(300, rng)
        cfg = BartConfig(n_trees=50, iterations=2000, burn_in=500, keep_every=1)
        ens = fit_regression(x, y, cfg, seed=7)
        s2 = ens.sigma2_trace
        assert np.all(s2 > 0)
        lag = 50
        a = s2[:-lag] - s2[:-lag].mean()
        b = s2[lag:] - s2[lag:].mean()
        acf = float(a @ b / np.sqrt((a @ a) * (b @ b)))
        assert acf < 0.5

    def test_prediction_invariant_to_tree_order(self):
        rng = np.random.Generator(np.random.PCG64(7))
        x, y = friedman(100, rng)
        ens = fit_regression(x, y, SMALL, seed=5)
        base = ens.predict(x[:10])
        for trees in ens.snapshots:
            trees.reverse()
        assert np.allclose(ens.predict(x[:10]), base, atol=1e-12)

    def test_schema_mismatch_rejected(self):
        rng = np.random.Generator(np.random.PCG64(8))
        x, y = friedman(100, rng)
        ens = fit_regression(x, y, SMALL, seed=5)
        with pytest.raises(BartError):
            ens.predict(rng.random((5, 3)))


class TestProbit:
    def test_separable_accuracy(self):
        rng = np.random.Generator(np.random.PCG64(10))
        x = rng.uniform(-2, 2, (500, 1))
        z = (x[:, 0] > 0).astype(int)
        cfg = BartConfig(n_trees=50, iterations=800, burn_in=200, keep_every=6)
        ens = fit_probit(x, z, cfg, seed=4)
        p = ens.predict_proba(x)
        assert np.mean((p > 0.5).astype(int) == z) >= 0.95

    def test_probabilities_strictly_inside_unit_interval(self):
        rng = np.random.Generator(np.random.PCG64(11))
        x = rng.standard_normal((200, 2))
        z = (x[:, 0] + 0.3 * rng.standard_normal(200) > 0).astype(int)
        ens = fit_probit(x, z, SMALL, seed=5)
        p = ens.predict_proba(np.vstack([x, 100 * x]))
        assert np.all((p > 0.0) & (p < 1.0))

    def test_coin_flip_calibration(self):
        rng = np.random.Generator(np.random.PCG64(12))
        x = rng.random((400, 2))
        z = rng.integers(0, 2, 400)
        ens = fit_probit(x, z, BartConfig(n_trees=30, iterations=600, burn_in=150, keep_every=5), seed=6)
        assert abs(float(ens.predict_proba(x).mean()) - z.mean()) < 0.05

    def test_single_class_rejected(self):
        rng = np.random.Generator(np.random.PCG64(13))
        with pytest.raises(BartError):
            fit_probit(rng.random((50, 2)), np.ones(50, dtype=int), SMALL, seed=0)

    def test_duplicated_rows_identical_probabilities(self):
        rng = np.random.Generator(np.random.PCG64(14))
        x = rng.standard_normal((150, 3))
        z = (x[:, 0] > 0).astype(int)
        ens = fit_probit(x, z, SMALL, seed=7)
        row = x[5][None, :]
        p = ens.predict_proba(np.vstack([row, row, row]))
        assert p[0] == p[1] == p[2]


def _person(pid, gender="female", edu=2, age=40.0, marital="single", kids=0, tenure=3.0):
    return PersonRecord(pid, "H", True, gender, edu, age, marital, kids, tenure, 1000.0, 0.0)


class TestPersonEncoder:
    def test_encoding_shape_and_levels(self):
        persons = [_person("a"), _person("b", gender="male", marital="married")]
        enc = PersonEncoder().fit(persons)
        x = enc.transform(persons)
        assert x.shape == (2, enc.n_features)

    def test_tenure_included_for_income_model(self):
        persons = [_person("a"), _person("b", gender="male")]
        enc = PersonEncoder(include_tenure=True).fit(persons)
        assert enc.n_features == PersonEncoder(include_tenure=False).fit(persons).n_features + 1
        assert enc.transform(persons)[0, -1] == 3.0

    def test_unseen_level_maps_to_mode_with_warning(self):
        persons = [_person("a"), _person("b"), _person("c", gender="male")]
        enc = PersonEncoder().fit(persons)
        stranger = [_person("d", gender="nonbinary")]
        with pytest.warns(UserWarning, match="unseen"):
            x = enc.transform(stranger)
        mode_col = 3 + enc.gender_levels.index("female")  # most frequent level
        assert x[0, mode_col] == 1.0
