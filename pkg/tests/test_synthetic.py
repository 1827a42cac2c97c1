import json
import math

import numpy as np
import pytest

from incwealth.data import load_households, load_macro_panel
from incwealth.metrics import gini, sample_spearman
from incwealth.synthetic import (
    DEFAULT_INCOME_FAMILIES,
    DEFAULT_WEALTH_FAMILIES,
    Exponential,
    generate_fixture,
    generate_household_panel,
    generate_macro_series,
)


class TestHouseholdGeneration:
    def test_independence_gives_near_zero_rho(self):
        panel = generate_household_panel(
            10_000, DEFAULT_INCOME_FAMILIES[0], DEFAULT_WEALTH_FAMILIES[1], 0.0, seed=5
        )
        rho = sample_spearman(panel.total_income(), panel.net_wealth(), panel.weights())
        assert abs(rho) < 0.03

    def test_exponential_margin_gini_half(self):
        panel = generate_household_panel(10_000, Exponential(30_000.0), Exponential(50_000.0), 0.3, seed=6)
        assert gini(panel.total_income(), panel.weights()) == pytest.approx(0.5, abs=0.01)

    def test_same_seed_identical(self):
        args = (400, DEFAULT_INCOME_FAMILIES[0], DEFAULT_WEALTH_FAMILIES[0], 0.4)
        a = generate_household_panel(*args, seed=7)
        b = generate_household_panel(*args, seed=7)
        assert np.array_equal(a.income_matrix(), b.income_matrix())
        assert np.array_equal(a.wealth_matrix(), b.wealth_matrix())
        assert [p.person_id for p in a.persons] == [p.person_id for p in b.persons]

    def test_component_identities(self):
        panel = generate_household_panel(500, DEFAULT_INCOME_FAMILIES[1], DEFAULT_WEALTH_FAMILIES[0], 0.3, seed=8)
        inc = panel.income_matrix()
        assert np.allclose(inc.sum(axis=1), panel.total_income())
        wlt = panel.wealth_matrix()
        assert np.allclose(wlt[:, :8].sum(axis=1) - wlt[:, 8], panel.net_wealth())
        assert np.all(wlt >= 0)  # liabilities stored as a magnitude

    def test_population_structure(self):
        panel = generate_household_panel(1000, DEFAULT_INCOME_FAMILIES[0], DEFAULT_WEALTH_FAMILIES[0], 0.4, seed=9)
        employed = [p for p in panel.persons if p.employed]
        assert 0.4 < len(employed) / len(panel.persons) < 0.8
        assert any(not p.employed for p in panel.persons)
        assert all(p.tenure_years == 0.0 for p in panel.persons if not p.employed)
        # household employment income equals the member sum
        by_hh = {h.household_id: h.income_components[0] for h in panel.households}
        sums = {}
        for p in panel.persons:
            sums[p.household_id] = sums.get(p.household_id, 0.0) + p.employment_income
        for hid, total in by_hh.items():
            assert total == pytest.approx(sums.get(hid, 0.0), abs=1e-9)


class TestMacroGeneration:
    def test_requested_unstable_matrix_rejected(self):
        a = 1.05 * np.eye(9)
        with pytest.raises(ValueError, match="unstable"):
            generate_macro_series(40, seed=1, a=a)

    def test_roundtrip_through_loader(self, tmp_path):
        from incwealth.data import write_macro_csv

        q, raw, a, sigma = generate_macro_series(80, seed=3)
        write_macro_csv(tmp_path / "macro.csv", q, raw)
        panel = load_macro_panel(tmp_path / "macro.csv", "T")
        assert len(panel.quarters) == 80
        assert panel.series["GDP"][0] == pytest.approx(100.0 * math.log(raw["GDP"][0]))
        assert np.allclose(panel.series["ST-IR"], raw["ST-IR"])

    def test_same_seed_identical(self):
        q1, raw1, _, _ = generate_macro_series(60, seed=4)
        q2, raw2, _, _ = generate_macro_series(60, seed=4)
        assert q1 == q2
        for k in raw1:
            assert np.array_equal(raw1[k], raw2[k])


class TestFixture:
    def test_fixture_files_and_truth(self, tmp_path):
        truth = generate_fixture(tmp_path, seed=1, n_countries=2, households=120, quarters=60)
        assert set(truth["countries"]) == {"C00", "C01"}
        for c in ("C00", "C01"):
            panel = load_households(tmp_path / c / "households.csv", country=c)
            assert panel.n == 120
            assert len(panel.persons) >= 120
            macro = load_macro_panel(tmp_path / c / "macro.csv", c)
            assert len(macro.quarters) == 60
        with open(tmp_path / "truth.json") as fh:
            loaded = json.load(fh)
        assert loaded["countries"]["C00"]["spearman_rho"] == pytest.approx(
            6 / math.pi * math.asin(loaded["countries"]["C00"]["copula_r"] / 2)
        )

    def test_fixture_deterministic(self, tmp_path):
        generate_fixture(tmp_path / "a", seed=5, n_countries=1, households=80, quarters=40)
        generate_fixture(tmp_path / "b", seed=5, n_countries=1, households=80, quarters=40)
        fa = (tmp_path / "a" / "C00" / "households.csv").read_bytes()
        fb = (tmp_path / "b" / "C00" / "households.csv").read_bytes()
        assert fa == fb
