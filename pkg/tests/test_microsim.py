import numpy as np
import pytest

from incwealth.microsim import (
    DirectDeltas,
    IrfDeltas,
    MicrosimError,
    apply_direct,
    apply_employment_transition,
    flip_count,
    peak_response,
    run_simulation,
    select_flips,
    simulate_horizon,
)
from conftest import make_panel


class StubProb:
    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)

    def predict_proba(self, persons):
        return self.probs[: len(persons)]


class StubIncome:
    def __init__(self, value=25_000.0):
        self.value = value

    def predict(self, persons):
        return np.full(len(persons), self.value)


def components_equal(a, b):
    return all(
        np.array_equal(x.income_components, y.income_components)
        and np.array_equal(x.wealth_components, y.wealth_components)
        for x, y in zip(a.households, b.households)
    )


class TestApplyDirect:
    def test_zero_deltas_identity_bit_for_bit(self, three_household_panel):
        out = apply_direct(three_household_panel, DirectDeltas())
        assert components_equal(out, three_household_panel)

    def test_component_mapping_row_by_row(self, three_household_panel):
        d = DirectDeltas(house=0.10, stock=0.05, bond=-0.02, wage=0.03)
        out = apply_direct(three_household_panel, d)
        for before, after in zip(three_household_panel.households, out.households):
            wb, wa = before.wealth_components, after.wealth_components
            ib, ia = before.income_components, after.income_components
            # price-linked wealth rows
            assert wa[0] == pytest.approx(wb[0] * 1.10)  # main residence x house prices
            assert wa[1] == pytest.approx(wb[1] * 1.10)  # other real estate x house prices
            assert wa[3] == pytest.approx(wb[3] * 1.05)  # shares x stock prices
            assert wa[4] == pytest.approx(wb[4] * 0.98)  # bonds x bond prices
            # no-adjustment wealth rows stay bit-identical
            for k in (2, 5, 6, 7, 8):
                assert wa[k] == wb[k]
            # wage-linked income rows
            assert ia[0] == pytest.approx(ib[0] * 1.03)
            assert ia[1] == pytest.approx(ib[1] * 1.03)
            # no-adjustment income rows stay bit-identical
            for k in (2, 3, 4, 5):
                assert ia[k] == ib[k]

    def test_bond_duration_approximation(self, three_household_panel):
        # +0.5pp long-rate change at duration 5 scales bonds by 0.975
        lt_change_pp = 0.5
        duration = 5.0
        d = DirectDeltas(bond=-duration * lt_change_pp / 100.0)
        out = apply_direct(three_household_panel, d)
        b0 = three_household_panel.households[0].wealth_components[4]
        assert out.households[0].wealth_components[4] == pytest.approx(b0 * 0.975)

    def test_wage_frozen_amount_not_scaled(self, three_household_panel):
        frozen = np.array([40_000.0, 0.0, 0.0])  # H1's employment income fully imputed
        d = DirectDeltas(wage=0.10)
        out = apply_direct(three_household_panel, d, wage_frozen=frozen)
        assert out.households[0].income_components[0] == pytest.approx(40_000.0)
        assert out.households[2].income_components[0] == pytest.approx(33_000.0)

    def test_nonfinite_delta_rejected(self, three_household_panel):
        with pytest.raises(MicrosimError):
            apply_direct(three_household_panel, DirectDeltas(house=np.nan))


class TestEmploymentTransition:
    def test_zero_delta_no_flips(self, three_household_panel):
        out, flips, frozen, bc = apply_employment_transition(
            three_household_panel, 0.0, StubProb([0.9, 0.5, 0.1]), StubIncome(), 0.5
        )
        assert flips == [] and components_equal(out, three_household_panel)

    def test_rank_selection_exact(self):
        households = [(f"H{i}", 1.0, [0, 0, 0, 0, 0, 1000], [0] * 9) for i in range(10)]
        persons = [
            (f"P{i}", f"H{i}", False, "female", 2, 40.0, "single", 0, 0.0, 0.0, 1000.0)
            for i in range(10)
        ]
        panel = make_panel(households, persons)
        probs = [0.15, 0.92, 0.33, 0.81, 0.07, 0.64, 0.55, 0.99, 0.21, 0.48]
        # delta = round(0.3 * 10 unemployed) = 3; the three highest flip
        out, flips, frozen, bc = apply_employment_transition(
            panel, -0.3, StubProb(probs), StubIncome(30_000.0), 0.5
        )
        assert sorted(f.person_id for f in flips) == ["P1", "P3", "P7"]
        for f in flips:
            assert f.to_employed and f.new_employment_income == 30_000.0 and f.new_benefits == 0.0
        # benefits zeroed, imputed income in place
        for i in (1, 3, 7):
            assert out.households[i].income_components[0] == 30_000.0
            assert out.households[i].income_components[5] == 0.0

    def test_job_loss_arithmetic(self):
        households = [("H0", 1.0, [40_000, 0, 0, 0, 0, 0], [0] * 9), ("H1", 1.0, [25_000, 0, 0, 0, 0, 0], [0] * 9)]
        persons = [
            ("P0", "H0", True, "male", 3, 45.0, "married", 1, 12.0, 40_000.0, 0.0),
            ("P1", "H1", True, "female", 1, 30.0, "single", 0, 2.0, 25_000.0, 0.0),
        ]
        panel = make_panel(households, persons)
        # rising unemployment but no unemployed persons: delta anchors on the
        # unemployed stock, so nothing can flip
        out, flips, _, _ = apply_employment_transition(panel, 0.5, StubProb([0.9, 0.2]), StubIncome(), 0.5)
        assert flips == []

    def test_job_loss_replacement_rate(self):
        households = [
            ("H0", 1.0, [40_000, 0, 0, 0, 0, 0], [0] * 9),
            ("H1", 1.0, [0, 0, 0, 0, 0, 5_000], [0] * 9),
        ]
        persons = [
            ("P0", "H0", True, "male", 3, 45.0, "married", 1, 12.0, 40_000.0, 0.0),
            ("P1", "H1", False, "female", 1, 30.0, "single", 0, 0.0, 0.0, 5_000.0),
        ]
        panel = make_panel(households, persons)
        # one unemployed person; unemployment up 120% -> one flip to unemployed
        out, flips, _, _ = apply_employment_transition(panel, 1.2, StubProb([0.4, 0.6]), StubIncome(), 0.5)
        assert len(flips) == 1
        f = flips[0]
        assert f.person_id == "P0" and not f.to_employed
        assert f.new_benefits == pytest.approx(20_000.0)  # 0.5 x 40000
        assert out.households[0].income_components[0] == 0.0
        assert out.households[0].income_components[5] == pytest.approx(20_000.0)

    def test_flip_direction_matches_sign(self):
        households = [("H0", 1.0, [0, 0, 0, 0, 0, 1000], [0] * 9), ("H1", 1.0, [30_000, 0, 0, 0, 0, 0], [0] * 9)]
        persons = [
            ("P0", "H0", False, "male", 2, 40.0, "single", 0, 0.0, 0.0, 1000.0),
            ("P1", "H1", True, "female", 2, 40.0, "single", 0, 5.0, 30_000.0, 0.0),
        ]
        panel = make_panel(households, persons)
        _, flips_fall, _, _ = apply_employment_transition(panel, -1.0, StubProb([0.5, 0.5]), StubIncome(), 0.5)
        assert all(f.to_employed for f in flips_fall)
        _, flips_rise, _, _ = apply_employment_transition(panel, 1.0, StubProb([0.5, 0.5]), StubIncome(), 0.5)
        assert all(not f.to_employed for f in flips_rise)

    def test_pool_clamp_warns(self):
        households = [("H0", 1.0, [0, 0, 0, 0, 0, 500], [0] * 9)]
        persons = [("P0", "H0", False, "male", 2, 40.0, "single", 0, 0.0, 0.0, 500.0)]
        panel = make_panel(households, persons)
        with pytest.warns(UserWarning, match="eligible"):
            # delta of 5 against a pool of 1
            _, flips, _, _ = apply_employment_transition(panel, -5.0, StubProb([0.5]), StubIncome(), 0.5)
        assert len(flips) == 1

    def test_flip_count_weighted(self):
        households = [("H0", 2.0, [0] * 6, [0] * 9), ("H1", 3.0, [0] * 6, [0] * 9)]
        persons = [
            ("P0", "H0", False, "male", 2, 40.0, "single", 0, 0.0, 0.0, 0.0),
            ("P1", "H1", False, "male", 2, 40.0, "single", 0, 0.0, 0.0, 0.0),
        ]
        panel = make_panel(households, persons)
        # weighted unemployed count = 5; 40% relative change -> 2 persons
        assert flip_count(0.4, panel.persons, panel.weights(), panel.person_household_rows()) == 2

    def test_select_flips_tie_break_deterministic(self):
        persons = [
            type("P", (), {"employed": False})(),
            type("P", (), {"employed": False})(),
            type("P", (), {"employed": False})(),
        ]
        chosen = select_flips(persons, np.array([0.5, 0.5, 0.5]), 2, to_employed=True)
        assert chosen == [0, 1]


class TestRunSimulation:
    def test_zero_irfs_zero_trajectories(self, three_household_panel):
        deltas = {"target": IrfDeltas.zeros(12), "qe": IrfDeltas.zeros(12)}
        runs = run_simulation(three_household_panel, deltas, horizons=12)
        for shock in ("target", "qe"):
            for metric, path in runs[shock].pct_change.items():
                assert np.all(path == 0.0), (shock, metric)

    def test_wealth_scaling_leaves_income_gini_alone(self, three_household_panel):
        z = IrfDeltas.zeros(4)
        z.house = np.array([0.0, 0.1, 0.2, 0.15, 0.1])
        z.stock = np.array([0.0, 0.05, 0.02, 0.0, -0.03])
        runs = run_simulation(three_household_panel, {"target": z}, horizons=4)
        assert np.all(runs["target"].pct_change["gini_income"] == 0.0)
        assert np.any(runs["target"].pct_change["gini_wealth"] != 0.0)

    def test_uniform_wealth_scaling_leaves_gini_trajectories_unchanged(self, three_household_panel):
        # multiplying every household's wealth components by one factor does
        # not move any Gini value at any horizon
        from incwealth.data import HouseholdPanel, HouseholdRecord

        scaled = HouseholdPanel(
            three_household_panel.country,
            [
                HouseholdRecord(h.household_id, h.weight, h.income_components.copy(), 3.7 * h.wealth_components)
                for h in three_household_panel.households
            ],
            three_household_panel.persons,
        )
        z = IrfDeltas.zeros(3)
        z.house = np.array([0.0, 0.1, -0.05, 0.02])
        z.stock = np.array([0.0, 0.03, 0.01, -0.01])
        a = run_simulation(three_household_panel, {"target": z}, horizons=3)
        b = run_simulation(scaled, {"target": z}, horizons=3)
        for m in ("gini_wealth", "gini_net_wealth", "gini_income"):
            assert np.allclose(a["target"].pct_change[m], b["target"].pct_change[m], atol=1e-9)

    def test_baseline_anchoring_no_path_dependence(self, three_household_panel):
        z = IrfDeltas.zeros(3)
        z.house = np.array([0.0, 0.1, 0.1, 0.1])  # same level at every horizon
        runs = run_simulation(three_household_panel, {"target": z}, horizons=3)
        path = runs["target"].pct_change["gini_net_wealth"]
        assert path[0] == path[1] == path[2]

    def test_deterministic_given_same_inputs(self, three_household_panel):
        z = IrfDeltas.zeros(3)
        z.house = np.array([0.0, 0.1, -0.05, 0.02])
        a = run_simulation(three_household_panel, {"target": z}, horizons=3)
        b = run_simulation(three_household_panel, {"target": z}, horizons=3)
        for m in a["target"].pct_change:
            assert np.array_equal(a["target"].pct_change[m], b["target"].pct_change[m])


class TestIrfDeltas:
    def test_log_response_conversion(self):
        medians = {
            "HP": np.array([0.0, 1.0]),  # 100*log units
            "DJ50": np.array([0.0, -2.0]),
            "LCOMP": np.array([0.0, 0.5]),
            "UNEMP": np.array([0.0, 3.0]),
            "LT-IR": np.array([0.0, 0.5]),  # percentage points
        }
        d = IrfDeltas.from_medians(medians, horizons=1, bond_duration=5.0)
        at1 = d.at(1)
        assert at1.house == pytest.approx(np.expm1(0.01))
        assert at1.stock == pytest.approx(np.expm1(-0.02))
        assert at1.wage == pytest.approx(np.expm1(0.005))
        assert at1.unemployment == pytest.approx(np.expm1(0.03))
        assert at1.bond == pytest.approx(-5.0 * 0.005)  # duration approximation


class TestPeakResponse:
    def test_max_abs_with_sign(self):
        assert peak_response([0.1, -0.3, 0.2]) == -0.3

    def test_all_zero(self):
        assert peak_response([0.0, 0.0, 0.0]) == 0.0

    def test_tie_earliest(self):
        assert peak_response([0.2, -0.2]) == 0.2

    def test_empty_rejected(self):
        with pytest.raises(MicrosimError):
            peak_response([])
