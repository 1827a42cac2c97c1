import math

import numpy as np
import pytest

from incwealth.data import (
    ChainConfig,
    PanelValidationError,
    ParseError,
    RunConfig,
    SchemaError,
    load_households,
    load_macro_panel,
    write_households,
    write_macro_csv,
)
from conftest import make_panel


def write_micro(tmp_path, hh_rows, person_rows=None, hh_header=None):
    hh_header = hh_header or (
        "household_id,weight,"
        + ",".join(f"inc_{c}" for c in ("employment", "self_employment", "pensions", "rental", "financial", "benefits"))
        + ","
        + ",".join(
            f"wlt_{c}"
            for c in (
                "main_residence",
                "other_real_estate",
                "business",
                "shares",
                "bonds",
                "voluntary_pension",
                "deposits",
                "other_financial",
                "liabilities",
            )
        )
    )
    path = tmp_path / "households.csv"
    path.write_text("\n".join([hh_header] + hh_rows) + "\n")
    if person_rows is not None:
        p_header = "person_id,household_id,employed,gender,education,age,marital_status,n_children,tenure_years,employment_income,unemployment_benefits"
        (tmp_path / "households_persons.csv").write_text("\n".join([p_header] + person_rows) + "\n")
    return path


class TestLoadHouseholds:
    def test_totals_from_components(self, tmp_path):
        path = write_micro(tmp_path, ["A,1.0,10,0,0,0,0,0,100,0,0,0,0,0,0,0,0"])
        panel = load_households(path)
        assert panel.households[0].total_income == 10.0
        assert panel.households[0].net_wealth == 100.0

    def test_negative_net_wealth_accepted(self, tmp_path):
        # liabilities 150 against 100 of assets
        path = write_micro(tmp_path, ["A,1.0,10,0,0,0,0,0,100,0,0,0,0,0,0,0,150"])
        panel = load_households(path)
        assert panel.households[0].net_wealth == -50.0

    def test_missing_weight_column(self, tmp_path):
        header = "household_id," + ",".join(f"inc_{c}" for c in ("employment", "self_employment", "pensions", "rental", "financial", "benefits"))
        header += "," + ",".join(f"wlt_{i}" for i in range(9))
        path = tmp_path / "households.csv"
        path.write_text(header + "\n")
        with pytest.raises(SchemaError, match="weight"):
            load_households(path)

    def test_non_numeric_cell_reports_row(self, tmp_path):
        path = write_micro(tmp_path, ["A,1.0,10,0,0,0,0,0,100,0,0,0,0,0,0,0,0", "B,1.0,oops,0,0,0,0,0,1,0,0,0,0,0,0,0,0"])
        with pytest.raises(ParseError, match="row 1"):
            load_households(path)

    def test_negative_income_flagged_not_rejected(self, tmp_path):
        path = write_micro(tmp_path, ["A,1.0,-5,0,0,0,0,0,1,0,0,0,0,0,0,0,0"])
        panel = load_households(path)
        assert panel.negative_income_ids() == ["A"]

    def test_roundtrip_bit_for_bit(self, tmp_path, three_household_panel=None):
        rng = np.random.Generator(np.random.PCG64(1))
        hh = [
            (f"H{i}", rng.uniform(0.1, 3), rng.uniform(0, 1e5, 6), rng.uniform(0, 1e6, 9))
            for i in range(25)
        ]
        panel = make_panel(hh)
        write_households(panel, tmp_path / "rt.csv")
        back = load_households(tmp_path / "rt.csv")
        for a, b in zip(panel.households, back.households):
            assert np.array_equal(a.income_components, b.income_components)
            assert np.array_equal(a.wealth_components, b.wealth_components)
            assert a.weight == b.weight


class TestLoadMacro:
    def test_log_scaling_applied_once(self, tmp_path):
        path = tmp_path / "macro.csv"
        write_macro_csv(path, ["2000Q1", "2000Q2"], {"GDP": np.array([100.0, 110.0]), "LT-IR": np.array([2.5, 2.6])})
        panel = load_macro_panel(path)
        assert panel.series["GDP"][0] == pytest.approx(100.0 * math.log(100.0))
        assert panel.series["GDP"][0] == pytest.approx(460.517, abs=1e-3)
        assert panel.series["LT-IR"][0] == 2.5  # blank transform for rates
        assert panel.log_scaled["GDP"] and not panel.log_scaled["LT-IR"]

    def test_gap_lists_missing_quarter(self, tmp_path):
        path = tmp_path / "macro.csv"
        path.write_text("date,GDP\n2000Q1,100\n2000Q3,105\n")
        with pytest.raises(PanelValidationError, match="2000Q2"):
            load_macro_panel(path)

    def test_unknown_series_rejected(self, tmp_path):
        path = tmp_path / "macro.csv"
        path.write_text("date,WAT\n2000Q1,1\n")
        with pytest.raises(SchemaError, match="WAT"):
            load_macro_panel(path)

    def test_empty_cell_rejected(self, tmp_path):
        path = tmp_path / "macro.csv"
        path.write_text("date,GDP,LT-IR\n2000Q1,100,2.5\n2000Q2,,2.6\n")
        with pytest.raises(PanelValidationError, match="2000Q2"):
            load_macro_panel(path)


class TestRunConfig:
    def test_defaults_valid(self):
        cfg = RunConfig.from_dict({"countries": ["A"], "seed": 3})
        assert cfg.horizons == 12
        assert cfg.marginal_chain.iterations == 20_000

    def test_unknown_key_named(self):
        with pytest.raises(ValueError, match="horizonz"):
            RunConfig.from_dict({"horizonz": 3})

    def test_bounds_checked(self):
        with pytest.raises(ValueError):
            RunConfig.from_dict({"tail_upper": 1.5})
        with pytest.raises(ValueError):
            RunConfig.from_dict({"default_replacement_rate": 1.2})
        with pytest.raises(ValueError):
            RunConfig.from_dict({"horizons": 0})

    def test_chain_config_validation(self):
        with pytest.raises(ValueError):
            ChainConfig(100, 200, 1).validate()
