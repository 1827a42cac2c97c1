"""Standardized pairwise regressions of peak metric responses on country traits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import t as t_dist

from ._util import write_csv


class RegressionError(ValueError):
    pass


def standardize(column, name: str = "column") -> np.ndarray:
    """Zero mean, unit standard deviation (sample, n-1 denominator)."""
    x = np.asarray(column, dtype=float)
    if x.size < 2:
        raise RegressionError(f"{name}: need at least two values")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise RegressionError(f"{name}: zero variance, cannot standardize")
    return (x - x.mean()) / sd


def significance_flag(p_value: float) -> str:
    if p_value < 0.01:
        return "°"  # degree sign marks the 1% level
    if p_value < 0.05:
        return "*"
    return ""


@dataclass(frozen=True)
class RegressionCell:
    coefficient: float
    p_value: float
    flag: str


def pairwise_regress(y, x) -> RegressionCell:
    """OLS slope of y on x (with intercept) and its two-sided t-test.

    With standardized inputs the slope equals the Pearson correlation.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    n = y.size
    if n < 3 or x.size != n:
        raise RegressionError("need n >= 3 paired observations")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0.0:
        raise RegressionError("regressor has zero variance")
    slope = float(xc @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xc
    dof = n - 2
    rss = float(resid @ resid)
    if rss <= 0.0:
        p = 0.0  # perfect fit
    else:
        se = np.sqrt(rss / dof / sxx)
        t_stat = slope / se
        p = 2.0 * float(t_dist.sf(abs(t_stat), dof))
    return RegressionCell(coefficient=slope, p_value=p, flag=significance_flag(p))


@dataclass
class CountryFeatureTable:
    """Country-level explanatory variables, one value per country per feature."""

    countries: list[str]
    features: dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self) -> None:
        n = len(self.countries)
        for name, col in self.features.items():
            if col.shape != (n,):
                raise RegressionError(f"feature {name}: wrong length")
            if not np.all(np.isfinite(col)):
                raise RegressionError(f"feature {name}: missing cells")
            if np.std(col, ddof=1) == 0.0:
                raise RegressionError(f"feature {name}: zero variance")


def build_feature_table(panels: dict, baseline_reports: dict, tertiary_level: int = 3) -> CountryFeatureTable:
    """Aggregate household/person data into per-country regression features.

    Covers the demographic and economic aggregates computable from the micro
    schema plus the initial distribution metrics; columns that end up
    constant across countries are dropped with a warning rather than
    breaking standardization.
    """
    countries = sorted(panels)
    cols: dict[str, list[float]] = {}

    def put(name, value):
        cols.setdefault(name, []).append(float(value))

    for c in countries:
        panel = panels[c]
        w = panel.weights()
        wsum = w.sum()
        inc = panel.income_matrix()
        wlt = panel.wealth_matrix()
        rows = panel.person_household_rows()
        pweights = w[rows] if len(panel.persons) else np.array([])

        put("avg_income", inc.sum(axis=1) @ w / wsum)
        put("avg_net_wealth", panel.net_wealth() @ w / wsum)
        put("avg_debt", wlt[:, 8] @ w / wsum)
        put("avg_pension_income", inc[:, 2] @ w / wsum)
        put("avg_benefits", inc[:, 5] @ w / wsum)
        put("avg_financial_wealth", wlt[:, 3:8].sum(axis=1) @ w / wsum)
        put("pct_home_owners", (wlt[:, 0] > 0) @ w / wsum)
        put("pct_business_investment", (wlt[:, 2] > 0) @ w / wsum)
        put("pct_financial_wealth", (wlt[:, 3:8].sum(axis=1) > 0) @ w / wsum)
        put("pct_self_employed", (inc[:, 1] > 0) @ w / wsum)

        if len(panel.persons):
            pw = pweights.sum()
            unemployed = np.array([not p.employed for p in panel.persons])
            put("unemployment_rate", unemployed @ pweights / pw)
            put("avg_age", np.array([p.age for p in panel.persons]) @ pweights / pw)
            put("pct_tertiary_education",
                np.array([p.education >= tertiary_level for p in panel.persons]) @ pweights / pw)
            put("pct_single",
                np.array([p.marital_status == "single" for p in panel.persons]) @ pweights / pw)
            put("avg_children",
                np.array([p.n_children for p in panel.persons], dtype=float) @ pweights / pw)
            hh_sizes = np.bincount(rows, minlength=panel.n).astype(float)
            put("avg_household_size", hh_sizes @ w / wsum)

        report = baseline_reports[c]
        put("income_gini_t0", report.gini_income)
        put("nw_gini_t0", report.gini_net_wealth)
        put("bivariate_gini_t0", report.gini_bivariate)
        put("dependence_t0", report.spearman_rho)

    features = {}
    for name, values in cols.items():
        col = np.array(values)
        if np.std(col, ddof=1) == 0.0:
            warnings.warn(f"feature {name} is constant across countries; dropped")
            continue
        features[name] = col
    table = CountryFeatureTable(countries=countries, features=features)
    table.validate()
    return table


def peak_response_regressions(table: CountryFeatureTable, peaks: dict[str, np.ndarray]) -> dict:
    """Pairwise regressions of each (metric x shock) peak on each feature.

    Both sides are standardized first; returns
    {target_name: {feature_name: RegressionCell}}.
    """
    table.validate()
    out: dict[str, dict[str, RegressionCell]] = {}
    for target, y_raw in peaks.items():
        y_raw = np.asarray(y_raw, dtype=float)
        if y_raw.shape != (len(table.countries),):
            raise RegressionError(f"target {target}: wrong length")
        if np.std(y_raw, ddof=1) == 0.0:
            warnings.warn(f"target {target} is constant across countries; skipped")
            continue
        y = standardize(y_raw, target)
        out[target] = {}
        for name, col in sorted(table.features.items()):
            x = standardize(col, name)
            out[target][name] = pairwise_regress(y, x)
    return out


def regressions_to_csv(path, results: dict) -> None:
    """Rows = features, one coefficient and flag column per regression target."""
    targets = sorted(results)
    feature_names = sorted({f for cells in results.values() for f in cells})
    header = ["feature"]
    for t in targets:
        header += [f"{t}_coef", f"{t}_flag"]
    rows = []
    for f in feature_names:
        row = [f]
        for t in targets:
            cell = results[t].get(f)
            row += [cell.coefficient if cell else "", cell.flag if cell else ""]
        rows.append(row)
    write_csv(path, header, rows)
