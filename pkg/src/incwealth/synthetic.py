"""Seeded synthetic fixtures: household panels coupled by a Gaussian copula
and macro panels simulated from a known stable VAR.

Real household survey microdata is access-restricted, so everything here is
generated at desk scale with the ground truth written alongside, which makes
recovery checks and end-to-end determinism testable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .data import (
    HouseholdPanel,
    HouseholdRecord,
    MACRO_SERIES,
    LOG_SCALED_SERIES,
    PersonRecord,
    next_quarter,
    quarter_label,
    write_households,
    write_macro_csv,
)
from .marginals import Dagum, NegPosMixture, ShiftedLogNormal, SinghMaddala
from ._util import rng_for


@dataclass(frozen=True)
class Exponential:
    """Unit-Gini-half margin used for calibration fixtures."""

    scale: float

    def quantile(self, u):
        return -self.scale * np.log1p(-np.asarray(u, dtype=float))

    def cdf(self, x):
        return -np.expm1(-np.asarray(x, dtype=float) / self.scale)


DEFAULT_INCOME_FAMILIES = (
    SinghMaddala(a=2.2, b=32_000.0, q=1.4),
    # p well away from 1: at p = q = 1 the two income families coincide
    Dagum(c=24_000.0, d=3.0, p=2.2),
)
DEFAULT_WEALTH_FAMILIES = (
    NegPosMixture(
        w_neg=0.08,
        w_zero=0.04,
        weibull_scale=18_000.0,
        weibull_shape=0.9,
        dagum_c=120_000.0,
        dagum_d=2.2,
        dagum_p=0.7,
    ),
    ShiftedLogNormal(mu=11.3, sigma=1.1, gamma=2_000.0),
)

GENDERS = ("female", "male")
MARITAL = ("single", "married", "divorced", "widowed")


def gaussian_copula_uniforms(n: int, r: float, rng) -> np.ndarray:
    """(n, 2) uniforms whose ranks follow a Gaussian copula with parameter r."""
    if not (-1.0 < r < 1.0):
        raise ValueError("copula parameter must lie in (-1, 1)")
    z1 = rng.standard_normal(n)
    z2 = r * z1 + math.sqrt(1.0 - r * r) * rng.standard_normal(n)
    return np.column_stack([ndtr(z1), ndtr(z2)]), np.column_stack([z1, z2])


def generate_household_panel(
    n: int,
    income_family,
    wealth_family,
    r: float,
    seed: int,
    country: str = "SYN",
) -> HouseholdPanel:
    """Households with component decompositions and person-level structure.

    Totals follow the requested marginals exactly (inverse-CDF of copula
    uniforms); components and members are consistent with the totals by
    construction. Education and employment are tied to observables so the
    tree models have real signal to learn.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    (u, z) = gaussian_copula_uniforms(n, r, rng)
    eps = 1e-12
    income = np.asarray(income_family.quantile(np.clip(u[:, 0], eps, 1 - eps)), dtype=float)
    wealth = np.asarray(wealth_family.quantile(np.clip(u[:, 1], eps, 1 - eps)), dtype=float)

    households = []
    persons = []
    for i in range(n):
        hid = f"{country}-H{i:05d}"
        x1 = float(income[i])
        x2 = float(wealth[i])

        n_adults = 1 + int(rng.random() < 0.55)
        married = n_adults == 2 and rng.random() < 0.8
        n_children = int(rng.poisson(0.8))
        # education loads on the income rank so income and skill correlate
        edu_latent = 0.6 * z[i, 0] + 0.8 * rng.standard_normal()
        base_edu = int(np.clip(np.digitize(edu_latent, [-0.8, 0.2, 1.1]) + 1, 1, 4))

        adults = []
        for a in range(n_adults):
            age = float(np.clip(rng.normal(47, 13), 20, 85))
            edu = int(np.clip(base_edu + rng.integers(-1, 2), 1, 4))
            lin = 0.45 + 0.55 * (edu - 2.5) - 1.7 * (age > 64) + 0.25 * married - 0.04 * n_children
            employed = bool(rng.random() < ndtr(lin))
            adults.append({"age": age, "edu": edu, "employed": employed})

        employed_idx = [a for a, d in enumerate(adults) if d["employed"]]
        retired = all(d["age"] > 64 for d in adults)

        # income shares conditioned on the employment structure
        shares = np.zeros(6)
        if employed_idx:
            shares[0] = rng.uniform(0.55, 0.85)
        shares[1] = rng.uniform(0.05, 0.25) if rng.random() < 0.15 else 0.0
        shares[2] = rng.uniform(0.5, 0.9) if retired else rng.uniform(0.0, 0.1)
        shares[3] = rng.uniform(0.0, 0.08) if rng.random() < 0.25 else 0.0
        shares[4] = rng.uniform(0.0, 0.05)
        if len(employed_idx) < n_adults:
            shares[5] = rng.uniform(0.1, 0.3)
        elif rng.random() < 0.1:
            shares[5] = rng.uniform(0.0, 0.05)
        if shares.sum() == 0.0:
            shares[5] = 1.0
        inc_components = x1 * shares / shares.sum()

        # wealth split: liabilities first, gross assets across eight classes
        if x2 >= 0:
            liab = rng.uniform(0.0, 0.6) * x2 if rng.random() < 0.55 else 0.0
        else:
            liab = rng.uniform(0.0, 0.5) * abs(x2) + abs(x2)
        gross = x2 + liab
        aw = np.zeros(8)
        owner = rng.random() < 0.65
        if owner:
            aw[0] = rng.uniform(0.45, 0.7)
        aw[1] = rng.uniform(0.0, 0.15) if rng.random() < 0.25 else 0.0
        aw[2] = rng.uniform(0.0, 0.2) if rng.random() < 0.12 else 0.0
        aw[3] = rng.uniform(0.0, 0.15) if rng.random() < 0.35 else 0.0
        aw[4] = rng.uniform(0.0, 0.08) if rng.random() < 0.2 else 0.0
        aw[5] = rng.uniform(0.0, 0.12) if rng.random() < 0.4 else 0.0
        aw[6] = rng.uniform(0.05, 0.3)
        aw[7] = rng.uniform(0.0, 0.05)
        wlt_components = np.zeros(9)
        wlt_components[:8] = gross * aw / aw.sum()
        wlt_components[8] = liab

        weight = float(rng.uniform(0.5, 1.5))
        rec = HouseholdRecord(hid, weight, inc_components, wlt_components)
        rec.validate()
        households.append(rec)

        emp_income_total = inc_components[0]
        benefit_total = inc_components[5]
        emp_splits = rng.dirichlet(np.ones(len(employed_idx))) if len(employed_idx) > 1 else [1.0]
        unemployed_idx = [a for a, d in enumerate(adults) if not d["employed"]]
        ben_splits = rng.dirichlet(np.ones(len(unemployed_idx))) if len(unemployed_idx) > 1 else [1.0]
        for a, d in enumerate(adults):
            if d["employed"]:
                emp_inc = float(emp_income_total * emp_splits[employed_idx.index(a)])
                tenure = float(rng.uniform(0.0, max(min(d["age"] - 18.0, 25.0), 0.5)))
                benefits = 0.0
            else:
                emp_inc = 0.0
                tenure = 0.0
                benefits = float(benefit_total * ben_splits[unemployed_idx.index(a)]) if unemployed_idx else 0.0
            persons.append(
                PersonRecord(
                    person_id=f"{hid}-P{a}",
                    household_id=hid,
                    employed=d["employed"],
                    gender=GENDERS[int(rng.random() < 0.5)],
                    education=d["edu"],
                    age=d["age"],
                    marital_status="married" if married else MARITAL[int(rng.integers(len(MARITAL)))],
                    n_children=n_children,
                    tenure_years=tenure,
                    employment_income=emp_inc,
                    unemployment_benefits=benefits,
                )
            )

    return HouseholdPanel(country=country, households=households, persons=persons)


# base levels of the simulated macro series in model (transformed) units
MACRO_BASE = {
    "GDP": 100.0 * math.log(2500.0),
    "HICP": 100.0 * math.log(100.0),
    "LCOMP": 100.0 * math.log(3000.0),
    "UNEMP": 100.0 * math.log(8.0),
    "HP": 100.0 * math.log(150.0),
    "DJ50": 100.0 * math.log(3000.0),
    "LT-IR": 2.5,
    "EA-spread": 0.4,
    "ST-IR": 1.2,
}


def default_var_truth(m: int = 9, seed: int = 7) -> tuple[np.ndarray, np.ndarray]:
    """A stable VAR(1) coefficient matrix and an SPD error covariance."""
    rng = np.random.Generator(np.random.PCG64(seed))
    a = 0.82 * np.eye(m) + rng.uniform(-0.04, 0.04, size=(m, m))
    eig = np.max(np.abs(np.linalg.eigvals(a)))
    a *= 0.92 / max(eig, 0.92)
    root = rng.uniform(-0.1, 0.1, size=(m, m)) + 0.4 * np.eye(m)
    sigma = root @ root.T + 0.05 * np.eye(m)
    return a, sigma


def generate_macro_series(
    t: int,
    seed: int,
    a: np.ndarray | None = None,
    sigma: np.ndarray | None = None,
    names=MACRO_SERIES,
    start=(1985, 1),
):
    """Simulate the transformed-space VAR and return quarterly labels plus
    raw series (inverse of the loader's scaling)."""
    m = len(names)
    if a is None or sigma is None:
        a_d, s_d = default_var_truth(m)
        a = a_d if a is None else np.asarray(a, dtype=float)
        sigma = s_d if sigma is None else np.asarray(sigma, dtype=float)
    a = np.asarray(a, dtype=float)
    if np.max(np.abs(np.linalg.eigvals(a))) >= 1.0:
        raise ValueError("requested VAR coefficient matrix is unstable")
    rng = np.random.Generator(np.random.PCG64(seed))
    chol = np.linalg.cholesky(np.asarray(sigma, dtype=float))
    x = np.zeros(m)
    path = np.empty((t, m))
    for i in range(t + 40):  # 40 burn-in periods toward stationarity
        x = a @ x + chol @ rng.standard_normal(m)
        if i >= 40:
            path[i - 40] = x

    quarters = []
    yq = start
    for _ in range(t):
        quarters.append(quarter_label(*yq))
        yq = next_quarter(*yq)

    raw = {}
    for j, name in enumerate(names):
        level = MACRO_BASE.get(name, 0.0) + path[:, j]
        raw[name] = np.exp(level / 100.0) if name in LOG_SCALED_SERIES else level
    return quarters, raw, a, np.asarray(sigma, dtype=float)


def generate_fixture(out_dir, seed: int = 0, n_countries: int = 8, households: int = 2_000, quarters: int = 160) -> dict:
    """Write the bundled multi-country fixture and its ground truth.

    Countries alternate between the two income and two wealth families and
    sweep a grid of copula parameters; every file is a pure function of the
    seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    countries = [f"C{i:02d}" for i in range(n_countries)]
    r_grid = np.linspace(0.15, 0.7, n_countries)
    truth = {"seed": seed, "countries": {}}
    for i, country in enumerate(countries):
        inc_fam = DEFAULT_INCOME_FAMILIES[i % 2]
        wlt_fam = DEFAULT_WEALTH_FAMILIES[i % 2]
        r = float(r_grid[i])
        panel = generate_household_panel(
            households, inc_fam, wlt_fam, r, seed=int(rng_for(seed, "micro", country).integers(2**31)), country=country
        )
        cdir = out / country
        write_households(panel, cdir / "households.csv")
        q, raw, a, sigma = generate_macro_series(
            quarters, seed=int(rng_for(seed, "macro", country).integers(2**31))
        )
        write_macro_csv(cdir / "macro.csv", q, raw)
        truth["countries"][country] = {
            "copula_r": r,
            "spearman_rho": float(6.0 / math.pi * math.asin(r / 2.0)),
            "income_family": type(inc_fam).__name__,
            "income_params": inc_fam.__dict__,
            "wealth_family": type(wlt_fam).__name__,
            "wealth_params": wlt_fam.__dict__,
            "var_a": a.tolist(),
            "var_sigma": sigma.tolist(),
        }
    with open(out / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return truth
