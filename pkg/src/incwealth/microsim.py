"""Map impulse responses into household records and track metric trajectories.

The direct channel revalues portfolio positions and wage income with the
horizon-h response levels; the indirect channel flips employment states for
the persons ranked most marginal by the probit ensemble, imputing income
for new jobs and replacing lost labor income with benefits at the gross
replacement rate. Every horizon starts from the baseline panel (responses
are cumulative deviations, so adjustments are never compounded).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import HouseholdPanel, HouseholdRecord
from .metrics import MetricReport, compute_report
from ._util import write_csv

# wealth component positions
MAIN_RESIDENCE, OTHER_REAL_ESTATE, BUSINESS, SHARES, BONDS, VOL_PENSION, DEPOSITS, OTHER_FIN, LIABILITIES = range(9)
# income component positions
EMPLOYMENT, SELF_EMPLOYMENT, PENSIONS, RENTAL, FINANCIAL, BENEFITS = range(6)

# liabilities are never revalued, so the debt Gini is constant by construction
# and is not tracked as a trajectory
TRAJECTORY_METRICS = ("gini_income", "gini_net_wealth", "gini_wealth", "gini_bivariate", "spearman_rho")


class MicrosimError(RuntimeError):
    pass


@dataclass(frozen=True)
class DirectDeltas:
    """Relative price/wage changes at one horizon."""

    house: float = 0.0
    stock: float = 0.0
    bond: float = 0.0
    wage: float = 0.0
    unemployment: float = 0.0  # relative change in the unemployment rate

    def validate(self):
        for name in ("house", "stock", "bond", "wage", "unemployment"):
            if not np.isfinite(getattr(self, name)):
                raise MicrosimError(f"delta {name} is not finite")


@dataclass
class IrfDeltas:
    """Per-horizon adjustment factors derived from one shock's IRF medians.

    Log-scaled responses r become relative changes exp(r/100) - 1; the long
    rate response (percentage points) maps into a bond price change through
    the modified-duration approximation -D * dy.
    """

    horizons: int
    house: np.ndarray
    stock: np.ndarray
    bond: np.ndarray
    wage: np.ndarray
    unemployment: np.ndarray

    @classmethod
    def from_medians(cls, medians: dict[str, np.ndarray], horizons: int, bond_duration: float = 5.0) -> "IrfDeltas":
        def rel(name):
            return np.expm1(np.asarray(medians[name], dtype=float) / 100.0)

        lt = np.asarray(medians["LT-IR"], dtype=float)
        return cls(
            horizons=horizons,
            house=rel("HP"),
            stock=rel("DJ50"),
            bond=-bond_duration * lt / 100.0,
            wage=rel("LCOMP"),
            unemployment=rel("UNEMP"),
        )

    @classmethod
    def from_irf(cls, irf_set, bond_duration: float = 5.0) -> "IrfDeltas":
        medians = {v: irf_set.response(v) for v in ("HP", "DJ50", "LT-IR", "LCOMP", "UNEMP")}
        return cls.from_medians(medians, irf_set.horizons, bond_duration)

    @classmethod
    def zeros(cls, horizons: int) -> "IrfDeltas":
        z = np.zeros(horizons + 1)
        return cls(horizons=horizons, house=z.copy(), stock=z.copy(), bond=z.copy(), wage=z.copy(), unemployment=z.copy())

    def at(self, h: int) -> DirectDeltas:
        d = DirectDeltas(
            house=float(self.house[h]),
            stock=float(self.stock[h]),
            bond=float(self.bond[h]),
            wage=float(self.wage[h]),
            unemployment=float(self.unemployment[h]),
        )
        d.validate()
        return d


@dataclass(frozen=True)
class FlipRecord:
    person_id: str
    household_id: str
    to_employed: bool
    probability: float
    prior_employment_income: float
    prior_benefits: float
    new_employment_income: float
    new_benefits: float


def apply_direct(
    panel: HouseholdPanel,
    deltas: DirectDeltas,
    wage_frozen: np.ndarray | None = None,
    benefit_change: np.ndarray | None = None,
) -> HouseholdPanel:
    """Revalue the price- and wage-linked components of every household.

    ``wage_frozen`` carries per-household employment income that must not
    be wage-scaled (imputed this horizon plus income removed by job-loss
    flips); ``benefit_change`` carries the net change to the benefits
    component from employment flips. All "no adjustment" components are
    returned bit-identical.
    """
    deltas.validate()
    n = panel.n
    if wage_frozen is None:
        wage_frozen = np.zeros(n)
    if benefit_change is None:
        benefit_change = np.zeros(n)

    new_households = []
    for i, h in enumerate(panel.households):
        inc = h.income_components.copy()
        wlt = h.wealth_components.copy()
        wlt[MAIN_RESIDENCE] *= 1.0 + deltas.house
        wlt[OTHER_REAL_ESTATE] *= 1.0 + deltas.house
        wlt[SHARES] *= 1.0 + deltas.stock
        wlt[BONDS] *= 1.0 + deltas.bond
        scalable, imputed = _split_employment(inc[EMPLOYMENT], wage_frozen[i])
        inc[EMPLOYMENT] = scalable * (1.0 + deltas.wage) + imputed
        inc[SELF_EMPLOYMENT] *= 1.0 + deltas.wage
        inc[BENEFITS] += benefit_change[i]
        new_households.append(
            HouseholdRecord(
                household_id=h.household_id,
                weight=h.weight,
                income_components=inc,
                wealth_components=wlt,
            )
        )
    return HouseholdPanel(country=panel.country, households=new_households, persons=panel.persons)


def _split_employment(total_emp, frozen):
    """Separate the wage-scalable part of employment income from frozen amounts."""
    return total_emp - frozen, frozen


def flip_count(delta_unemployment_rel: float, persons, weights_by_household: np.ndarray, household_rows: np.ndarray) -> int:
    """Number of persons whose labor status changes at a horizon.

    The relative unemployment-rate change is applied to the weighted count
    of currently unemployed persons and rounded to a whole person count.
    """
    unemp_weight = sum(
        weights_by_household[household_rows[j]] for j, p in enumerate(persons) if not p.employed
    )
    return int(round(abs(delta_unemployment_rel) * unemp_weight))


def select_flips(persons, probabilities: np.ndarray, delta_h: int, to_employed: bool):
    """Indices of the delta_h rank-selected persons eligible to flip.

    Falling unemployment flips the unemployed with the highest employment
    probability; rising unemployment flips the employed with the lowest.
    Ties break on person order, which is deterministic.
    """
    if to_employed:
        pool = [j for j, p in enumerate(persons) if not p.employed]
        ranked = sorted(pool, key=lambda j: (-probabilities[j], j))
    else:
        pool = [j for j, p in enumerate(persons) if p.employed]
        ranked = sorted(pool, key=lambda j: (probabilities[j], j))
    if delta_h > len(ranked):
        warnings.warn(
            f"requested {delta_h} employment flips but only {len(ranked)} persons are eligible"
        )
        delta_h = len(ranked)
    return ranked[:delta_h]


def apply_employment_transition(
    panel: HouseholdPanel,
    delta_unemployment_rel: float,
    employment_model,
    income_model,
    replacement_rate: float,
    encoder_employment=None,
    encoder_income=None,
) -> tuple[HouseholdPanel, list[FlipRecord], np.ndarray, np.ndarray]:
    """Flip labor states for the marginal persons and adjust household income.

    Returns the adjusted panel, flip records, the per-household employment
    income that must stay frozen under subsequent wage scaling, and the
    per-household benefits change already applied. The models only need a
    ``predict_proba`` / ``predict`` method over encoded person covariates.
    """
    if not np.isfinite(delta_unemployment_rel):
        raise MicrosimError("unemployment delta is not finite")
    n = panel.n
    frozen = np.zeros(n)
    benefit_change = np.zeros(n)
    if delta_unemployment_rel == 0.0 or not panel.persons:
        return panel, [], frozen, benefit_change

    persons = panel.persons
    rows = panel.person_household_rows()
    weights = panel.weights()

    if encoder_employment is not None:
        probs = employment_model.predict_proba(encoder_employment.transform(persons))
    else:
        probs = employment_model.predict_proba(persons)
    probs = np.asarray(probs, dtype=float)

    delta_h = flip_count(delta_unemployment_rel, persons, weights, rows)
    to_employed = delta_unemployment_rel < 0.0
    chosen = select_flips(persons, probs, delta_h, to_employed)

    flips = []
    emp_delta = np.zeros(n)
    if chosen and to_employed:
        flip_persons = [persons[j] for j in chosen]
        if encoder_income is not None:
            imputed = income_model.predict(encoder_income.transform(flip_persons))
        else:
            imputed = income_model.predict(flip_persons)
        imputed = np.maximum(np.asarray(imputed, dtype=float), 0.0)
    for idx, j in enumerate(chosen):
        p = persons[j]
        i = rows[j]
        if to_employed:
            new_income = float(imputed[idx])
            emp_delta[i] += new_income
            frozen[i] += new_income
            benefit_change[i] -= p.unemployment_benefits
            flips.append(
                FlipRecord(p.person_id, p.household_id, True, float(probs[j]), p.employment_income,
                           p.unemployment_benefits, new_income, 0.0)
            )
        else:
            new_benefits = replacement_rate * p.employment_income
            emp_delta[i] -= p.employment_income
            benefit_change[i] += new_benefits
            flips.append(
                FlipRecord(p.person_id, p.household_id, False, float(probs[j]), p.employment_income,
                           p.unemployment_benefits, 0.0, new_benefits)
            )

    new_households = []
    for i, h in enumerate(panel.households):
        inc = h.income_components.copy()
        inc[EMPLOYMENT] += emp_delta[i]
        inc[BENEFITS] += benefit_change[i]
        new_households.append(
            HouseholdRecord(h.household_id, h.weight, inc, h.wealth_components.copy())
        )
    return (
        HouseholdPanel(country=panel.country, households=new_households, persons=persons),
        flips,
        frozen,
        benefit_change,
    )


def simulate_horizon(
    panel: HouseholdPanel,
    deltas: DirectDeltas,
    employment_model=None,
    income_model=None,
    replacement_rate: float = 0.55,
    encoder_employment=None,
    encoder_income=None,
) -> tuple[HouseholdPanel, list[FlipRecord]]:
    """Both channels for one horizon, starting from the baseline panel.

    The employment transition runs first so that imputed income and removed
    job-loss income are excluded from wage scaling, and the benefit change
    is applied exactly once.
    """
    flips: list[FlipRecord] = []
    if employment_model is not None and deltas.unemployment != 0.0:
        panel_t, flips, frozen, _ = apply_employment_transition(
            panel,
            deltas.unemployment,
            employment_model,
            income_model,
            replacement_rate,
            encoder_employment,
            encoder_income,
        )
        # the transition already moved benefits and removed lost labor income;
        # imputed income stays out of the wage scaling
        adjusted = apply_direct(panel_t, deltas, wage_frozen=frozen)
    else:
        adjusted = apply_direct(panel, deltas)
    return adjusted, flips


@dataclass
class SimulationState:
    shock: str
    horizon: int
    panel: HouseholdPanel | None  # kept only on request; horizons are baseline-anchored
    flips: list[FlipRecord]
    report: MetricReport


@dataclass
class SimulationRun:
    shock: str
    baseline: MetricReport
    states: list[SimulationState]
    pct_change: dict[str, np.ndarray]  # metric -> values at h=1..H

    def peak_responses(self) -> dict[str, float]:
        return {m: peak_response(v) for m, v in self.pct_change.items()}


def peak_response(trajectory) -> float:
    """Signed value of largest absolute deviation; ties go to the earliest horizon."""
    t = np.asarray(trajectory, dtype=float)
    if t.size == 0:
        raise MicrosimError("empty trajectory")
    return float(t[int(np.argmax(np.abs(t)))])


def run_simulation(
    panel: HouseholdPanel,
    irf_deltas: dict[str, IrfDeltas],
    employment_model=None,
    income_model=None,
    replacement_rate: float = 0.55,
    encoder_employment=None,
    encoder_income=None,
    horizons: int = 12,
    t_upper: float = 0.95,
    t_lower: float = 0.05,
    dependence_fn=None,
    keep_panels: bool = False,
) -> dict[str, SimulationRun]:
    """Metric trajectories for each shock over horizons 1..H.

    Each horizon adjusts a fresh copy of the baseline; metrics are expressed
    as percentage changes against the baseline report. ``dependence_fn``
    (panel -> rank-correlation value) switches between the posterior-median
    dependence recompute and the plug-in sample value; tail-dependence
    measures are not recomputed post-simulation.
    """
    dependence = dependence_fn
    base_rho = dependence(panel) if dependence else None
    baseline = compute_report(panel, t_upper, t_lower, spearman_override=base_rho)

    runs = {}
    for shock in sorted(irf_deltas):
        deltas = irf_deltas[shock]
        states = []
        traj = {m: np.zeros(horizons) for m in TRAJECTORY_METRICS}
        for h in range(1, horizons + 1):
            adjusted, flips = simulate_horizon(
                panel,
                deltas.at(h),
                employment_model,
                income_model,
                replacement_rate,
                encoder_employment,
                encoder_income,
            )
            rho_h = dependence(adjusted) if dependence else None
            report = compute_report(adjusted, t_upper, t_lower, spearman_override=rho_h, include_tails=False)
            for m in TRAJECTORY_METRICS:
                base_v = getattr(baseline, m)
                if base_v == 0.0:
                    raise MicrosimError(f"baseline metric {m} is zero; relative change undefined")
                traj[m][h - 1] = 100.0 * (getattr(report, m) - base_v) / base_v
            states.append(
                SimulationState(shock, h, adjusted if keep_panels else None, flips, report)
            )
        runs[shock] = SimulationRun(shock=shock, baseline=baseline, states=states, pct_change=traj)
    return runs


def trajectories_to_rows(runs: dict[str, SimulationRun]):
    rows = []
    for shock in sorted(runs):
        run = runs[shock]
        for m in TRAJECTORY_METRICS:
            for h, v in enumerate(run.pct_change[m], start=1):
                rows.append((shock, m, h, v))
    return rows


def trajectories_to_csv(path, runs: dict[str, SimulationRun]) -> None:
    write_csv(path, ["shock", "metric", "horizon", "pct_change"], trajectories_to_rows(runs))
