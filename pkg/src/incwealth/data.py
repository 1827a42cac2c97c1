"""Typed ingestion and validation of household microdata, macro panels and run config.

Micro data comes as two CSV files (households + persons) whose columns are
mapped onto the canonical field names through a column map declared in the
run configuration. Macro data is one CSV per country with a quarterly date
column and one column per series.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ._util import fmt_cell

INCOME_COMPONENTS = (
    "employment",
    "self_employment",
    "pensions",
    "rental",
    "financial",
    "benefits",
)
WEALTH_COMPONENTS = (
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

MACRO_SERIES = ("DJ50", "HP", "LCOMP", "LT-IR", "UNEMP", "EA-spread", "GDP", "HICP", "ST-IR")
# Series stored as 100*log(x); interest rates and spreads stay in levels.
LOG_SCALED_SERIES = frozenset({"DJ50", "HP", "LCOMP", "UNEMP", "GDP", "HICP"})

PERSON_FIELDS = (
    "person_id",
    "household_id",
    "employed",
    "gender",
    "education",
    "age",
    "marital_status",
    "n_children",
    "tenure_years",
    "employment_income",
    "unemployment_benefits",
)


class SchemaError(ValueError):
    """A required column is missing or the column map is malformed."""


class ParseError(ValueError):
    """A cell could not be parsed; carries the offending row index."""


class PanelValidationError(ValueError):
    """A loaded panel violates a structural invariant."""


@dataclass(frozen=True)
class PersonRecord:
    person_id: str
    household_id: str
    employed: bool
    gender: str
    education: int
    age: float
    marital_status: str
    n_children: int
    tenure_years: float
    employment_income: float
    unemployment_benefits: float

    def validate(self) -> None:
        if self.age < 0:
            raise PanelValidationError(f"person {self.person_id}: age < 0")
        if self.n_children < 0:
            raise PanelValidationError(f"person {self.person_id}: n_children < 0")
        if self.tenure_years < 0:
            raise PanelValidationError(f"person {self.person_id}: tenure_years < 0")
        if self.employment_income < 0:
            raise PanelValidationError(f"person {self.person_id}: employment_income < 0")


@dataclass(frozen=True)
class HouseholdRecord:
    household_id: str
    weight: float
    income_components: np.ndarray  # 6-vector, currency/yr
    wealth_components: np.ndarray  # 9-vector, currency; last entry = liabilities

    @property
    def total_income(self) -> float:
        return float(self.income_components.sum())

    @property
    def gross_assets(self) -> float:
        return float(self.wealth_components[:8].sum())

    @property
    def liabilities(self) -> float:
        return float(self.wealth_components[8])

    @property
    def net_wealth(self) -> float:
        return self.gross_assets - self.liabilities

    @property
    def negative_income(self) -> bool:
        return self.total_income < 0

    def validate(self) -> None:
        if self.weight < 0:
            raise PanelValidationError(f"household {self.household_id}: weight < 0")
        if self.income_components.shape != (6,):
            raise PanelValidationError(
                f"household {self.household_id}: expected 6 income components"
            )
        if self.wealth_components.shape != (9,):
            raise PanelValidationError(
                f"household {self.household_id}: expected 9 wealth components"
            )
        if not np.all(np.isfinite(self.income_components)):
            raise PanelValidationError(f"household {self.household_id}: non-finite income")
        if not np.all(np.isfinite(self.wealth_components)):
            raise PanelValidationError(f"household {self.household_id}: non-finite wealth")


@dataclass
class HouseholdPanel:
    """One country's micro panel: household records plus their members.

    Arrays are materialized once; records are immutable, so a loaded panel
    can be shared freely across threads.
    """

    country: str
    households: list[HouseholdRecord]
    persons: list[PersonRecord]

    def __post_init__(self):
        self._hh_index = {h.household_id: i for i, h in enumerate(self.households)}
        if len(self._hh_index) != len(self.households):
            raise PanelValidationError("duplicate household ids")
        for p in self.persons:
            if p.household_id not in self._hh_index:
                raise PanelValidationError(
                    f"person {p.person_id} references unknown household {p.household_id}"
                )

    @property
    def n(self) -> int:
        return len(self.households)

    def weights(self) -> np.ndarray:
        return np.array([h.weight for h in self.households])

    def income_matrix(self) -> np.ndarray:
        return np.array([h.income_components for h in self.households])

    def wealth_matrix(self) -> np.ndarray:
        return np.array([h.wealth_components for h in self.households])

    def total_income(self) -> np.ndarray:
        return self.income_matrix().sum(axis=1)

    def net_wealth(self) -> np.ndarray:
        w = self.wealth_matrix()
        return w[:, :8].sum(axis=1) - w[:, 8]

    def household_row(self, household_id: str) -> int:
        return self._hh_index[household_id]

    def person_household_rows(self) -> np.ndarray:
        return np.array([self._hh_index[p.household_id] for p in self.persons], dtype=int)

    def negative_income_ids(self) -> list[str]:
        return [h.household_id for h in self.households if h.negative_income]


@dataclass
class MacroPanel:
    country: str
    quarters: list[str]  # canonical 'YYYYQn' labels, contiguous
    series: dict[str, np.ndarray]
    log_scaled: dict[str, bool] = field(default_factory=dict)

    def matrix(self, names) -> np.ndarray:
        return np.column_stack([self.series[n] for n in names])

    def with_series(self, name: str, values: np.ndarray, log_scaled: bool = False) -> "MacroPanel":
        if len(values) != len(self.quarters):
            raise PanelValidationError(f"series {name}: length mismatch")
        series = dict(self.series)
        series[name] = np.asarray(values, dtype=float)
        flags = dict(self.log_scaled)
        flags[name] = log_scaled
        return MacroPanel(self.country, list(self.quarters), series, flags)


_QUARTER_RE = re.compile(r"^(\d{4})[-]?Q([1-4])$")


def parse_quarter(label: str) -> tuple[int, int]:
    m = _QUARTER_RE.match(label.strip())
    if not m:
        raise ParseError(f"unparseable quarter label {label!r}")
    return int(m.group(1)), int(m.group(2))


def quarter_label(year: int, q: int) -> str:
    return f"{year}Q{q}"


def next_quarter(year: int, q: int) -> tuple[int, int]:
    return (year + 1, 1) if q == 4 else (year, q + 1)


def _require_columns(header, wanted, path):
    missing = [c for c in wanted if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")


def _parse_float(cell, column, row_idx, path):
    try:
        return float(cell)
    except (TypeError, ValueError):
        raise ParseError(f"{path} row {row_idx}: non-numeric value {cell!r} in column {column!r}")


def _parse_int(cell, column, row_idx, path):
    v = _parse_float(cell, column, row_idx, path)
    if v != int(v):
        raise ParseError(f"{path} row {row_idx}: expected integer in column {column!r}, got {cell!r}")
    return int(v)


def _parse_bool(cell, column, row_idx, path):
    s = str(cell).strip().lower()
    if s in ("1", "true", "yes"):
        return True
    if s in ("0", "false", "no"):
        return False
    raise ParseError(f"{path} row {row_idx}: expected boolean in column {column!r}, got {cell!r}")


DEFAULT_COLUMN_MAP = {
    "household": {
        "household_id": "household_id",
        "weight": "weight",
        "income": [f"inc_{c}" for c in INCOME_COMPONENTS],
        "wealth": [f"wlt_{c}" for c in WEALTH_COMPONENTS],
    },
    "person": {f: f for f in PERSON_FIELDS},
}


def load_column_map(path) -> dict:
    with open(path) as fh:
        cmap = yaml.safe_load(fh)
    if not isinstance(cmap, dict) or "household" not in cmap or "person" not in cmap:
        raise SchemaError(f"{path}: column map needs 'household' and 'person' sections")
    return cmap


def load_households(path, schema: dict | None = None, persons_path=None, country: str = "") -> HouseholdPanel:
    """Load a household CSV plus its sibling persons CSV into a validated panel.

    ``schema`` is the column map (defaults to the canonical column names);
    ``persons_path`` defaults to ``<stem>_persons.csv`` next to ``path``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    schema = schema or DEFAULT_COLUMN_MAP
    hh_map = schema["household"]
    income_cols = list(hh_map["income"])
    wealth_cols = list(hh_map["wealth"])
    if len(income_cols) != 6:
        raise SchemaError(f"column map: expected exactly 6 income columns, got {len(income_cols)}")
    if len(wealth_cols) != 9:
        raise SchemaError(f"column map: expected exactly 9 wealth columns, got {len(wealth_cols)}")

    households = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file, header row required")
        _require_columns(reader.fieldnames, [hh_map["household_id"], hh_map["weight"], *income_cols, *wealth_cols], path)
        for i, row in enumerate(reader):
            inc = np.array([_parse_float(row[c], c, i, path) for c in income_cols])
            wlt = np.array([_parse_float(row[c], c, i, path) for c in wealth_cols])
            rec = HouseholdRecord(
                household_id=str(row[hh_map["household_id"]]),
                weight=_parse_float(row[hh_map["weight"]], hh_map["weight"], i, path),
                income_components=inc,
                wealth_components=wlt,
            )
            rec.validate()
            households.append(rec)

    if persons_path is None:
        persons_path = path.with_name(path.stem + "_persons.csv")
    persons = []
    if Path(persons_path).exists():
        p_map = schema["person"]
        with open(persons_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise SchemaError(f"{persons_path}: empty file, header row required")
            _require_columns(reader.fieldnames, [p_map[f] for f in PERSON_FIELDS], persons_path)
            for i, row in enumerate(reader):
                rec = PersonRecord(
                    person_id=str(row[p_map["person_id"]]),
                    household_id=str(row[p_map["household_id"]]),
                    employed=_parse_bool(row[p_map["employed"]], p_map["employed"], i, persons_path),
                    gender=str(row[p_map["gender"]]),
                    education=_parse_int(row[p_map["education"]], p_map["education"], i, persons_path),
                    age=_parse_float(row[p_map["age"]], p_map["age"], i, persons_path),
                    marital_status=str(row[p_map["marital_status"]]),
                    n_children=_parse_int(row[p_map["n_children"]], p_map["n_children"], i, persons_path),
                    tenure_years=_parse_float(row[p_map["tenure_years"]], p_map["tenure_years"], i, persons_path),
                    employment_income=_parse_float(row[p_map["employment_income"]], p_map["employment_income"], i, persons_path),
                    unemployment_benefits=_parse_float(row[p_map["unemployment_benefits"]], p_map["unemployment_benefits"], i, persons_path),
                )
                rec.validate()
                persons.append(rec)

    return HouseholdPanel(country=country, households=households, persons=persons)


def write_households(panel: HouseholdPanel, path, persons_path=None, schema: dict | None = None) -> None:
    """Inverse of :func:`load_households`; floats round-trip bit-for-bit."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    schema = schema or DEFAULT_COLUMN_MAP
    hh_map = schema["household"]
    header = [hh_map["household_id"], hh_map["weight"], *hh_map["income"], *hh_map["wealth"]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for h in panel.households:
            writer.writerow(
                [h.household_id, fmt_cell(h.weight)]
                + [fmt_cell(v) for v in h.income_components]
                + [fmt_cell(v) for v in h.wealth_components]
            )
    if persons_path is None:
        persons_path = path.with_name(path.stem + "_persons.csv")
    p_map = schema["person"]
    with open(persons_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([p_map[f] for f in PERSON_FIELDS])
        for p in panel.persons:
            writer.writerow(
                [
                    p.person_id,
                    p.household_id,
                    fmt_cell(p.employed),
                    p.gender,
                    fmt_cell(p.education),
                    fmt_cell(p.age),
                    p.marital_status,
                    fmt_cell(p.n_children),
                    fmt_cell(p.tenure_years),
                    fmt_cell(p.employment_income),
                    fmt_cell(p.unemployment_benefits),
                ]
            )


def load_macro_panel(path, country: str = "") -> MacroPanel:
    """Load a quarterly macro CSV, applying the 100*log scaling exactly once.

    The file must have a ``date`` column with quarter labels plus one column
    per recognized series. Index gaps and empty interior cells are rejected,
    listing the offending quarters.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, header row required")
        rows = list(reader)
    if "date" not in header:
        raise SchemaError(f"{path}: missing required column(s) date")
    names = [c for c in header if c != "date"]
    unknown = [c for c in names if c not in MACRO_SERIES]
    if unknown:
        raise SchemaError(f"{path}: unrecognized series name(s) {', '.join(unknown)}")

    date_idx = header.index("date")
    quarters = []
    raw = {n: [] for n in names}
    missing_cells = []
    for i, row in enumerate(rows):
        yq = parse_quarter(row[date_idx])
        quarters.append(yq)
        for n in names:
            cell = row[header.index(n)]
            if cell is None or str(cell).strip() == "":
                missing_cells.append(quarter_label(*yq))
                raw[n].append(math.nan)
            else:
                raw[n].append(_parse_float(cell, n, i, path))

    order = sorted(range(len(quarters)), key=lambda i: quarters[i])
    quarters = [quarters[i] for i in order]
    gaps = []
    for prev, cur in zip(quarters, quarters[1:]):
        expected = next_quarter(*prev)
        while expected != cur:
            if expected > cur:  # duplicate label
                raise PanelValidationError(f"{path}: duplicate quarter {quarter_label(*cur)}")
            gaps.append(quarter_label(*expected))
            expected = next_quarter(*expected)
    problems = sorted(set(gaps) | set(missing_cells))
    if problems:
        raise PanelValidationError(f"{path}: missing quarter(s) {', '.join(problems)}")

    series = {}
    flags = {}
    for n in names:
        values = np.array(raw[n], dtype=float)[order]
        if n in LOG_SCALED_SERIES:
            if np.any(values <= 0):
                raise PanelValidationError(f"{path}: series {n} must be positive before log scaling")
            values = 100.0 * np.log(values)
            flags[n] = True
        else:
            flags[n] = False
        series[n] = values
    return MacroPanel(country=country, quarters=[quarter_label(*q) for q in quarters], series=series, log_scaled=flags)


def write_macro_csv(path, quarters, raw_series: dict[str, np.ndarray]) -> None:
    """Write a macro CSV in raw (pre-scaling) units, as a data provider would."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [n for n in MACRO_SERIES if n in raw_series]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", *names])
        for i, q in enumerate(quarters):
            writer.writerow([q] + [fmt_cell(raw_series[n][i]) for n in names])


# ---------------------------------------------------------------------------
# Run configuration


@dataclass
class ChainConfig:
    iterations: int = 20_000
    burn_in: int = 10_000
    thin: int = 5

    def validate(self, name="chain"):
        if not (0 < self.burn_in < self.iterations):
            raise ValueError(f"{name}: need 0 < burn_in < iterations")
        if self.thin < 1:
            raise ValueError(f"{name}: thin >= 1")


@dataclass
class RunConfig:
    """Structured configuration for a full pipeline run."""

    seed: int = 0
    countries: list[str] = field(default_factory=list)
    lags: int = 2
    horizons: int = 12
    output_dir: str = "out"
    data_dir: str = "data"
    reference_country: str = ""  # spread benchmark; defaults to first country
    replacement_rate: dict[str, float] = field(default_factory=dict)
    default_replacement_rate: float = 0.55
    bond_duration: float = 5.0

    marginal_chain: ChainConfig = field(default_factory=ChainConfig)
    etel_b: int = 5_000
    tail_upper: float = 0.95
    tail_lower: float = 0.05
    dependence_mode: str = "copula"  # or 'plugin'
    microsim_etel_b: int = 1_000
    marginal_draw_pool: int = 200

    bvar_iterations: int = 15_000
    bvar_burn_in: int = 5_000

    bart_trees: int = 50
    bart_iterations: int = 2_000
    bart_burn_in: int = 500

    synthetic: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.horizons < 1:
            raise ValueError("horizons must be >= 1")
        for t in (self.tail_upper, self.tail_lower):
            if not (0.0 < t < 1.0):
                raise ValueError("tail thresholds must lie in (0, 1)")
        for c, r in self.replacement_rate.items():
            if not (0.0 <= r <= 1.0):
                raise ValueError(f"replacement_rate[{c}] must lie in [0, 1]")
        if not (0.0 <= self.default_replacement_rate <= 1.0):
            raise ValueError("default_replacement_rate must lie in [0, 1]")
        if self.dependence_mode not in ("copula", "plugin"):
            raise ValueError("dependence_mode must be 'copula' or 'plugin'")
        self.marginal_chain.validate("marginal_chain")
        if not (0 < self.bvar_burn_in < self.bvar_iterations):
            raise ValueError("bvar: need 0 < burn_in < iterations")
        if self.lags < 1:
            raise ValueError("lags must be >= 1")

    def replacement_rate_for(self, country: str) -> float:
        return self.replacement_rate.get(country, self.default_replacement_rate)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"config: unknown key(s) {', '.join(sorted(unknown))}")
        if "marginal_chain" in d and isinstance(d["marginal_chain"], dict):
            d["marginal_chain"] = ChainConfig(**d["marginal_chain"])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                raw = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ValueError(f"config parse error in {path}: {exc}")
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ValueError(f"config parse error in {path}: top level must be a mapping")
        return cls.from_dict(raw)
