import numpy as np
import pytest

from incwealth.data import HouseholdPanel, HouseholdRecord, PersonRecord


def make_panel(households, persons=(), country="XX"):
    hh = [HouseholdRecord(h[0], h[1], np.asarray(h[2], dtype=float), np.asarray(h[3], dtype=float)) for h in households]
    pp = [PersonRecord(*p) for p in persons]
    return HouseholdPanel(country, hh, pp)


@pytest.fixture
def three_household_panel():
    """Hand-built panel used for the component-mapping checks."""
    households = [
        ("H1", 1.0, [40_000, 0, 0, 0, 0, 0], [100_000, 20_000, 0, 10_000, 50_000, 5_000, 30_000, 1_000, 15_000]),
        ("H2", 2.0, [0, 20_000, 5_000, 0, 0, 8_000], [0, 0, 12_000, 0, 0, 3_000, 9_000, 500, 80_000]),
        ("H3", 1.5, [30_000, 0, 0, 1_000, 500, 0], [250_000, 0, 40_000, 6_000, 0, 0, 12_000, 0, 20_000]),
    ]
    persons = [
        ("P1", "H1", True, "female", 3, 40.0, "married", 1, 10.0, 40_000.0, 0.0),
        ("P2", "H2", False, "male", 2, 50.0, "single", 0, 0.0, 0.0, 8_000.0),
        ("P3", "H3", True, "male", 1, 35.0, "single", 2, 5.0, 30_000.0, 0.0),
    ]
    return make_panel(households, persons)
