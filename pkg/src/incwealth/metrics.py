"""Weighted sample metrics: univariate and bivariate Gini, rank correlation,
empirical tail-concordance plug-ins."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._util import write_csv


class MetricDomainError(ValueError):
    pass


def _clean(values, weights):
    values = np.asarray(values, dtype=float)
    if weights is None:
        weights = np.ones_like(values)
    else:
        weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape:
        raise MetricDomainError("values and weights must have equal length")
    if np.any(weights < 0):
        raise MetricDomainError("weights must be nonnegative")
    if weights.sum() <= 0:
        raise MetricDomainError("weights must have a positive sum")
    return values, weights


def gini(values, weights=None) -> float:
    """Weighted Gini index, equal to the pairwise mean-absolute-difference form
    sum_ij w_i w_j |v_i - v_j| / (2 (sum w)^2 mean)."""
    values, weights = _clean(values, weights)
    if np.any(values < 0):
        raise MetricDomainError("gini requires nonnegative values; filter negatives first")
    total = float(values @ weights)
    if total == 0.0:
        return 0.0  # all-zero sample by convention
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    wsum = w.sum()
    # sum_ij w_i w_j |v_i - v_j| = 2 sum_i w_i (v_i * CW_{i-1} - CVW_{i-1});
    # index-ordered cumulative sums are exact under ties.
    cw = np.concatenate([[0.0], np.cumsum(w)[:-1]])
    cvw = np.concatenate([[0.0], np.cumsum(w * v)[:-1]])
    mad_total = 2.0 * float(np.sum(w * (v * cw - cvw)))
    mu = total / wsum
    return mad_total / (2.0 * wsum * wsum * mu)


def gini_pairwise(values, weights=None) -> float:
    """Direct O(n^2) evaluation of the pairwise formula (test oracle)."""
    values, weights = _clean(values, weights)
    if np.any(values < 0):
        raise MetricDomainError("gini requires nonnegative values")
    total = float(values @ weights)
    if total == 0.0:
        return 0.0
    wsum = weights.sum()
    mu = total / wsum
    diff = np.abs(values[:, None] - values[None, :])
    num = float(weights @ diff @ weights)
    return num / (2.0 * wsum * wsum * mu)


def bivariate_gini(
    x1,
    x2,
    weights=None,
    exact_limit: int = 20_000,
    mc_pairs: int = 2_000_000,
    seed: int = 0,
) -> float:
    """Distance-based two-dimensional Gini of mean-scaled coordinates.

    E||Z - Z'|| / (2 E||Z||) over independent weighted copies, with each
    coordinate divided by its weighted mean. Exact weighted double sum up to
    ``exact_limit`` observations, seeded Monte Carlo pairs above.
    """
    x1, weights = _clean(x1, weights)
    x2, _ = _clean(x2, weights)
    wsum = weights.sum()
    mu1 = float(x1 @ weights) / wsum
    mu2 = float(x2 @ weights) / wsum
    if mu1 == 0.0 or mu2 == 0.0:
        raise MetricDomainError("bivariate gini: a coordinate has zero weighted mean")
    z = np.column_stack([x1 / mu1, x2 / mu2])
    p = weights / wsum
    mean_norm = float(np.sqrt((z * z).sum(axis=1)) @ p)
    if mean_norm == 0.0:
        raise MetricDomainError("bivariate gini: degenerate at the origin")

    n = z.shape[0]
    if n <= exact_limit:
        acc = 0.0
        block = max(1, int(2e7) // max(n, 1))
        for start in range(0, n, block):
            zb = z[start : start + block]
            d = np.sqrt(
                (zb[:, None, 0] - z[None, :, 0]) ** 2 + (zb[:, None, 1] - z[None, :, 1]) ** 2
            )
            acc += float(p[start : start + block] @ d @ p)
        mean_dist = acc
    else:
        rng = np.random.Generator(np.random.PCG64(seed))
        i = rng.choice(n, size=mc_pairs, p=p)
        j = rng.choice(n, size=mc_pairs, p=p)
        mean_dist = float(np.mean(np.sqrt(((z[i] - z[j]) ** 2).sum(axis=1))))
    return mean_dist / (2.0 * mean_norm)


def weighted_mid_cdf(values, weights=None) -> np.ndarray:
    """Weighted mid-distribution transform: F(v-) + w(v)/2, values in (0, 1)."""
    values, weights = _clean(values, weights)
    wsum = weights.sum()
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order]
    cw = np.cumsum(w)
    # group ties so every tied value receives the same mid-rank
    uniq, first = np.unique(v, return_index=True)
    out_sorted = np.empty_like(v)
    prev_cum = 0.0
    for k, start in enumerate(first):
        stop = first[k + 1] if k + 1 < len(first) else len(v)
        cum_here = cw[stop - 1]
        mid = prev_cum + 0.5 * (cum_here - prev_cum)
        out_sorted[start:stop] = mid
        prev_cum = cum_here
    out = np.empty_like(out_sorted)
    out[order] = out_sorted
    return out / wsum


def sample_spearman(x1, x2, weights=None) -> float:
    """Weighted rank correlation with average ranks for ties."""
    x1, weights = _clean(x1, weights)
    x2, _ = _clean(x2, weights)
    if x1.size < 2:
        raise MetricDomainError("need at least two observations")
    if np.ptp(x1) == 0 or np.ptp(x2) == 0:
        raise MetricDomainError("rank correlation undefined for a constant margin")
    r1 = weighted_mid_cdf(x1, weights)
    r2 = weighted_mid_cdf(x2, weights)
    p = weights / weights.sum()
    m1 = float(r1 @ p)
    m2 = float(r2 @ p)
    c12 = float(((r1 - m1) * (r2 - m2)) @ p)
    v1 = float(((r1 - m1) ** 2) @ p)
    v2 = float(((r2 - m2) ** 2) @ p)
    return c12 / np.sqrt(v1 * v2)


def sample_tail(x1, x2, t: float, side: str, weights=None) -> float:
    """Empirical tail-concordance plug-in at quantile threshold ``t``:
    weighted share of joint exceedances over the marginal tail mass."""
    if not (0.0 < t < 1.0):
        raise MetricDomainError("t must lie in (0, 1)")
    x1, weights = _clean(x1, weights)
    x2, _ = _clean(x2, weights)
    u1 = weighted_mid_cdf(x1, weights)
    u2 = weighted_mid_cdf(x2, weights)
    p = weights / weights.sum()
    if side == "upper":
        joint = float(p @ np.logical_and(u1 > t, u2 > t))
        return joint / (1.0 - t)
    if side == "lower":
        joint = float(p @ np.logical_and(u1 <= t, u2 <= t))
        return joint / t
    raise MetricDomainError("side must be 'upper' or 'lower'")


REPORT_FIELDS = (
    "gini_income",
    "gini_net_wealth",
    "gini_wealth",
    "gini_debt",
    "gini_bivariate",
    "spearman_rho",
    "lambda_u",
    "lambda_l",
)


@dataclass
class MetricReport:
    gini_income: float
    gini_net_wealth: float
    gini_wealth: float
    gini_debt: float
    gini_bivariate: float
    spearman_rho: float
    lambda_u: float
    lambda_l: float

    def as_row(self):
        return [getattr(self, f) for f in REPORT_FIELDS]


def compute_report(
    panel,
    t_upper: float = 0.95,
    t_lower: float = 0.05,
    spearman_override: float | None = None,
    include_tails: bool = True,
) -> MetricReport:
    """Sample metrics for one household panel.

    Gini calculations omit records with negative values of the metric's
    variable (net wealth can be negative; negative total income is possible
    but rare). Rank-based measures use the full sample.
    """
    w = panel.weights()
    income = panel.total_income()
    nw = panel.net_wealth()
    wealth_m = panel.wealth_matrix()
    assets = wealth_m[:, :8].sum(axis=1)
    debt = wealth_m[:, 8]

    inc_ok = income >= 0
    nw_ok = nw >= 0
    both_ok = inc_ok & nw_ok

    rho = spearman_override if spearman_override is not None else sample_spearman(income, nw, w)
    return MetricReport(
        gini_income=gini(income[inc_ok], w[inc_ok]),
        gini_net_wealth=gini(nw[nw_ok], w[nw_ok]),
        gini_wealth=gini(assets, w),
        gini_debt=gini(debt, w),
        gini_bivariate=bivariate_gini(income[both_ok], nw[both_ok], w[both_ok]),
        spearman_rho=rho,
        lambda_u=sample_tail(income, nw, t_upper, "upper", w) if include_tails else float("nan"),
        lambda_l=sample_tail(income, nw, t_lower, "lower", w) if include_tails else float("nan"),
    )


def reports_to_csv(path, reports: dict[str, MetricReport]) -> None:
    """Per-country sample metrics, one row per country."""
    rows = [[country, *reports[country].as_row()] for country in sorted(reports)]
    write_csv(path, ["country", *REPORT_FIELDS], rows)
