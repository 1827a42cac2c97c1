"""Bayesian VAR with global-local shrinkage, recursive shock identification,
impulse responses and the spread principal component.

The sampler cycles Gaussian conditionals for the stacked coefficients, the
half-Cauchy shrinkage hierarchy via inverse-gamma auxiliaries, and an
inverse-Wishart conditional for the error covariance. Identification is a
lower Cholesky factor of the covariance, so variables ordered before the
shocked one have exactly zero impact responses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._util import write_csv

# Slow-moving real and price variables first, policy instruments last.
DEFAULT_ORDERING = ("GDP", "HICP", "LCOMP", "UNEMP", "HP", "DJ50", "LT-IR", "EA-spread", "ST-IR")
SHOCK_VARIABLES = {"target": "ST-IR", "qe": "EA-spread"}

INTERCEPT_VARIANCE = 1e6
EXPLOSIVE_MODULUS = 1.1


class BvarError(RuntimeError):
    pass


@dataclass(frozen=True)
class VarSpec:
    variables: tuple[str, ...]
    lags: int

    @property
    def m(self) -> int:
        return len(self.variables)

    @property
    def k(self) -> int:
        return self.m * self.lags

    def index_of(self, name: str) -> int:
        return self.variables.index(name)


@dataclass
class VarDraws:
    spec: VarSpec
    coef: np.ndarray  # (S, M, 1 + K + n_extra); column 0 = intercept
    sigma: np.ndarray  # (S, M, M)
    lambda2: np.ndarray  # (S, M, K + n_extra) local scales
    tau2: np.ndarray  # (S,)
    n_extra: int = 0

    @property
    def n_draws(self) -> int:
        return self.coef.shape[0]

    def lag_matrices(self, s: int) -> list[np.ndarray]:
        m, p = self.spec.m, self.spec.lags
        a = self.coef[s][:, 1 : 1 + m * p]
        return [a[:, i * m : (i + 1) * m] for i in range(p)]


def build_design(y: np.ndarray, lags: int, extra: np.ndarray | None = None):
    """Stack [1, y_{t-1}, ..., y_{t-P}, extra_t] rows against y_t targets."""
    y = np.asarray(y, dtype=float)
    t, m = y.shape
    if t <= lags:
        raise BvarError("sample shorter than lag order")
    rows = t - lags
    x = np.ones((rows, 1 + m * lags))
    for p in range(1, lags + 1):
        x[:, 1 + (p - 1) * m : 1 + p * m] = y[lags - p : t - p]
    if extra is not None:
        extra = np.asarray(extra, dtype=float)
        x = np.hstack([x, extra[lags:]])
    return x, y[lags:]


def _invwishart(rng, df: int, scale: np.ndarray) -> np.ndarray:
    """Draw from IW(df, scale) via the Bartlett decomposition."""
    m = scale.shape[0]
    chol_inv_scale = np.linalg.cholesky(np.linalg.inv(scale))
    a = np.zeros((m, m))
    for i in range(m):
        a[i, i] = np.sqrt(rng.chisquare(df - i))
        for j in range(i):
            a[i, j] = rng.standard_normal()
    w_chol = chol_inv_scale @ a  # W = w_chol @ w_chol.T ~ Wishart(df, scale^-1)
    w = w_chol @ w_chol.T
    return np.linalg.inv(w)


def gibbs_fit(
    y: np.ndarray,
    spec: VarSpec,
    iterations: int = 15_000,
    burn_in: int = 5_000,
    seed: int = 0,
    extra: np.ndarray | None = None,
    thin: int = 5,
) -> VarDraws:
    """Gibbs sampler for the shrinkage VAR. Deterministic given ``seed``.

    ``extra`` appends exogenous regressor columns (shrunk like lag
    coefficients); the intercept column carries an essentially flat prior.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != spec.m:
        raise BvarError("data shape does not match the variable ordering")
    if not np.all(np.isfinite(y)):
        raise BvarError("missing or non-finite values in the panel")
    if not (0 < burn_in < iterations):
        raise BvarError("need 0 < burn_in < iterations")
    x, yy = build_design(y, spec.lags, extra)
    t_eff, m = yy.shape
    k_all = x.shape[1]  # 1 + M*P + n_extra
    n_extra = k_all - 1 - spec.k
    n_shrunk = m * (k_all - 1)
    if t_eff <= k_all + 10:
        raise BvarError("sample too short for the requested lag order")

    rng = np.random.Generator(np.random.PCG64(seed))
    xtx = x.T @ x
    xty = x.T @ yy

    # ridge-regularized start; columns of beta are equations
    beta = np.linalg.solve(xtx + 1e-6 * np.eye(k_all), xty)
    resid = yy - x @ beta
    sigma = resid.T @ resid / t_eff + 1e-6 * np.eye(m)
    lam2 = np.ones((k_all - 1, m))
    nu_aux = np.ones((k_all - 1, m))
    tau2 = 1.0
    xi_aux = 1.0

    nu0 = m + 2
    s0 = 0.1 * np.eye(m)

    n_keep = (iterations - burn_in + thin - 1) // thin
    coef_out = np.empty((n_keep, m, k_all))
    sigma_out = np.empty((n_keep, m, m))
    lam2_out = np.empty((n_keep, m, k_all - 1))
    tau2_out = np.empty(n_keep)
    kept = 0

    prior_var = np.empty((k_all, m))
    for it in range(iterations):
        # --- coefficients | sigma, scales -------------------------------
        prior_var[0, :] = INTERCEPT_VARIANCE
        prior_var[1:, :] = np.clip(tau2 * lam2, 1e-12, 1e12)
        sigma_inv = np.linalg.inv(sigma)
        omega = np.kron(sigma_inv, xtx)
        omega[np.arange(k_all * m), np.arange(k_all * m)] += 1.0 / prior_var.reshape(-1, order="F")
        rhs = (xty @ sigma_inv).reshape(-1, order="F")
        chol = None
        for attempt in range(6):
            try:
                chol = np.linalg.cholesky(omega)
                break
            except np.linalg.LinAlgError:
                if attempt == 5:
                    raise BvarError("coefficient precision not positive definite")
                omega[np.arange(k_all * m), np.arange(k_all * m)] += 10.0 ** (-8 + attempt)
        mean = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
        draw = mean + np.linalg.solve(chol.T, rng.standard_normal(k_all * m))
        beta = draw.reshape(k_all, m, order="F")

        # --- shrinkage hierarchy ----------------------------------------
        b2 = beta[1:, :] ** 2
        lam2 = 1.0 / rng.gamma(1.0, 1.0 / (1.0 / nu_aux + b2 / (2.0 * tau2)))
        nu_aux = 1.0 / rng.gamma(1.0, 1.0 / (1.0 + 1.0 / lam2))
        rate_tau = 1.0 / xi_aux + float(np.sum(b2 / lam2)) / 2.0
        tau2 = 1.0 / rng.gamma((n_shrunk + 1.0) / 2.0, 1.0 / rate_tau)
        xi_aux = 1.0 / rng.gamma(1.0, 1.0 / (1.0 + 1.0 / tau2))

        # --- error covariance | coefficients ----------------------------
        resid = yy - x @ beta
        scale = s0 + resid.T @ resid
        for attempt in range(6):
            try:
                sigma = _invwishart(rng, nu0 + t_eff, scale)
                np.linalg.cholesky(sigma)
                break
            except np.linalg.LinAlgError:
                if attempt == 5:
                    raise BvarError("covariance draw failed to be positive definite")
                scale = scale + 10.0 ** (-8 + attempt) * np.eye(m)

        if it >= burn_in and (it - burn_in) % thin == 0:
            coef_out[kept] = beta.T
            sigma_out[kept] = sigma
            lam2_out[kept] = lam2.T
            tau2_out[kept] = tau2
            kept += 1

    return VarDraws(
        spec=spec,
        coef=coef_out[:kept],
        sigma=sigma_out[:kept],
        lambda2=lam2_out[:kept],
        tau2=tau2_out[:kept],
        n_extra=n_extra,
    )


def companion_matrix(lag_mats: list[np.ndarray]) -> np.ndarray:
    m = lag_mats[0].shape[0]
    p = len(lag_mats)
    f = np.zeros((m * p, m * p))
    f[:m] = np.hstack(lag_mats)
    if p > 1:
        f[m:, : m * (p - 1)] = np.eye(m * (p - 1))
    return f


def irf_single(lag_mats: list[np.ndarray], sigma: np.ndarray, shock_idx: int, horizons: int) -> np.ndarray:
    """One draw's structural responses (M, H+1) to a one-sd recursive shock."""
    m = sigma.shape[0]
    chol = np.linalg.cholesky(sigma)
    impact = chol[:, shock_idx]
    f = companion_matrix(lag_mats)
    state = np.zeros(f.shape[0])
    state[:m] = impact
    out = np.empty((m, horizons + 1))
    out[:, 0] = impact
    for h in range(1, horizons + 1):
        state = f @ state
        out[:, h] = state[:m]
    return out


@dataclass
class IrfSet:
    shock: str
    variables: tuple[str, ...]
    horizons: int
    draws: np.ndarray  # (S, M, H+1), explosive draws excluded
    median: np.ndarray  # (M, H+1)
    lo68: np.ndarray
    hi68: np.ndarray
    n_excluded: int = 0

    def response(self, variable: str) -> np.ndarray:
        return self.median[self.variables.index(variable)]

    def to_rows(self):
        rows = []
        for i, v in enumerate(self.variables):
            for h in range(self.horizons + 1):
                rows.append((v, h, self.lo68[i, h], self.median[i, h], self.hi68[i, h]))
        return rows

    def to_csv(self, path):
        write_csv(path, ["variable", "horizon", "lo68", "median", "hi68"], self.to_rows())


def irf(draws: VarDraws, shock: str, horizons: int = 12) -> IrfSet:
    """Structural impulse responses for one named shock across all draws.

    Draws whose companion matrix has eigenvalues above 1.1 in modulus are
    flagged as explosive and left out of the summary bands.
    """
    shock_var = SHOCK_VARIABLES.get(shock, shock)
    if shock_var not in draws.spec.variables:
        raise BvarError(f"shock variable {shock_var!r} not in the ordering")
    j = draws.spec.index_of(shock_var)
    keep = []
    for s in range(draws.n_draws):
        lags = draws.lag_matrices(s)
        f = companion_matrix(lags)
        if np.max(np.abs(np.linalg.eigvals(f))) > EXPLOSIVE_MODULUS:
            continue
        keep.append(irf_single(lags, draws.sigma[s], j, horizons))
    if not keep:
        raise BvarError("every posterior draw was explosive")
    arr = np.stack(keep)
    return IrfSet(
        shock=shock,
        variables=draws.spec.variables,
        horizons=horizons,
        draws=arr,
        median=np.median(arr, axis=0),
        lo68=np.quantile(arr, 0.16, axis=0),
        hi68=np.quantile(arr, 0.84, axis=0),
        n_excluded=draws.n_draws - len(keep),
    )


@dataclass
class SpreadPca:
    series: np.ndarray
    loadings: np.ndarray
    explained_share: float
    countries: list[str] = field(default_factory=list)


def pca_spread(country_rates: dict[str, np.ndarray], reference_rate: np.ndarray) -> SpreadPca:
    """First principal component of the demeaned long-rate spreads.

    The sign is normalized so the loadings sum positive; the returned series
    is the common spread factor used as the QE shock variable.
    """
    countries = sorted(country_rates)
    if len(countries) < 2:
        raise BvarError("need at least two country spread series")
    reference_rate = np.asarray(reference_rate, dtype=float)
    cols = []
    for c in countries:
        r = np.asarray(country_rates[c], dtype=float)
        if r.shape != reference_rate.shape:
            raise BvarError(f"spread series {c}: index mismatch with the reference rate")
        cols.append(r - reference_rate)
    x = np.column_stack(cols)
    x = x - x.mean(axis=0)
    cov = x.T @ x / max(x.shape[0] - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[-1] <= 1e-12:
        raise BvarError("spread covariance is singular (constant spreads)")
    v = eigvecs[:, -1]
    if v.sum() < 0:
        v = -v
    return SpreadPca(
        series=x @ v,
        loadings=v,
        explained_share=float(eigvals[-1] / eigvals.sum()),
        countries=countries,
    )
