"""Parametric income and net-wealth distributions with random-walk MH fitting.

Income candidates have support on the positive half-line; the net-wealth
candidates are a shifted log-normal and a three-part mixture (reflected
Weibull below zero, point mass at zero, positive-branch distribution above).
Posterior sampling is componentwise random-walk Metropolis-Hastings with
step-size adaptation during burn-in only, so the post-burn-in chain keeps
detailed balance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln, ndtr, ndtri

from ._util import write_csv

FAMILY_TAGS = ("singh_maddala", "dagum", "shifted_lognormal", "negpos_mixture")
INCOME_FAMILIES = ("singh_maddala", "dagum")
WEALTH_FAMILIES = ("negpos_mixture", "shifted_lognormal")

# Display aliases used in the selection table.
FAMILY_LABELS = {
    "singh_maddala": "Singh Maddala",
    "dagum": "Dagum",
    "negpos_mixture": "Dagum 3",
    "shifted_lognormal": "Log Normal 3",
}

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Parameter or argument outside the family's domain."""


class DegenerateDataError(ValueError):
    """Sample carries no usable variation for the requested fit."""


class AdaptationError(RuntimeError):
    """The random-walk sampler stalled (every proposal rejected)."""


def _check_positive(**params):
    for name, v in params.items():
        if not np.isfinite(v) or v <= 0:
            raise DomainError(f"parameter {name} must be positive, got {v!r}")


@dataclass(frozen=True)
class SinghMaddala:
    """CDF 1 - [1 + (x/b)^a]^(-q) on x > 0."""

    a: float
    b: float
    q: float

    def __post_init__(self):
        _check_positive(a=self.a, b=self.b, q=self.q)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        z = np.power(x[pos] / self.b, self.a)
        out[pos] = -np.expm1(-self.q * np.log1p(z))
        return out if out.ndim else float(out)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, -np.inf)
        pos = x > 0
        lx = np.log(x[pos] / self.b)
        out[pos] = (
            math.log(self.a)
            + math.log(self.q)
            - math.log(self.b)
            + (self.a - 1.0) * lx
            - (self.q + 1.0) * np.log1p(np.exp(self.a * lx))
        )
        return out if out.ndim else float(out)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        return self.b * np.power(np.power(1.0 - u, -1.0 / self.q) - 1.0, 1.0 / self.a)

    def sample(self, n, rng):
        return self.quantile(rng.random(n))


@dataclass(frozen=True)
class Dagum:
    """CDF [1 + (x/c)^(-d)]^(-p) on x > 0."""

    c: float
    d: float
    p: float

    def __post_init__(self):
        _check_positive(c=self.c, d=self.d, p=self.p)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        z = np.power(x[pos] / self.c, -self.d)
        out[pos] = np.exp(-self.p * np.log1p(z))
        return out if out.ndim else float(out)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, -np.inf)
        pos = x > 0
        lx = np.log(x[pos] / self.c)
        out[pos] = (
            math.log(self.d)
            + math.log(self.p)
            + (self.d * self.p) * lx
            - np.log(x[pos])
            - (self.p + 1.0) * np.log1p(np.exp(self.d * lx))
        )
        return out if out.ndim else float(out)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        return self.c * np.power(np.power(u, -1.0 / self.p) - 1.0, -1.0 / self.d)

    def sample(self, n, rng):
        return self.quantile(rng.random(n))


@dataclass(frozen=True)
class ShiftedLogNormal:
    """Three-parameter log-normal: log(x - gamma) ~ N(mu, sigma^2), x > gamma."""

    mu: float
    sigma: float
    gamma: float

    def __post_init__(self):
        _check_positive(sigma=self.sigma)
        if not np.isfinite(self.mu):
            raise DomainError("mu must be finite")
        if self.gamma < 0 or not np.isfinite(self.gamma):
            raise DomainError("gamma must be finite and >= 0")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > self.gamma
        out[pos] = ndtr((np.log(x[pos] - self.gamma) - self.mu) / self.sigma)
        return out if out.ndim else float(out)

    def log_pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, -np.inf)
        pos = x > self.gamma
        lx = np.log(x[pos] - self.gamma)
        z = (lx - self.mu) / self.sigma
        out[pos] = -lx - math.log(self.sigma) - _LOG_SQRT_2PI - 0.5 * z * z
        return out if out.ndim else float(out)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        return self.gamma + np.exp(self.mu + self.sigma * ndtri(u))

    def sample(self, n, rng):
        return self.gamma + np.exp(self.mu + self.sigma * rng.standard_normal(n))


@dataclass(frozen=True)
class NegPosMixture:
    """Three-part net-wealth distribution.

    Negative branch: reflected Weibull with weight ``w_neg``; point mass
    ``w_zero`` at zero; positive branch Dagum with the remaining weight.
    The CDF jumps by exactly ``w_zero`` at the origin.
    """

    w_neg: float
    w_zero: float
    weibull_scale: float
    weibull_shape: float
    dagum_c: float
    dagum_d: float
    dagum_p: float

    def __post_init__(self):
        if self.w_neg < 0 or self.w_zero < 0 or self.w_neg + self.w_zero >= 1:
            raise DomainError("need w_neg, w_zero >= 0 and w_neg + w_zero < 1")
        _check_positive(
            weibull_scale=self.weibull_scale,
            weibull_shape=self.weibull_shape,
            dagum_c=self.dagum_c,
            dagum_d=self.dagum_d,
            dagum_p=self.dagum_p,
        )

    @property
    def kappa(self) -> float:
        return self.w_neg + self.w_zero

    @property
    def positive_branch(self) -> Dagum:
        return Dagum(self.dagum_c, self.dagum_d, self.dagum_p)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        neg = x < 0
        out[neg] = self.w_neg * np.exp(-np.power(-x[neg] / self.weibull_scale, self.weibull_shape))
        nonneg = ~neg
        out[nonneg] = self.kappa + (1.0 - self.kappa) * self.positive_branch.cdf(x[nonneg])
        return out if out.ndim else float(out)

    def atom_mass(self) -> float:
        return self.w_zero

    def log_pdf(self, x):
        """Log density of the continuous part. The atom at 0 has no density;
        use :meth:`atom_mass` for its probability."""
        x = np.asarray(x, dtype=float)
        if np.any(x == 0):
            raise DomainError("density undefined at the atom x=0; use atom_mass()")
        out = np.empty_like(x)
        neg = x < 0
        y = -x[neg] / self.weibull_scale
        out[neg] = (
            math.log(self.w_neg) if self.w_neg > 0 else -np.inf
        ) + (
            math.log(self.weibull_shape)
            - math.log(self.weibull_scale)
            + (self.weibull_shape - 1.0) * np.log(y)
            - np.power(y, self.weibull_shape)
        )
        pos = ~neg
        w_pos = 1.0 - self.kappa
        out[pos] = math.log(w_pos) + self.positive_branch.log_pdf(x[pos])
        return out if out.ndim else float(out)

    def quantile(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.zeros_like(u)
        lo = u < self.w_neg
        if np.any(lo):
            out[lo] = -self.weibull_scale * np.power(np.log(self.w_neg / u[lo]), 1.0 / self.weibull_shape)
        hi = u > self.kappa
        if np.any(hi):
            out[hi] = self.positive_branch.quantile((u[hi] - self.kappa) / (1.0 - self.kappa))
        return out if out.shape != (1,) else float(out[0])

    def sample(self, n, rng):
        return np.atleast_1d(self.quantile(rng.random(n)))

    def log_likelihood(self, x) -> float:
        """Joint log likelihood handling the atom at zero."""
        x = np.asarray(x, dtype=float)
        n_zero = int(np.sum(x == 0))
        ll = 0.0
        if n_zero:
            if self.w_zero <= 0:
                return -np.inf
            ll += n_zero * math.log(self.w_zero)
        rest = x[x != 0]
        if rest.size:
            ll += float(np.sum(self.log_pdf(rest)))
        return ll


def make_family(tag: str, params: np.ndarray, fixed: dict | None = None):
    fixed = fixed or {}
    if tag == "singh_maddala":
        return SinghMaddala(*params)
    if tag == "dagum":
        return Dagum(*params)
    if tag == "shifted_lognormal":
        return ShiftedLogNormal(*params)
    if tag == "negpos_mixture":
        w_neg = fixed.get("w_neg", 0.0)
        w_zero = fixed.get("w_zero", 0.0)
        names = fixed["sampled_names"]
        full = dict(fixed.get("frozen_params", {}))
        full.update(dict(zip(names, params)))
        return NegPosMixture(
            w_neg,
            w_zero,
            full["weibull_scale"],
            full["weibull_shape"],
            full["dagum_c"],
            full["dagum_d"],
            full["dagum_p"],
        )
    raise DomainError(f"unknown family tag {tag!r}")


# ---------------------------------------------------------------------------
# Priors


def _log_invgamma(x, alpha=2.1, beta=1.1):
    # mean beta/(alpha-1) ~ 1; weakly informative on positive scales
    return alpha * math.log(beta) - gammaln(alpha) - (alpha + 1.0) * np.log(x) - beta / x


def _log_normal(x, sd=10.0):
    return -_LOG_SQRT_2PI - math.log(sd) - 0.5 * (x / sd) ** 2


@dataclass
class _FamilySpec:
    names: list[str]
    transforms: list[str]  # 'log' | 'linear' | 'interval'
    bounds: list[tuple[float, float] | None]
    loglik: callable
    logprior: callable
    init: np.ndarray
    fixed: dict = field(default_factory=dict)
    k_params: int = 0  # parameter count entering BIC


def _spec_for(tag: str, data: np.ndarray) -> _FamilySpec:
    if tag in ("singh_maddala", "dagum"):
        if np.any(data <= 0):
            raise DomainError(f"{tag}: data must be strictly positive")
        med = float(np.median(data))
        init = np.array([1.5, med, 1.5]) if tag == "singh_maddala" else np.array([med, 1.5, 1.0])

        def loglik(theta, x=data, tag=tag):
            return float(np.sum(make_family(tag, theta).log_pdf(x)))

        def logprior(theta):
            return float(np.sum(_log_invgamma(theta)))

        return _FamilySpec(
            names=["a", "b", "q"] if tag == "singh_maddala" else ["c", "d", "p"],
            transforms=["log"] * 3,
            bounds=[None] * 3,
            loglik=loglik,
            logprior=logprior,
            init=init,
            k_params=3,
        )

    if tag == "shifted_lognormal":
        if np.any(data <= 0):
            raise DomainError(
                "shifted_lognormal: data must be strictly positive (apply a data shift first)"
            )
        xmin = float(np.min(data))
        eps = 1e-6 * max(1.0, xmin)
        hi = max(xmin - eps, eps)
        g0 = 0.5 * hi
        lx = np.log(data - g0)
        init = np.array([float(np.mean(lx)), float(np.std(lx)) or 0.5, g0])

        def loglik(theta, x=data):
            return float(np.sum(make_family("shifted_lognormal", theta).log_pdf(x)))

        def logprior(theta):
            # flat prior on gamma over [0, min(data) - eps]
            return float(_log_normal(theta[0]) + _log_invgamma(theta[1]))

        return _FamilySpec(
            names=["mu", "sigma", "gamma"],
            transforms=["linear", "log", "interval"],
            bounds=[None, None, (0.0, hi)],
            loglik=loglik,
            logprior=logprior,
            init=init,
            k_params=3,
        )

    if tag == "negpos_mixture":
        n = data.size
        neg = data[data < 0]
        pos = data[data > 0]
        w_neg = neg.size / n
        w_zero = float(np.sum(data == 0)) / n
        if pos.size == 0:
            raise DomainError("negpos_mixture: needs at least some positive observations")
        sampled = []
        init_list = []
        frozen = {}
        if neg.size:
            sampled += ["weibull_scale", "weibull_shape"]
            init_list += [float(np.mean(-neg)), 1.2]
        else:
            frozen.update(weibull_scale=1.0, weibull_shape=1.0)
        sampled += ["dagum_c", "dagum_d", "dagum_p"]
        init_list += [float(np.median(pos)), 1.5, 1.0]
        fixed = {
            "w_neg": w_neg,
            "w_zero": w_zero,
            "sampled_names": sampled,
            "frozen_params": frozen,
        }

        def loglik(theta, x=data, fixed=fixed):
            return make_family("negpos_mixture", theta, fixed).log_likelihood(x)

        def logprior(theta):
            return float(np.sum(_log_invgamma(theta)))

        # weights count as estimated parameters when the data identify them
        k = len(sampled) + (1 if w_neg > 0 else 0) + (1 if w_zero > 0 else 0)
        return _FamilySpec(
            names=sampled,
            transforms=["log"] * len(sampled),
            bounds=[None] * len(sampled),
            loglik=loglik,
            logprior=logprior,
            init=np.array(init_list),
            fixed=fixed,
            k_params=k,
        )

    raise DomainError(f"unknown family tag {tag!r}")


@dataclass
class MarginalPosterior:
    """Posterior draws for one fitted marginal family."""

    family_tag: str
    param_names: list[str]
    draws: np.ndarray  # (S, dim)
    loglik_trace: np.ndarray  # (S,)
    logpost_trace: np.ndarray  # (S,)
    acceptance_rate: float
    n: int
    data_shift: float = 0.0
    fixed: dict = field(default_factory=dict)
    k_params: int = 0

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def family_at(self, i: int):
        return make_family(self.family_tag, self.draws[i], self.fixed)

    def posterior_mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    def mean_family(self):
        return make_family(self.family_tag, self.posterior_mean(), self.fixed)

    def cdf_at(self, x, i: int):
        """Model CDF of raw data values under draw ``i`` (handles data shift)."""
        return self.family_at(i).cdf(np.asarray(x, dtype=float) + self.data_shift)

    @classmethod
    def from_fixed(cls, tag: str, params, n: int, fixed: dict | None = None, data_shift: float = 0.0, n_draws: int = 1):
        """Degenerate posterior concentrated at known parameter values."""
        params = np.asarray(params, dtype=float)
        draws = np.tile(params, (n_draws, 1))
        return cls(
            family_tag=tag,
            param_names=[f"p{i}" for i in range(params.size)],
            draws=draws,
            loglik_trace=np.zeros(n_draws),
            logpost_trace=np.zeros(n_draws),
            acceptance_rate=0.3,
            n=n,
            data_shift=data_shift,
            fixed=fixed or ({"w_neg": 0.0, "w_zero": 0.0, "sampled_names": [], "frozen_params": {}} if tag == "negpos_mixture" else {}),
            k_params=params.size,
        )

    def to_csv(self, path) -> None:
        write_csv(path, self.param_names, self.draws)

    def save(self, path) -> None:
        meta = {
            "family_tag": self.family_tag,
            "param_names": self.param_names,
            "acceptance_rate": self.acceptance_rate,
            "n": self.n,
            "data_shift": self.data_shift,
            "fixed": self.fixed,
            "k_params": self.k_params,
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        np.savez(
            path,
            draws=self.draws,
            loglik=self.loglik_trace,
            logpost=self.logpost_trace,
            meta=json.dumps(meta, sort_keys=True),
        )

    @classmethod
    def load(cls, path) -> "MarginalPosterior":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            return cls(
                family_tag=meta["family_tag"],
                param_names=list(meta["param_names"]),
                draws=z["draws"],
                loglik_trace=z["loglik"],
                logpost_trace=z["logpost"],
                acceptance_rate=meta["acceptance_rate"],
                n=meta["n"],
                data_shift=meta["data_shift"],
                fixed=meta["fixed"],
                k_params=meta["k_params"],
            )


def _to_unconstrained(theta, spec):
    phi = np.array(theta, dtype=float)
    for j, tr in enumerate(spec.transforms):
        if tr == "log":
            phi[j] = math.log(theta[j])
    return phi


def _from_unconstrained(phi, spec):
    theta = np.array(phi, dtype=float)
    for j, tr in enumerate(spec.transforms):
        if tr == "log":
            theta[j] = math.exp(phi[j])
    return theta


def _log_target(phi, spec):
    """Log posterior in proposal space (includes log-Jacobian of exp transforms)."""
    theta = _from_unconstrained(phi, spec)
    jac = 0.0
    for j, tr in enumerate(spec.transforms):
        if tr == "interval":
            lo, hi = spec.bounds[j]
            if not (lo <= theta[j] <= hi):
                return -np.inf, None
        elif tr == "log":
            jac += phi[j]
    ll = spec.loglik(theta)
    if not np.isfinite(ll):
        return -np.inf, None
    lp = ll + spec.logprior(theta) + jac
    if not np.isfinite(lp):
        return -np.inf, None
    return lp, ll


def rwmh_fit(
    data,
    family_tag: str,
    chain: "ChainConfig | None" = None,
    seed: int = 0,
    data_shift: float | None = None,
    target_acceptance: float = 0.3,
) -> MarginalPosterior:
    """Fit one marginal family by componentwise random-walk MH.

    ``data_shift`` is added to the data before fitting (used to bring
    negative net wealth into the shifted log-normal's support); ``None``
    picks it automatically for the shifted log-normal, 0 otherwise.
    Deterministic given ``seed``.
    """
    from .data import ChainConfig  # local import to avoid a cycle

    data = np.asarray(data, dtype=float)
    if data.size < 50:
        raise DegenerateDataError(f"need n >= 50 observations, got {data.size}")
    if not np.all(np.isfinite(data)):
        raise DomainError("data must be finite")
    if np.ptp(data) == 0:
        raise DegenerateDataError("constant sample: nothing to fit")
    if data_shift is None:
        if family_tag == "shifted_lognormal" and np.min(data) <= 0:
            data_shift = float(-np.min(data) + 1e-3 * max(1.0, float(np.std(data))))
        else:
            data_shift = 0.0
    shifted = data + data_shift

    chain = chain or ChainConfig()
    chain.validate("marginal chain")
    spec = _spec_for(family_tag, shifted)
    dim = len(spec.names)
    rng = np.random.Generator(np.random.PCG64(seed))

    phi = _to_unconstrained(spec.init, spec)
    lp, ll = _log_target(phi, spec)
    if not np.isfinite(lp):
        # nudge the initial point until the posterior is finite
        for _ in range(100):
            phi = phi + 0.25 * rng.standard_normal(dim)
            lp, ll = _log_target(phi, spec)
            if np.isfinite(lp):
                break
        else:
            raise AdaptationError(f"{family_tag}: could not find a valid starting point")

    step = np.full(dim, 0.25)
    n_keep = (chain.iterations - chain.burn_in + chain.thin - 1) // chain.thin
    draws = np.empty((n_keep, dim))
    loglik_trace = np.empty(n_keep)
    logpost_trace = np.empty(n_keep)
    kept = 0
    accepted_post = 0
    proposed_post = 0
    consecutive_rejects = 0
    stall_limit = 10 * dim * dim  # 10*dim full sweeps with zero acceptances

    for t in range(chain.iterations):
        in_burn = t < chain.burn_in
        acc_sweep = np.zeros(dim)
        for j in range(dim):
            prop = phi.copy()
            prop[j] += step[j] * rng.standard_normal()
            lp_new, ll_new = _log_target(prop, spec)
            if math.log(rng.random()) < lp_new - lp:
                phi, lp, ll = prop, lp_new, ll_new
                acc_sweep[j] = 1.0
                consecutive_rejects = 0
            else:
                consecutive_rejects += 1
                if consecutive_rejects >= stall_limit:
                    raise AdaptationError(
                        f"{family_tag}: no proposal accepted for {stall_limit} consecutive steps"
                    )
            if not in_burn:
                proposed_post += 1
                accepted_post += int(acc_sweep[j])
        if in_burn:
            # Robbins-Monro step-size update, frozen after burn-in
            gain = 1.0 / math.sqrt(1.0 + t / 10.0)
            step *= np.exp(gain * (acc_sweep - target_acceptance))
            step = np.clip(step, 1e-4, 10.0)
        else:
            k = t - chain.burn_in
            if k % chain.thin == 0:
                draws[kept] = _from_unconstrained(phi, spec)
                loglik_trace[kept] = ll
                logpost_trace[kept] = lp
                kept += 1

    acc_rate = accepted_post / max(proposed_post, 1)
    return MarginalPosterior(
        family_tag=family_tag,
        param_names=list(spec.names),
        draws=draws[:kept],
        loglik_trace=loglik_trace[:kept],
        logpost_trace=logpost_trace[:kept],
        acceptance_rate=acc_rate,
        n=data.size,
        data_shift=data_shift,
        fixed=spec.fixed,
        k_params=spec.k_params,
    )


def information_criteria(post: MarginalPosterior, data) -> tuple[float, float]:
    """(BIC, DIC) for a fitted marginal; lower is better for both.

    BIC uses the best log likelihood seen along the chain as the ML proxy;
    DIC is 2*mean(deviance) - deviance(posterior mean).
    """
    if post.n_draws == 0:
        raise ValueError("empty posterior")
    data = np.asarray(data, dtype=float) + post.data_shift
    max_ll = float(np.max(post.loglik_trace))
    bic = post.k_params * math.log(post.n) - 2.0 * max_ll
    mean_dev = float(np.mean(-2.0 * post.loglik_trace))
    mean_fam = post.mean_family()
    if post.family_tag == "negpos_mixture":
        ll_mean = mean_fam.log_likelihood(data)
    else:
        ll_mean = float(np.sum(mean_fam.log_pdf(data)))
    dic = 2.0 * mean_dev - (-2.0 * ll_mean)
    return bic, dic


@dataclass
class SelectionEntry:
    family_tag: str
    bic: float
    dic: float
    bic_best: bool = False
    dic_best: bool = False


def select_family(entries: list[SelectionEntry]) -> list[SelectionEntry]:
    """Mark the per-criterion minima within one candidate group."""
    if not entries:
        return entries
    bic_min = min(e.bic for e in entries)
    dic_min = min(e.dic for e in entries)
    for e in entries:
        e.bic_best = e.bic == bic_min
        e.dic_best = e.dic == dic_min
    return entries


def selection_table_rows(by_country: dict[str, list[SelectionEntry]]):
    """Long-format rows (country, model, dic, bic, dic_best, bic_best)."""
    rows = []
    for country in sorted(by_country):
        for e in by_country[country]:
            rows.append(
                (
                    country,
                    FAMILY_LABELS.get(e.family_tag, e.family_tag),
                    e.dic,
                    e.bic,
                    int(e.dic_best),
                    int(e.bic_best),
                )
            )
    return rows
