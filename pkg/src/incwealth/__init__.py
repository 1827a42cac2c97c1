"""Joint income/net-wealth distribution toolkit.

Parametric marginals with MCMC fitting, semiparametric copula-functional
inference, shrinkage VAR shock identification, tree-ensemble imputation and
a household microsimulation that tracks inequality and dependence metrics.
"""

from .data import (
    HouseholdPanel,
    HouseholdRecord,
    MacroPanel,
    PersonRecord,
    RunConfig,
    load_households,
    load_macro_panel,
)
from .marginals import (
    Dagum,
    MarginalPosterior,
    NegPosMixture,
    ShiftedLogNormal,
    SinghMaddala,
    information_criteria,
    rwmh_fit,
)
from .etel import DependencePosterior, abscop_sample, etel_loglik, moment_for
from .metrics import (
    MetricReport,
    bivariate_gini,
    compute_report,
    gini,
    sample_spearman,
    sample_tail,
)
from .bvar import IrfSet, VarSpec, gibbs_fit, irf, pca_spread
from .bart import BartConfig, Ensemble, PersonEncoder, fit_probit, fit_regression
from .microsim import (
    DirectDeltas,
    IrfDeltas,
    apply_direct,
    apply_employment_transition,
    peak_response,
    run_simulation,
)
from .regression import (
    CountryFeatureTable,
    build_feature_table,
    pairwise_regress,
    peak_response_regressions,
    standardize,
)

__version__ = "0.1.0"
