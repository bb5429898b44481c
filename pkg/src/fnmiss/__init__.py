"""Mean estimation for functional outcomes that are missing at random.

Outcome regression and double robust estimators of a mean curve, their
plug-in asymptotic covariances, simultaneous and pointwise confidence bands,
and a Monte Carlo harness for coverage studies.
"""

from fnmiss.bands import (
    Band,
    RoughnessProfile,
    build_pcb,
    build_scb,
    covers,
    critical_constant,
    critical_fair,
    equal_partition,
    roughness,
)
from fnmiss.estimators import (
    DRWeights,
    cov_dr,
    cov_or,
    dr_weights,
    estimate_cc,
    estimate_dr,
    estimate_or,
)
from fnmiss.exceptions import *  # noqa: F401,F403
from fnmiss.model import (
    CovariateMoments,
    Dataset,
    Grid,
    MeanEstimate,
    covariate_moments,
    validate_dataset,
)
from fnmiss.nuisance import (
    OutcomeModel,
    PropensityModel,
    fit_logistic,
    fit_ols,
    inverse_logit,
    predict,
    propensities,
)
from fnmiss.simulation import (
    MaternParams,
    MVTParams,
    SimConfig,
    StudyResult,
    gen_dataset,
    run_grid,
    run_replication,
    run_study,
)

__version__ = "0.1.0"
