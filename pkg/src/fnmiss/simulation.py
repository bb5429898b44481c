"""Monte Carlo design and replication study for functional mean estimation.

The data-generating process has six covariates (an intercept, a trivariate
normal block, a Bernoulli and a binomial covariate), smooth coefficient
functions on [0, 1], Matern or multivariate-t error curves, and a logistic
missingness mechanism. Each replicate estimates the mean curve with the
outcome regression, double robust and complete-case estimators and records
whether the simultaneous and pointwise bands cover the true mean.

Randomness is derived per replicate from the master seed and the replicate
index, so a study gives the same numbers however its replicates are
scheduled.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from fnmiss.bands import Band, build_pcb, build_scb, covers
from fnmiss.estimators import estimate_cc, estimate_dr, estimate_or
from fnmiss.exceptions import EstimationError, FailureRateExceeded, NonPSD, ValidationError
from fnmiss.model import Dataset, Grid, MeanEstimate, covariate_moments
from fnmiss.nuisance import fit_logistic, fit_ols, inverse_logit

log = logging.getLogger(__name__)

__all__ = [
    "MaternParams",
    "MVTParams",
    "SimConfig",
    "SimulatedData",
    "ReplicateRecord",
    "StudyResult",
    "matern_cov",
    "sample_gaussian",
    "sample_mvt",
    "random_orthonormal",
    "gen_covariates",
    "true_beta",
    "true_mu",
    "gen_dataset",
    "replicate_data",
    "run_replication",
    "run_study",
    "run_grid",
    "ESTIMATORS",
    "BAND_KINDS",
    "MISSPEC_SCENARIOS",
    "ERROR_KINDS",
]

ErrorKind = Literal["gaussian", "t"]
Misspec = Literal["none", "outcome", "missingness", "both"]

ESTIMATORS = ("OR", "DR", "CC")
BAND_KINDS = ("SCB", "PCB")
MISSPEC_SCENARIOS = ("none", "outcome", "missingness", "both")
ERROR_KINDS = ("gaussian", "t")

COVARIATE_MEAN = np.array([1.0, -2.0, 4.0, 0.0, 0.2, 1.8])
NORMAL_BLOCK_MEAN = np.array([-2.0, 4.0, 0.0])
NORMAL_BLOCK_COV = np.array(
    [
        [1.0, 0.2, 0.3],
        [0.2, 2.0, 0.6],
        [0.3, 0.6, 0.4],
    ]
)
GAMMA = np.array([0.3, -0.3, -0.3, -0.3, -0.3, -0.3])
# x3 and x5 (1-indexed) are left out of misspecified working models
OMITTED_COVARIATES = (2, 4)

_NORMAL_BLOCK_CHOL = np.linalg.cholesky(NORMAL_BLOCK_COV)


@dataclass(frozen=True)
class MaternParams:
    kappa_smooth: float = 1.5
    phi: float = 0.1
    variance: float = 1.0

    def __post_init__(self):
        if not (self.kappa_smooth > 0 and self.phi > 0 and self.variance > 0):
            raise ValidationError("Matern parameters must be positive")


@dataclass(frozen=True, eq=False)
class MVTParams:
    """Multivariate t errors with scale matrix ``Delta = Q diag(Lambda) Q'``."""

    nu: float
    Lambda_diag: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        if not self.nu > 2:
            raise ValidationError("nu must exceed 2 for a finite covariance")
        T = len(self.Lambda_diag)
        if self.Q.shape != (T, T):
            raise ValidationError("Q must be T x T")
        if np.max(np.abs(self.Q.T @ self.Q - np.eye(T))) > 1e-10:
            raise ValidationError("Q is not orthonormal")

    @classmethod
    def default(cls, T: int, rng: np.random.Generator, nu: float = 4.0) -> "MVTParams":
        return cls(nu=nu, Lambda_diag=np.linspace(1.0, 3.0, T), Q=random_orthonormal(T, rng))

    @property
    def Delta(self) -> np.ndarray:
        return (self.Q * self.Lambda_diag) @ self.Q.T

    @property
    def covariance(self) -> np.ndarray:
        return self.Delta * self.nu / (self.nu - 2.0)


@dataclass(frozen=True)
class SimConfig:
    """One simulation scenario.

    ``calibrate_missingness`` flips the sign of the logistic linear
    predictor, which turns the roughly 31% observation rate produced by the
    literal coefficients into roughly 69%.
    """

    n: int
    T: int = 50
    reps: int = 1000
    error_kind: ErrorKind = "gaussian"
    misspec: Misspec = "none"
    alpha: float = 0.05
    seed: int = 20240101
    partition: Optional[Tuple[Tuple[float, float], ...]] = None
    calibrate_missingness: bool = False
    redraw_q_per_replicate: bool = False
    matern: MaternParams = field(default_factory=MaternParams)
    nu: float = 4.0

    def __post_init__(self):
        if self.error_kind not in ERROR_KINDS:
            raise ValidationError(f"error_kind must be one of {ERROR_KINDS}")
        if self.misspec not in MISSPEC_SCENARIOS:
            raise ValidationError(f"misspec must be one of {MISSPEC_SCENARIOS}")
        if self.n < len(COVARIATE_MEAN) + 2:
            raise ValidationError("n must be at least p + 2 = 8")
        if self.reps < 1 or self.T < 2:
            raise ValidationError("reps must be >= 1 and T >= 2")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if self.partition is not None:
            object.__setattr__(
                self, "partition", tuple((float(a), float(b)) for a, b in self.partition)
            )

    @property
    def outcome_drop(self) -> Tuple[int, ...]:
        return OMITTED_COVARIATES if self.misspec in ("outcome", "both") else ()

    @property
    def propensity_drop(self) -> Tuple[int, ...]:
        return OMITTED_COVARIATES if self.misspec in ("missingness", "both") else ()

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


# --- building blocks ---------------------------------------------------------


def matern_cov(grid: Grid, params: MaternParams = MaternParams()) -> np.ndarray:
    """Matern covariance matrix on the grid.

    Uses ``(1 + d/phi) exp(-d/phi)`` for smoothness 3/2 and the Bessel form
    otherwise; the diagonal is the variance.
    """
    t = grid.points
    r = np.abs(t[:, None] - t[None, :]) / params.phi
    k = params.kappa_smooth
    if k == 1.5:
        corr = (1.0 + r) * np.exp(-r)
    else:
        with np.errstate(invalid="ignore"):
            corr = r**k * special.kv(k, r) / (2.0 ** (k - 1.0) * special.gamma(k))
        corr[r == 0] = 1.0
    return params.variance * corr


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    top = max(float(w.max()), 0.0)
    if w.min() < -1e-8 * max(top, 1.0):
        raise NonPSD(f"covariance has eigenvalue {w.min():.3g}")
    return V * np.sqrt(np.clip(w, 0.0, None))


def sample_gaussian(cov, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` zero-mean Gaussian rows with covariance ``cov``."""
    L = _psd_factor(cov)
    return rng.standard_normal((count, L.shape[0])) @ L.T


def _mvt_draw(factor: np.ndarray, nu: float, count: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((count, factor.shape[0])) @ factor.T
    w = rng.chisquare(nu, size=count)
    return z * np.sqrt(nu / w)[:, None]


def sample_mvt(params: MVTParams, count: int, rng: np.random.Generator) -> np.ndarray:
    """Multivariate t rows: ``Delta^{1/2} z * sqrt(nu / w)`` with ``w ~ chi2(nu)``."""
    factor = params.Q * np.sqrt(params.Lambda_diag)
    return _mvt_draw(factor, params.nu, count, rng)


def random_orthonormal(T: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthonormal matrix from the QR factor of a Gaussian matrix."""
    A = rng.standard_normal((T, T))
    Q, R = np.linalg.qr(A)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    X = np.empty((n, 6))
    X[:, 0] = 1.0
    X[:, 1:4] = NORMAL_BLOCK_MEAN + rng.standard_normal((n, 3)) @ _NORMAL_BLOCK_CHOL.T
    X[:, 4] = rng.binomial(1, 0.2, size=n)
    X[:, 5] = rng.binomial(3, 0.6, size=n)
    return X


def true_beta(grid: Grid) -> np.ndarray:
    """Coefficient functions evaluated on the grid, shape (6, T)."""
    t = grid.points
    return np.vstack(
        [
            40.0 - t,
            2.0 * np.sin(4.0 * t),
            3.0 - np.cos(5.0 * t),
            1.5 * np.log(5.0 * t + 0.1),
            0.5 * np.sin(2.0 * t),
            2.0 - 1.5 * t + 1.3 * t**2,
        ]
    )


def true_mu(grid: Grid) -> np.ndarray:
    return COVARIATE_MEAN @ true_beta(grid)


# --- datasets and replicates -------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimulatedData:
    dataset: Dataset
    Y_full: np.ndarray
    mu_true: np.ndarray


class _Design:
    """Per-study constants: grid, coefficients, truth and the error factor."""

    def __init__(self, cfg: SimConfig, mvt: Optional[MVTParams] = None):
        self.cfg = cfg
        self.grid = Grid.equidistant(cfg.T)
        self.beta = true_beta(self.grid)
        self.mu = true_mu(self.grid)
        self.gamma = -GAMMA if cfg.calibrate_missingness else GAMMA
        if cfg.error_kind == "gaussian":
            self.factor = _psd_factor(matern_cov(self.grid, cfg.matern))
            self.mvt = None
        else:
            if mvt is None and not cfg.redraw_q_per_replicate:
                mvt = MVTParams.default(cfg.T, _q_rng(cfg), cfg.nu)
            self.mvt = mvt
            self.factor = None if mvt is None else mvt.Q * np.sqrt(mvt.Lambda_diag)

    def errors(self, count: int, rng: np.random.Generator, index: int) -> np.ndarray:
        cfg = self.cfg
        if cfg.error_kind == "gaussian":
            return rng.standard_normal((count, cfg.T)) @ self.factor.T
        factor = self.factor
        if cfg.redraw_q_per_replicate:
            mvt = MVTParams.default(cfg.T, _q_rng(cfg, index), cfg.nu)
            factor = mvt.Q * np.sqrt(mvt.Lambda_diag)
        return _mvt_draw(factor, cfg.nu, count, rng)


def _replicate_rng(cfg: SimConfig, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0, index)))


def _q_rng(cfg: SimConfig, index: Optional[int] = None) -> np.random.Generator:
    key = (1,) if index is None else (1, index)
    return np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=key))


def _generate(design: _Design, rng: np.random.Generator, index: int = 0) -> SimulatedData:
    cfg = design.cfg
    X = gen_covariates(cfg.n, rng)
    E = design.errors(cfg.n, rng, index)
    Y = X @ design.beta + E
    Z = (rng.random(cfg.n) < inverse_logit(X @ design.gamma)).astype(np.int8)
    ds = Dataset.from_arrays(X, Z, Y, design.grid)
    Y.setflags(write=False)
    return SimulatedData(dataset=ds, Y_full=Y, mu_true=design.mu)


def gen_dataset(cfg: SimConfig, rng: np.random.Generator) -> SimulatedData:
    """Draw one dataset; the returned ``dataset`` has missing rows masked."""
    return _generate(_Design(cfg), rng)


@dataclass(frozen=True, eq=False)
class ReplicateRecord:
    index: int
    estimates: Dict[str, MeanEstimate]
    bands: Dict[Tuple[str, str], Band]
    covered: Dict[Tuple[str, str], bool]
    errors: Dict[str, np.ndarray]
    observed_fraction: float
    failure: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.failure is not None


def _replicate(design: _Design, index: int) -> ReplicateRecord:
    cfg = design.cfg
    rng = _replicate_rng(cfg, index)
    sim = _generate(design, rng, index)
    ds = sim.dataset
    frac = ds.n_obs / ds.n
    try:
        cm = covariate_moments(ds)
        om = fit_ols(ds, cfg.outcome_drop)
        pm = fit_logistic(ds, cfg.propensity_drop)
        estimates = {
            "OR": estimate_or(ds, om, cm),
            "DR": estimate_dr(ds, om, pm, cm),
            "CC": estimate_cc(ds),
        }
        bands = {}
        for name, est in estimates.items():
            bands[(name, "SCB")] = build_scb(est, cfg.alpha, cfg.partition)
            bands[(name, "PCB")] = build_pcb(est, cfg.alpha)
    except EstimationError as exc:
        log.debug("replicate %d failed: %r", index, exc)
        return ReplicateRecord(
            index=index,
            estimates={},
            bands={},
            covered={},
            errors={},
            observed_fraction=frac,
            failure=type(exc).__name__,
        )
    covered = {key: covers(band, sim.mu_true) for key, band in bands.items()}
    errors = {name: est.mu_hat - sim.mu_true for name, est in estimates.items()}
    return ReplicateRecord(
        index=index,
        estimates=estimates,
        bands=bands,
        covered=covered,
        errors=errors,
        observed_fraction=frac,
    )


def replicate_data(cfg: SimConfig, rep_seed: int) -> SimulatedData:
    """The dataset that replicate ``rep_seed`` of the study analyses."""
    return _generate(_Design(cfg), _replicate_rng(cfg, rep_seed), rep_seed)


def run_replication(cfg: SimConfig, rep_seed: int) -> ReplicateRecord:
    """Run replicate number ``rep_seed`` of the study described by ``cfg``.

    The replicate's random stream depends only on ``cfg.seed`` and
    ``rep_seed``, so the same pair always reproduces the same record.
    """
    return _replicate(_Design(cfg), rep_seed)


# --- study aggregation -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StudyResult:
    """Aggregated results of one scenario.

    ``coverage`` maps ``(estimator, band kind)`` to a percentage over the
    successful replicates. Curves are indexed by estimator name.
    """

    config: SimConfig
    reps: int
    n_failed: int
    failures: Dict[str, int]
    coverage: Dict[Tuple[str, str], float]
    bias: Dict[str, np.ndarray]
    est_variance: Dict[str, np.ndarray]
    mc_variance: Dict[str, np.ndarray]
    mse: Dict[str, np.ndarray]
    mean_half_width: Dict[Tuple[str, str], np.ndarray]
    observed_fraction: float
    grid: Grid

    @property
    def n_used(self) -> int:
        return self.reps - self.n_failed

    def sup_bias(self, estimator: str) -> float:
        return float(np.max(np.abs(self.bias[estimator])))


def _summary(rec: ReplicateRecord) -> dict:
    if rec.failed:
        return {"index": rec.index, "failure": rec.failure, "frac": rec.observed_fraction}
    return {
        "index": rec.index,
        "failure": None,
        "frac": rec.observed_fraction,
        "mu": {k: np.asarray(e.mu_hat) for k, e in rec.estimates.items()},
        "var": {k: np.diag(e.C_hat) / e.n for k, e in rec.estimates.items()},
        "covered": dict(rec.covered),
        "half": {k: np.asarray(b.half_width) for k, b in rec.bands.items()},
    }


def _run_chunk(cfg: SimConfig, indices: Sequence[int], mvt: Optional[MVTParams]) -> List[dict]:
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        design = _Design(cfg, mvt)
        return [_summary(_replicate(design, i)) for i in indices]


def _aggregate(cfg: SimConfig, design: _Design, summaries: List[dict]) -> StudyResult:
    summaries = sorted(summaries, key=lambda s: s["index"])
    ok = [s for s in summaries if s["failure"] is None]
    failures: Dict[str, int] = {}
    for s in summaries:
        if s["failure"] is not None:
            failures[s["failure"]] = failures.get(s["failure"], 0) + 1
    mu = design.mu
    T = cfg.T
    coverage, bias, est_var, mc_var, mse, half = {}, {}, {}, {}, {}, {}
    for name in ESTIMATORS:
        if ok:
            M = np.stack([s["mu"][name] for s in ok])
            V = np.stack([s["var"][name] for s in ok])
            b = M.mean(axis=0) - mu
            v = M.var(axis=0)
            ev = V.mean(axis=0)
        else:
            b = v = ev = np.full(T, np.nan)
        bias[name], mc_var[name], est_var[name] = b, v, ev
        mse[name] = b**2 + v
        for kind in BAND_KINDS:
            key = (name, kind)
            if ok:
                coverage[key] = 100.0 * float(np.mean([s["covered"][key] for s in ok]))
                half[key] = np.stack([s["half"][key] for s in ok]).mean(axis=0)
            else:
                coverage[key] = math.nan
                half[key] = np.full(T, np.nan)
    frac = float(np.mean([s["frac"] for s in summaries]))
    return StudyResult(
        config=cfg,
        reps=len(summaries),
        n_failed=len(summaries) - len(ok),
        failures=failures,
        coverage=coverage,
        bias=bias,
        est_variance=est_var,
        mc_variance=mc_var,
        mse=mse,
        mean_half_width=half,
        observed_fraction=frac,
        grid=design.grid,
    )


def run_study(cfg: SimConfig, threads: int = 1, max_failure_rate: float = 0.01) -> StudyResult:
    """Run ``cfg.reps`` replicates and aggregate coverage and error curves.

    ``threads`` worker processes share the replicates; the result does not
    depend on their number.

    Raises
    ------
    FailureRateExceeded
        More than ``max_failure_rate`` of the replicates failed. The
        aggregated result over the remaining replicates is attached as
        ``exc.result``.
    """
    design = _Design(cfg)
    indices = list(range(cfg.reps))
    threads = max(1, int(threads))
    if threads == 1 or cfg.reps == 1:
        summaries = _run_chunk(cfg, indices, design.mvt)
    else:
        chunks = [indices[k::threads] for k in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(_run_chunk, [cfg] * threads, chunks, [design.mvt] * threads)
            summaries = [s for part in parts for s in part]
    result = _aggregate(cfg, design, summaries)
    if result.n_failed > max_failure_rate * result.reps:
        exc = FailureRateExceeded(
            f"{result.n_failed} of {result.reps} replicates failed: {result.failures}"
        )
        exc.result = result
        raise exc
    return result


def run_grid(
    base: SimConfig,
    ns: Sequence[int] = (250, 500, 1000, 3000),
    misspecs: Sequence[str] = MISSPEC_SCENARIOS,
    threads: int = 1,
    max_failure_rate: float = 0.01,
) -> Dict[Tuple[int, str], StudyResult]:
    """Run every ``(n, misspec)`` combination with otherwise identical settings.

    All scenarios share the master seed, so scenarios with the same ``n`` see
    the same simulated datasets.
    """
    out = {}
    for n in ns:
        for m in misspecs:
            cfg = base.replace(n=n, misspec=m)
            log.info("running n=%d misspec=%s (%d reps)", n, m, cfg.reps)
            out[(n, m)] = run_study(cfg, threads=threads, max_failure_rate=max_failure_rate)
    return out
