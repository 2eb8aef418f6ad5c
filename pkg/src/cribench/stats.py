"""Censoring-aware statistics for output-length data.

Implements cell summaries, Welch's unequal-variances t-test, BCa bootstrap
confidence intervals (Efron & Tibshirani 1993, ch. 14), maximum-likelihood
fitting of a right-censored normal, the below-ceiling truncated-normal mean,
and continuous two-piece linear threshold fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy import stats as sps

from .errors import (
    ConvergenceFailureError,
    DegenerateTestError,
    EmptyCellError,
    InsufficientDataError,
    NoBreakpointError,
    UnidentifiableError,
)
from .trials import CellKey, TrialRecord


@dataclass(frozen=True)
class CellSummary:
    """Sample statistics for one (model, benchmark, ratio) cell."""

    cell: CellKey
    n_obs: int
    mean_tout: float
    sd: float
    cv: float
    ceiling_fraction: float
    pass1_rate: float | None
    mean_tin: float


@dataclass(frozen=True)
class WelchResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float


@dataclass(frozen=True)
class BootstrapCI:
    """BCa interval; ``degenerate`` flags a collapsed (point) interval."""

    statistic: float
    lower: float
    upper: float
    level: float = 0.95
    resamples: int = 10_000
    seed: int = 0
    degenerate: bool = False


@dataclass(frozen=True)
class TobitFit:
    """Latent-normal estimates under right-censoring at ``ceiling``."""

    mu: float
    sigma: float
    ceiling: float
    censored_fraction: float
    log_likelihood: float
    alpha_t: float


@dataclass(frozen=True)
class ThresholdFit:
    """Continuous two-piece linear fit with a break at ``tau_hat``."""

    tau_hat: float
    intercept: float
    slope_low: float
    slope_high: float
    rss: float
    degenerate: bool = False


def summarize_cell(records: list[TrialRecord]) -> CellSummary:
    """Mean, sample SD (n-1), CV, ceiling fraction, and pass@1 rate for one cell."""
    if not records:
        raise EmptyCellError("no records for cell")
    cell = CellKey(records[0].model, records[0].benchmark, records[0].ratio)
    for rec in records:
        if (rec.model, rec.benchmark, rec.ratio) != (cell.model, cell.benchmark, cell.ratio):
            raise ValueError(f"records span multiple cells: {cell} vs {rec.model}/{rec.benchmark}/{rec.ratio}")
    touts = np.array([rec.output_tokens for rec in records], dtype=float)
    mean = float(touts.mean())
    sd = float(touts.std(ddof=1)) if touts.size > 1 else 0.0
    if sd == 0.0:
        cv = 0.0
    elif mean == 0.0:
        cv = math.inf
    else:
        cv = sd / mean
    with_pass1 = [rec.pass1 for rec in records if rec.pass1 is not None]
    return CellSummary(
        cell=cell,
        n_obs=len(records),
        mean_tout=mean,
        sd=sd,
        cv=cv,
        ceiling_fraction=sum(rec.hit_ceiling for rec in records) / len(records),
        pass1_rate=sum(with_pass1) / len(with_pass1) if with_pass1 else None,
        mean_tin=float(np.mean([rec.input_tokens for rec in records])),
    )


def welch_t(sample_a, sample_b) -> WelchResult:
    """Welch's two-sided t-test without the equal-variance assumption.

    Degrees of freedom follow Welch-Satterthwaite. When both samples have
    zero variance and equal means the test is vacuous and returns
    (t=0, p=1) with pooled degrees of freedom; zero variance with unequal
    means has no finite statistic and raises DegenerateTestError.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise InsufficientDataError("each sample needs at least 2 observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if va == 0.0 and vb == 0.0:
        if a.mean() == b.mean():
            return WelchResult(0.0, float(a.size + b.size - 2), 1.0)
        raise DegenerateTestError("both samples have zero variance with unequal means")
    se2 = va / a.size + vb / b.size
    t = float((a.mean() - b.mean()) / math.sqrt(se2))
    df = se2**2 / ((va / a.size) ** 2 / (a.size - 1) + (vb / b.size) ** 2 / (b.size - 1))
    p = float(2.0 * sps.t.sf(abs(t), df))
    return WelchResult(t, float(df), p)


def bootstrap_bca(sample, statistic=np.mean, resamples: int = 10_000,
                  level: float = 0.95, seed: int = 0) -> BootstrapCI:
    """Bias-corrected and accelerated bootstrap CI for ``statistic(sample)``.

    Bias correction z0 comes from the fraction of resample statistics below
    the observed value; acceleration comes from the jackknife third-moment
    formula. Resampling is driven by a fresh ``default_rng(seed)``, so a
    fixed seed reproduces the interval bit-exactly.
    """
    x = np.asarray(sample, dtype=float)
    if x.size < 2:
        raise InsufficientDataError("bootstrap needs at least 2 observations")
    if resamples < 100:
        raise ValueError("resamples must be >= 100")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")

    theta = float(statistic(x))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    boot = np.array([statistic(x[row]) for row in idx], dtype=float)

    if np.ptp(boot) == 0.0:
        return BootstrapCI(theta, float(boot[0]), float(boot[0]), level, resamples, seed,
                           degenerate=True)

    # z0: clip the below-theta proportion away from {0, 1} so ppf stays finite
    prop = np.clip((boot < theta).sum() / resamples, 0.5 / resamples, 1.0 - 0.5 / resamples)
    z0 = sps.norm.ppf(prop)

    jack = np.array([statistic(np.delete(x, i)) for i in range(x.size)], dtype=float)
    dev = jack.mean() - jack
    denom = float((dev**2).sum()) ** 1.5
    accel = float((dev**3).sum()) / (6.0 * denom) if denom > 0.0 else 0.0

    z_lo = sps.norm.ppf((1.0 - level) / 2.0)
    z_hi = -z_lo
    alpha_lo = sps.norm.cdf(z0 + (z0 + z_lo) / (1.0 - accel * (z0 + z_lo)))
    alpha_hi = sps.norm.cdf(z0 + (z0 + z_hi) / (1.0 - accel * (z0 + z_hi)))
    lower, upper = np.quantile(boot, [alpha_lo, alpha_hi])
    return BootstrapCI(theta, float(lower), float(upper), level, resamples, seed)


def censored_normal_negll(params, uncensored, n_censored: int, ceiling: float):
    """Mean negative log-likelihood and gradient in (mu, log sigma) coordinates.

    Normalizing by the observation count keeps the objective and gradient
    O(1) so the 1e-8 gradient tolerance is meaningful at any sample size.
    """
    mu, s = params
    sigma = math.exp(s)
    n = uncensored.size + n_censored
    z = (uncensored - mu) / sigma
    ll = float(np.sum(sps.norm.logpdf(z))) - uncensored.size * s
    g_mu = float(np.sum(z)) / sigma
    g_s = float(np.sum(z**2)) - uncensored.size
    if n_censored:
        alpha = (ceiling - mu) / sigma
        ll += n_censored * float(sps.norm.logsf(alpha))
        hazard = math.exp(sps.norm.logpdf(alpha) - sps.norm.logsf(alpha))
        g_mu += n_censored * hazard / sigma
        g_s += n_censored * hazard * alpha
    return -ll / n, np.array([-g_mu / n, -g_s / n])


def tobit_fit(observations, ceiling: float, gtol: float = 1e-8) -> TobitFit:
    """Censored-normal MLE for right-censored data.

    Observations equal to ``ceiling`` are censored; values above it are
    rejected. Optimizes in (mu, log sigma) for unconstrained search, starting
    from the uncensored mean inflated by the censored fraction. With no
    censored points this reduces to the ordinary normal MLE.
    """
    y = np.asarray(observations, dtype=float)
    if np.any(y > ceiling):
        raise ValueError("observations above the ceiling are impossible under right-censoring")
    censored = y == ceiling
    uncensored = y[~censored]
    n_cens = int(censored.sum())
    if uncensored.size == 0:
        raise UnidentifiableError("all observations are censored")
    if uncensored.size < 5:
        raise InsufficientDataError("need at least 5 uncensored observations")

    if n_cens == 0:
        mu = float(uncensored.mean())
        sigma = float(uncensored.std(ddof=0))
        ll = float(np.sum(sps.norm.logpdf((uncensored - mu) / sigma)) - uncensored.size * math.log(sigma))
        return TobitFit(mu, sigma, ceiling, 0.0, ll, (ceiling - mu) / sigma)

    frac = n_cens / y.size
    mu0 = float(uncensored.mean()) * (1.0 + frac)
    s0 = math.log(max(float(uncensored.std(ddof=1)), 1e-6))
    trace: list[np.ndarray] = []
    res = optimize.minimize(
        censored_normal_negll,
        np.array([mu0, s0]),
        args=(uncensored, n_cens, ceiling),
        jac=True,
        method="BFGS",
        callback=lambda xk: trace.append(xk.copy()),
        options={"gtol": gtol, "maxiter": 1000},
    )
    grad_norm = float(np.max(np.abs(res.jac)))
    # BFGS can stop on precision loss a hair above gtol while effectively converged
    if not res.success and grad_norm > 100 * gtol:
        raise ConvergenceFailureError(
            f"censored-normal fit did not converge (|grad|={grad_norm:.3e})", trace=trace
        )
    mu, sigma = float(res.x[0]), float(math.exp(res.x[1]))
    total_ll = -float(res.fun) * y.size
    return TobitFit(mu, sigma, ceiling, frac, total_ll, (ceiling - mu) / sigma)


def truncated_mean(mu: float, sigma: float, c: float) -> float:
    """E[T | T < c] for T ~ Normal(mu, sigma^2): mu - sigma * phi(alpha) / Phi(alpha).

    Evaluated via log-domain pdf/cdf so far-tail ceilings (c << mu) stay finite.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    alpha = (c - mu) / sigma
    ratio = math.exp(sps.norm.logpdf(alpha) - sps.norm.logcdf(alpha))
    return mu - sigma * ratio


def fit_threshold_model(points) -> ThresholdFit:
    """Least-squares continuous two-piece linear fit with grid-searched break.

    Candidate breaks are the interior observed x values plus midpoints of
    consecutive distinct x values; each candidate needs at least two points
    per side. Ties in RSS resolve toward the smaller break. A near-zero
    slope change is flagged as degenerate (the data are effectively linear).
    """
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 4:
        raise InsufficientDataError("threshold fit needs at least 4 points")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    xs = np.unique(x)
    candidates = sorted(set(xs[1:-1]) | set((xs[:-1] + xs[1:]) / 2.0))

    best = None
    for tau in candidates:
        low = x <= tau
        if low.sum() < 2 or (~low).sum() < 2:
            continue
        design = np.column_stack([np.ones_like(x), x, np.maximum(0.0, x - tau)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        rss = float(np.sum((design @ coef - y) ** 2))
        if best is None or rss < best[0] - max(1e-12, 1e-12 * best[0]):
            best = (rss, float(tau), coef)
    if best is None:
        raise NoBreakpointError("no candidate break has two points on each side")

    rss, tau, coef = best
    intercept, slope_low, slope_delta = (float(v) for v in coef)
    slope_high = slope_low + slope_delta
    degenerate = abs(slope_delta) <= 1e-8 * max(1.0, abs(slope_low))
    return ThresholdFit(tau, intercept, slope_low, slope_high, rss, degenerate)
