"""Hyper-parameter machinery: grid sweeps, sparsity calibration, beta selection.

Model quality across hyper-parameters is compared through the approximate LOO
error; free energies are reported alongside as the marginal-likelihood
alternative but never optimized here.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import fit
from .errors import (
    AllPointsFailed,
    ConfigError,
    DomainError,
    EcregError,
    NonConvergence,
    NonMonotoneDetected,
    RangeError,
)
from .loocv import approx_looe
from .priors import BERNOULLI_GAUSS, BERNOULLI_UNIFORM, PriorSpec


def _positive_list(name, values):
    out = [float(v) for v in values]
    if not out:
        raise ConfigError(f"{name} must be non-empty")
    for v in out:
        if not (math.isfinite(v) and v > 0.0):
            raise ConfigError(f"{name} entries must be finite and positive, got {v}")
    return out


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian hyper-parameter grid; sigma_w2_values only for Gaussian slabs."""

    beta_values: tuple
    rho_values: tuple
    sigma_w2_values: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta_values", tuple(_positive_list("beta_values", self.beta_values)))
        rhos = [float(r) for r in self.rho_values]
        if not rhos:
            raise ConfigError("rho_values must be non-empty")
        for r in rhos:
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"rho_values entries must lie in (0, 1], got {r}")
        object.__setattr__(self, "rho_values", tuple(rhos))
        if self.sigma_w2_values is not None:
            object.__setattr__(
                self, "sigma_w2_values",
                tuple(_positive_list("sigma_w2_values", self.sigma_w2_values)))


@dataclass(frozen=True)
class SweepPoint:
    beta: float
    rho: float
    sigma_w2: float | None
    eps: float
    eps_loo: float
    free_energy: float
    converged: bool
    error: str | None = None


@dataclass(frozen=True)
class SweepResult:
    points: list
    best: SweepPoint


@dataclass(frozen=True)
class CalibrationResult:
    K: float
    rho: float
    achieved_K: float
    iterations: int
    fit: object  # FitResult at the calibrated rho, kept for auditing


@dataclass(frozen=True)
class BetaSelection:
    beta: float
    report: object  # LooReport at the selected beta
    table: list


def _make_prior(family, rho, sigma_w2):
    if family == BERNOULLI_UNIFORM:
        return PriorSpec(BERNOULLI_UNIFORM, rho)
    return PriorSpec(BERNOULLI_GAUSS, rho, sigma_w2)


def _training_eps(dataset, m):
    r = dataset.y - dataset.X.T @ m
    return float(r @ r) / (2.0 * dataset.n_samples)


def _evaluate_point(dataset, family, beta, rho, sigma_w2, settings):
    try:
        res = fit(dataset, _make_prior(family, rho, sigma_w2), beta, settings=settings)
        eps = _training_eps(dataset, res.state.m)
        if not res.state.converged:
            return SweepPoint(beta, rho, sigma_w2, eps, math.nan,
                              res.state.free_energy, False, "fit did not converge"), None
        report = approx_looe(res, dataset, beta)
        return SweepPoint(beta, rho, sigma_w2, eps, report.eps_loo,
                          res.state.free_energy, True, None), report
    except EcregError as exc:
        return SweepPoint(beta, rho, sigma_w2, math.nan, math.nan,
                          math.nan, False, str(exc)), None


def _argmin_point(points):
    # ties break toward the smallest beta, then smallest rho (weakest fit wins)
    usable = [p for p in points
              if p.converged and p.error is None and math.isfinite(p.eps_loo)]
    if not usable:
        raise AllPointsFailed("no grid point produced a converged fit with a finite eps_loo")
    return min(usable, key=lambda p: (p.eps_loo, p.beta, p.rho,
                                      p.sigma_w2 if p.sigma_w2 is not None else 0.0))


def sweep(dataset, family, grid, workers=1, settings=None):
    """Evaluate fit/eps/eps_loo/free-energy on every grid point.

    Failed points stay in the table with their failure reason and are excluded
    from the argmin.  Deterministic: points are enumerated and reduced in grid
    order regardless of the worker count.
    """
    sigmas = grid.sigma_w2_values if grid.sigma_w2_values is not None else (None,)
    if family == BERNOULLI_GAUSS and grid.sigma_w2_values is None:
        raise ConfigError("Gaussian slab sweep needs sigma_w2_values")
    combos = [(b, r, s) for b in grid.beta_values for r in grid.rho_values for s in sigmas]

    def job(combo):
        b, r, s = combo
        return _evaluate_point(dataset, family, b, r, s, settings)[0]

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(job, combos))
    else:
        points = [job(c) for c in combos]
    return SweepResult(points=points, best=_argmin_point(points))


def calibrate_rho(dataset, beta, K, family, sigma_w2=None, settings=None,
                  max_probes=200):
    """Find rho with posterior expected non-zero count sum(pi_i) = K.

    Geometric bisection on rho in (0, 1); each probe refits, warm-started from
    the previous probe.  The achieved count is monotone increasing in rho on
    healthy instances; when a probe violates the running bracket's ordering
    the search falls back to a refined grid scan of the bracket before giving
    up with NonMonotoneDetected.  Success means |achieved - K| <=
    1e-6 * max(1, K).
    """
    n = dataset.n_features
    if not 0.0 < K < n:
        raise DomainError(f"K must lie in (0, {n}), got {K}")
    tol = 1e-6 * max(1.0, K)
    mono_tol = 1e-7 * max(1.0, K)
    probes = 0
    warm = {"m": None}

    def achieved(rho):
        nonlocal probes
        probes += 1
        res = fit(dataset, _make_prior(family, rho, sigma_w2), beta,
                  init=warm["m"], settings=settings)
        if not res.state.converged:
            raise NonConvergence(f"calibration probe at rho={rho:.6g} did not converge")
        warm["m"] = res.state.m
        return float(np.sum(res.inclusion_probs)), res

    lo, hi = 1e-8, 1.0 - 1e-8
    k_lo, _ = achieved(lo)
    k_hi, _ = achieved(hi)
    if not k_lo <= K <= k_hi:
        raise RangeError(
            f"K={K} outside achievable range [{k_lo:.6g}, {k_hi:.6g}] at beta={beta}")

    def refine_bracket(lo, hi, k_lo, k_hi):
        # grid refinement fallback: locate an adjacent monotone bracket
        grid = np.geomspace(lo, hi, 33)
        vals = []
        for r in grid:
            k_r, _ = achieved(r)
            vals.append(k_r)
        for i in range(len(grid) - 1):
            if vals[i] - mono_tol <= K <= vals[i + 1] + mono_tol:
                return grid[i], grid[i + 1], vals[i], vals[i + 1]
        raise NonMonotoneDetected(
            f"no monotone bracket for K={K} after grid refinement")

    while probes < max_probes:
        mid = math.sqrt(lo * hi)
        k_mid, res = achieved(mid)
        if abs(k_mid - K) <= tol:
            return CalibrationResult(K=float(K), rho=float(mid),
                                     achieved_K=k_mid, iterations=probes, fit=res)
        if k_mid < k_lo - mono_tol or k_mid > k_hi + mono_tol:
            lo, hi, k_lo, k_hi = refine_bracket(lo, hi, k_lo, k_hi)
            continue
        if k_mid < K:
            lo, k_lo = mid, k_mid
        else:
            hi, k_hi = mid, k_mid
    raise NonConvergence(f"calibration did not reach K={K} within {max_probes} probes")


def select_beta(dataset, prior, beta_grid, workers=1, settings=None):
    """Pick the beta minimizing the approximate LOO error over a grid.

    Returns the winning beta, its LOO report, and the full per-beta table.
    The argmin uses the sweep tie-break (smallest beta wins ties), so the
    result is invariant under permutation of the grid.
    """
    betas = _positive_list("beta_grid", beta_grid)
    prior_sigma = prior.sigma_w2

    def job(b):
        return _evaluate_point(dataset, prior.family, b, prior.rho, prior_sigma, settings)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            evaluated = list(pool.map(job, betas))
    else:
        evaluated = [job(b) for b in betas]
    points = [point for point, _ in evaluated]
    reports = {point.beta: report for point, report in evaluated if report is not None}
    best = _argmin_point(points)
    return BetaSelection(beta=best.beta, report=reports[best.beta], table=points)
