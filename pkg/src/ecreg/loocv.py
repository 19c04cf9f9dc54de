"""Leave-one-out error estimation.

The semi-analytic route computes every held-out residual from the full fit:
residual_loo = residual_full / (1 - leverage) with leverage =
beta * x_mu^T H^{-1} x_mu from the full-data curvature H.  One Hessian inverse
replaces M refits.  The literal and k-fold harnesses actually refit and exist
to validate that formula.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, fit
from .errors import (
    ConfigError,
    EcregError,
    NonConvergence,
    NotConverged,
    RankOneSingularity,
    SingularHessian,
)

# residual_loo is singular at leverage 1; denominators below this floor are
# clipped and the sample flagged rather than dropped.
DENOMINATOR_FLOOR = 1e-8


@dataclass(frozen=True)
class LooSample:
    index: int
    residual_full: float
    leverage: float | None
    residual_loo_approx: float | None
    residual_loo_literal: float | None = None
    cavity_field: np.ndarray | None = None


@dataclass(frozen=True)
class LooReport:
    """Per-sample LOO table.  eps_loo = (1/2M) sum residual_loo**2.

    ``flagged`` lists sample ids with clipped leverage denominators (approx
    method) or ids belonging to folds whose refit did not converge (literal
    and k-fold methods).
    """

    eps_loo: float
    samples: list
    flagged: list
    method: str
    wall_time: float


def _loo_eps(residuals, m_samples):
    return float(np.sum(np.square(residuals)) / (2.0 * m_samples))


def approx_looe(fit_result, dataset, beta):
    """Semi-analytic LOO error from the full fit; no refits.

    Requires a converged fit.  Cost is two matrix products against the cached
    Hessian inverse; samples whose |1 - leverage| falls below the floor are
    clipped to the floor and flagged.
    """
    t0 = time.perf_counter()
    if not fit_result.state.converged:
        raise NotConverged("approximate LOO requires a converged fit")
    h_inv = fit_result.hessian_inverse
    if not np.all(np.isfinite(h_inv)):
        raise SingularHessian("hessian inverse contains non-finite entries")
    X = dataset.X
    w = h_inv @ X
    leverage = beta * np.einsum("im,im->m", X, w)
    residual_full = dataset.y - X.T @ fit_result.state.m
    denom = 1.0 - leverage
    small = np.abs(denom) < DENOMINATOR_FLOOR
    flagged = [int(i) for i in np.flatnonzero(small)]
    safe = np.where(small, np.where(denom >= 0.0, DENOMINATOR_FLOOR, -DENOMINATOR_FLOOR), denom)
    residual_loo = residual_full / safe
    samples = [
        LooSample(index=mu, residual_full=float(residual_full[mu]),
                  leverage=float(leverage[mu]),
                  residual_loo_approx=float(residual_loo[mu]))
        for mu in range(dataset.n_samples)
    ]
    return LooReport(eps_loo=_loo_eps(residual_loo, dataset.n_samples),
                     samples=samples, flagged=flagged, method="approx",
                     wall_time=time.perf_counter() - t0)


def loo_estimator(fit_result, dataset, beta, mu):
    """Estimator with sample mu removed, via a rank-one Hessian downdate.

    The deleted sample's field contribution is delta_h = beta * x_mu *
    residual_mu; the downdated covariance (H - beta x_mu x_mu^T)^{-1} comes
    from the Sherman-Morrison formula on the cached inverse.  Diagnostic
    companion to approx_looe, not used in its hot path.
    """
    if not fit_result.state.converged:
        raise NotConverged("loo estimator requires a converged fit")
    x = dataset.X[:, mu]
    m = fit_result.state.m
    h_inv = fit_result.hessian_inverse
    w = h_inv @ x
    denom = 1.0 - beta * float(x @ w)
    if abs(denom) < DENOMINATOR_FLOOR:
        raise RankOneSingularity(
            f"downdate denominator {denom:.3e} below floor at sample {mu}")
    residual = float(dataset.y[mu] - x @ m)
    delta_h = beta * residual * x
    # c = h_inv + beta * w w^T / denom applied to delta_h, without forming c
    c_delta = h_inv @ delta_h + (beta * float(w @ delta_h) / denom) * w
    return m - c_delta


def _subset_dataset(dataset, keep_mask):
    return Dataset(dataset.X[:, keep_mask], dataset.y[keep_mask])


def _fit_fold(dataset, prior, beta, keep_mask, warm_m, settings):
    """Fit on a sample subset; returns (m, converged, error message)."""
    if not np.any(keep_mask):
        # data-free fold: the estimator is the prior mean
        return np.zeros(dataset.n_features), True, None
    sub = _subset_dataset(dataset, keep_mask)
    try:
        res = fit(sub, prior, beta, init=warm_m, settings=settings)
    except EcregError as exc:
        return None, False, str(exc)
    return res.state.m, res.state.converged, None


def _run_folds(jobs, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda j: j(), jobs))
    return [j() for j in jobs]


def literal_loocv(dataset, prior, beta, workers=1, settings=None):
    """LOO by M refits, each warm-started from the full fit.

    Folds are independent and may run in parallel; per-sample results are
    reduced in index order so the report does not depend on the worker count.
    A fold whose refit fails keeps the full-fit prediction and is flagged;
    the call raises only when more than 5% of folds fail.
    """
    t0 = time.perf_counter()
    M = dataset.n_samples
    full = fit(dataset, prior, beta, settings=settings)
    warm = full.state.m

    def make_job(mu):
        def job():
            keep = np.ones(M, dtype=bool)
            keep[mu] = False
            return _fit_fold(dataset, prior, beta, keep, warm, settings)
        return job

    results = _run_folds([make_job(mu) for mu in range(M)], workers)

    residuals = np.empty(M)
    flagged = []
    failures = 0
    for mu, (m_fold, ok, err) in enumerate(results):
        if m_fold is None:
            m_fold = warm
        residuals[mu] = dataset.y[mu] - dataset.X[:, mu] @ m_fold
        if not ok or err is not None:
            failures += 1
            flagged.append(mu)
    if failures > 0.05 * M:
        raise NonConvergence(f"{failures}/{M} leave-one-out folds failed")

    samples = [
        LooSample(index=mu, residual_full=float(dataset.y[mu] - dataset.X[:, mu] @ warm),
                  leverage=None, residual_loo_approx=None,
                  residual_loo_literal=float(residuals[mu]))
        for mu in range(M)
    ]
    return LooReport(eps_loo=_loo_eps(residuals, M), samples=samples,
                     flagged=flagged, method="literal",
                     wall_time=time.perf_counter() - t0)


def kfold_cv(dataset, prior, beta, k, seed=0, workers=1, settings=None):
    """k-fold CV: seeded permutation, contiguous blocks, remainder spread
    one per leading fold.  eps is (1/2M) times the total held-out squared
    residual, so k = M reproduces literal_loocv exactly.
    """
    M = dataset.n_samples
    if not 2 <= k <= M:
        raise ConfigError(f"k must satisfy 2 <= k <= {M}, got {k}")
    t0 = time.perf_counter()
    perm = np.random.default_rng(seed).permutation(M)
    base, rem = divmod(M, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < rem else 0)
        folds.append(perm[start:start + size])
        start += size

    full = fit(dataset, prior, beta, settings=settings)
    warm = full.state.m

    def make_job(test_idx):
        def job():
            keep = np.ones(M, dtype=bool)
            keep[test_idx] = False
            return _fit_fold(dataset, prior, beta, keep, warm, settings)
        return job

    results = _run_folds([make_job(f) for f in folds], workers)

    residuals = np.empty(M)
    flagged = []
    failures = 0
    for test_idx, (m_fold, ok, err) in zip(folds, results):
        if m_fold is None:
            m_fold = warm
        for mu in test_idx:
            # per-sample dot, not a batched product: same accumulation order
            # as the literal harness, so k = M matches it bit for bit
            residuals[mu] = dataset.y[mu] - dataset.X[:, mu] @ m_fold
        if not ok or err is not None:
            failures += 1
            flagged.extend(int(mu) for mu in test_idx)
    if failures > 0.05 * k:
        raise NonConvergence(f"{failures}/{k} folds failed")
    flagged.sort()

    samples = [
        LooSample(index=mu, residual_full=float(dataset.y[mu] - dataset.X[:, mu] @ warm),
                  leverage=None, residual_loo_approx=None,
                  residual_loo_literal=float(residuals[mu]))
        for mu in range(M)
    ]
    return LooReport(eps_loo=_loo_eps(residuals, M), samples=samples,
                     flagged=flagged, method=f"kfold({k})",
                     wall_time=time.perf_counter() - t0)
