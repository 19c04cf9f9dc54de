"""Scalar spike-and-slab prior computations.

Every coordinate of the regression weight carries a prior
(1-rho)*delta(w) + rho*slab(w).  Inference needs the moments of that prior
tilted by a quadratic exponential exp(-E*w^2/2 + h*w): the log partition
function, the tilted mean f(h;E), the tilted second moment, and the posterior
slab mass (inclusion probability).  Two slab families are shipped:

* ``bernoulli_gauss``   -- slab N(0, sigma_w2); integrable for E > -1/sigma_w2.
* ``bernoulli_uniform`` -- improper flat slab; integrable only for E > 0.

All closed forms are evaluated in log domain; the spike/slab mixture is
combined with logaddexp and a stable sigmoid so that large h**2/(2E) never
leaves the log scale.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, IntegrabilityViolation, NonConvergence, RangeError

BERNOULLI_GAUSS = "bernoulli_gauss"
BERNOULLI_UNIFORM = "bernoulli_uniform"

_FAMILIES = (BERNOULLI_GAUSS, BERNOULLI_UNIFORM)


@dataclass(frozen=True)
class PriorSpec:
    """Sparse prior: family name, slab weight rho, slab variance (Gauss only)."""

    family: str
    rho: float
    sigma_w2: float | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigError(f"unknown prior family {self.family!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.family == BERNOULLI_GAUSS:
            if self.sigma_w2 is None or self.sigma_w2 <= 0.0:
                raise ConfigError("bernoulli_gauss requires sigma_w2 > 0")

    def min_tilt(self):
        """Infimum of admissible E (exclusive)."""
        if self.family == BERNOULLI_UNIFORM:
            return 0.0
        return -1.0 / self.sigma_w2


def bernoulli_gauss(rho, sigma_w2):
    return PriorSpec(BERNOULLI_GAUSS, float(rho), float(sigma_w2))


def bernoulli_uniform(rho):
    return PriorSpec(BERNOULLI_UNIFORM, float(rho))


@dataclass(frozen=True)
class ScalarMoments:
    """Moments of the tilted prior; entries are scalars or arrays over h.

    ``variance`` equals second_moment - mean**2 evaluated in the
    cancellation-free form pi*v_slab + pi*(1-pi)*mu_slab**2.
    """

    log_partition: np.ndarray
    mean: np.ndarray
    second_moment: np.ndarray
    inclusion_prob: np.ndarray
    variance: np.ndarray


def _check_tilt(prior, E):
    if prior.family == BERNOULLI_UNIFORM:
        if not E > 0.0:
            raise IntegrabilityViolation(
                f"flat slab needs E > 0, got E = {E}")
    else:
        if not E > -1.0 / prior.sigma_w2:
            raise IntegrabilityViolation(
                f"Gaussian slab needs E > -1/sigma_w2 = {-1.0 / prior.sigma_w2}, got E = {E}")


def _slab_parts(prior, h, E):
    """Return (log slab partition, slab mean, slab variance) for the tilted slab."""
    if prior.family == BERNOULLI_GAUSS:
        s2 = prior.sigma_w2
        a = 1.0 + E * s2
        ln_zs = -0.5 * np.log(a) + h * h * (s2 / (2.0 * a))
        return ln_zs, h * (s2 / a), s2 / a
    ln_zs = 0.5 * np.log(2.0 * np.pi / E) + h * h / (2.0 * E)
    return ln_zs, h / E, 1.0 / E


def moments(prior, h, E):
    """Moments of the prior tilted by exp(-E*w**2/2 + h*w).

    ``h`` may be a scalar or an array; ``E`` is a shared scalar.  Returns
    exact closed-form values: mean = pi * mu_slab, second moment =
    pi * (v_slab + mu_slab**2), pi = rho*Z_slab / ((1-rho) + rho*Z_slab),
    with Z_slab the tilted slab partition function.
    """
    _check_tilt(prior, float(E))
    h = np.asarray(h, dtype=float)
    ln_zs, mu_s, v_s = _slab_parts(prior, h, float(E))
    rho = prior.rho
    if rho == 0.0:
        z = np.zeros_like(h)
        return ScalarMoments(z, z, z, z, z)
    if rho == 1.0:
        one = np.ones_like(h)
        var = np.full_like(h, v_s)
        return ScalarMoments(ln_zs, mu_s, var + mu_s * mu_s, one, var)
    ln_odds = np.log(rho) - np.log1p(-rho) + ln_zs
    pi = expit(ln_odds)
    log_z = np.logaddexp(np.log1p(-rho), np.log(rho) + ln_zs)
    mean = pi * mu_s
    second = pi * (v_s + mu_s * mu_s)
    var = pi * v_s + pi * (1.0 - pi) * mu_s * mu_s
    return ScalarMoments(log_z, mean, second, pi, var)


# ---------------------------------------------------------------------------
# mean inversion
# ---------------------------------------------------------------------------

def _slab_inverse(prior, m_abs, E):
    # h solving mu_slab(h) = m_abs; lower bound for the mixture inverse since
    # the spike only shrinks the mean toward zero.
    if prior.family == BERNOULLI_GAUSS:
        return m_abs * (E + 1.0 / prior.sigma_w2)
    return m_abs * E


def invert_mean(prior, m_target, E, h0=None, max_iter=200):
    """Solve moments(prior, h, E).mean == m_target for h.

    The tilted mean is odd and strictly increasing in h (its h-derivative is
    the tilted variance), so the root is unique.  Safeguarded Newton inside a
    bracket grown by doubling; vectorized over m_target.  ``h0`` optionally
    warm-starts the iteration.  Residual target 1e-12*max(1, |m_target|).
    """
    _check_tilt(prior, float(E))
    E = float(E)
    m_in = np.asarray(m_target, dtype=float)
    scalar = m_in.ndim == 0
    m = np.atleast_1d(m_in).astype(float)
    h = np.zeros_like(m)
    live = m != 0.0
    if prior.rho == 0.0:
        if np.any(live):
            raise RangeError("pure spike prior has mean identically 0")
        return float(h[0]) if scalar else h
    if np.any(live):
        sgn = np.sign(m[live])
        mt = np.abs(m[live])
        lo = _slab_inverse(prior, mt, E)
        hi = np.maximum(lo, 1e-3)
        for _ in range(200):
            need = moments(prior, hi, E).mean < mt
            if not np.any(need):
                break
            hi = np.where(need, 2.0 * hi, hi)
        else:
            raise RangeError("mean target not bracketed by doubling expansion")
        x = lo.copy()
        if h0 is not None:
            warm = np.abs(np.atleast_1d(np.asarray(h0, dtype=float))[live])
            x = np.clip(warm, lo, hi)
        tol = 1e-14 * np.maximum(1.0, mt)
        converged = False
        for _ in range(max_iter):
            mom = moments(prior, x, E)
            err = mom.mean - mt
            if np.all(np.abs(err) <= tol):
                converged = True
                break
            lo = np.where(err < 0.0, x, lo)
            hi = np.where(err > 0.0, x, hi)
            xn = x - err / np.maximum(mom.variance, 1e-300)
            bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            if np.array_equal(xn, x):
                break
            x = xn
        if not converged:
            err = moments(prior, x, E).mean - mt
            # accept a stalled iterate only within the contractual tolerance
            if not np.all(np.abs(err) <= 1e-12 * np.maximum(1.0, mt)):
                raise NonConvergence(
                    f"mean inversion stalled, residual {np.abs(err).max():.3e}")
        h[live] = sgn * x
    return float(h[0]) if scalar else h
