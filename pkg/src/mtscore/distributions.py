"""Chi-squared tails, asymptotic power formulas and scenario samplers.

The central tail is the regularized upper incomplete gamma function, computed
by its power series below ``a + 1`` and by a modified Lentz continued fraction
above.  The noncentral tail is the Poisson mixture of central tails.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.optimize import brentq

from .errors import NotPositiveDefinite

__all__ = [
    "NoiseSpec",
    "SignalSpec",
    "gammaincc",
    "chi2_sf",
    "chi2_isf",
    "noncentral_chi2_sf",
    "asymptotic_power",
    "worst_case_power",
    "sample_complex_gaussian",
    "sample_k_texture",
    "sample_bpsk",
]

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 10_000
_POISSON_TAIL = 1e-12


@dataclass(frozen=True)
class NoiseSpec:
    family: Literal["gaussian", "k_dist"] = "gaussian"
    variance: float = 1.0
    shape: float = 0.75

    def __post_init__(self):
        if self.family not in ("gaussian", "k_dist"):
            raise ValueError(f"unknown noise family {self.family!r}")
        if not self.variance > 0:
            raise ValueError("noise variance must be positive")
        if not self.shape > 0:
            raise ValueError("K-distribution shape must be positive")


@dataclass(frozen=True)
class SignalSpec:
    variance: float = 1.0
    kind: Literal["bpsk"] = "bpsk"

    def __post_init__(self):
        if self.kind != "bpsk":
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if not self.variance > 0:
            raise ValueError("signal variance must be positive")


def _gamma_prefactor(a: float, x: float) -> float:
    return math.exp(a * math.log(x) - x - math.lgamma(a))


def _lower_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by its power series."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * _gamma_prefactor(a, x)


def _upper_fraction(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by continued fraction."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * _gamma_prefactor(a, x)


def gammaincc(a: float, x: float) -> float:
    """Regularized upper incomplete gamma ``Gamma(a, x) / Gamma(a)``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < a + 1.0:
        return 1.0 - _lower_series(a, x)
    return _upper_fraction(a, x)


def chi2_sf(x: float, m: int) -> float:
    """Right-tail probability of a central chi-squared variable with ``m`` dof."""
    if m < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if x < 0:
        raise ValueError("x must be nonnegative")
    return gammaincc(0.5 * m, 0.5 * x)


def chi2_isf(alpha: float, m: int) -> float:
    """Threshold whose central chi-squared right tail equals ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if m < 1:
        raise ValueError("degrees of freedom must be >= 1")
    hi = max(1.0, float(m))
    while chi2_sf(hi, m) > alpha:
        hi *= 2.0
    return brentq(lambda t: chi2_sf(t, m) - alpha, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def _log_poisson(j: int, mu: float) -> float:
    return -mu + j * math.log(mu) - math.lgamma(j + 1.0)


def noncentral_chi2_sf(x: float, m: int, lam: float) -> float:
    """Right tail of a noncentral chi-squared variable.

    Sums ``Poisson(lam/2)`` weights times central tails with ``m + 2j`` dof,
    growing outward from the modal index until the unvisited Poisson mass is
    below 1e-12.
    """
    if lam < 0:
        raise ValueError("noncentrality must be nonnegative")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if lam == 0:
        return chi2_sf(x, m)
    if x == 0:
        return 1.0
    mu = 0.5 * lam
    mode = int(math.floor(mu))
    w0 = math.exp(_log_poisson(mode, mu))
    total = w0 * chi2_sf(x, m + 2 * mode)
    mass = w0
    lo, hi = mode, mode
    w_lo = w_hi = w0
    while 1.0 - mass > _POISSON_TAIL:
        # next weights via the Poisson ratio recurrence
        next_hi = w_hi * mu / (hi + 1)
        next_lo = w_lo * lo / mu if lo > 0 else 0.0
        if next_hi == 0.0 and next_lo == 0.0:
            break
        if next_hi >= next_lo:
            hi += 1
            w_hi = next_hi
            total += w_hi * chi2_sf(x, m + 2 * hi)
            mass += w_hi
        else:
            lo -= 1
            w_lo = next_lo
            total += w_lo * chi2_sf(x, m + 2 * lo)
            mass += w_lo
    return min(1.0, max(0.0, total))


def _spd_inverse_quadratic(h: np.ndarray, r: np.ndarray) -> float:
    try:
        chol = np.linalg.cholesky(r)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("error-covariance is not positive definite") from exc
    y = np.linalg.solve(chol, h)
    return float(y @ y)


def _check_spd(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError("error-covariance must be a square matrix")
    if not np.allclose(r, r.T, rtol=1e-10, atol=1e-12 * max(1.0, np.max(np.abs(r)))):
        raise NotPositiveDefinite("error-covariance is not symmetric")
    return r


def asymptotic_power(h, R, m: int, alpha: float) -> float:
    """Local power ``Q_{chi2_m(lam)}(Q^-1_{chi2_m}(alpha))`` with ``lam = h^T R^-1 h``."""
    r = _check_spd(R)
    h = np.asarray(h, dtype=float)
    lam = _spd_inverse_quadratic(h, r)
    return noncentral_chi2_sf(chi2_isf(alpha, m), m, lam)


def worst_case_power(c: float, R, m: int, alpha: float) -> float:
    """Minimum local power over all ``h`` with ``||h|| >= c``."""
    from .score_test import spectral_norm

    if not c > 0:
        raise ValueError("c must be positive")
    r = _check_spd(R)
    _spd_inverse_quadratic(np.zeros(r.shape[0]), r)
    lam = c**2 / spectral_norm(r)
    return noncentral_chi2_sf(chi2_isf(alpha, m), m, lam)


def sample_complex_gaussian(rng: np.random.Generator, p: int, variance: float, size: int | None = None) -> np.ndarray:
    """Proper complex Gaussian vectors with covariance ``variance * I``.

    Returns shape ``(p,)``, or ``(size, p)`` when ``size`` is given.
    """
    if not variance > 0:
        raise ValueError("variance must be positive")
    shape = (p,) if size is None else (size, p)
    scale = math.sqrt(variance / 2.0)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return scale * (re + 1j * im)


def sample_k_texture(rng: np.random.Generator, shape: float, size: int | None = None):
    """Amplitude texture ``sqrt(tau)``, ``tau ~ Gamma(shape, 1/shape)``, so ``E[nu^2] = 1``."""
    if not shape > 0:
        raise ValueError("shape must be positive")
    tau = rng.gamma(shape, 1.0 / shape, size)
    # Gamma draws can round to exactly zero for tiny shapes
    return np.sqrt(np.maximum(tau, np.finfo(float).tiny))


def sample_bpsk(rng: np.random.Generator, variance: float, size: int | None = None):
    """Equiprobable real symbols ``+-sqrt(variance)``."""
    if not variance > 0:
        raise ValueError("variance must be positive")
    bits = rng.integers(0, 2, size)
    return math.sqrt(variance) * (2.0 * bits - 1.0)
