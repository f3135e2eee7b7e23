"""Near-field ULA surrogate model.

The steering vector of a uniform linear array under the Fresnel
approximation is ``a_k = exp(j (w_e k + f_e k^2))`` with electrical angles

    w_e = -2 pi d sin(bearing) / wavelength
    f_e = pi d^2 cos(bearing)^2 / (wavelength * range)

For a symmetric source in spherically contoured noise, the score and Hessian
of the transformed Gaussian surrogate are (up to a positive factor that
cancels in the test) the gradient and Hessian of ``|x^H a(theta)|^2``.
Parameters are ordered ``[range, bearing]``; angles are radians.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateRegion, NotPositiveDefinite
from .transform import MTFunction, MTMoments, as_batch, mt_moments

__all__ = [
    "ArrayGeometry",
    "LocationParam",
    "ScoreIngredients",
    "fresnel_region",
    "electrical_angles",
    "steering_vector",
    "steering_derivatives",
    "score_ingredients",
    "batch_score_ingredients",
    "logdet_divergence",
    "mtgqmle_objective",
]


@dataclass(frozen=True)
class ArrayGeometry:
    p: int = 8
    spacing: float = 0.25
    wavelength: float = 1.0

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 2:
            raise ValueError("sensor count p must be an integer >= 2")
        if not self.spacing > 0:
            raise ValueError("inter-element spacing must be positive")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")


@dataclass(frozen=True)
class LocationParam:
    range: float
    bearing: float

    def __post_init__(self):
        if not self.range > 0:
            raise ValueError("range must be positive")
        if not abs(self.bearing) < np.pi / 2:
            raise ValueError("bearing must lie in (-pi/2, pi/2) radians")

    @classmethod
    def from_array(cls, theta) -> "LocationParam":
        r, b = np.asarray(theta, dtype=float)
        return cls(float(r), float(b))

    @classmethod
    def from_degrees(cls, range: float, bearing_deg: float) -> "LocationParam":
        return cls(float(range), float(np.deg2rad(bearing_deg)))

    def as_array(self) -> np.ndarray:
        return np.array([self.range, self.bearing])


@dataclass(frozen=True)
class ScoreIngredients:
    psi: np.ndarray
    gamma: np.ndarray


def fresnel_region(geom: ArrayGeometry) -> tuple[float, float]:
    """Open range interval in which the quadratic-phase model is valid."""
    aperture = geom.spacing * (geom.p - 1)
    r_min = 0.62 * np.sqrt(aperture**3 / geom.wavelength)
    r_max = 2.0 * aperture**2 / geom.wavelength
    if r_min >= r_max:
        raise DegenerateRegion(
            f"Fresnel region is empty: lower bound {r_min:.6g} >= upper bound {r_max:.6g}"
        )
    return float(r_min), float(r_max)


def electrical_angles(theta: LocationParam, geom: ArrayGeometry) -> tuple[float, float]:
    d, lam = geom.spacing, geom.wavelength
    w_e = -2.0 * np.pi * d * np.sin(theta.bearing) / lam
    f_e = np.pi * d**2 * np.cos(theta.bearing) ** 2 / (lam * theta.range)
    return float(w_e), float(f_e)


def _check_region(theta: LocationParam, geom: ArrayGeometry) -> None:
    try:
        r_min, r_max = fresnel_region(geom)
    except DegenerateRegion:
        return
    if not r_min < theta.range < r_max:
        warnings.warn(
            f"range {theta.range:g} m is outside the Fresnel region ({r_min:.4g}, {r_max:.4g})",
            RuntimeWarning,
            stacklevel=3,
        )


def _phase_jets(theta: LocationParam, geom: ArrayGeometry):
    """Per-sensor phase, its gradient (p, 2) and Hessian (p, 2, 2)."""
    d, lam = geom.spacing, geom.wavelength
    r, b = theta.range, theta.bearing
    k = np.arange(geom.p, dtype=float)
    k2 = k * k
    cb, sb = np.cos(b), np.sin(b)
    w_e, f_e = electrical_angles(theta, geom)

    dw = np.array([0.0, -2.0 * np.pi * d * cb / lam])
    df = np.array([
        -np.pi * d**2 * cb**2 / (lam * r**2),
        -2.0 * np.pi * d**2 * cb * sb / (lam * r),
    ])
    d2w = np.array([[0.0, 0.0], [0.0, 2.0 * np.pi * d * sb / lam]])
    f_rb = 2.0 * np.pi * d**2 * cb * sb / (lam * r**2)
    d2f = np.array([
        [2.0 * np.pi * d**2 * cb**2 / (lam * r**3), f_rb],
        [f_rb, -2.0 * np.pi * d**2 * np.cos(2.0 * b) / (lam * r)],
    ])

    phase = w_e * k + f_e * k2
    grad = np.outer(k, dw) + np.outer(k2, df)
    hess = k[:, None, None] * d2w + k2[:, None, None] * d2f
    return phase, grad, hess


def steering_vector(theta: LocationParam, geom: ArrayGeometry) -> np.ndarray:
    _check_region(theta, geom)
    phase, _, _ = _phase_jets(theta, geom)
    return np.exp(1j * phase)


def steering_derivatives(theta: LocationParam, geom: ArrayGeometry) -> tuple[np.ndarray, np.ndarray]:
    """First (p, 2) and second (p, 2, 2) derivatives of the steering vector."""
    _check_region(theta, geom)
    phase, grad, hess = _phase_jets(theta, geom)
    a = np.exp(1j * phase)
    first = 1j * grad * a[:, None]
    second = (1j * hess - grad[:, :, None] * grad[:, None, :]) * a[:, None, None]
    return first, second


def batch_score_ingredients(batch, theta: LocationParam, geom: ArrayGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Gradient ``(N, 2)`` and Hessian ``(N, 2, 2)`` of ``|x^H a|^2`` for every row."""
    batch = as_batch(batch)
    if batch.shape[1] != geom.p:
        raise ValueError(f"snapshot dimension {batch.shape[1]} does not match p={geom.p}")
    a = steering_vector(theta, geom)
    first, second = steering_derivatives(theta, geom)
    xc = batch.conj()
    z = xc @ a
    z1 = xc @ first
    z2 = np.einsum("nk,kij->nij", xc, second)
    zc = z.conj()
    psi = 2.0 * np.real(zc[:, None] * z1)
    gamma = 2.0 * np.real(z1.conj()[:, :, None] * z1[:, None, :] + zc[:, None, None] * z2)
    gamma = 0.5 * (gamma + np.swapaxes(gamma, 1, 2))
    return psi, gamma


def score_ingredients(x, theta: LocationParam, geom: ArrayGeometry) -> ScoreIngredients:
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1:
        raise ValueError("score_ingredients takes a single snapshot; use batch_score_ingredients")
    psi, gamma = batch_score_ingredients(x[None, :], theta, geom)
    return ScoreIngredients(psi=psi[0], gamma=gamma[0])


def _cholesky(m: np.ndarray, name: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"{name} is not positive definite") from exc


def logdet_divergence(a, b) -> float:
    """``tr(A B^-1) - log det(A B^-1) - q`` for Hermitian positive-definite A, B."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("arguments must be square matrices of equal shape")
    q = a.shape[0]
    la = _cholesky(a, "A")
    lb = _cholesky(b, "B")
    # whitened A: L_b^-1 A L_b^-H
    y = solve_triangular(lb, la, lower=True)
    trace = float(np.sum(np.abs(y) ** 2))
    logdet = 2.0 * float(np.sum(np.log(np.abs(np.diag(la)))) - np.sum(np.log(np.abs(np.diag(lb)))))
    return trace - logdet - q


ModelMoments = tuple[Callable[[LocationParam], np.ndarray], Callable[[LocationParam], np.ndarray]]


def mtgqmle_objective(
    batch,
    theta: LocationParam,
    model: ModelMoments,
    u: MTFunction | None = None,
    *,
    moments: MTMoments | None = None,
) -> float:
    """Objective maximized by the MT-GQMLE at a candidate parameter.

    ``model`` is a pair of callables giving the model MT-mean and
    MT-covariance at ``theta``.  Pass ``moments`` to reuse empirical
    MT-moments across many candidates.
    """
    if moments is None:
        if u is None:
            raise ValueError("either an MT-function or precomputed moments are required")
        moments = mt_moments(batch, u)
    mean_fn, cov_fn = model
    mu = np.asarray(mean_fn(theta), dtype=np.complex128)
    sigma = np.asarray(cov_fn(theta), dtype=np.complex128)
    div = logdet_divergence(moments.covariance, sigma)
    lb = _cholesky(sigma, "model covariance")
    white = solve_triangular(lb, moments.mean - mu, lower=True)
    return -div - float(np.sum(np.abs(white) ** 2))
