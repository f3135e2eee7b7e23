"""Probability-measure-transform machinery.

An MT-function ``u`` reweights the empirical distribution of a batch of
complex snapshots.  The normalized weights ``u(X_n) / sum(u)`` give the
empirical MT-mean and MT-covariance, which for a non-constant ``u`` mix in
higher-order moments and, for the Gaussian family, stay bounded under gross
contamination.

Batches are plain ``(N, p)`` complex arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import AllWeightsZero

__all__ = [
    "MTFunction",
    "MTMoments",
    "as_batch",
    "evaluate_mt_function",
    "log_mt_function",
    "mt_weights",
    "empirical_mt_mean",
    "empirical_mt_cov",
    "mt_moments",
]


@dataclass(frozen=True)
class MTFunction:
    """Nonnegative weighting function of a complex vector.

    ``kind="gaussian"`` is ``scale * exp(-||x||^2 / width^2)``;
    ``kind="constant"`` is ``scale``.  The ``scale`` factor cancels in every
    normalized quantity and exists so that invariance to it can be checked.
    """

    kind: Literal["gaussian", "constant"] = "gaussian"
    width: float | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "constant"):
            raise ValueError(f"unknown MT-function kind {self.kind!r}")
        if self.kind == "gaussian":
            if self.width is None or not np.isfinite(self.width) or self.width <= 0:
                raise ValueError("gaussian MT-function width must be positive")
        elif self.width is not None:
            raise ValueError("constant MT-function takes no width")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError("MT-function scale must be positive")

    @classmethod
    def gaussian(cls, width: float, scale: float = 1.0) -> "MTFunction":
        return cls("gaussian", float(width), scale)

    @classmethod
    def constant(cls, scale: float = 1.0) -> "MTFunction":
        return cls("constant", None, scale)

    def label(self) -> float | str:
        return self.width if self.kind == "gaussian" else "constant"


@dataclass(frozen=True)
class MTMoments:
    mean: np.ndarray
    covariance: np.ndarray
    weight_total: float


def as_batch(samples) -> np.ndarray:
    """Validate and coerce snapshots to an ``(N, p)`` complex array."""
    batch = np.asarray(samples, dtype=np.complex128)
    if batch.ndim == 1:
        batch = batch[np.newaxis, :]
    if batch.ndim != 2:
        raise ValueError(f"batch must be 2-D (N, p), got shape {batch.shape}")
    if batch.shape[0] < 1 or batch.shape[1] < 1:
        raise ValueError("batch must hold at least one snapshot of dimension >= 1")
    return batch


def log_mt_function(u: MTFunction, x) -> np.ndarray | float:
    """Natural log of ``u`` at one vector (1-D input) or each row of a batch."""
    x = np.asarray(x, dtype=np.complex128)
    sq_norm = np.sum(x.real**2 + x.imag**2, axis=-1)
    log_scale = np.log(u.scale)
    if u.kind == "constant":
        return np.zeros_like(sq_norm) + log_scale
    return log_scale - sq_norm / u.width**2


def evaluate_mt_function(u: MTFunction, x) -> np.ndarray | float:
    """Evaluate ``u`` at a vector, or at each row of a batch."""
    return np.exp(log_mt_function(u, x))


def mt_weights(batch, u: MTFunction) -> np.ndarray:
    """Normalized weights ``u(X_n) / sum_k u(X_k)``.

    Computed from log-weights shifted by their maximum, so a small width
    does not underflow the whole batch to zero.
    """
    batch = as_batch(batch)
    log_u = np.atleast_1d(log_mt_function(u, batch))
    top = np.max(log_u)
    if not np.isfinite(top):
        raise AllWeightsZero("sum of MT-function values is zero for this batch")
    w = np.exp(log_u - top)
    return w / np.sum(w)


def empirical_mt_mean(batch, u: MTFunction) -> np.ndarray:
    batch = as_batch(batch)
    return mt_weights(batch, u) @ batch


def empirical_mt_cov(batch, u: MTFunction) -> np.ndarray:
    """Weighted second moment minus the outer product of the MT-mean.

    No small-sample correction is applied.  The result is symmetrized.
    """
    return mt_moments(batch, u).covariance


def mt_moments(batch, u: MTFunction) -> MTMoments:
    batch = as_batch(batch)
    w = mt_weights(batch, u)
    mean = w @ batch
    # centered form: equal to sum w x x^H - mean mean^H since sum(w) = 1,
    # but without the cancellation when one weight dominates
    resid = batch - mean
    cov = (resid.T * w) @ resid.conj()
    cov = 0.5 * (cov + cov.conj().T)
    total = float(np.sum(np.atleast_1d(evaluate_mt_function(u, batch))))
    return MTMoments(mean=mean, covariance=cov, weight_total=total)
