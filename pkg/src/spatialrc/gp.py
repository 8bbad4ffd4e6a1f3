"""Gaussian-process regression with an exactly periodic kernel.

The memory loop stores one fitted model per completed spatial period. Fitting
solves the regularized kernel system once; after that, posterior-mean queries
are O(N) per point, which is what the per-sample feedforward path needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


class GpFitError(RuntimeError):
    """Kernel system could not be factorized even with jitter escalation."""


@dataclass(frozen=True)
class KernelHyper:
    """Hyper-parameters of the periodic kernel.

    period is the exact repetition interval of the covariance in the input
    lag; length_scale acts on the sine-warped phase, so it is dimensionless
    relative to the period.
    """

    sigma_f: float = 1.0
    sigma_n: float = 1e-6
    period: float = 2.0 * math.pi
    length_scale: float = 0.1

    def __post_init__(self):
        if self.sigma_f <= 0:
            raise ValueError("sigma_f must be positive")
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be nonnegative")
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.length_scale <= 0:
            raise ValueError("length_scale must be positive")


def periodic_kernel(p, p_prime, hyper: KernelHyper):
    """sigma_f^2 exp(-2 sin^2(pi (p - p') / period) / length_scale^2).

    Exactly period-periodic in the lag and symmetric in its arguments;
    broadcasts over array inputs.
    """
    s = np.sin(np.pi * (np.asarray(p, dtype=float) - p_prime) / hyper.period)
    return hyper.sigma_f ** 2 * np.exp(-2.0 * s * s / hyper.length_scale ** 2)


@dataclass
class GpModel:
    """Fitted GP: training data, precomputed weights, and the Cholesky factor.

    Immutable after fit(); posterior queries are pure.
    """

    positions: np.ndarray
    targets: np.ndarray
    alpha: np.ndarray
    hyper: KernelHyper
    chol: tuple = field(repr=False, default=None)

    @property
    def size(self) -> int:
        return self.positions.size

    def posterior_mean(self, p):
        """Sum_i alpha_i k(p_i, p); zero for an empty model (zero prior mean)."""
        p_arr = np.asarray(p, dtype=float)
        if self.size == 0:
            return 0.0 if p_arr.ndim == 0 else np.zeros(p_arr.shape)
        k_star = periodic_kernel(p_arr[..., None], self.positions, self.hyper)
        out = k_star @ self.alpha
        return float(out) if p_arr.ndim == 0 else out

    def posterior_variance(self, p):
        """Posterior variance, clamped into [0, sigma_f^2]."""
        p_arr = np.asarray(p, dtype=float)
        prior = self.hyper.sigma_f ** 2
        if self.size == 0:
            return prior if p_arr.ndim == 0 else np.full(p_arr.shape, prior)
        k_star = periodic_kernel(p_arr[..., None], self.positions, self.hyper)
        flat = k_star.reshape(-1, self.size)
        solved = cho_solve(self.chol, flat.T)
        var = prior - np.einsum("ij,ji->i", flat, solved)
        var = np.clip(var, 0.0, prior)
        return float(var[0]) if p_arr.ndim == 0 else var.reshape(p_arr.shape)


def fit(positions, targets, hyper: KernelHyper) -> GpModel:
    """Fit a GP by solving (K + sigma_n^2 I) alpha = targets.

    The solve is a symmetric positive-definite factorization; if it fails the
    diagonal is jittered in escalating steps before giving up, since tight
    position clusters with small sigma_n make the kernel matrix near-singular.
    """
    positions = np.atleast_1d(np.asarray(positions, dtype=float))
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    if positions.size != targets.size:
        raise ValueError(
            f"positions ({positions.size}) and targets ({targets.size}) "
            "must have equal length"
        )
    if positions.size and not (np.all(np.isfinite(positions))
                               and np.all(np.isfinite(targets))):
        raise ValueError("training data must be finite")
    if positions.size == 0:
        return GpModel(positions, targets, np.zeros(0), hyper)

    gram = periodic_kernel(positions[:, None], positions[None, :], hyper)
    n = positions.size
    last_err = None
    for jitter in JITTERS:
        try:
            chol = cho_factor(
                gram + (hyper.sigma_n ** 2 + jitter) * np.eye(n), lower=True
            )
            break
        except np.linalg.LinAlgError as err:
            last_err = err
    else:
        raise GpFitError(
            f"kernel matrix of {n} points is not positive definite even with "
            f"jitter {JITTERS[-1]}: ill-conditioned training set "
            f"(duplicated positions with sigma_n = {hyper.sigma_n}?)"
        ) from last_err
    alpha = cho_solve(chol, targets)
    return GpModel(positions, targets, alpha, hyper, chol)
