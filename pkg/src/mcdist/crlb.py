"""Poisson observation likelihood, its score, Fisher information and the CRLB on distance."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .channel import EnvironmentParams


class UnboundedCRLBError(ArithmeticError):
    """The observations carry no information about the distance."""


@dataclass(frozen=True)
class ObservationSeries:
    """Molecule counts at strictly increasing sample times.

    Counts are normally integers; real-valued pseudo-counts (e.g. expected
    values) are accepted so noiseless fixed points can be evaluated.
    """

    times: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        counts = np.asarray(self.counts)
        if counts.dtype.kind not in "iuf":
            counts = counts.astype(float)
        if times.ndim != 1 or counts.shape != times.shape:
            raise ValueError("times and counts must be 1-D and of equal length")
        if times.size and (times[0] <= 0 or np.any(np.diff(times) <= 0)):
            raise ValueError("times must be positive and strictly increasing")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class LikelihoodConstants:
    """Per-sample factors such that mean_m(d) = lambda_m * exp(-d^2 phi_m + d psi)."""

    lambda_m: np.ndarray
    phi_m: np.ndarray
    psi: float

    @classmethod
    def from_env(cls, env: EnvironmentParams, times) -> "LikelihoodConstants":
        t = np.asarray(times, dtype=float)
        D = env.diff_coeff
        log_lambda = _log_lambda(env, t)
        return cls(np.exp(log_lambda), 1.0 / (4.0 * D * t), env.v_par / (2.0 * D))

    def exponent(self, d: float) -> np.ndarray:
        return -d * d * self.phi_m + d * self.psi


def _log_lambda(env: EnvironmentParams, t: np.ndarray) -> np.ndarray:
    D = env.diff_coeff
    return (
        math.log(env.n_emitted * env.v_rx)
        - 1.5 * np.log(4.0 * math.pi * D * t)
        - env.k_degrade * t
        - t * (env.v_par**2 + env.v_perp**2) / (4.0 * D)
    )


def log_means(env: EnvironmentParams, d, times) -> np.ndarray:
    """Log of the expected counts; ``d`` may be a scalar or an array broadcast against ``times``."""
    t = np.asarray(times, dtype=float)
    d = np.asarray(d, dtype=float)
    D = env.diff_coeff
    return _log_lambda(env, t) - d * d / (4.0 * D * t) + d * env.v_par / (2.0 * D)


def means(env: EnvironmentParams, d, times) -> np.ndarray:
    return np.exp(log_means(env, d, times))


def log_likelihood(env: EnvironmentParams, d_hypothesis: float, obs: ObservationSeries) -> float:
    """Joint Poisson log-likelihood of ``obs`` for a transmitter at ``d_hypothesis``.

    Means are handled in the log domain, so underflowing means do not produce
    -inf. The -inf sentinel is returned only when a mean is exactly zero in
    the log domain and the matching count is positive.
    """
    s = obs.counts.astype(float)
    log_mu = log_means(env, d_hypothesis, obs.times)
    mu = np.exp(log_mu)
    if np.any(np.isneginf(log_mu) & (s > 0)):
        return -math.inf
    # s * log(mu) with 0 * log(0) = 0
    s_log_mu = np.where(s > 0, s * np.where(np.isneginf(log_mu), 0.0, log_mu), 0.0)
    return float(np.sum(s_log_mu - mu - gammaln(s + 1.0)))


def score(env: EnvironmentParams, d_hypothesis: float, obs: ObservationSeries) -> float:
    """Derivative of :func:`log_likelihood` with respect to the distance.

    Each sample contributes ``-2 s Phi d + s Psi - mu (Psi - 2 Phi d)``, which
    is evaluated as ``(s - mu)(Psi - 2 Phi d)`` so it cancels exactly when the
    counts equal their means.
    """
    return float(score_batch(env, d_hypothesis, obs.times, obs.counts))


def score_batch(env: EnvironmentParams, d: float, times, counts: np.ndarray) -> np.ndarray:
    """Score for many count vectors at once; ``counts`` has shape (..., M)."""
    c = LikelihoodConstants.from_env(env, times)
    mu = means(env, d, times)
    slope = c.psi - 2.0 * c.phi_m * d
    return (np.asarray(counts, dtype=float) - mu) @ slope


def fisher_information(env: EnvironmentParams, d: float, times: Sequence[float]) -> float:
    """Expected information about ``d`` carried by independent samples at ``times`` (1/m^2).

    Computed as sum (v_par - d/t_m)^2 mu_m / (4 D^2).
    """
    t = np.asarray(times, dtype=float)
    mu = means(env, d, t)
    return float(np.sum((env.v_par - d / t) ** 2 * mu) / (4.0 * env.diff_coeff**2))


def fisher_information_constants(env: EnvironmentParams, d: float, times: Sequence[float]) -> float:
    """Same quantity through the likelihood constants: sum Lambda (Psi - 2 Phi d)^2 exp(-d^2 Phi + d Psi)."""
    c = LikelihoodConstants.from_env(env, times)
    return float(np.sum(c.lambda_m * (c.psi - 2.0 * c.phi_m * d) ** 2 * np.exp(c.exponent(d))))


def crlb(env: EnvironmentParams, d: float, times: Sequence[float]) -> float:
    """Lower bound (m^2) on the variance of any unbiased distance estimator."""
    info = fisher_information(env, d, times)
    if not info > 0:
        raise UnboundedCRLBError(f"zero Fisher information at d={d!r}")
    return 1.0 / info
