"""Distance estimators: SA-T, RTT-T, ENVD and maximum likelihood.

Every estimator returns an :class:`EstimateRecord` with a finite,
non-negative estimate; degenerate observations are absorbed by corrections
that are recorded on the record.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .channel import (
    ZERO_OBSERVATION_SUBSTITUTE,
    Correction,
    EnvironmentParams,
    invert_count,
    peak_count,
)
from .crlb import ObservationSeries, log_likelihood, log_means

_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class Protocol(str, enum.Enum):
    SAT = "SAT"
    RTT = "RTT"
    ENVD = "ENVD"
    ML = "ML"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class EstimateRecord:
    d_hat: float
    protocol: Protocol
    corrections: frozenset[Correction] = field(default_factory=frozenset)
    samples_used: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.d_hat) and self.d_hat >= 0):
            raise ValueError(f"estimate must be finite and >= 0, got {self.d_hat}")

    @property
    def corrected(self) -> bool:
        """True when any correction other than a coin toss fired."""
        return bool(self.corrections - {Correction.COIN_TOSS})


@dataclass(frozen=True)
class MlSearchSpec:
    d_min: float = 0.01e-6
    d_max: float = 20e-6
    n_grid: int = 2000
    refine: bool = True

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        if self.n_grid < 2:
            raise ValueError(f"n_grid must be >= 2, got {self.n_grid}")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(self.d_min, self.d_max, self.n_grid)


def _resolve(env, s, t, rng, protocol, samples_used, extra=frozenset()):
    sol = invert_count(env, s, t)
    flags = set(sol.flags) | set(extra)
    if not sol.roots:
        d_hat = 0.0
    elif len(sol.roots) == 1:
        d_hat = sol.roots[0]
    else:
        d_hat = sol.roots[int(rng.integers(2))]
        flags.add(Correction.COIN_TOSS)
    return EstimateRecord(d_hat, protocol, frozenset(flags), samples_used)


def sat_estimate(env: EnvironmentParams, obs_at_tsa: float, t_sa: float, rng) -> EstimateRecord:
    """Invert a single observation taken at a pre-agreed time."""
    return _resolve(env, obs_at_tsa, t_sa, rng, Protocol.SAT, 1)


def rtt_estimate(env: EnvironmentParams, series: ObservationSeries, tau: float, rng) -> EstimateRecord:
    """Invert the threshold value at the first sample whose count reaches ``tau``."""
    if tau < 1:
        raise ValueError(f"threshold must be >= 1, got {tau}")
    crossed = np.flatnonzero(series.counts >= tau)
    if crossed.size == 0:
        return EstimateRecord(
            0.0, Protocol.RTT, frozenset({Correction.THRESHOLD_NEVER_CROSSED}), len(series)
        )
    m = int(crossed[0])
    return _resolve(env, tau, float(series.times[m]), rng, Protocol.RTT, m + 1)


def _windows(counts, w: int) -> np.ndarray:
    if w < 1 or w % 2 == 0:
        raise ValueError(f"window length must be a positive odd integer, got {w}")
    half = (w - 1) // 2
    # edge padding leaves the max/min of a truncated window unchanged
    padded = np.pad(np.asarray(counts, dtype=float), half, mode="edge")
    return sliding_window_view(padded, w)


def moving_max(series: ObservationSeries | np.ndarray, w: int) -> np.ndarray:
    """Centred moving maximum, window truncated at the edges."""
    counts = series.counts if isinstance(series, ObservationSeries) else series
    return _windows(counts, w).max(axis=-1)


def moving_min(series: ObservationSeries | np.ndarray, w: int) -> np.ndarray:
    """Centred moving minimum, window truncated at the edges."""
    counts = series.counts if isinstance(series, ObservationSeries) else series
    return _windows(counts, w).min(axis=-1)


def envelope_peak(series: ObservationSeries, w: int) -> tuple[float, int]:
    """Peak of the mean of the upper and lower envelopes and its first index."""
    mid = 0.5 * (moving_max(series, w) + moving_min(series, w))
    i = int(np.argmax(mid))
    return float(mid[i]), i


def distance_from_peak(env: EnvironmentParams, s_peak: float, d_min: float, d_max: float,
                       tol: float = 1e-10) -> tuple[float, bool]:
    """Distance whose expected peak count equals ``s_peak`` (flow/degradation case).

    The peak count decreases monotonically in ``d``; bisection is done on the
    log of it. Returns ``(d, clamped)`` where ``clamped`` marks a result
    pinned to a search bound.
    """
    target = math.log(s_peak)

    def excess(d):
        return math.log(peak_count(env, d)) - target

    if excess(d_min) <= 0:
        return d_min, True
    if excess(d_max) >= 0:
        return d_max, True
    lo, hi = d_min, d_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), False


def envd_estimate(env: EnvironmentParams, series: ObservationSeries, w: int, rng=None,
                  search: MlSearchSpec | None = None) -> EstimateRecord:
    """Envelope-detector estimate from the peak of the mean envelope.

    Only the peak value is used; the peak time comes from the channel model.
    ``rng`` is accepted for interface symmetry and is not consumed.
    """
    s_peak, _ = envelope_peak(series, w)
    flags = set()
    if s_peak == 0:
        s_peak = ZERO_OBSERVATION_SUBSTITUTE
        flags.add(Correction.ZERO_OBSERVATION)
    if env.eta == 0:
        d_hat = (2.0 * math.pi * math.e / 3.0) ** -0.5 * (env.n_emitted * env.v_rx / s_peak) ** (1.0 / 3.0)
    else:
        search = search or MlSearchSpec()
        d_hat, clamped = distance_from_peak(env, s_peak, search.d_min, search.d_max)
        if clamped and d_hat == search.d_max:
            flags.add(Correction.SATURATED)
    return EstimateRecord(d_hat, Protocol.ENVD, frozenset(flags), len(series))


@functools.lru_cache(maxsize=64)
def _grid_tables(env: EnvironmentParams, times: tuple, spec: MlSearchSpec):
    """Data-independent parts of the log-likelihood on the search grid."""
    t = np.asarray(times)
    grid = spec.grid
    D = env.diff_coeff
    log_mu0 = log_means(env, 0.0, t)  # log lambda_m
    total_mean = np.exp(log_means(env, grid[:, None], t[None, :])).sum(axis=1)
    phi = 1.0 / (4.0 * D * t)
    psi = env.v_par / (2.0 * D)
    return grid, log_mu0, phi, psi, total_mean


def grid_log_likelihood(env: EnvironmentParams, series: ObservationSeries,
                        spec: MlSearchSpec) -> tuple[np.ndarray, np.ndarray]:
    """Log-likelihood at every grid point, dropping the count-only log-factorial term."""
    grid, log_lambda, phi, psi, total_mean = _grid_tables(env, tuple(series.times.tolist()), spec)
    s = series.counts.astype(float)
    ll = (s @ log_lambda) - grid * grid * (s @ phi) + grid * psi * s.sum() - total_mean
    return grid, ll


def _golden_max(f, a: float, b: float, tol: float = 1e-13) -> float:
    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def ml_estimate(env: EnvironmentParams, series: ObservationSeries, spec: MlSearchSpec | None = None,
                rng=None, closed_form_single: bool = True) -> EstimateRecord:
    """Maximum-likelihood distance.

    A single sample is inverted in closed form (same path and coin toss as
    SA-T). Several samples use a uniform grid search over
    ``[spec.d_min, spec.d_max]`` (ties go to the smallest distance) with an
    optional golden-section refinement inside the winning cell.
    """
    if len(series) == 0:
        raise ValueError("series must not be empty")
    spec = spec or MlSearchSpec()
    M = len(series)
    if M == 1 and closed_form_single:
        return _resolve(env, float(series.counts[0]), float(series.times[0]), rng, Protocol.ML, 1)

    if not np.any(series.counts > 0):
        return EstimateRecord(spec.d_max, Protocol.ML, frozenset({Correction.SATURATED}), M)

    grid, ll = grid_log_likelihood(env, series, spec)
    g = int(np.argmax(ll))
    d_hat = float(grid[g])
    if spec.refine:
        lo = grid[max(g - 1, 0)]
        hi = grid[min(g + 1, grid.size - 1)]
        cand = _golden_max(lambda d: log_likelihood(env, d, series), float(lo), float(hi))
        if log_likelihood(env, cand, series) >= log_likelihood(env, d_hat, series):
            d_hat = cand
    flags = frozenset({Correction.SATURATED}) if g == grid.size - 1 and d_hat >= spec.d_max else frozenset()
    return EstimateRecord(d_hat, Protocol.ML, flags, M)
