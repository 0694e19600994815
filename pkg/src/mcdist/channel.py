"""Analytic model of an unbounded 3-D diffusive channel with flow and degradation.

All quantities are SI (meters, seconds). The receiver is a passive sphere
centred at the origin and the transmitter sits at ``(-d, 0, 0)``; the expected
count uses the uniform-concentration approximation (concentration at the
receiver centre times the receiver volume).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace


class Correction(str, enum.Enum):
    """Flags describing how a degenerate inversion was resolved."""

    ZERO_OBSERVATION = "ZeroObservation"
    NEGATIVE_DISCRIMINANT_OR_LOG = "NegativeDiscriminantOrLog"
    NEGATIVE_ROOT = "NegativeRoot"
    COIN_TOSS = "CoinToss"
    THRESHOLD_NEVER_CROSSED = "ThresholdNeverCrossed"
    SATURATED = "Saturated"

    def __str__(self) -> str:
        return self.value


#: Count substituted for an observation of zero molecules before inverting.
ZERO_OBSERVATION_SUBSTITUTE = 0.1


@dataclass(frozen=True)
class EnvironmentParams:
    d: float
    v_par: float = 0.0
    v_perp: float = 0.0
    diff_coeff: float = 1e-9
    k_degrade: float = 0.0
    n_emitted: int = 100_000
    r_rx: float = 0.5e-6

    def __post_init__(self):
        if not self.diff_coeff > 0:
            raise ValueError(f"diff_coeff must be > 0, got {self.diff_coeff}")
        if self.k_degrade < 0:
            raise ValueError(f"k_degrade must be >= 0, got {self.k_degrade}")
        if self.v_perp < 0:
            raise ValueError(f"v_perp must be >= 0, got {self.v_perp}")
        if self.n_emitted < 1:
            raise ValueError(f"n_emitted must be >= 1, got {self.n_emitted}")
        if not self.r_rx > 0:
            raise ValueError(f"r_rx must be > 0, got {self.r_rx}")
        if not math.isfinite(self.d) or self.d < 0:
            raise ValueError(f"d must be finite and >= 0, got {self.d}")

    @property
    def v_rx(self) -> float:
        """Receiver volume in m^3."""
        return 4.0 / 3.0 * math.pi * self.r_rx**3

    @property
    def eta(self) -> float:
        """Combined flow/degradation rate (1/s) governing the peak time."""
        return (self.v_par**2 + self.v_perp**2) / self.diff_coeff + 4.0 * self.k_degrade

    def with_(self, **changes) -> "EnvironmentParams":
        return replace(self, **changes)


def system1(d: float = 4e-6, r_rx: float = 0.5e-6) -> EnvironmentParams:
    """Environment without flow or degradation."""
    return EnvironmentParams(d=d, r_rx=r_rx)


def system2(v_par: float = 0.0, d: float = 4e-6, r_rx: float = 0.5e-6) -> EnvironmentParams:
    """Environment with degradation (k = 62.5 1/s) and a variable parallel flow."""
    return EnvironmentParams(d=d, v_par=v_par, k_degrade=62.5, r_rx=r_rx)


def _check_time(t: float) -> None:
    if not t > 0:
        raise ValueError(f"time must be > 0, got {t}")


def log_expected_count(env: EnvironmentParams, d: float, t: float) -> float:
    """Natural log of :func:`expected_count`; finite where the count underflows."""
    _check_time(t)
    four_dt = 4.0 * env.diff_coeff * t
    r_eff2 = (d - env.v_par * t) ** 2 + (env.v_perp * t) ** 2
    return (
        math.log(env.n_emitted * env.v_rx)
        - 1.5 * math.log(math.pi * four_dt)
        - env.k_degrade * t
        - r_eff2 / four_dt
    )


def expected_count(env: EnvironmentParams, d: float, t: float) -> float:
    """Expected number of molecules inside the receiver at time ``t`` after release.

    Returns 0.0 rather than NaN when the exponential underflows.
    """
    return math.exp(log_expected_count(env, d, t))


@dataclass(frozen=True)
class DistanceSolutionSet:
    """Candidate distances from inverting one observation.

    ``flags`` holds every correction that fired, ``correction`` the first
    one in the order zero-observation, negative discriminant, negative root.
    """

    roots: tuple[float, ...] = ()
    flags: frozenset[Correction] = field(default_factory=frozenset)

    @property
    def correction(self) -> Correction | None:
        for c in (
            Correction.ZERO_OBSERVATION,
            Correction.NEGATIVE_DISCRIMINANT_OR_LOG,
            Correction.NEGATIVE_ROOT,
        ):
            if c in self.flags:
                return c
        return None


def invert_count(env: EnvironmentParams, s: float, t: float) -> DistanceSolutionSet:
    """Solve the impulse response for the distance that produces ``s`` at ``t``.

    Returns 0, 1 or 2 non-negative roots in ascending order. An observation
    of zero is replaced by 0.1; a negative radicand or an all-negative root
    set yields no roots (the estimate is then taken as 0).
    """
    _check_time(t)
    if s < 0:
        raise ValueError(f"observed count must be >= 0, got {s}")
    flags = set()
    if s == 0:
        s = ZERO_OBSERVATION_SUBSTITUTE
        flags.add(Correction.ZERO_OBSERVATION)

    D = env.diff_coeff
    log_ratio = math.log(env.n_emitted * env.v_rx) - math.log(s) - 1.5 * math.log(4.0 * math.pi * D * t)
    radicand = 4.0 * D * t * log_ratio - t * t * (env.v_perp**2 + 4.0 * env.k_degrade * D)
    if radicand < 0:
        flags.add(Correction.NEGATIVE_DISCRIMINANT_OR_LOG)
        return DistanceSolutionSet((), frozenset(flags))

    shift = env.v_par * t
    half_width = math.sqrt(radicand)
    candidates = sorted({shift - half_width, shift + half_width})
    roots = tuple(r for r in candidates if r >= 0)
    if not roots:
        flags.add(Correction.NEGATIVE_ROOT)
    return DistanceSolutionSet(roots, frozenset(flags))


def peak_time(env: EnvironmentParams, d: float) -> float:
    """Time at which the expected count peaks for a transmitter at distance ``d``."""
    if not d > 0:
        raise ValueError(f"d must be > 0, got {d}")
    eta = env.eta
    D = env.diff_coeff
    if eta == 0:
        return d * d / (6.0 * D)
    # (-3 + sqrt(9 + x)) / eta rewritten to avoid cancellation for small eta
    return d * d / (D * (3.0 + math.sqrt(9.0 + d * d * eta / D)))


def peak_count_closed_form(env: EnvironmentParams, d: float) -> float:
    """Peak expected count without flow or degradation."""
    return env.n_emitted * env.v_rx * math.exp(-1.5) / ((2.0 * math.pi / 3.0) ** 1.5 * d**3)


def peak_count(env: EnvironmentParams, d: float) -> float:
    """Expected count at :func:`peak_time`."""
    if not d > 0:
        raise ValueError(f"d must be > 0, got {d}")
    if env.eta == 0:
        return peak_count_closed_form(env, d)
    return expected_count(env, d, peak_time(env, d))
