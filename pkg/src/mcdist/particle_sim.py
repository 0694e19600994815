"""Particle-based simulation of an impulsive release observed by a passive spherical receiver.

Molecules start at ``(-d, 0, 0)``, the receiver is centred at the origin.
Each step a surviving molecule moves by drift plus a Gaussian displacement
with per-axis variance ``2 D dt`` and then degrades with probability
``k dt``; molecules inside the receiver are counted at the end of the step.

Random streams are keyed by ``(seed, *stream, realization_index)`` through
``numpy.random.SeedSequence`` spawn keys, so realizations can run in any
order or in parallel and still reproduce bit for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .channel import EnvironmentParams
from .crlb import ObservationSeries, means

_CHUNK = 4096


class SimMode(str, enum.Enum):
    PARTICLE = "particle"
    POISSON = "poisson"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-4
    n_steps: int = 200
    seed: int = 0
    mode: SimMode = SimMode.PARTICLE

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        object.__setattr__(self, "mode", SimMode(self.mode))

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.n_steps + 1)

    def check(self, env: EnvironmentParams) -> None:
        if env.k_degrade * self.dt >= 1:
            raise ValueError(
                f"k*dt = {env.k_degrade * self.dt} is not a valid per-step degradation probability"
            )


def realization_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for one ``(seed, key...)`` combination."""
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(seed, spawn_key=key)))


def sample_poisson_series(env: EnvironmentParams, d: float, times, seed: int,
                          realization_index: int, stream: tuple = ()) -> ObservationSeries:
    """Independent Poisson counts with the analytic expected counts as means."""
    rng = realization_rng(seed, *stream, realization_index)
    mu = means(env, d, times)
    return ObservationSeries(np.asarray(times, dtype=float), rng.poisson(mu))


def _lifetimes(env, cfg, rng, n):
    """Number of steps each molecule is counted before it degrades."""
    p = env.k_degrade * cfg.dt
    if p == 0:
        return np.full(n, cfg.n_steps, dtype=np.int64)
    # degradation happens after the move and before counting in the step it occurs
    return np.minimum(rng.geometric(p, size=n) - 1, cfg.n_steps)


def _particle_counts(env: EnvironmentParams, cfg: SimConfig, rng: np.random.Generator,
                     perp_axis: int = 1) -> np.ndarray:
    n_steps = cfg.n_steps
    sigma = math.sqrt(2.0 * env.diff_coeff * cfg.dt)
    r2 = env.r_rx**2
    life = _lifetimes(env, cfg, rng, env.n_emitted)
    step_no = np.arange(1, n_steps + 1)
    counts = np.zeros(n_steps, dtype=np.int64)
    buf = np.empty(n_steps * _CHUNK)

    for start in range(0, env.n_emitted, _CHUNK):
        c = min(_CHUNK, env.n_emitted - start)
        x = buf[: n_steps * c].reshape(n_steps, c)
        rng.standard_normal(out=x)
        x *= sigma
        x[0] += env.v_par * cfg.dt - env.d
        x[1:] += env.v_par * cfg.dt
        for j in range(1, n_steps):
            np.add(x[j], x[j - 1], out=x[j])
        band = np.abs(x) <= env.r_rx
        if env.k_degrade > 0:
            band &= step_no[:, None] <= life[None, start:start + c]
        # transpose so hits come out grouped by particle, steps ascending
        p_idx, s_idx = np.nonzero(band.T)
        if p_idx.size == 0:
            continue

        # y and z are independent of x: sample them only where x is inside the band,
        # with Gaussian increments spanning the gap since the previous sampled step
        step = s_idx + 1
        first = np.ones(step.size, dtype=bool)
        first[1:] = p_idx[1:] != p_idx[:-1]
        prev = np.zeros_like(step)
        prev[1:] = step[:-1]
        prev[first] = 0
        gap = (step - prev).astype(float)
        inc = rng.standard_normal((step.size, 2)) * (sigma * np.sqrt(gap))[:, None]
        inc[:, perp_axis - 1] += env.v_perp * cfg.dt * gap
        cum = np.cumsum(inc, axis=0)
        starts = np.flatnonzero(first)
        offset = cum[starts] - inc[starts]
        yz = cum - offset[np.cumsum(first) - 1]

        rr = x[s_idx, p_idx] ** 2 + yz[:, 0] ** 2 + yz[:, 1] ** 2
        counts += np.bincount(s_idx[rr <= r2], minlength=n_steps)
    return counts


def simulate_realization(env: EnvironmentParams, cfg: SimConfig, realization_index: int,
                         stream: tuple = (), perp_axis: int = 1) -> ObservationSeries:
    """Counts observed at ``dt, 2 dt, ..., n_steps dt`` for one realization.

    Poisson mode draws independent Poisson counts around the analytic means
    instead of tracking molecules. ``perp_axis`` (1 = y, 2 = z) picks the axis
    carrying the perpendicular flow.
    """
    if perp_axis not in (1, 2):
        raise ValueError(f"perp_axis must be 1 or 2, got {perp_axis}")
    cfg.check(env)
    if cfg.mode is SimMode.POISSON:
        return sample_poisson_series(env, env.d, cfg.times, cfg.seed, realization_index, stream)
    rng = realization_rng(cfg.seed, *stream, realization_index)
    return ObservationSeries(cfg.times, _particle_counts(env, cfg, rng, perp_axis))


@dataclass
class ParticleState:
    positions: np.ndarray  # (n, 3), meters, receiver-centred
    alive: np.ndarray
    counts: np.ndarray


def step_particles(env: EnvironmentParams, cfg: SimConfig, rng: np.random.Generator,
                   n_particles: int | None = None, perp_axis: int = 1) -> ParticleState:
    """Move every molecule step by step in 3-D (slow, literal reference path)."""
    cfg.check(env)
    n = env.n_emitted if n_particles is None else n_particles
    sigma = math.sqrt(2.0 * env.diff_coeff * cfg.dt)
    drift = np.zeros(3)
    drift[0] = env.v_par * cfg.dt
    drift[perp_axis] = env.v_perp * cfg.dt
    p_degrade = env.k_degrade * cfg.dt
    pos = np.zeros((n, 3))
    pos[:, 0] = -env.d
    alive = np.ones(n, dtype=bool)
    counts = np.zeros(cfg.n_steps, dtype=np.int64)
    for i in range(cfg.n_steps):
        idx = np.flatnonzero(alive)
        pos[idx] += drift + sigma * rng.standard_normal((idx.size, 3))
        if p_degrade > 0:
            alive[idx[rng.random(idx.size) < p_degrade]] = False
        inside = np.einsum("ij,ij->i", pos, pos) <= env.r_rx**2
        counts[i] = np.count_nonzero(inside & alive)
    return ParticleState(pos, alive, counts)


def simulate_realization_reference(env: EnvironmentParams, cfg: SimConfig, realization_index: int,
                                   stream: tuple = ()) -> ObservationSeries:
    rng = realization_rng(cfg.seed, *stream, realization_index)
    return ObservationSeries(cfg.times, step_particles(env, cfg, rng).counts)


def exact_sphere_mean(env: EnvironmentParams, t) -> np.ndarray:
    """Expected molecules inside the receiver without the uniform-concentration approximation.

    Integrates the Gaussian point-source concentration over the receiver
    sphere; flow is folded in through the effective distance.
    """
    from scipy.special import erf

    t = np.asarray(t, dtype=float)
    r = env.r_rx
    D = env.diff_coeff
    rho = np.sqrt((env.d - env.v_par * t) ** 2 + (env.v_perp * t) ** 2)
    a = np.sqrt(4.0 * D * t)
    total = 0.5 * (erf((r - rho) / a) + erf((r + rho) / a)) + np.sqrt(D * t / np.pi) / rho * (
        np.exp(-((rho + r) ** 2) / a**2) - np.exp(-((rho - r) ** 2) / a**2)
    )
    return env.n_emitted * np.exp(-env.k_degrade * t) * total
