"""Monte Carlo runner: sweep distance or flow, run every protocol on each realization,
aggregate MSE, bias and variance, and pair them with the CRLB."""

from __future__ import annotations

import enum
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .channel import Correction, EnvironmentParams
from .crlb import ObservationSeries, UnboundedCRLBError, crlb, means
from .estimators import (
    MlSearchSpec,
    envd_estimate,
    ml_estimate,
    rtt_estimate,
    sat_estimate,
)
from .particle_sim import SimConfig, realization_rng, simulate_realization

logger = logging.getLogger(__name__)

_BATCH = 100


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SatConfig:
    t_sa: float

    @property
    def label(self) -> str:
        return f"SAT_t{self.t_sa * 1e3:g}ms"


@dataclass(frozen=True)
class RttConfig:
    tau: float

    @property
    def label(self) -> str:
        return f"RTT_tau{self.tau:g}"


@dataclass(frozen=True)
class EnvdConfig:
    window: int
    search: MlSearchSpec = MlSearchSpec()

    @property
    def label(self) -> str:
        return f"ENVD_w{self.window}"


@dataclass(frozen=True)
class MlConfig:
    search: MlSearchSpec = MlSearchSpec()

    @property
    def label(self) -> str:
        return "ML"


ProtocolConfig = Union[SatConfig, RttConfig, EnvdConfig, MlConfig]


class SweepKind(str, enum.Enum):
    DISTANCE = "distance"
    FLOW_PARALLEL = "flow_parallel"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Sweep:
    kind: SweepKind
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", SweepKind(self.kind))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


def sample_index(t: float, dt: float, n_steps: int) -> int:
    """Index of the sample time nearest ``t`` on the grid ``dt, 2dt, ...``; exact ties round down."""
    if not 0 < t <= n_steps * dt * (1 + 1e-12):
        raise ConfigError(f"time {t} s lies outside the simulated window (0, {n_steps * dt}] s")
    pos = round(t / dt, 9)  # absorb representation error such as 2.5e-3/1e-4
    k = math.ceil(pos - 0.5)
    return min(max(k, 1), n_steps) - 1


@dataclass(frozen=True)
class ExperimentConfig:
    base_env: EnvironmentParams
    sweep: Sweep
    n_realizations: int = 1000
    sim: SimConfig = SimConfig()
    protocols: tuple[ProtocolConfig, ...] = ()
    noiseless: bool = False  # test hook: counts equal to the expected values

    def __post_init__(self):
        object.__setattr__(self, "protocols", tuple(self.protocols))
        if self.n_realizations < 1:
            raise ConfigError("n_realizations must be >= 1")
        if not self.sweep.values:
            raise ConfigError("sweep list must not be empty")
        labels = [p.label for p in self.protocols]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate protocol configurations: {labels}")
        for p in self.protocols:
            if isinstance(p, SatConfig):
                sample_index(p.t_sa, self.sim.dt, self.sim.n_steps)
            elif isinstance(p, RttConfig) and p.tau < 1:
                raise ConfigError(f"RTT threshold must be >= 1, got {p.tau}")
            elif isinstance(p, EnvdConfig) and (p.window < 1 or p.window % 2 == 0):
                raise ConfigError(f"ENVD window must be a positive odd integer, got {p.window}")
        for v in self.sweep.values:
            try:
                self.sim.check(self.env_at(v))
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc

    def env_at(self, value: float) -> EnvironmentParams:
        if self.sweep.kind is SweepKind.DISTANCE:
            if not value > 0:
                raise ConfigError(f"swept distance must be > 0, got {value}")
            return self.base_env.with_(d=value)
        return self.base_env.with_(v_par=value)


@dataclass
class ProtocolStats:
    label: str
    n: int
    mse: float
    bias: float
    variance: float
    stderr: float
    n_corrections: int
    n_cointoss: int
    correction_counts: dict[str, int] = field(default_factory=dict)


@dataclass
class SweepSummary:
    sweep_value: float
    d_true: float
    per_protocol: dict[str, ProtocolStats]
    crlb_m1: float
    crlb_full: float


def summarize(label: str, d_true: float, d_hat: np.ndarray, flags: Sequence[frozenset]) -> ProtocolStats:
    err = np.asarray(d_hat, dtype=float) - d_true
    sq = err * err
    n = err.size
    mse = float(sq.mean())
    bias = float(err.mean())
    counts = {c.value: sum(c in f for f in flags) for c in Correction}
    return ProtocolStats(
        label=label,
        n=n,
        mse=mse,
        bias=bias,
        variance=max(mse - bias * bias, 0.0),
        stderr=float(sq.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        n_corrections=sum(bool(f - {Correction.COIN_TOSS}) for f in flags),
        n_cointoss=counts[Correction.COIN_TOSS.value],
        correction_counts=counts,
    )


def _observe(cfg: ExperimentConfig, env: EnvironmentParams, point: int, r: int) -> ObservationSeries:
    if cfg.noiseless:
        return ObservationSeries(cfg.sim.times, means(env, env.d, cfg.sim.times))
    return simulate_realization(env, cfg.sim, r, stream=(point,))


def run_realization(cfg: ExperimentConfig, env: EnvironmentParams, point: int, r: int):
    """Estimates of every configured protocol on one shared observation series."""
    series = _observe(cfg, env, point, r)
    rng = realization_rng(cfg.sim.seed, point, r, 1)
    out = []
    for p in cfg.protocols:
        if isinstance(p, SatConfig):
            i = sample_index(p.t_sa, cfg.sim.dt, cfg.sim.n_steps)
            rec = sat_estimate(env, float(series.counts[i]), float(series.times[i]), rng)
        elif isinstance(p, RttConfig):
            rec = rtt_estimate(env, series, p.tau, rng)
        elif isinstance(p, EnvdConfig):
            rec = envd_estimate(env, series, p.window, rng, search=p.search)
        else:
            rec = ml_estimate(env, series, p.search, rng)
        out.append(rec)
    return out


def _run_batch(cfg, env, point, lo, hi):
    return [run_realization(cfg, env, point, r) for r in range(lo, hi)]


def _crlb_or_inf(env, d, times) -> float:
    try:
        return crlb(env, d, times)
    except UnboundedCRLBError:
        return math.inf


def worker_count() -> int:
    env_cap = os.environ.get("MCDIST_THREADS")
    if env_cap:
        try:
            return max(1, int(env_cap))
        except ValueError as exc:
            raise ConfigError(f"MCDIST_THREADS must be an integer, got {env_cap!r}") from exc
    return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> list[SweepSummary]:
    """Run every sweep point; results do not depend on ``workers`` or scheduling."""
    workers = workers or worker_count()
    envs = [cfg.env_at(v) for v in cfg.sweep.values]
    jobs = [
        (point, lo, min(lo + _BATCH, cfg.n_realizations))
        for point in range(len(envs))
        for lo in range(0, cfg.n_realizations, _BATCH)
    ]
    if workers == 1:
        batches = [_run_batch(cfg, envs[p], p, lo, hi) for p, lo, hi in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_batch, cfg, envs[p], p, lo, hi) for p, lo, hi in jobs]
            batches = [f.result() for f in futures]

    per_point: list[list] = [[] for _ in envs]
    for (point, _, _), batch in zip(jobs, batches):
        per_point[point].extend(batch)

    sat = next((p for p in cfg.protocols if isinstance(p, SatConfig)), None)
    summaries = []
    for value, env, records in zip(cfg.sweep.values, envs, per_point):
        stats = {}
        for k, p in enumerate(cfg.protocols):
            recs = [row[k] for row in records]
            stats[p.label] = summarize(p.label, env.d, [r.d_hat for r in recs], [r.corrections for r in recs])
        times = cfg.sim.times
        crlb_m1 = math.nan
        if sat is not None:
            i = sample_index(sat.t_sa, cfg.sim.dt, cfg.sim.n_steps)
            crlb_m1 = _crlb_or_inf(env, env.d, times[i:i + 1])
        summaries.append(SweepSummary(value, env.d, stats, crlb_m1, _crlb_or_inf(env, env.d, times)))
        logger.info("sweep value %g done (%d realizations)", value, cfg.n_realizations)
    return summaries


def crlb_curve(env: EnvironmentParams, d_list: Sequence[float], t_list: Sequence[float]) -> list[tuple[float, float, float]]:
    """Single-sample CRLB for every (distance, time) pair, as (d, t, crlb) rows."""
    return [(d, t, _crlb_or_inf(env, d, [t])) for d in d_list for t in t_list]
