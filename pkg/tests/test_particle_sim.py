import math

import numpy as np
import pytest

from mcdist.channel import EnvironmentParams, system1, system2
from mcdist.crlb import means
from mcdist.particle_sim import (
    SimConfig,
    SimMode,
    _lifetimes,
    exact_sphere_mean,
    realization_rng,
    sample_poisson_series,
    simulate_realization,
    simulate_realization_reference,
    step_particles,
)

UM, MS = 1e-6, 1e-3


def mean_counts(env, cfg, n, **kw):
    return np.array([simulate_realization(env, cfg, r, **kw).counts for r in range(n)], dtype=float)


def max_z(a, b):
    """Largest per-time two-sample z statistic between realization matrices a and b."""
    se = np.sqrt(a.var(axis=0, ddof=1) / len(a) + b.var(axis=0, ddof=1) / len(b))
    ok = se > 0
    return float(np.max(np.abs(a.mean(axis=0) - b.mean(axis=0))[ok] / se[ok]))


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(n_steps=0)
    with pytest.raises(ValueError):
        SimConfig(seed=-1)
    assert SimConfig(mode="poisson").mode is SimMode.POISSON
    np.testing.assert_allclose(SimConfig().times[[0, -1]], [1e-4, 2e-2])


def test_degradation_probability_must_be_valid():
    cfg = SimConfig()
    env = system1().with_(k_degrade=1e4)  # k*dt = 1
    with pytest.raises(ValueError):
        simulate_realization(env, cfg, 0)
    with pytest.raises(ValueError):
        step_particles(env, cfg, realization_rng(0, 0), n_particles=10)
    assert system2().k_degrade * cfg.dt == pytest.approx(6.25e-3, rel=1e-15)


@pytest.mark.parametrize("mode", ["particle", "poisson"])
def test_same_key_is_bit_identical(mode):
    env = system1().with_(n_emitted=20_000)
    cfg = SimConfig(n_steps=60, seed=11, mode=mode)
    a = simulate_realization(env, cfg, 3, stream=(2,))
    b = simulate_realization(env, cfg, 3, stream=(2,))
    assert np.array_equal(a.counts, b.counts) and np.array_equal(a.times, b.times)


@pytest.mark.parametrize("mode", ["particle", "poisson"])
def test_distinct_keys_give_distinct_streams(mode):
    env = system1().with_(n_emitted=20_000)
    cfg = SimConfig(n_steps=60, seed=11, mode=mode)
    series = [simulate_realization(env, cfg, r).counts for r in range(4)]
    series.append(simulate_realization(env, cfg, 0, stream=(1,)).counts)
    series.append(simulate_realization(env, SimConfig(n_steps=60, seed=12, mode=mode), 0).counts)
    for i in range(len(series)):
        for j in range(i):
            assert not np.array_equal(series[i], series[j])


def test_stream_keys_do_not_collide():
    # permuted or shortened keys must not alias
    a = realization_rng(0, 1, 2).integers(2**63, size=4)
    b = realization_rng(0, 2, 1).integers(2**63, size=4)
    c = realization_rng(0, 1).integers(2**63, size=4)
    assert len({tuple(a), tuple(b), tuple(c)}) == 3


def test_pure_drift_arrival():
    n, dt = 25, 1e-4
    d = 10 * UM
    # diffusion is required to be positive; 1e-30 m^2/s moves a molecule ~1e-17 m per step
    env = EnvironmentParams(d=d, v_par=d / (n * dt), diff_coeff=1e-30, n_emitted=5000, r_rx=0.1 * UM)
    cfg = SimConfig(dt=dt, n_steps=40)
    expect = np.zeros(40, dtype=int)
    expect[n - 1] = env.n_emitted
    assert np.array_equal(simulate_realization(env, cfg, 0).counts, expect)
    assert np.array_equal(simulate_realization_reference(env, cfg, 0).counts, expect)


def test_displacement_variance_per_axis():
    n_part, n_steps = 100_000, 12
    env = system1(d=0.0)
    cfg = SimConfig(n_steps=n_steps)
    st = step_particles(env, cfg, realization_rng(5, 0), n_particles=n_part)
    target = 2 * env.diff_coeff * n_steps * cfg.dt
    # sample variance of n normals has sd target * sqrt(2 / (n - 1))
    tol = 5 * target * math.sqrt(2 / (n_part - 1))
    for axis in range(3):
        assert abs(st.positions[:, axis].var(ddof=1) - target) < tol
        assert abs(st.positions[:, axis].mean()) < 5 * math.sqrt(target / n_part)


def test_survivors_follow_binomial_thinning():
    env = system2()
    cfg = SimConfig(n_steps=150)
    p = (1 - env.k_degrade * cfg.dt) ** cfg.n_steps
    n = env.n_emitted
    sd = math.sqrt(n * p * (1 - p))
    st = step_particles(env, cfg, realization_rng(1, 0), n_particles=n)
    assert abs(st.alive.sum() - n * p) < 4 * sd
    # the fast path's lifetimes obey the same law at every step
    life = _lifetimes(env, cfg, realization_rng(2, 0), n)
    for k in (1, 10, 75, 150):
        pk = (1 - env.k_degrade * cfg.dt) ** k
        assert abs(np.count_nonzero(life >= k) - n * pk) < 4 * math.sqrt(n * pk * (1 - pk))


def test_fast_path_matches_reference_path():
    env = system2(v_par=1e-3).with_(n_emitted=20_000, v_perp=0.5e-3)
    cfg = SimConfig(n_steps=60, seed=3)
    fast = mean_counts(env, cfg, 60)
    ref = np.array([simulate_realization_reference(env, cfg, r, stream=(9,)).counts for r in range(60)], float)
    assert max_z(fast, ref) < 4.5


def test_fast_path_matches_exact_sphere_mean():
    env = system1()
    cfg = SimConfig(n_steps=100)
    counts = mean_counts(env, cfg, 40)
    exact = exact_sphere_mean(env, cfg.times)
    # counts are Poisson-like, so the sd of a mean of 40 is about sqrt(exact / 40)
    live = exact > 1
    z = (counts.mean(axis=0) - exact)[live] / np.sqrt(exact[live] / 40)
    assert np.max(np.abs(z)) < 5


def test_exact_sphere_mean_approaches_point_approximation_far_away():
    env = system1()
    t = np.array([5e-3, 10e-3, 20e-3])
    gap = np.abs(exact_sphere_mean(env, t) / means(env, env.d, t) - 1)
    assert np.all(np.diff(gap) < 0) and gap[0] < 1e-2


def test_perpendicular_flow_axis_is_irrelevant():
    env = system1().with_(n_emitted=20_000, v_perp=1e-3)
    cfg = SimConfig(n_steps=60)
    y = mean_counts(env, cfg, 60, perp_axis=1)
    z = mean_counts(env, cfg, 60, stream=(1,), perp_axis=2)
    assert max_z(y, z) < 4.5
    with pytest.raises(ValueError):
        simulate_realization(env, cfg, 0, perp_axis=0)


def test_poisson_mode_mean_and_variance():
    env = system1()
    times = np.linspace(0.5e-3, 20e-3, 1_000_000)
    mu = means(env, env.d, times)
    s = sample_poisson_series(env, env.d, times, seed=4, realization_index=0).counts
    assert abs(s.sum() / mu.sum() - 1) < 0.01
    assert abs(np.sum((s - mu) ** 2) / mu.sum() - 1) < 0.02


def test_poisson_mode_zero_mean_gives_zero():
    env = system1()
    times = np.array([1e-4, 2e-4, 3e-4])
    assert np.all(means(env, 1e-2, times) == 0)
    s = sample_poisson_series(env, 1e-2, times, seed=0, realization_index=0)
    assert np.all(s.counts == 0)


def test_poisson_mode_dispatch():
    env = system1()
    cfg = SimConfig(seed=8, mode="poisson")
    a = simulate_realization(env, cfg, 5, stream=(1,))
    b = sample_poisson_series(env, env.d, cfg.times, 8, 5, stream=(1,))
    assert np.array_equal(a.counts, b.counts)
