import numpy as np
import pytest

from meshsplat.backends import MixtureDenoiser, TemplateLibrary
from meshsplat.diffusion import (ConsistencyFunction, NoiseSchedule,
                                 add_noise, consistency_estimate,
                                 ddim_trajectory, lcm_sample, seeded_rng)


@pytest.fixture(scope="module")
def sched():
    return NoiseSchedule(T=1000, delta=1, kind="cosine")


def _library(rng, k, shape=(8, 8, 3), separation=1.0):
    base = rng.random((k,) + shape)
    # push templates apart so posterior basins are well separated
    offsets = separation * np.linspace(-1, 1, k)[:, None, None, None]
    return TemplateLibrary(templates=np.clip(base + offsets, -2, 3))


def test_variance_preserving_identity(sched):
    ts = np.arange(0, sched.T + 1)
    err = np.abs(sched.alpha(ts) ** 2 + sched.sigma(ts) ** 2 - 1.0)
    assert err.max() < 1e-12


def test_alpha_bar_strictly_decreasing(sched):
    assert np.all(np.diff(sched.alpha_bar) < 0)


def test_linear_schedule_also_valid():
    lin = NoiseSchedule(T=500, delta=1, kind="linear")
    ts = np.arange(0, 501)
    assert np.all(np.diff(lin.alpha_bar) < 0)
    err = np.abs(lin.alpha(ts) ** 2 + lin.sigma(ts) ** 2 - 1.0)
    assert err.max() < 1e-12


def test_add_noise_identity_at_zero(sched):
    rng = seeded_rng(0, 1)
    x0 = rng.random((6, 6, 3))
    noise = rng.standard_normal((6, 6, 3))
    out = add_noise(x0, 0, noise, sched)
    assert np.array_equal(out, x0)


def test_add_noise_terminal_is_noise(sched):
    rng = seeded_rng(0, 2)
    x0 = rng.random((32, 32, 3))
    noise = rng.standard_normal((32, 32, 3))
    x_T = add_noise(x0, sched.T, noise, sched)
    rel = np.linalg.norm(x_T - noise) / np.linalg.norm(noise)
    assert rel < 0.05


def test_add_noise_variance_check(sched):
    rng = seeded_rng(0, 3)
    t = 400
    x0 = rng.random(10_000)  # Var = 1/12
    noise = rng.standard_normal(10_000)
    x_t = add_noise(x0, t, noise, sched)
    want = sched.alpha(t) ** 2 * x0.var() + sched.sigma(t) ** 2
    assert x_t.var() == pytest.approx(want, rel=0.03)


def test_add_noise_range_check(sched):
    with pytest.raises(ValueError):
        add_noise(np.zeros(3), sched.T + 1, np.zeros(3), sched)


def test_boundary_scalings_exact(sched):
    cf = ConsistencyFunction(denoiser=lambda x, c, t: np.zeros_like(x),
                             schedule=sched)
    assert cf.c_skip(sched.delta) == 1.0
    assert cf.c_out(sched.delta) == 0.0
    ts = np.arange(sched.delta, sched.T + 1)
    cs = np.array([cf.c_skip(t) for t in ts])
    co = np.array([cf.c_out(t) for t in ts])
    # smooth monotone ramps: skip fades out, out fades in
    assert np.all(np.diff(cs) < 0)
    assert np.all(np.diff(co) > 0)
    assert np.all((cs > 0) & (cs <= 1.0))
    assert np.all((co >= 0) & (co <= 1.0))


def test_boundary_estimate_is_identity(sched):
    rng = seeded_rng(1, 0)
    lib = _library(rng, 2)
    cf = ConsistencyFunction(denoiser=MixtureDenoiser(lib, sched),
                             schedule=sched)
    x = rng.standard_normal((8, 8, 3))
    out = consistency_estimate(x, None, sched.delta, cf)
    assert np.array_equal(out, x)


def test_estimate_single_template_pure_x0(sched):
    rng = seeded_rng(1, 1)
    mu = rng.random((8, 8, 3))
    lib = TemplateLibrary(templates=mu[None])
    cf = ConsistencyFunction(denoiser=MixtureDenoiser(lib, sched),
                             schedule=sched,
                             c_skip=lambda t: 0.0, c_out=lambda t: 1.0)
    for t in (50, 500, 1000):
        x = rng.standard_normal((8, 8, 3))
        out = consistency_estimate(x, None, t, cf)
        np.testing.assert_allclose(out, mu, atol=1e-9)


def test_estimate_range_check(sched):
    cf = ConsistencyFunction(denoiser=lambda x, c, t: np.zeros_like(x),
                             schedule=sched)
    with pytest.raises(ValueError):
        consistency_estimate(np.zeros((4, 4)), None, 0, cf)


def test_self_consistency_point_mass_exact(sched):
    # K=1: f is constant along the trajectory up to float precision
    rng = seeded_rng(2, 0)
    mu = rng.random((8, 8, 3))
    lib = TemplateLibrary(templates=mu[None])
    den = MixtureDenoiser(lib, sched)
    cf = ConsistencyFunction(denoiser=den, schedule=sched)
    t_start = 700
    x_start = add_noise(mu, t_start, rng.standard_normal(mu.shape), sched)
    evals = [100, 250, 400, 550, 700]
    traj = ddim_trajectory(x_start, t_start, None, den, sched,
                           record_at=evals)
    fs = [cf.estimate(traj[t], None, t) for t in evals]
    scale = np.linalg.norm(fs[0])
    devs = [np.linalg.norm(f - fs[0]) / scale for f in fs[1:]]
    assert max(devs) < 1e-9


def test_self_consistency_mixture_along_trajectory(sched):
    rng = seeded_rng(2, 1)
    lib = _library(rng, 3, separation=1.5)
    den = MixtureDenoiser(lib, sched)
    cf = ConsistencyFunction(denoiser=den, schedule=sched)
    t_start = 650
    x_start = add_noise(lib.templates[2], t_start,
                        rng.standard_normal(lib.templates[2].shape), sched)
    evals = [60, 200, 350, 500, 650]
    traj = ddim_trajectory(x_start, t_start, None, den, sched,
                           record_at=evals)
    fs = [cf.estimate(traj[t], None, t) for t in evals]
    scale = np.mean([np.linalg.norm(f) for f in fs])
    worst = max(np.linalg.norm(fi - fj) / scale
                for i, fi in enumerate(fs) for fj in fs[i + 1:])
    assert worst < 1e-2


def test_lcm_single_step_equals_estimate(sched):
    rng = seeded_rng(3, 0)
    lib = _library(rng, 2)
    cf = ConsistencyFunction(denoiser=MixtureDenoiser(lib, sched),
                             schedule=sched)
    shape = (8, 8, 3)
    out = lcm_sample(None, cf, [sched.T], seeded_rng(42, 0), shape)
    want = cf.estimate(seeded_rng(42, 0).standard_normal(shape), None, sched.T)
    assert np.array_equal(out, want)


def test_lcm_degenerate_k1(sched):
    rng = seeded_rng(3, 1)
    mu = rng.random((8, 8, 3))
    lib = TemplateLibrary(templates=mu[None])
    cf = ConsistencyFunction(denoiser=MixtureDenoiser(lib, sched),
                             schedule=sched)
    steps = [1000, 750, 500, 250, 1]
    for seed in range(5):
        out = lcm_sample(None, cf, steps, seeded_rng(seed, 9), mu.shape)
        rel = np.linalg.norm(out - mu) / np.linalg.norm(mu)
        assert rel < 0.02


def test_lcm_mode_seeking_k4(sched):
    rng = seeded_rng(3, 2)
    lib = _library(rng, 4, separation=1.5)
    cf = ConsistencyFunction(denoiser=MixtureDenoiser(lib, sched),
                             schedule=sched)
    steps = [1000, 667, 334, 1]
    hits = 0
    for seed in range(100):
        out = lcm_sample(None, cf, steps, seeded_rng(seed, 17),
                         lib.templates[0].shape)
        dists = [np.linalg.norm(out - mu) / np.linalg.norm(mu)
                 for mu in lib.templates]
        if min(dists) < 0.05:
            hits += 1
    assert hits >= 95


def test_lcm_rejects_bad_steps(sched):
    cf = ConsistencyFunction(denoiser=lambda x, c, t: np.zeros_like(x),
                             schedule=sched)
    with pytest.raises(ValueError):
        lcm_sample(None, cf, [], seeded_rng(0, 0), (4, 4))
    with pytest.raises(ValueError):
        lcm_sample(None, cf, [100, 100], seeded_rng(0, 0), (4, 4))
    with pytest.raises(ValueError):
        lcm_sample(None, cf, [500, 0], seeded_rng(0, 0), (4, 4))


def test_seeded_rng_reproducible():
    a = seeded_rng(7, 1, 2).standard_normal(16)
    b = seeded_rng(7, 1, 2).standard_normal(16)
    c = seeded_rng(7, 1, 3).standard_normal(16)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
