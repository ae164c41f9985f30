import numpy as np
import pytest

from meshsplat.backends import MixtureDenoiser, TemplateLibrary
from meshsplat.diffusion import (ConsistencyFunction, NoiseSchedule,
                                 seeded_rng)
from meshsplat.inpaint import (GuidanceParams, InpaintTask, adaptive_step,
                               default_steps, guided_sample, rectify_epsilon,
                               smooth_l1)


@pytest.fixture(scope="module")
def sched():
    return NoiseSchedule(T=1000, delta=1, kind="cosine")


def _two_template_setup(sched, shape=(16, 16, 3), rng_seed=0):
    """Two templates distinct on both halves; known region is the left."""
    rng = seeded_rng(rng_seed, 100)
    mu1 = np.clip(0.25 + 0.1 * rng.standard_normal(shape), 0, 1)
    mu2 = np.clip(0.75 + 0.1 * rng.standard_normal(shape), 0, 1)
    lib = TemplateLibrary(templates=np.stack([mu1, mu2]))
    cf = ConsistencyFunction(denoiser=MixtureDenoiser(lib, sched),
                             schedule=sched)
    mask = np.zeros(shape[:2], dtype=bool)
    mask[:, : shape[1] // 2] = True
    known = np.where(mask[..., None], mu2, 0.0)
    task = InpaintTask(known=known, mask=mask)
    return lib, cf, task


def test_smooth_l1_branch_values():
    loss_q, _ = smooth_l1(np.array([0.5]), np.array([0.0]), beta=1.0)
    assert loss_q == pytest.approx(0.125)
    loss_l, _ = smooth_l1(np.array([2.0]), np.array([0.0]), beta=1.0)
    assert loss_l == pytest.approx(1.5)


def test_smooth_l1_derivative_matches_finite_differences():
    rng = seeded_rng(1, 0)
    beta = 1.0
    a = rng.uniform(-2, 2, size=1000)
    b = rng.uniform(-2, 2, size=1000)
    # keep samples away from the kink so central differences are clean
    d = a - b
    keep = np.abs(np.abs(d) - beta) > 1e-3
    a, b = a[keep], b[keep]
    _, deriv = smooth_l1(a, b, beta)
    h = 1e-5
    fd = np.empty_like(deriv)
    for i in range(len(a)):
        ap = a.copy(); ap[i] += h
        am = a.copy(); am[i] -= h
        fd[i] = (smooth_l1(ap, b, beta)[0] - smooth_l1(am, b, beta)[0]) / (2 * h)
    assert np.max(np.abs(fd - deriv)) < 1e-6


def test_adaptive_step_arithmetic():
    eps = np.full(10, 2.0)
    g = np.full(10, 0.004)
    assert adaptive_step(0.00375, eps, g) == pytest.approx(1.875)


def test_rectify_noop_for_zero_iterations(sched):
    lib, cf, task = _two_template_setup(sched)
    rng = seeded_rng(2, 0)
    x_t = rng.standard_normal(task.known.shape)
    eps = cf.denoiser(x_t, None, 500)
    out = rectify_epsilon(eps, x_t, 500, task,
                          cf, GuidanceParams(n_g=0))
    assert np.array_equal(out, eps)


def test_rectify_converges_one_timestep(sched):
    lib, cf, task = _two_template_setup(sched)
    rng = seeded_rng(2, 1)
    params = GuidanceParams(n_g=100, lr=0.00375)
    t = 600
    x_t = sched.alpha(t) * lib.templates[1] \
        + sched.sigma(t) * rng.standard_normal(task.known.shape)
    eps0 = cf.denoiser(x_t, None, t)
    m3 = task.mask[..., None] & np.ones(3, bool)
    loss0, _ = smooth_l1(cf.estimate_from_eps(x_t, eps0, t)[task.mask],
                         task.known[task.mask], params.smooth_l1_beta)
    eps1 = rectify_epsilon(eps0, x_t, t, task, cf, params)
    loss1, _ = smooth_l1(cf.estimate_from_eps(x_t, eps1, t)[task.mask],
                         task.known[task.mask], params.smooth_l1_beta)
    assert loss1 <= 0.1 * loss0


def test_rectify_loss_monotone(sched):
    lib, cf, task = _two_template_setup(sched)
    rng = seeded_rng(2, 2)
    t = 500
    x_t = rng.standard_normal(task.known.shape)
    eps = cf.denoiser(x_t, None, t)
    params = GuidanceParams(n_g=1)
    losses = []
    for _ in range(100):
        x0 = cf.estimate_from_eps(x_t, eps, t)
        losses.append(smooth_l1(x0[task.mask], task.known[task.mask], 1.0)[0])
        eps = rectify_epsilon(eps, x_t, t, task, cf, params)
    diffs = np.diff(losses)
    assert np.all(diffs <= 1e-6)


def test_rectify_early_exit_at_optimum(sched):
    lib, cf, task = _two_template_setup(sched)
    t = 400
    rng = seeded_rng(2, 3)
    x_t = rng.standard_normal(task.known.shape)
    # construct an eps whose estimate already matches the known region
    eps = cf.denoiser(x_t, None, t)
    x0 = cf.estimate_from_eps(x_t, eps, t)
    k = -cf.c_out(t) * sched.sigma(t) / sched.alpha(t)
    eps_opt = eps.copy()
    eps_opt[task.mask] += (task.known[task.mask] - x0[task.mask]) / k
    out = rectify_epsilon(eps_opt, x_t, t, task, cf,
                          GuidanceParams(n_g=50))
    np.testing.assert_allclose(out, eps_opt, atol=1e-9)


def test_guided_full_frame_reconstruction(sched):
    lib, cf, _ = _two_template_setup(sched)
    target = lib.templates[1]
    mask = np.ones(target.shape[:2], dtype=bool)
    task = InpaintTask(known=target, mask=mask)
    params = GuidanceParams()
    out = guided_sample(task, cf, sched, params, seeded_rng(7, 0))
    loss, _ = smooth_l1(out[mask], target[mask], 1.0)
    assert loss <= 1e-3


def test_guided_empty_mask_equals_unguided(sched):
    lib, cf, task = _two_template_setup(sched)
    empty = InpaintTask(known=np.zeros_like(task.known),
                        mask=np.zeros(task.mask.shape, bool))
    params_g = GuidanceParams(n_g=100)
    params_0 = GuidanceParams(n_g=0)
    a = guided_sample(empty, cf, sched, params_g, seeded_rng(9, 1))
    b = guided_sample(empty, cf, sched, params_0, seeded_rng(9, 1))
    assert np.array_equal(a, b)


def test_guided_disambiguation_20_of_20(sched):
    lib, cf, task = _two_template_setup(sched)
    params = GuidanceParams(n_g=100, lr=0.00375)
    right = ~task.mask
    correct = 0
    for seed in range(20):
        out = guided_sample(task, cf, sched, params, seeded_rng(seed, 5))
        d2 = np.linalg.norm((out - lib.templates[1])[right])
        d1 = np.linalg.norm((out - lib.templates[0])[right])
        if d2 < d1:
            correct += 1
    assert correct == 20


def test_guided_deterministic(sched):
    lib, cf, task = _two_template_setup(sched)
    params = GuidanceParams()
    a = guided_sample(task, cf, sched, params, seeded_rng(11, 3))
    b = guided_sample(task, cf, sched, params, seeded_rng(11, 3))
    assert np.array_equal(a, b)


def test_palette_pull_after_first_timestep(sched):
    # rectification at the first outer step should drag the next clean
    # estimate's unknown region toward the known region's mean color
    lib, cf, task = _two_template_setup(sched)
    steps = default_steps(sched)
    rng_a = seeded_rng(13, 0)
    rng_b = seeded_rng(13, 0)
    x_a = rng_a.standard_normal(task.known.shape)
    x_b = rng_b.standard_normal(task.known.shape)
    t0, t1 = steps[0], steps[1]
    known_mean = task.known[task.mask].mean(axis=0)
    unknown = ~task.mask

    from meshsplat.inpaint import _posterior_mean_jump

    eps_a = cf.denoiser(x_a, None, t0)
    eps_a = rectify_epsilon(eps_a, x_a, t0, task, cf, GuidanceParams())
    x_a = _posterior_mean_jump(x_a, eps_a, t0, t1, sched)
    est_rect = cf.estimate(x_a, None, t1)

    eps_b = cf.denoiser(x_b, None, t0)
    x_b = _posterior_mean_jump(x_b, eps_b, t0, t1, sched)
    est_plain = cf.estimate(x_b, None, t1)

    d_rect = np.linalg.norm(est_rect[unknown].mean(axis=0) - known_mean)
    d_plain = np.linalg.norm(est_plain[unknown].mean(axis=0) - known_mean)
    assert d_rect < d_plain


def test_default_steps_shape(sched):
    steps = default_steps(sched)
    assert steps[0] == sched.T
    assert steps[-1] == sched.delta
    assert all(a > b for a, b in zip(steps, steps[1:]))
    assert len(steps) == 8


def test_params_validation():
    with pytest.raises(ValueError):
        GuidanceParams(n_g=-1)
    with pytest.raises(ValueError):
        GuidanceParams(lr=0.0)
