"""Appearance-guided sampling: inpainting by rectifying noise predictions.

At each outer sampling timestep the raw noise prediction is refined for a
number of inner iterations: the clean estimate implied by the current
prediction is compared against the known pixels (region M), and the
prediction is nudged along the descent direction of a smooth-L1 loss on
that region.  The clean estimate is affine in the noise prediction with
coefficient -c_out(t) sigma(t) / alpha(t), so the gradient is closed form;
no numerical differentiation is involved.  Step sizes adapt to the ratio
of prediction and gradient magnitudes (scaled by the learning rate) and
are capped by the exact quadratic line-search bound so the masked loss
never increases.

The outer loop is a deterministic posterior-mean update per step,

    x_next = (x_t - ((1 - a) / sqrt(1 - abar_t)) eps) / sqrt(a),
    a = abar_t / abar_next,

with no noise re-injection; the final step lands on the clean image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import ConsistencyFunction, NoiseSchedule

DEFAULT_N_G = 100
DEFAULT_LR = 0.00375
DEFAULT_OUTER_STEPS = 8


def default_steps(schedule: NoiseSchedule,
                  count: int = DEFAULT_OUTER_STEPS) -> list[int]:
    """Uniformly spaced outer timesteps from T down to the boundary."""
    ts = np.linspace(schedule.T, schedule.delta, count)
    out = sorted({int(round(t)) for t in ts}, reverse=True)
    return out


@dataclass
class GuidanceParams:
    n_g: int = DEFAULT_N_G
    lr: float = DEFAULT_LR
    smooth_l1_beta: float = 1.0
    steps: list[int] | None = None

    def __post_init__(self):
        if self.n_g < 0:
            raise ValueError("inner iteration count must be >= 0")
        if self.lr <= 0 or self.smooth_l1_beta <= 0:
            raise ValueError("learning rate and beta must be positive")


@dataclass
class InpaintTask:
    known: np.ndarray   # (H, W, 3) target values, meaningful on mask
    mask: np.ndarray    # (H, W) bool, True = KNOWN pixel
    cond: object = None

    def __post_init__(self):
        self.known = np.asarray(self.known, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.known.shape[:2]:
            raise ValueError("mask/known shape mismatch")
        if not np.all(np.isfinite(self.known[self.mask])):
            raise ValueError("known pixels must be finite")


def smooth_l1(a: np.ndarray, b: np.ndarray, beta: float):
    """Huber-style loss, mean over elements, with d(loss)/da.

    0.5 d^2/beta inside |d| < beta, |d| - beta/2 outside; the elementwise
    derivative saturates at +-1/N outside the quadratic zone.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    d = a - b
    ad = np.abs(d)
    elem = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)
    n = d.size
    deriv = np.clip(d / beta, -1.0, 1.0) / n
    return float(elem.mean()), deriv


def adaptive_step(lr: float, eps: np.ndarray, g: np.ndarray) -> float:
    """Step scale: lr times mean |prediction| over mean |gradient|."""
    return lr * float(np.mean(np.abs(eps))) / float(np.mean(np.abs(g)))


def rectify_epsilon(eps: np.ndarray, x_t: np.ndarray, t: int,
                    task: InpaintTask, cf: ConsistencyFunction,
                    params: GuidanceParams) -> np.ndarray:
    """Inner-loop refinement of one noise prediction toward the known pixels."""
    sched = cf.schedule
    if not (sched.delta <= t <= sched.T):
        raise ValueError(f"timestep {t} outside [{sched.delta}, {sched.T}]")
    eps = np.array(eps, dtype=np.float64, copy=True)
    if params.n_g == 0 or not task.mask.any():
        return eps

    k = -cf.c_out(t) * sched.sigma(t) / sched.alpha(t)
    if k == 0.0:  # boundary timestep: estimate does not depend on eps
        return eps
    beta = params.smooth_l1_beta
    m = task.mask
    x0_hat = cf.estimate_from_eps(x_t, eps, t)
    d = x0_hat[m] - task.known[m]
    n_masked = d.size
    total = eps.size
    # exact line-search bound of the quadratic zone; steps beyond it could
    # overshoot once the residual is almost closed
    s_cap = beta * n_masked / (k * k)

    # the loop only ever touches masked entries; track the |eps| budget of
    # the untouched remainder once
    eps_m = eps[m]
    abs_rest = float(np.sum(np.abs(eps))) - float(np.sum(np.abs(eps_m)))
    g = np.empty_like(d)
    for _ in range(params.n_g):
        np.clip(d / beta, -1.0, 1.0, out=g)
        g *= -k / n_masked
        mean_g = float(np.sum(np.abs(g))) / total
        if mean_g == 0.0:
            break
        mean_eps = (abs_rest + float(np.sum(np.abs(eps_m)))) / total
        num = params.lr * mean_eps
        s = s_cap if mean_g * s_cap <= num else num / mean_g
        eps_m += s * g
        d += (k * s) * g
    eps[m] = eps_m
    return eps


def _posterior_mean_jump(x_t, eps, t, t_next, schedule: NoiseSchedule):
    a = schedule.alpha_bar[t] / schedule.alpha_bar[t_next]
    return (x_t - ((1.0 - a) / schedule.sigma(t)) * eps) / np.sqrt(a)


def guided_sample(task: InpaintTask, cf: ConsistencyFunction,
                  schedule: NoiseSchedule, params: GuidanceParams,
                  noise_source) -> np.ndarray:
    """Full outer loop: per-step rectification plus posterior-mean updates.

    Deterministic given the noise source; an empty known region degrades
    to unguided sampling (bit-identical to n_g = 0).
    """
    steps = params.steps if params.steps is not None else default_steps(schedule)
    steps = [int(t) for t in steps]
    if not steps or any(b >= a for a, b in zip(steps, steps[1:])):
        raise ValueError("outer timesteps must be non-empty, strictly decreasing")
    shape = task.known.shape
    x = noise_source.standard_normal(shape)
    for i, t in enumerate(steps):
        eps = cf.denoiser(x, task.cond, t)
        eps = rectify_epsilon(eps, x, t, task, cf, params)
        t_next = steps[i + 1] if i + 1 < len(steps) else 0
        x = _posterior_mean_jump(x, eps, t, t_next, schedule)
    return x
