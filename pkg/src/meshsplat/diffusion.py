"""Noise schedules, the consistency function, and few-step sampling.

Everything runs in pixel space on a discrete variance-preserving schedule:
x_t = alpha(t) x_0 + sigma(t) eps with alpha(t)^2 + sigma(t)^2 = 1.  The
consistency function maps any noisy state straight to a clean estimate,

    f(x_t, c, t) = c_skip(t) x_t + c_out(t) (x_t - sigma(t) eps_hat) / alpha(t),

with scalings that satisfy the boundary condition exactly:
c_skip(delta) = 1 and c_out(delta) = 0, so f is the identity at the
boundary timestep.  The default pair

    c_skip(t) = sigma(delta) / sigma(t)
    c_out(t)  = alpha(delta) - c_skip(t) alpha(t)

makes f constant along probability-flow trajectories of a point-mass data
law (f = alpha(delta) x0_hat + sigma(delta) eps_hat reproduces the
trajectory state at the boundary), which is the property few-step
sampling and guided inpainting lean on.

Noise always comes from an injected seeded source; nothing here draws
from global randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def seeded_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent, reproducible stream for (seed, key...)."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2 ** 64 - 1),
                                spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


@dataclass
class NoiseSchedule:
    T: int = 1000
    delta: int = 1
    kind: str = "cosine"
    alpha_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.delta < 1 or self.delta > self.T:
            raise ValueError("boundary timestep must lie in [1, T]")
        t = np.arange(self.T + 1, dtype=np.float64)
        if self.kind == "cosine":
            s = 0.008
            f = np.cos((t / self.T + s) / (1 + s) * np.pi / 2.0) ** 2
            raw = f / f[0]
            betas = 1.0 - raw[1:] / raw[:-1]
        elif self.kind == "linear":
            betas = np.linspace(1e-4, 0.02, self.T)
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        betas = np.clip(betas, 0.0, 0.999)
        self.alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")

    def alpha(self, t) -> np.ndarray:
        return np.sqrt(self.alpha_bar[t])

    def sigma(self, t) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar[t])

    def step_alpha(self, t) -> np.ndarray:
        """Single-step alpha_t = alpha_bar[t] / alpha_bar[t-1]."""
        return self.alpha_bar[t] / self.alpha_bar[np.asarray(t) - 1]

    def timestep_for_sigma_ratio(self, ratio: float) -> int:
        """Smallest t with sigma(t)/alpha(t) >= ratio."""
        ts = np.arange(self.delta, self.T + 1)
        r = self.sigma(ts) / self.alpha(ts)
        idx = np.searchsorted(r, ratio)
        return int(ts[min(idx, len(ts) - 1)])


def add_noise(x0: np.ndarray, t: int, noise: np.ndarray,
              schedule: NoiseSchedule) -> np.ndarray:
    if not (0 <= t <= schedule.T):
        raise ValueError(f"timestep {t} outside [0, {schedule.T}]")
    return schedule.alpha(t) * np.asarray(x0) + schedule.sigma(t) * noise


@dataclass
class ConsistencyFunction:
    """Clean-image estimator around a noise-prediction handle.

    ``denoiser(x_t, cond, t) -> eps_hat``.  Custom c_skip / c_out
    schedules may be injected; the defaults satisfy the boundary
    condition exactly and are self-consistent for point-mass data.
    """
    denoiser: Callable
    schedule: NoiseSchedule
    c_skip: Callable[[int], float] = None
    c_out: Callable[[int], float] = None

    def __post_init__(self):
        if self.c_skip is None:
            self.c_skip = self._default_c_skip
        if self.c_out is None:
            self.c_out = self._default_c_out

    def _default_c_skip(self, t) -> float:
        return self.schedule.sigma(self.schedule.delta) / self.schedule.sigma(t)

    def _default_c_out(self, t) -> float:
        d = self.schedule.delta
        return self.schedule.alpha(d) - self._default_c_skip(t) * self.schedule.alpha(t)

    def estimate_from_eps(self, x_t: np.ndarray, eps: np.ndarray,
                          t: int) -> np.ndarray:
        a = self.schedule.alpha(t)
        s = self.schedule.sigma(t)
        return self.c_skip(t) * x_t + self.c_out(t) * (x_t - s * eps) / a

    def estimate(self, x_t: np.ndarray, cond, t: int) -> np.ndarray:
        return self.estimate_from_eps(x_t, self.denoiser(x_t, cond, t), t)


def consistency_estimate(x_t: np.ndarray, cond, t: int,
                         cf: ConsistencyFunction) -> np.ndarray:
    """Single-evaluation clean estimate from a noisy state."""
    if not (cf.schedule.delta <= t <= cf.schedule.T):
        raise ValueError(f"timestep {t} outside [{cf.schedule.delta}, "
                         f"{cf.schedule.T}]")
    return cf.estimate(x_t, cond, t)


def _check_steps(steps, schedule: NoiseSchedule):
    steps = [int(t) for t in steps]
    if not steps:
        raise ValueError("at least one sampling timestep is required")
    if any(b >= a for a, b in zip(steps, steps[1:])):
        raise ValueError("sampling timesteps must be strictly decreasing")
    if steps[0] > schedule.T or steps[-1] < schedule.delta:
        raise ValueError("sampling timesteps must lie within [delta, T]")
    return steps


def lcm_sample(cond, cf: ConsistencyFunction, steps, noise_source,
               shape) -> np.ndarray:
    """Multistep consistency sampling.

    Estimate the clean image at each timestep, re-noise the estimate to
    the next (lower) level with fresh noise, return the final estimate.
    Step lists normally run from T down to the boundary timestep.
    """
    steps = _check_steps(steps, cf.schedule)
    x = noise_source.standard_normal(shape)
    x0 = cf.estimate(x, cond, steps[0])
    for t_next in steps[1:]:
        x = add_noise(x0, t_next, noise_source.standard_normal(shape),
                      cf.schedule)
        x0 = cf.estimate(x, cond, t_next)
    return x0


def ddim_trajectory(x_start: np.ndarray, t_start: int, cond,
                    denoiser, schedule: NoiseSchedule, record_at=()):
    """Fine-step probability-flow integration (unit-step DDIM updates).

    Serves as the reference trajectory for self-consistency checks.
    Returns {t: x_t} for every requested timestep plus the start.
    """
    x = np.asarray(x_start, dtype=np.float64).copy()
    out = {int(t_start): x.copy()}
    want = set(int(t) for t in record_at)
    for t in range(int(t_start), schedule.delta, -1):
        eps = denoiser(x, cond, t)
        x0 = (x - schedule.sigma(t) * eps) / schedule.alpha(t)
        x = schedule.alpha(t - 1) * x0 + schedule.sigma(t - 1) * eps
        if (t - 1) in want or (t - 1) == schedule.delta:
            out[t - 1] = x.copy()
    return out
