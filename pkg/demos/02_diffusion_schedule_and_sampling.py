#!/usr/bin/env python3
"""Inspect the variance schedules, verify the closed-form corruption against
iterated single steps, and sample a toy 1-D diffusion with an analytically
optimal noise estimator.

Run:  python3 demos/02_diffusion_schedule_and_sampling.py
"""
import numpy as np

from skelad.diffusion import (build_schedule, forward_corrupt,
                              forward_transition, sample_future_batch)
from skelad.rng import RngStream
from skelad.tensor import Tensor

T = 10
for kind in ("linear", "cosine"):
    sch = build_schedule(kind, T)
    print(f"=== {kind} schedule, T={T} ===")
    print("t      beta    alpha_bar  beta_bar")
    for t in range(1, T + 1):
        print(f"{t:2d}  {sch.beta[t-1]:.6f}  {sch.alpha_bar[t-1]:.6f}  {sch.beta_bar[t-1]:.6f}")
    print()

sch = build_schedule("cosine", T)
print("=== iterated one-step corruption matches the closed form ===")
rng = RngStream(7)
n = 50_000
x0 = 1.3
x = np.full(n, x0)
for t in range(1, T + 1):
    x = forward_transition(x, t, rng.normal((n,)), sch)
closed = forward_corrupt(np.full(n, x0), T, rng.normal((n,)), sch)
print(f"iterated   mean {x.mean():+.4f}  std {x.std():.4f}")
print(f"closed     mean {closed.mean():+.4f}  std {closed.std():.4f}")
print(f"analytic   mean {np.sqrt(sch.abar(T)) * x0:+.4f}  std {np.sqrt(1 - sch.abar(T)):.4f}")


class AnalyticDenoiser:
    """Exact conditional-mean noise estimate for scalar N(mu, sigma^2) data."""

    n_frames = n_joints = n_channels = 1
    dtype = np.float64

    def __init__(self, mu, sigma, schedule):
        self.mu, self.sigma, self.schedule = mu, sigma, schedule

    def predict(self, u, t, cond):
        abar = self.schedule.abar(t)
        gain = np.sqrt(1 - abar) / (abar * self.sigma**2 + 1 - abar)
        return Tensor(gain * (np.asarray(u) - np.sqrt(abar) * self.mu))


print("\n=== reverse process with the optimal estimator recovers the data ===")
mu, sigma = 2.0, 0.5
dn = AnalyticDenoiser(mu, sigma, sch)
root = RngStream(99)
samples = sample_future_batch(Tensor(np.zeros((1, 1))), sch, dn,
                              [root.split(m) for m in range(4000)])
print(f"data:    mean {mu:.3f}  std {sigma:.3f}")
print(f"sampled: mean {samples.mean():.3f}  std {samples.std():.3f}")
