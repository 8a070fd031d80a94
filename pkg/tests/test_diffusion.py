"""Schedules, corruption bookkeeping, the denoiser, and reverse sampling."""
import numpy as np
import pytest

from skelad.diffusion import (Denoiser, DiffusionSchedule, build_schedule,
                              diffusion_loss, forward_corrupt,
                              forward_transition, reverse_step, sample_future,
                              sample_future_batch, smooth_l1,
                              timestep_embedding)
from skelad.errors import ConfigError, ContractViolation
from skelad.posedata import chain_skeleton
from skelad.rng import RngStream
from skelad.tensor import Tensor, grad_check, no_grad


def tiny_denoiser(J=4, C=2, F=3, D=4, seed=0, dtype=np.float64):
    return Denoiser(J, C, F, D, chain_skeleton(J).adjacency(),
                    plan=(4, 4, 6, 6, 8, 6), pooled_joints=2, t_dim=4,
                    rng=RngStream(seed), dtype=dtype)


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


def test_linear_schedule_endpoints_exact():
    sch = build_schedule("linear", 10, 1e-4, 0.01)
    assert sch.beta[0] == 1e-4
    assert sch.beta[-1] == 0.01


@pytest.mark.parametrize("kind,T", [("linear", 10), ("cosine", 10), ("cosine", 4), ("linear", 1)])
def test_schedule_invariants(kind, T):
    sch = build_schedule(kind, T)
    assert np.all((sch.beta > 0) & (sch.beta < 1))
    abar_full = np.concatenate([[1.0], sch.alpha_bar])
    assert np.all(np.diff(abar_full) < 0)
    assert np.allclose(sch.alpha + sch.beta, 1.0)
    assert np.allclose(sch.alpha_bar + (1 - sch.alpha_bar), 1.0)


def test_cosine_matches_closed_form():
    T = 10
    sch = build_schedule("cosine", T)
    f = lambda t: np.cos(((t / T + 0.008) / 1.008) * np.pi / 2.0) ** 2
    for t in range(1, T + 1):
        abar_t = f(t) / f(0)
        abar_prev = f(t - 1) / f(0)
        beta_t = min(1.0 - abar_t / abar_prev, 0.999)
        assert sch.beta[t - 1] == pytest.approx(beta_t, abs=1e-12)
        assert sch.abar(t) == pytest.approx(
            np.prod([1.0 - sch.beta[s - 1] for s in range(1, t + 1)]), abs=1e-12)


def test_posterior_variance_table():
    sch = build_schedule("linear", 5, 1e-3, 0.2)
    assert sch.beta_bar[0] == sch.beta[0]
    for t in range(2, 6):
        want = (1 - sch.abar(t - 1)) / (1 - sch.abar(t)) * sch.beta[t - 1]
        assert sch.beta_bar[t - 1] == pytest.approx(want, rel=1e-12)


def test_bad_schedule_config_rejected():
    with pytest.raises(ConfigError):
        build_schedule("linear", 10, 0.5, 0.1)  # beta1 > betaT
    with pytest.raises(ConfigError):
        build_schedule("linear", 0)
    with pytest.raises(ConfigError):
        build_schedule("spline", 10)


# ---------------------------------------------------------------------------
# Forward corruption
# ---------------------------------------------------------------------------


def test_corrupt_zero_noise_is_pure_scaling():
    sch = build_schedule("cosine", 10)
    x = RngStream(0).normal((3, 4, 2))
    out = forward_corrupt(x, 7, np.zeros_like(x), sch)
    assert np.allclose(out, np.sqrt(sch.abar(7)) * x)


def test_corrupt_t_zero_is_identity():
    sch = build_schedule("cosine", 10)
    x = RngStream(1).normal((2, 2))
    eps = RngStream(2).normal((2, 2))
    assert np.array_equal(forward_corrupt(x, 0, eps, sch), x)


def test_corrupt_shape_mismatch_rejected():
    sch = build_schedule("cosine", 10)
    with pytest.raises(ContractViolation):
        forward_corrupt(np.zeros((2, 2)), 1, np.zeros(3), sch)


def test_corrupt_monte_carlo_moments():
    sch = build_schedule("cosine", 10)
    x0 = 1.7
    rng = RngStream(5)
    for t in (1, 5, 10):
        eps = rng.normal((100_000,))
        xt = forward_corrupt(np.full(100_000, x0), t, eps, sch)
        want_mean = np.sqrt(sch.abar(t)) * x0
        want_std = np.sqrt(1.0 - sch.abar(t))
        assert abs(xt.mean() - want_mean) <= 0.02 * max(abs(want_mean), want_std)
        assert abs(xt.std() - want_std) <= 0.02 * want_std


def test_iterated_transitions_match_closed_form_moments():
    sch = build_schedule("cosine", 10)
    x0 = -0.9
    n = 100_000
    rng = RngStream(6)
    x = np.full(n, x0)
    for t in range(1, 11):
        x = forward_transition(x, t, rng.normal((n,)), sch)
        if t in (1, 5, 10):
            want_mean = np.sqrt(sch.abar(t)) * x0
            want_std = np.sqrt(1.0 - sch.abar(t))
            assert abs(x.mean() - want_mean) <= 0.02 * max(abs(want_mean), want_std)
            assert abs(x.std() - want_std) <= 0.02 * want_std


# ---------------------------------------------------------------------------
# Timestep embedding
# ---------------------------------------------------------------------------


def test_embedding_t_zero():
    emb = timestep_embedding(0, 8)
    assert np.array_equal(emb[0::2], np.zeros(4))
    assert np.array_equal(emb[1::2], np.ones(4))


def test_embedding_range_and_distinctness():
    embs = np.stack([timestep_embedding(t, 16) for t in range(1, 11)])
    assert np.all(np.abs(embs) <= 1.0)
    dists = [np.linalg.norm(embs[i] - embs[j])
             for i in range(10) for j in range(i + 1, 10)]
    assert min(dists) > 0.0


def test_embedding_preconditions():
    with pytest.raises(ContractViolation):
        timestep_embedding(1, 7)
    with pytest.raises(ContractViolation):
        timestep_embedding(-1, 8)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def test_smooth_l1_knee_values():
    assert smooth_l1(0.0) == 0.0
    assert smooth_l1(0.5) == 0.125
    assert smooth_l1(1.0) == 0.5
    assert smooth_l1(2.0) == 1.5


def test_diffusion_loss_exact_prediction_is_zero():
    eps = RngStream(0).normal((2, 3, 4, 2))
    loss, l_noise = diffusion_loss(eps, Tensor(eps.copy()))
    assert loss.item() == 0.0
    assert l_noise == 0.0


def test_diffusion_loss_branches():
    # craft residuals with known per-sample norms
    eps = np.zeros((2, 1, 1, 1))
    eps_hat = Tensor(np.array([0.4, 0.6]).reshape(2, 1, 1, 1))
    loss, l_noise = diffusion_loss(eps, eps_hat)
    assert l_noise == pytest.approx(0.5)
    assert loss.item() == pytest.approx(0.125)

    eps_hat2 = Tensor(np.array([1.5, 2.5]).reshape(2, 1, 1, 1))
    loss2, l2 = diffusion_loss(eps, eps_hat2)
    assert l2 == pytest.approx(2.0)
    assert loss2.item() == pytest.approx(1.5)


def test_smooth_continuity_at_knee():
    lo = smooth_l1(1.0 - 1e-12)
    hi = smooth_l1(1.0 + 1e-12)
    assert abs(lo - 0.5) < 1e-11 and abs(hi - 0.5) < 1e-11


# ---------------------------------------------------------------------------
# Denoiser
# ---------------------------------------------------------------------------


def test_denoiser_deterministic_and_shaped():
    dn = tiny_denoiser()
    x = RngStream(1).normal((2, 3, 4, 2))
    cond = Tensor(RngStream(2).normal((1, 4)))
    with no_grad():
        a = dn.predict(x, 2, cond).data
        b = dn.predict(x, 2, cond).data
    assert a.shape == x.shape
    assert np.array_equal(a, b)


def test_denoiser_conditioning_sensitivity():
    dn = tiny_denoiser()
    x = RngStream(1).normal((1, 3, 4, 2))
    cond = RngStream(2).normal((1, 4))
    with no_grad():
        base = dn.predict(x, 1, Tensor(cond)).data
        moved = dn.predict(x, 1, Tensor(cond + 0.5)).data
    assert np.max(np.abs(base - moved)) > 0.0


def test_denoiser_timestep_sensitivity():
    dn = tiny_denoiser()
    x = RngStream(1).normal((1, 3, 4, 2))
    cond = Tensor(RngStream(2).normal((1, 4)))
    with no_grad():
        a = dn.predict(x, 1, cond).data
        b = dn.predict(x, 3, cond).data
    assert np.max(np.abs(a - b)) > 0.0


def test_denoiser_gradients_match_finite_differences():
    dn = tiny_denoiser(J=3, C=2, F=2, D=3)
    x = RngStream(3).normal((2, 2, 3, 2))
    cond = Tensor(RngStream(4).normal((2, 3)))

    def loss_fn():
        out = dn.predict(x, 2, cond)
        return (out * out).sum()

    report = grad_check(loss_fn, dn.parameters(), eps=1e-5)
    for name, err in report.items():
        assert err < 1e-5, f"{name}: {err}"


def test_denoiser_rejects_wrong_shape():
    dn = tiny_denoiser()
    with pytest.raises(ContractViolation):
        dn.predict(np.zeros((1, 2, 4, 2)), 1, Tensor(np.zeros((1, 4))))


# ---------------------------------------------------------------------------
# Reverse process
# ---------------------------------------------------------------------------


def test_reverse_step_hand_value():
    sch = DiffusionSchedule("linear", 1, np.array([0.19]), np.array([0.81]),
                            np.array([0.5]), np.array([0.19]))
    # with xi suppressed at t=1 the mean is the whole step;
    # direct evaluation: (1 - 0.19/sqrt(0.5) * 0.2) / sqrt(0.81) = 1.0513999
    out = reverse_step(np.array(1.0), 1, np.array(0.2), sch, xi=123.0)
    want = (1.0 - 0.19 / np.sqrt(0.5) * 0.2) / np.sqrt(0.81)
    assert float(out) == pytest.approx(want, abs=1e-12)
    assert float(out) == pytest.approx(1.0513999, abs=1e-7)


def test_reverse_step_beta_zero_limit_is_identity():
    # beta -> 0 with the cumulative product held below 1
    sch = DiffusionSchedule("linear", 2, np.array([0.0, 0.1]), np.array([1.0, 0.9]),
                            np.array([0.5, 0.45]), np.array([0.0, 0.1]))
    u = np.array([1.5, -2.0])
    out = reverse_step(u, 1, np.array([9.9, -3.0]), sch, xi=np.ones(2))
    assert np.allclose(out, u)


def test_reverse_step_no_noise_at_final_step():
    sch = build_schedule("cosine", 5)
    u = RngStream(0).normal((3,))
    eh = RngStream(1).normal((3,))
    big_xi = np.full(3, 1e6)
    a = reverse_step(u, 1, eh, sch, xi=big_xi)
    b = reverse_step(u, 1, eh, sch, xi=np.zeros(3))
    assert np.array_equal(a, b)


def test_reverse_step_beta_bar_variant_is_smaller_noise():
    sch = build_schedule("cosine", 10)
    u = np.zeros(4)
    eh = np.zeros(4)
    xi = np.ones(4)
    a = reverse_step(u, 5, eh, sch, xi, posterior_variance="beta")
    b = reverse_step(u, 5, eh, sch, xi, posterior_variance="beta_bar")
    assert np.all(np.abs(b) < np.abs(a))
    ratio = np.sqrt(sch.beta_bar[4]) / np.sqrt(sch.beta[4])
    assert np.allclose(b, a * ratio)


def test_sampling_deterministic_under_fixed_stream():
    dn = tiny_denoiser()
    sch = build_schedule("cosine", 4)
    cond = Tensor(RngStream(2).normal((1, 4)))
    a = sample_future(cond, sch, dn, RngStream(10))
    b = sample_future(cond, sch, dn, RngStream(10))
    assert np.array_equal(a, b)


def test_split_streams_give_diverse_samples():
    dn = tiny_denoiser()
    sch = build_schedule("cosine", 4)
    cond = Tensor(RngStream(2).normal((1, 4)))
    root = RngStream(11)
    batch = sample_future_batch(cond, sch, dn, [root.split(0), root.split(1)])
    assert np.max(np.abs(batch[0] - batch[1])) > 0.0


def test_batch_matches_per_stream_sampling():
    dn = tiny_denoiser()
    sch = build_schedule("cosine", 4)
    cond = Tensor(RngStream(2).normal((1, 4)))
    root = RngStream(12)
    batch = sample_future_batch(cond, sch, dn, [root.split(m) for m in range(3)])
    for m in range(3):
        single = sample_future(cond, sch, dn, root.split(m))
        assert np.max(np.abs(batch[m] - single)) < 1e-12


class _AnalyticDenoiser:
    """Conditional-mean noise estimator for N(mu, sigma^2) scalar data."""

    n_frames = 1
    n_joints = 1
    n_channels = 1
    dtype = np.float64

    def __init__(self, mu, sigma, schedule):
        self.mu = mu
        self.sigma = sigma
        self.schedule = schedule

    def predict(self, u, t, cond):
        abar = self.schedule.abar(t)
        gain = np.sqrt(1 - abar) / (abar * self.sigma**2 + 1 - abar)
        return Tensor(gain * (np.asarray(u) - np.sqrt(abar) * self.mu))


def test_linear_gaussian_toy_sampler_recovers_data_mean():
    mu, sigma = 2.0, 0.5
    sch = build_schedule("cosine", 10)
    dn = _AnalyticDenoiser(mu, sigma, sch)
    root = RngStream(21)
    streams = [root.split(m) for m in range(10_000)]
    samples = sample_future_batch(Tensor(np.zeros((1, 1))), sch, dn, streams)
    mean = samples.mean()
    assert abs(mean - mu) <= 0.05 * mu
