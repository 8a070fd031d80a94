"""Variance schedules, forward corruption, the conditioned denoiser, and
reverse-process sampling.

The denoiser is a U-shaped stack of graph-convolution blocks over the
fixed skeleton adjacency with per-block temporal mixing, a learnable
joint pooling to a reduced joint set in the middle, and conditioning
injected into every block as a broadcast-added per-channel projection of
(timestep embedding ++ conditioning vector).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation
from .rng import RngStream
from .tensor import Tensor, concat, no_grad

# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass
class DiffusionSchedule:
    kind: str
    T: int
    beta: np.ndarray       # (T,), beta[t-1] is the step-t variance
    alpha: np.ndarray      # 1 - beta
    alpha_bar: np.ndarray  # cumulative product of alpha, index t-1
    beta_bar: np.ndarray   # posterior variance; beta_bar[0] = beta[0]

    def abar(self, t: int) -> float:
        """Cumulative product through step t, with the t=0 convention of 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])


def build_schedule(kind: str, T: int, beta1: float = 1e-4, betaT: float = 0.01) -> DiffusionSchedule:
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if kind == "linear":
        if not (0.0 < beta1 <= betaT < 1.0):
            raise ConfigError(f"need 0 < beta1 <= betaT < 1, got {beta1}, {betaT}")
        beta = np.linspace(beta1, betaT, T)
    elif kind == "cosine":
        # betas follow from the cosine cumulative-product curve; the linear
        # endpoints play no role here.
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos(((steps / T + 0.008) / 1.008) * (np.pi / 2.0)) ** 2
        abar = f / f[0]
        beta = np.minimum(1.0 - abar[1:] / abar[:-1], 0.999)
    else:
        raise ConfigError(f"unknown scheduler kind {kind!r}")

    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    if not np.all((beta > 0.0) & (beta < 1.0)):
        raise ConfigError("schedule produced beta outside (0, 1)")
    if np.any(np.diff(alpha_bar) >= 0.0):
        raise ConfigError("cumulative alpha must be strictly decreasing")

    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta_bar = (1.0 - prev) / (1.0 - alpha_bar) * beta
    beta_bar[0] = beta[0]
    return DiffusionSchedule(kind=kind, T=T, beta=beta, alpha=alpha,
                             alpha_bar=alpha_bar, beta_bar=beta_bar)


def forward_corrupt(x: np.ndarray, t, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """Closed-form jump to step t: sqrt(abar_t) x + sqrt(1 - abar_t) eps.

    ``t`` may be a scalar or one step per leading batch entry.
    """
    x = np.asarray(x)
    eps = np.asarray(eps)
    if eps.shape != x.shape:
        raise ContractViolation(f"noise shape {eps.shape} != data shape {x.shape}")
    ts = np.asarray(t)
    if np.any((ts < 0) | (ts > schedule.T)):
        raise ContractViolation(f"t={t} outside [0, {schedule.T}]")
    abar_full = np.concatenate([[1.0], schedule.alpha_bar])
    abar = abar_full[ts]
    if abar.ndim:
        abar = abar.reshape((-1,) + (1,) * (x.ndim - 1))
    return np.sqrt(abar) * x + np.sqrt(1.0 - abar) * eps


def forward_transition(x: np.ndarray, t: int, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """Single Markov step q(x_t | x_{t-1}): sqrt(1 - beta_t) x + sqrt(beta_t) eps."""
    if not (1 <= t <= schedule.T):
        raise ContractViolation(f"t={t} outside [1, {schedule.T}]")
    b = float(schedule.beta[t - 1])
    return np.sqrt(1.0 - b) * np.asarray(x) + np.sqrt(b) * np.asarray(eps)


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Interleaved sin/cos of t over geometrically spaced frequencies.

    Scalar t gives a (dim,) vector; an array of steps gives (len(t), dim).
    """
    if dim % 2 != 0:
        raise ContractViolation(f"embedding dim must be even, got {dim}")
    ts = np.asarray(t, dtype=np.float64)
    if np.any(ts < 0):
        raise ContractViolation(f"t must be >= 0, got {t}")
    half = dim // 2
    freqs = np.power(10000.0, -np.arange(half) * 2.0 / dim)
    args = ts[..., None] * freqs
    emb = np.empty(ts.shape + (dim,))
    emb[..., 0::2] = np.sin(args)
    emb[..., 1::2] = np.cos(args)
    return emb


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def smooth_l1(value: float) -> float:
    """Piecewise transform of a non-negative scalar error, knee at 1."""
    v = abs(float(value))
    return 0.5 * v * v if v < 1.0 else v - 0.5


def diffusion_loss(eps: np.ndarray, eps_hat: Tensor) -> tuple[Tensor, float]:
    """Smooth-transformed mean residual norm, differentiable in eps_hat.

    Returns (loss tensor, raw mean-norm value).
    """
    eps = np.asarray(eps)
    if eps.shape != eps_hat.shape:
        raise ContractViolation(f"shape mismatch {eps.shape} vs {eps_hat.shape}")
    r = eps_hat - Tensor(eps.astype(eps_hat.dtype))
    axes = tuple(range(1, len(eps.shape)))
    norms = (r * r).sum(axis=axes).sqrt()
    l_noise = norms.mean()
    value = float(l_noise.data)
    if value < 1.0:
        loss = l_noise * l_noise * 0.5
    else:
        loss = l_noise - 0.5
    return loss, value


# ---------------------------------------------------------------------------
# Denoiser network
# ---------------------------------------------------------------------------

CHANNEL_PLAN = (32, 32, 64, 64, 128, 64)


def normalized_adjacency(A: np.ndarray) -> np.ndarray:
    """Symmetric degree-normalized adjacency with self-loops."""
    A = np.asarray(A, dtype=np.float64)
    A = A + np.eye(A.shape[0])
    d = A.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return A * inv_sqrt[:, None] * inv_sqrt[None, :]


class Denoiser:
    """Graph-convolutional U-shaped noise estimator.

    Six blocks with the channel plan; blocks before the joint pooling mix
    joints through the fixed skeleton adjacency, the two pooled blocks use
    a learnable joint-mixing map, and a skip connection carries pre-pool
    features across the U.
    """

    def __init__(self, n_joints: int, n_channels: int, n_frames: int, cond_dim: int,
                 skeleton: np.ndarray, plan: tuple[int, ...] = CHANNEL_PLAN,
                 pooled_joints: int | None = None, t_dim: int = 16,
                 input_gain: np.ndarray | None = None,
                 rng: RngStream | None = None, dtype=np.float64):
        if len(plan) != 6:
            raise ConfigError(f"channel plan must have 6 entries, got {len(plan)}")
        self.n_joints = n_joints
        self.n_channels = n_channels
        self.n_frames = n_frames
        self.cond_dim = cond_dim
        self.t_dim = t_dim
        self.plan = tuple(plan)
        self.dtype = dtype
        if pooled_joints is None:
            pooled_joints = max(2, round(n_joints * 10 / 17))
        self.pooled_joints = pooled_joints
        rng = rng or RngStream(0)

        # Additive skip from the input, scaled per step: with gain
        # sqrt(1 - abar_t) the network only learns the correction on top of
        # the noise fraction already visible in x_t, and the t = T step
        # (pure noise in, same noise out) starts from the exact answer.
        # The companion per-step factors abar/sqrt(1-abar) and
        # sqrt(abar)/sqrt(1-abar) scale extra input channels so the
        # analytically optimal correction is a linear readout.
        self.input_gain = None if input_gain is None else np.asarray(input_gain, dtype=np.float64)
        if self.input_gain is not None:
            s = self.input_gain
            with np.errstate(divide="ignore", invalid="ignore"):
                self._g1 = np.where(s > 0, (1.0 - s * s) / s, 0.0)
                self._g2 = np.where(s > 0, np.sqrt(np.maximum(1.0 - s * s, 0.0)) / s, 0.0)

        self.adj = normalized_adjacency(skeleton).astype(dtype)

        t_feat = 2 * t_dim
        self.t_feat = t_feat
        cond_total = t_feat + cond_dim
        # input channel groups: x_t, pose prior, and their step-scaled copies
        n_groups = 4 if self.input_gain is not None else 2
        ins = (n_groups * n_channels,) + self.plan[:-1]
        outs = self.plan

        def init(label, shape, fan_in):
            return Tensor((rng.split(label).normal(shape) / np.sqrt(fan_in)).astype(dtype),
                          requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

        def near_eye(label, n, jitter=0.01):
            base = np.eye(n) + jitter * rng.split(label).normal((n, n))
            return Tensor(base.astype(dtype), requires_grad=True)

        self.params: dict[str, Tensor] = {}

        def register(name, t):
            self.params[name] = t
            return t

        self.t_w1 = register("t_mlp/w1", init(100, (t_dim, t_feat), t_dim))
        self.t_b1 = register("t_mlp/b1", zeros((t_feat,)))
        self.t_w2 = register("t_mlp/w2", init(101, (t_feat, t_feat), t_feat))
        self.t_b2 = register("t_mlp/b2", zeros((t_feat,)))
        self.prior_w = register("prior/w", init(102, (cond_dim, n_frames * n_joints * n_channels), cond_dim))
        self.prior_b = register("prior/b", zeros((n_frames * n_joints * n_channels,)))

        self.blocks = []
        for i, (cin, cout) in enumerate(zip(ins, outs)):
            blk = {
                "w_self": register(f"block{i}/w_self", init(10 * i, (cin, cout), cin)),
                "w_neigh": register(f"block{i}/w_neigh", init(10 * i + 1, (cin, cout), cin)),
                "bias": register(f"block{i}/bias", zeros((cout,))),
                "t_mix": register(f"block{i}/t_mix", near_eye(10 * i + 2, n_frames)),
                "cond_w": register(f"block{i}/cond_w", init(10 * i + 3, (cond_total, cout), cond_total)),
            }
            if i in (3, 4):  # pooled-resolution blocks mix joints learnably
                blk["j_mix"] = register(f"block{i}/j_mix", near_eye(10 * i + 4, pooled_joints))
            self.blocks.append(blk)

        J, Jp = n_joints, pooled_joints
        pool = np.full((Jp, J), 1.0 / J) + 0.1 * rng.split(200).normal((Jp, J)) / np.sqrt(J)
        unpool = np.full((J, Jp), 1.0 / Jp) + 0.1 * rng.split(201).normal((J, Jp)) / np.sqrt(Jp)
        self.pool = register("pool", Tensor(pool.astype(dtype), requires_grad=True))
        self.unpool = register("unpool", Tensor(unpool.astype(dtype), requires_grad=True))
        self.skip_w = register("skip_w", init(202, (self.plan[2], self.plan[4]), self.plan[2]))
        self.out_w = register("out_w", init(203, (self.plan[5], n_channels), self.plan[5]))
        self.out_b = register("out_b", zeros((n_channels,)))

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    # -- forward -------------------------------------------------------------

    def _cond_features(self, t, cond: Tensor) -> Tensor:
        emb = timestep_embedding(t, self.t_dim).astype(self.dtype).reshape(-1, self.t_dim)
        tf = (Tensor(emb) @ self.t_w1 + self.t_b1).relu() @ self.t_w2 + self.t_b2
        B = cond.shape[0]
        if B > 1 and tf.shape[0] == 1:
            tf = tf + Tensor(np.zeros((B, 1), dtype=self.dtype))
        return concat([tf, cond], axis=-1)  # (B, t_feat + cond_dim)

    def _block(self, i: int, x: Tensor, cond_feat: Tensor) -> Tensor:
        blk = self.blocks[i]
        if "j_mix" in blk:
            mixed = blk["j_mix"] @ x
        else:
            mixed = Tensor(self.adj) @ x
        z = x @ blk["w_self"] + mixed @ blk["w_neigh"] + blk["bias"]
        z = (blk["t_mix"] @ z.moveaxis(1, 2)).moveaxis(2, 1)
        cond_b = cond_feat @ blk["cond_w"]
        z = z + cond_b.reshape(cond_b.shape[0], 1, 1, cond_b.shape[1])
        return z.relu()

    def predict(self, x_t, t, cond) -> Tensor:
        """Noise estimate for (B, F, J, C) input at step t.

        ``t`` is one shared step or a per-sample array of steps. ``cond``
        is the conditioning vector, shape (1, D) or (B, D); a single row
        broadcasts over the batch so batched generations share one
        conditioning computation.
        """
        x = x_t if isinstance(x_t, Tensor) else Tensor(np.asarray(x_t).astype(self.dtype))
        cond = cond if isinstance(cond, Tensor) else Tensor(np.asarray(cond).astype(self.dtype))
        if x.shape[1] != self.n_frames or x.shape[2] != self.n_joints or x.shape[3] != self.n_channels:
            raise ContractViolation(f"denoiser input shape {x.shape} does not match "
                                    f"(B, {self.n_frames}, {self.n_joints}, {self.n_channels})")
        cf = self._cond_features(t, cond)

        prior = (cond @ self.prior_w + self.prior_b).reshape(
            cond.shape[0], self.n_frames, self.n_joints, self.n_channels)
        if prior.shape[0] == 1 and x.shape[0] > 1:
            prior = prior + Tensor(np.zeros((x.shape[0], 1, 1, 1), dtype=self.dtype))
        if self.input_gain is not None:
            expand = (-1,) + (1,) * (x.data.ndim - 1)
            g1 = np.asarray(self._g1[t], dtype=self.dtype).reshape(expand)
            g2 = np.asarray(self._g2[t], dtype=self.dtype).reshape(expand)
            h = concat([x, prior, x * Tensor(g1), prior * Tensor(g2)], axis=-1)
        else:
            h = concat([x, prior], axis=-1)

        h = self._block(0, h, cf)
        h = self._block(1, h, cf)
        h = self._block(2, h, cf)
        saved = h                                    # (B, F, J, plan[2])
        h = self.pool @ h                            # joints J -> J'
        h = self._block(3, h, cf)
        h = self._block(4, h, cf)
        h = self.unpool @ h                          # joints J' -> J
        h = h + saved @ self.skip_w
        h = self._block(5, h, cf)
        out = h @ self.out_w + self.out_b
        if self.input_gain is not None:
            gain = np.asarray(self.input_gain[t], dtype=self.dtype)
            out = out + x * Tensor(gain.reshape((-1,) + (1,) * (x.data.ndim - 1)))
        return out


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def reverse_step(u: np.ndarray, t: int, eps_hat: np.ndarray, schedule: DiffusionSchedule,
                 xi: np.ndarray | float = 0.0, posterior_variance: str = "beta") -> np.ndarray:
    """One reverse transition; noise is suppressed at the final step t=1."""
    if not (1 <= t <= schedule.T):
        raise ContractViolation(f"t={t} outside [1, {schedule.T}]")
    b = float(schedule.beta[t - 1])
    abar = schedule.abar(t)
    mean = (np.asarray(u) - (b / np.sqrt(1.0 - abar)) * np.asarray(eps_hat)) / np.sqrt(1.0 - b)
    if t == 1:
        return mean
    if posterior_variance == "beta":
        sigma = np.sqrt(b)
    elif posterior_variance == "beta_bar":
        sigma = np.sqrt(float(schedule.beta_bar[t - 1]))
    else:
        raise ConfigError(f"unknown posterior variance {posterior_variance!r}")
    return mean + np.asarray(xi) * sigma


def sample_future(cond, schedule: DiffusionSchedule, denoiser: Denoiser, rng: RngStream,
                  posterior_variance: str = "beta") -> np.ndarray:
    """Generate one future block from pure noise, conditioned on ``cond``."""
    out = sample_future_batch(cond, schedule, denoiser, [rng], posterior_variance)
    return out[0]


def sample_future_batch(cond, schedule: DiffusionSchedule, denoiser: Denoiser,
                        streams: list[RngStream], posterior_variance: str = "beta") -> np.ndarray:
    """Generate one future block per stream, all reverse steps batched.

    Every generation's noise comes only from its own stream (initial state
    first, then one xi per step from T down to 2), so the result for
    stream m is independent of how many generations run alongside it.
    """
    shape = (denoiser.n_frames, denoiser.n_joints, denoiser.n_channels)
    dtype = denoiser.dtype
    u = np.stack([s.normal(shape, dtype=dtype) for s in streams])
    with no_grad():
        for t in range(schedule.T, 0, -1):
            eps_hat = denoiser.predict(u, t, cond).data
            if t > 1:
                xi = np.stack([s.normal(shape, dtype=dtype) for s in streams])
            else:
                xi = 0.0
            u = reverse_step(u, t, eps_hat, schedule, xi, posterior_variance)
    return u
