"""Graph attention over the permuted adjacency and the heads fed by it.

Per node k the input signal is the past block flattened to C*l values.
Attention logits combine the node's trainable feature vector with its
projected signal; softmax runs over the node's out-neighborhood in the
permuted graph plus itself. The resulting representations drive three
outputs: a per-node forecast of the future-frame average, a single
conditioning vector for the diffusion model, and the puzzle-class logits.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractViolation
from .rng import RngStream
from .tensor import Tensor, concat


def flatten_past(past: np.ndarray) -> np.ndarray:
    """(..., l, J, C) -> (..., J, l*C): per-joint signals, frame-major."""
    past = np.asarray(past)
    moved = np.moveaxis(past, -3, -2)  # (..., J, l, C)
    return moved.reshape(moved.shape[:-2] + (-1,))


class AttentionForecaster:
    """Trainable attention + forecast/conditioning/puzzle heads.

    Parameter shapes are fixed by (n_nodes, dim, channels, past_frames,
    n_classes, hidden) at construction.
    """

    def __init__(self, n_nodes: int, dim: int, channels: int, past_frames: int,
                 n_classes: int, hidden: int = 128, rng: RngStream | None = None,
                 dtype=np.float64, slope: float = 0.2):
        self.n_nodes = n_nodes
        self.dim = dim
        self.channels = channels
        self.past_frames = past_frames
        self.n_classes = n_classes
        self.hidden = hidden
        self.slope = slope
        self.dtype = dtype
        rng = rng or RngStream(0)

        f_in = channels * past_frames

        def init(shape, fan_in, label):
            return Tensor((rng.split(label).normal(shape) / np.sqrt(fan_in)).astype(dtype),
                          requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

        self.W = init((f_in, dim), f_in, 0)            # shared input projection
        self.s = init((4 * dim, 1), 4 * dim, 1)        # attention coefficient vector
        self.W1 = init((dim, hidden), dim, 2)          # forecast head, hidden layer
        self.b1 = zeros((hidden,))
        self.W2 = init((hidden, channels), hidden, 3)  # forecast head, output layer
        self.b2 = zeros((channels,))
        self.Wc = init((n_nodes * dim, dim), n_nodes * dim, 4)  # condition projector
        self.bc = zeros((dim,))
        self.Wp = init((dim, n_classes), dim, 5)       # puzzle head
        self.bp = zeros((n_classes,))

    def parameters(self) -> dict[str, Tensor]:
        return {
            "W": self.W, "s": self.s,
            "head_w1": self.W1, "head_b1": self.b1,
            "head_w2": self.W2, "head_b2": self.b2,
            "cond_w": self.Wc, "cond_b": self.bc,
            "puzzle_w": self.Wp, "puzzle_b": self.bp,
        }

    # -- forward pieces ----------------------------------------------------

    def attention(self, V: Tensor, x_nodes: Tensor, A_prime: np.ndarray) -> Tensor:
        """Row-stochastic attention over each node's neighborhood plus itself.

        x_nodes: (B, K, C*l). Returns alpha (B, K, K), zero off-support.
        """
        B = x_nodes.shape[0]
        K = self.n_nodes
        Wx = x_nodes @ self.W                                  # (B, K, D)
        v_b = V.reshape(1, K, self.dim) + Tensor(np.zeros((B, 1, 1), dtype=self.dtype))
        g = concat([v_b, Wx], axis=-1)                         # (B, K, 2D)

        s1 = self.s[: 2 * self.dim]                            # (2D, 1)
        s2 = self.s[2 * self.dim :]
        a1 = g @ s1                                            # (B, K, 1)
        a2 = (g @ s2).moveaxis(-1, -2)                         # (B, 1, K)
        logits = (a1 + a2).leaky_relu(self.slope)              # (B, K, K)

        support = (A_prime + np.eye(K)) > 0                    # self always included
        mask = Tensor(support.astype(self.dtype))
        row_max = np.max(np.where(support, logits.data, -np.inf), axis=-1, keepdims=True)
        # Off-support entries are zeroed before exp so they can neither
        # overflow nor leak gradient; on-support arguments are <= 0.
        shifted = (logits - Tensor(row_max.astype(self.dtype))) * mask
        expd = shifted.exp() * mask
        return expd / expd.sum(axis=-1, keepdims=True)

    def representations(self, alpha: Tensor, x_nodes: Tensor) -> Tensor:
        """h_k = ReLU(sum over the neighborhood of alpha_kn * W x_n)."""
        Wx = x_nodes @ self.W
        return (alpha @ Wx).relu()

    def forecast(self, V: Tensor, H: Tensor) -> Tensor:
        """Per-node shared map on v_k * h_k -> future-frame average, (B, K, C)."""
        mixed = V.reshape(1, self.n_nodes, self.dim) * H
        hidden = (mixed @ self.W1 + self.b1).relu()
        return hidden @ self.W2 + self.b2

    def condition(self, H: Tensor) -> Tensor:
        """Flatten the representation matrix into a D-vector signal, (B, D)."""
        B = H.shape[0]
        return H.reshape(B, self.n_nodes * self.dim) @ self.Wc + self.bc

    def puzzle_logits(self, cond: Tensor) -> Tensor:
        return cond @ self.Wp + self.bp


def graph_loss(forecast: Tensor, future: np.ndarray) -> Tensor:
    """Squared L2 error against the time-averaged future frames, batch mean.

    future: (B, F, J, C) raw block; the target is its mean over the frame
    axis.
    """
    target = np.asarray(future).mean(axis=1)
    if target.shape != forecast.shape:
        raise ContractViolation(
            f"forecast shape {forecast.shape} does not match target {target.shape}")
    diff = forecast - Tensor(target.astype(forecast.dtype))
    return (diff * diff).sum(axis=(1, 2)).mean()


def puzzle_loss(logits: Tensor, class_id: int) -> tuple[Tensor, np.ndarray]:
    """Cross-entropy against the one-hot move class; returns (loss, p_hat)."""
    n_classes = logits.shape[-1]
    if not (0 <= class_id < n_classes):
        raise ContractViolation(f"class id {class_id} out of range [0, {n_classes})")
    shift = logits - Tensor(logits.data.max(axis=-1, keepdims=True).astype(logits.dtype))
    expd = shift.exp()
    log_probs = shift - expd.sum(axis=-1, keepdims=True).log()
    one_hot = np.zeros(n_classes)
    one_hot[class_id] = 1.0
    loss = -(log_probs * Tensor(one_hot.astype(logits.dtype))).sum(axis=-1).mean()
    with np.errstate(under="ignore"):
        p_hat = np.exp(log_probs.data)
    return loss, p_hat
