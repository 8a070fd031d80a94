"""Minimal reverse-mode autodiff over numpy arrays.

Keeps the computation graph via parent links and backward closures, the
usual micrograd layout scaled up to ND arrays with broadcasting. Only the
operations this pipeline needs are provided; 64-bit arrays are used in
verification code, 32-bit in training configs. Gradients of every exported
primitive are checked against central finite differences in the test
suite.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import ContractViolation, TrainingError


class _GradMode(threading.local):
    """Graph construction is toggled per thread so concurrent inference
    workers cannot race each other's no_grad scopes."""

    enabled = True


_grad_mode = _GradMode()


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference fast path)."""
    prev = _grad_mode.enabled
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = prev


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if not np.issubdtype(arr.dtype, np.floating):
        return arr.astype(np.float64)
    return arr


def _unbroadcast(g: np.ndarray, target_shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the operand's shape."""
    if g.shape == target_shape:
        return g
    while g.ndim > len(target_shape):
        g = g.sum(axis=0)
    for i, (gs, ts) in enumerate(zip(g.shape, target_shape)):
        if ts == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    """ND array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: np.ndarray = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad) and _grad_mode.enabled
        self.grad: Optional[np.ndarray] = None
        self._backward: Callable[[], None] = _noop
        self._parents: tuple["Tensor", ...] = ()

    # -- introspection --------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- graph plumbing --------------------------------------------------
    def _ensure_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    def _accum(self, x: np.ndarray, fresh: bool = False) -> None:
        """Add x into the gradient buffer. ``fresh`` promises x is a newly
        allocated array that no one else references, so the first
        accumulation may adopt it instead of copying."""
        if self.grad is None:
            if fresh and x.dtype == self.data.dtype and x.shape == self.data.shape:
                self.grad = x
            else:
                self.grad = np.array(x, dtype=self.data.dtype)
        else:
            self.grad += x

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ContractViolation("backward() on non-scalar output needs an explicit seed")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(grad, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise ContractViolation("seed gradient shape mismatch")

        # Iterative topological order (avoids recursion limits on deep chains).
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self._ensure_grad()
        self.grad = self.grad + seed
        for node in reversed(topo):
            node._backward()

    # -- helpers ----------------------------------------------------------
    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def _make(self, data: np.ndarray, parents: Iterable["Tensor"]) -> "Tensor":
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        out = Tensor(data, requires_grad=_grad_mode.enabled and any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = parents
        return out

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = self._make(self.data + other.data, (self, other))

        def _bw():
            if self.requires_grad:
                self._accum(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(out.grad, other.shape))

        if out.requires_grad:
            out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = self._make(-self.data, (self,))

        def _bw():
            if self.requires_grad:
                self._accum(-out.grad, fresh=True)

        if out.requires_grad:
            out._backward = _bw
        return out

    def __sub__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = self._make(self.data - other.data, (self, other))

        def _bw():
            if self.requires_grad:
                self._accum(_unbroadcast(out.grad, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-out.grad, other.shape))

        if out.requires_grad:
            out._backward = _bw
        return out

    def __rsub__(self, other) -> "Tensor":
        return self._coerce(other).__sub__(self)

    def __mul__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = self._make(self.data * other.data, (self, other))

        def _bw():
            if self.requires_grad:
                self._accum(_unbroadcast(out.grad * other.data, self.shape), fresh=True)
            if other.requires_grad:
                other._accum(_unbroadcast(out.grad * self.data, other.shape), fresh=True)

        if out.requires_grad:
            out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = self._coerce(other)
        out = self._make(self.data / other.data, (self, other))

        def _bw():
            if self.requires_grad:
                self._accum(_unbroadcast(out.grad / other.data, self.shape), fresh=True)
            if other.requires_grad:
                other._accum(_unbroadcast(-out.grad * self.data / (other.data * other.data), other.shape), fresh=True)

        if out.requires_grad:
            out._backward = _bw
        return out

    def __rtruediv__(self, other) -> "Tensor":
        return self._coerce(other).__truediv__(self)

    def __pow__(self, exponent: float) -> "Tensor":
        k = float(exponent)
        out = self._make(self.data**k, (self,))

        def _bw():
            if self.requires_grad:
                self._accum(out.grad * (k * self.data ** (k - 1.0)), fresh=True)

        if out.requires_grad:
            out._backward = _bw
        return out

    # -- elementwise functions ---------------------------------------------
    def exp(self) -> "Tensor":
        out = self._make(np.exp(self.data), (self,))

        def _bw():
            if self.requires_grad:
                self._accum(out.grad * out.data, fresh=True)

        if out.requires_grad:
            out._backward = _bw
        return out

    def log(self) -> "Tensor":
        out = self._make(np.log(self.data), (self,))

        def _bw():
            if self.requires_grad:
                self._accum(out.grad / self.data, fresh=True)

        if out.requires_grad:
            out._backward = _bw
        return out

    def sqrt(self) -> "Tensor":
        out = self._make(np.sqrt(self.data), (self,))

        def _bw():
            if self.requires_grad:
                self._accum(out.grad * (0.5 / out.data), fresh=True)

        if out.requires_grad:
            out._backward = _bw
        return out

    def relu(self) -> "Tensor":
        out = self._make(np.maximum(self.data, 0.0), (self,))

        def _bw():
            if self.requires_grad:
                self._accum(out.grad * (self.data > 0), fresh=True)

        if out.requires_grad:
            out._backward = _bw
        return out

    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        # 0.2 negative slope is the package-wide graph-attention default.
        factor = np.where(self.data > 0, 1.0, slope).astype(self.data.dtype)
        out = self._make(np.where(self.data > 0, self.data, self.data * slope), (self,))

        def _bw():
            if self.requires_grad:
                self._accum(out.grad * factor, fresh=True)

        if out.requires_grad:
            out._backward = _bw
        return out

    # -- linear algebra -----------------------------------------------------
    def matmul(self, other) -> "Tensor":
        """Matrix product with two fast paths that collapse the batched
        slice loops numpy would otherwise run: ND @ 2D flattens to a single
        GEMM, 2D @ ND goes through tensordot."""
        other = self._coerce(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ContractViolation("matmul operands must have ndim >= 2")

        if b.ndim == 2:
            lead = a.shape[:-1]
            a2 = a.reshape(-1, a.shape[-1])
            out = self._make((a2 @ b).reshape(lead + (b.shape[1],)), (self, other))

            def _bw():
                g2 = out.grad.reshape(-1, b.shape[1])
                if self.requires_grad:
                    self._accum(np.ascontiguousarray((g2 @ b.T).reshape(a.shape)), fresh=True)
                if other.requires_grad:
                    other._accum(a2.T @ g2, fresh=True)

        elif a.ndim == 2:
            # out[..., j, c] = sum_k a[j, k] * b[..., k, c]
            prod = np.tensordot(a, b, axes=([1], [b.ndim - 2]))
            out = self._make(np.moveaxis(prod, 0, -2), (self, other))

            def _bw():
                g = out.grad
                if self.requires_grad:
                    gj = np.moveaxis(g, -2, 0).reshape(a.shape[0], -1)
                    bk = np.moveaxis(b, -2, 0).reshape(a.shape[1], -1)
                    self._accum(gj @ bk.T, fresh=True)
                if other.requires_grad:
                    db = np.tensordot(a.T, g, axes=([1], [g.ndim - 2]))
                    other._accum(np.ascontiguousarray(np.moveaxis(db, 0, -2)), fresh=True)

        else:
            out = self._make(np.matmul(a, b), (self, other))

            def _bw():
                g = out.grad
                if self.requires_grad:
                    self._accum(_unbroadcast(np.matmul(g, b.swapaxes(-1, -2)), self.shape))
                if other.requires_grad:
                    other._accum(_unbroadcast(np.matmul(a.swapaxes(-1, -2), g), other.shape))

        if out.requires_grad:
            out._backward = _bw
        return out

    __matmul__ = matmul

    # -- reductions -----------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,))

        def _bw():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    axes = (axis,) if isinstance(axis, int) else tuple(axis)
                    g = np.expand_dims(g, tuple(a % self.data.ndim for a in axes))
                self._accum(np.broadcast_to(g, self.shape))

        if out.requires_grad:
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            n = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation -----------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = self._make(self.data.reshape(shape), (self,))

        def _bw():
            if self.requires_grad:
                self._accum(out.grad.reshape(self.shape))

        if out.requires_grad:
            out._backward = _bw
        return out

    def moveaxis(self, source: int, destination: int) -> "Tensor":
        out = self._make(np.moveaxis(self.data, source, destination), (self,))

        def _bw():
            if self.requires_grad:
                self._accum(np.moveaxis(out.grad, destination, source))

        if out.requires_grad:
            out._backward = _bw
        return out

    def __getitem__(self, index) -> "Tensor":
        out = self._make(self.data[index], (self,))

        def _bw():
            if self.requires_grad:
                self._ensure_grad()
                np.add.at(self.grad, index, out.grad)

        if out.requires_grad:
            out._backward = _bw
        return out


def _noop() -> None:
    return None


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    parents = tuple(tensors)
    out = Tensor(out_data, requires_grad=_grad_mode.enabled and any(t.requires_grad for t in tensors))
    if not out.requires_grad:
        return out
    out._parents = parents
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def _bw():
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * out_data.ndim
                sl[axis] = slice(int(start), int(stop))
                t._accum(out.grad[tuple(sl)])

    out._backward = _bw
    return out


def parameter(data, dtype=np.float64) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam with bias correction over a named parameter set.

    A parameter whose gradient is identically zero is left untouched by
    ``step`` (moments included); only the shared step counter advances.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ContractViolation(f"gradient shape mismatch for '{name}'")
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter '{name}'")
            if not np.any(g):
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: Adam) -> dict[str, Tensor]:
    """Functional wrapper: install the given gradients, run one update."""
    for name, p in state.params.items():
        g = grads.get(name)
        p.grad = None if g is None else np.asarray(g, dtype=p.data.dtype)
    state.step()
    return params


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
               eps: float = 1e-5) -> dict[str, float]:
    """Compare reverse-mode gradients with central finite differences.

    ``loss_fn`` must rebuild the scalar loss from the live parameter
    tensors on every call and be deterministic (fixed inputs, pre-drawn
    noise). Returns the max relative error per parameter, with relative
    error |a - f| / max(|a|, |f|, 1e-8) per entry.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractViolation("grad_check eps must lie in [1e-7, 1e-3]")

    probe_a = loss_fn().item()
    probe_b = loss_fn().item()
    if probe_a != probe_b:
        raise ContractViolation(
            f"loss_fn is not deterministic under a fixed stream ({probe_a!r} != {probe_b!r}); "
            "grad check aborted")

    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}

    report: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * eps)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-8)
        rel = np.abs(a - fd) / denom
        report[name] = float(rel.max()) if rel.size else 0.0
    return report
