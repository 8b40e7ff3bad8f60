"""Minimal trainable-layer engine: explicit forward/backward passes for a
fixed layer set, two classification losses, AdamW, a warm-restart cosine
schedule, and finite-difference gradient checking.

Layers keep their parameters and gradients in plain dicts of numpy arrays.
Training runs in float32 by default; gradient checks should build layers
with ``dtype=np.float64``.
"""
from __future__ import annotations

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when training produces a non-finite loss."""


def kaiming_init(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """He-normal initialization: i.i.d. normal with std sqrt(2 / fan_in)."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Layer:
    """Base layer: named parameters, matching gradients, train/eval mode."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True
        self._cache = None

    def param_count(self) -> int:
        return sum(int(p.size) for p in self.params.values())

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called without a cached forward pass")
        raise NotImplementedError


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.params["weight"] = kaiming_init((n_in, n_out), fan_in=n_in, rng=rng, dtype=dtype)
        self.params["bias"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.params["weight"].shape[0]:
            raise ValueError(f"Linear expected (B, {self.params['weight'].shape[0]}), got {x.shape}")
        self._cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, grad_out):
        x = self._cache
        if x is None:
            raise RuntimeError("Linear.backward without cached forward")
        self.grads["weight"] = x.T @ grad_out
        self.grads["bias"] = grad_out.sum(axis=0)
        return grad_out @ self.params["weight"].T


class Conv3x3(Layer):
    """3x3 cross-correlation, stride 1, zero padding 1 (shape-preserving)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.c_in = c_in
        self.c_out = c_out
        self.params["weight"] = kaiming_init((c_out, c_in, 3, 3), fan_in=9 * c_in, rng=rng, dtype=dtype)
        self.params["bias"] = np.zeros(c_out, dtype=dtype)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"Conv3x3 expected (B, {self.c_in}, H, W), got {x.shape}")
        b, _, h, w = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        weight = self.params["weight"]
        # Accumulate in (B, H, W, c_out) so each tap is one BLAS call.
        acc = np.zeros((b, h, w, self.c_out), dtype=x.dtype)
        for di in range(3):
            for dj in range(3):
                patch = xp[:, :, di : di + h, dj : dj + w]
                acc += np.tensordot(patch, weight[:, :, di, dj], axes=([1], [1]))
        self._cache = xp
        return np.ascontiguousarray(acc.transpose(0, 3, 1, 2)) + self.params["bias"][None, :, None, None]

    def backward(self, grad_out):
        xp = self._cache
        if xp is None:
            raise RuntimeError("Conv3x3.backward without cached forward")
        b, _, hp, wp = xp.shape
        h, w = hp - 2, wp - 2
        weight = self.params["weight"]
        g_weight = np.empty_like(weight)
        gxp = np.zeros_like(xp)
        for di in range(3):
            for dj in range(3):
                patch = xp[:, :, di : di + h, dj : dj + w]
                g_weight[:, :, di, dj] = np.tensordot(grad_out, patch, axes=([0, 2, 3], [0, 2, 3]))
                spread = np.tensordot(grad_out, weight[:, :, di, dj], axes=([1], [0]))
                gxp[:, :, di : di + h, dj : dj + w] += spread.transpose(0, 3, 1, 2)
        self.grads["weight"] = g_weight
        self.grads["bias"] = grad_out.sum(axis=(0, 2, 3))
        return gxp[:, :, 1 : 1 + h, 1 : 1 + w]


class BatchNorm(Layer):
    """Batch normalization over (B,) features or (B, H, W) per channel.

    Train mode normalizes by batch statistics and updates running stats
    (momentum 0.1); eval mode is a fixed affine map using the running stats.
    """

    def __init__(self, n: int, spatial: bool = False, eps: float = 1e-5,
                 momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.n = n
        self.spatial = spatial
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(n, dtype=dtype)
        self.params["beta"] = np.zeros(n, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(n, dtype=dtype)
        self.buffers["running_var"] = np.ones(n, dtype=dtype)

    def _shaped(self, v):
        return v[None, :, None, None] if self.spatial else v[None, :]

    def forward(self, x):
        axes = (0, 2, 3) if self.spatial else (0,)
        expected_dim = 4 if self.spatial else 2
        if x.ndim != expected_dim or x.shape[1] != self.n:
            raise ValueError(f"BatchNorm expected {expected_dim}-D input with {self.n} channels, got {x.shape}")
        if self.training:
            if x.shape[0] < 2:
                raise ValueError("BatchNorm train mode requires batch size >= 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            mom = self.momentum
            self.buffers["running_mean"] = ((1 - mom) * self.buffers["running_mean"] + mom * mean).astype(x.dtype)
            self.buffers["running_var"] = ((1 - mom) * self.buffers["running_var"] + mom * var).astype(x.dtype)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - self._shaped(mean)) * self._shaped(inv_std)
        self._cache = (x_hat, inv_std)
        return self._shaped(self.params["gamma"]) * x_hat + self._shaped(self.params["beta"])

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError("BatchNorm.backward without cached forward")
        x_hat, inv_std = self._cache
        axes = (0, 2, 3) if self.spatial else (0,)
        self.grads["gamma"] = (grad_out * x_hat).sum(axis=axes)
        self.grads["beta"] = grad_out.sum(axis=axes)
        g_hat = grad_out * self._shaped(self.params["gamma"])
        if not self.training:
            return g_hat * self._shaped(inv_std)
        m = grad_out.size // self.n
        term = (
            m * g_hat
            - self._shaped(g_hat.sum(axis=axes))
            - x_hat * self._shaped((g_hat * x_hat).sum(axis=axes))
        )
        return term * self._shaped(inv_std) / m


class ReLU(Layer):
    def forward(self, x):
        self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError("ReLU.backward without cached forward")
        return grad_out * self._cache


class Dropout(Layer):
    """Inverted dropout: train mode scales survivors by 1/(1-p), eval mode
    is the identity. The RNG is injected via ``rng`` before training."""

    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout p must be in [0, 1), got {p}")
        self.p = p
        self.rng: np.random.Generator | None = None

    def forward(self, x):
        if not self.training or self.p == 0.0:
            self._cache = None
            return x
        if self.rng is None:
            raise RuntimeError("Dropout needs an rng in train mode (set layer.rng)")
        mask = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        self._cache = mask.astype(x.dtype)
        return x * self._cache

    def backward(self, grad_out):
        if self._cache is None:
            return grad_out
        return grad_out * self._cache


class MaxPool2x2(Layer):
    """Non-overlapping 2x2 max pooling; gradient routes to the first argmax."""

    def forward(self, x):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"MaxPool2x2 needs even spatial dims, got {h}x{w}")
        blocks = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
        idx = blocks.argmax(axis=-1)
        self._cache = (idx, (b, c, h, w))
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError("MaxPool2x2.backward without cached forward")
        idx, (b, c, h, w) = self._cache
        blocks = np.zeros((b, c, h // 2, w // 2, 4), dtype=grad_out.dtype)
        np.put_along_axis(blocks, idx[..., None], grad_out[..., None], axis=-1)
        return blocks.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)


class Flatten(Layer):
    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        if self._cache is None:
            raise RuntimeError("Flatten.backward without cached forward")
        return grad_out.reshape(self._cache)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_labels(logits, labels):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label out of range")
    return labels


def softmax_ce_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. logits."""
    labels = _check_labels(logits, labels)
    b = logits.shape[0]
    log_p = _log_softmax(np.asarray(logits, dtype=np.float64))
    loss = -log_p[np.arange(b), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(b), labels] -= 1.0
    return float(loss), (grad / b).astype(logits.dtype)


def focal_loss(logits: np.ndarray, labels: np.ndarray, gamma: float = 2.0) -> tuple[float, np.ndarray]:
    """Mean focal loss -(1 - p_t)^gamma log p_t and its analytic gradient."""
    labels = _check_labels(logits, labels)
    b = logits.shape[0]
    log_p = _log_softmax(np.asarray(logits, dtype=np.float64))
    p = np.exp(log_p)
    pt = p[np.arange(b), labels]
    log_pt = log_p[np.arange(b), labels]
    one_m = 1.0 - pt
    loss = (-(one_m ** gamma) * log_pt).mean()
    # coef = p_t * dL/dp_t, formed without dividing by p_t so that saturated
    # logits (p_t -> 0 or 1) stay finite; p_t * log p_t underflows safely.
    if gamma == 0.0:
        coef = np.full_like(pt, -1.0)
    else:
        pow_gm1 = np.where(one_m > 0.0, one_m ** (gamma - 1.0), 0.0)
        coef = gamma * pow_gm1 * (pt * log_pt) - one_m ** gamma
    # dp_t/dz_j = p_t (delta_{jy} - p_j)
    grad = -p * coef[:, None]
    grad[np.arange(b), labels] += coef
    return float(loss), (grad / b).astype(logits.dtype)


class AdamW:
    """Adam with bias correction plus decoupled weight decay.

    The decay step theta <- theta - lr * wd * theta is applied after the
    adaptive update, separately from it. ``lr`` may be reassigned between
    steps (for scheduling).
    """

    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-3):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamW) -> dict[str, np.ndarray]:
    """Single AdamW update through an existing optimizer ``state``."""
    state.params = params
    state.step(grads)
    return params


def cosine_wr_lr(epoch: int, eta_max: float = 1e-3, eta_min: float = 0.0,
                 t0: int = 20, t_mult: int = 2) -> float:
    """Cosine annealing with warm restarts, stepped once per epoch.

    Periods have lengths t0, t0*t_mult, t0*t_mult^2, ... so restarts land at
    cumulative epochs t0, t0*(1+t_mult), ...
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    t_cur = epoch
    t_i = t0
    while t_cur >= t_i:
        t_cur -= t_i
        t_i *= t_mult
    return float(eta_min + 0.5 * (eta_max - eta_min) * (1.0 + np.cos(np.pi * t_cur / t_i)))


def grad_check(forward_fn, params: dict[str, np.ndarray], h: float = 1e-5,
               atol: float = 1e-8) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``forward_fn()`` must return ``(loss, analytic_grads)`` and be a
    deterministic function of ``params`` (the caller is responsible for
    excluding stochastic layers such as train-mode dropout). Differences
    below ``atol`` count as zero: along exactly-degenerate directions (for
    example a bias that a following batch norm cancels) both gradients are
    pure roundoff noise and a relative measure would be meaningless.
    """
    _, analytic = forward_fn()
    worst = 0.0
    for name, p in params.items():
        a = analytic[name]
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = forward_fn()
            flat[i] = orig - h
            lm, _ = forward_fn()
            flat[i] = orig
            num = (lp - lm) / (2.0 * h)
            ana = float(a.reshape(-1)[i])
            diff = abs(ana - num)
            if diff <= atol:
                continue
            worst = max(worst, diff / max(abs(ana), abs(num)))
    return worst
