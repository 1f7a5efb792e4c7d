"""Small feedforward networks with hand-written backprop and Adam.

Everything is float64 numpy. Weight matrices are stored ``(out, in)`` and
inputs are processed as row batches ``(n, in)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

LN_EPS = 1e-10


class ShapeError(ValueError):
    """Raised when an input or gradient does not fit a network."""


class NonFiniteError(ArithmeticError):
    """Raised when a loss or gradient is NaN or infinite."""


@dataclass
class MlpParams:
    """Weights of a ReLU MLP with optional layer norm on hidden layers."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    ln_gains: Optional[List[np.ndarray]] = None
    ln_biases: Optional[List[np.ndarray]] = None
    out_act: str = "linear"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty lists of equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f"layer {i}: in-dimension {w.shape[1]} != previous out-dimension "
                    f"{self.weights[i - 1].shape[0]}"
                )
        if (self.ln_gains is None) != (self.ln_biases is None):
            raise ShapeError("ln_gains and ln_biases must both be set or both be None")
        if self.ln_gains is not None and len(self.ln_gains) != len(self.weights) - 1:
            raise ShapeError("one layer-norm gain/bias pair is needed per hidden layer")
        if self.out_act not in ("linear", "tanh"):
            raise ValueError(f"unknown output activation {self.out_act!r}")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_norm(self) -> bool:
        return self.ln_gains is not None

    def tensors(self) -> List[np.ndarray]:
        """All parameter arrays in a fixed order (used by Adam, soft updates, oracles)."""
        out = list(self.weights) + list(self.biases)
        if self.ln_gains is not None:
            out += list(self.ln_gains) + list(self.ln_biases)
        return out

    def with_tensors(self, tensors: Sequence[np.ndarray]) -> "MlpParams":
        n = len(self.weights)
        tensors = list(tensors)
        if len(tensors) != len(self.tensors()):
            raise ShapeError("tensor count does not match this network")
        kw = dict(weights=tensors[:n], biases=tensors[n : 2 * n])
        if self.ln_gains is not None:
            h = n - 1
            kw.update(ln_gains=tensors[2 * n : 2 * n + h], ln_biases=tensors[2 * n + h :])
        return replace(self, **kw)

    def copy(self) -> "MlpParams":
        return self.with_tensors([t.copy() for t in self.tensors()])

    def all_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors())


@dataclass
class GradBundle:
    """Gradients shaped like ``MlpParams.tensors()`` plus an optional input gradient."""

    tensors: List[np.ndarray]
    input: Optional[np.ndarray] = None

    def all_finite(self) -> bool:
        ok = all(np.isfinite(g).all() for g in self.tensors)
        return ok and (self.input is None or bool(np.isfinite(self.input).all()))


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, tensors: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls(m=[np.zeros_like(t) for t in tensors], v=[np.zeros_like(t) for t in tensors], **kw)

    def copy(self) -> "AdamState":
        return replace(self, m=[a.copy() for a in self.m], v=[a.copy() for a in self.v])


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    layer_norm: bool = True,
    out_act: str = "linear",
    final_scale: float = 1.0,
) -> MlpParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init; ``sizes`` = [in, hidden..., out]."""
    weights, biases = [], []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        if k == len(sizes) - 2:
            bound *= final_scale
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    gains = [np.ones(h) for h in sizes[1:-1]] if layer_norm else None
    shifts = [np.zeros(h) for h in sizes[1:-1]] if layer_norm else None
    return MlpParams(weights, biases, gains, shifts, out_act)


def layer_norm(z: np.ndarray):
    """Normalize each row to zero mean / unit variance. Returns (xhat, inverse std)."""
    mu = z.mean(axis=-1, keepdims=True)
    zc = z - mu
    inv_std = 1.0 / np.sqrt((zc * zc).mean(axis=-1, keepdims=True) + LN_EPS)
    return zc * inv_std, inv_std


def _as_batch(params: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"layer 0: expected input width {params.in_dim}, got shape {x.shape}")
    return x


def forward_cache(params: MlpParams, x):
    """Batched forward pass that keeps the intermediates needed for backprop."""
    h = _as_batch(params, x)
    cache = [h]
    n_layers = len(params.weights)
    for i in range(n_layers - 1):
        z = h @ params.weights[i].T + params.biases[i]
        if params.ln_gains is not None:
            xhat, inv_std = layer_norm(z)
            y = xhat * params.ln_gains[i] + params.ln_biases[i]
            cache.append((xhat, inv_std, y))
        else:
            y = z
            cache.append((None, None, y))
        h = np.maximum(y, 0.0)
        cache.append(h)
    out = h @ params.weights[-1].T + params.biases[-1]
    if params.out_act == "tanh":
        out = np.tanh(out)
    cache.append(out)
    return out, cache


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Network output; a 1-D input gives a 1-D output, a 2-D batch gives a batch."""
    out, _ = forward_cache(params, x)
    return out[0] if np.ndim(x) == 1 else out


def backward_cache(params: MlpParams, cache, dout) -> GradBundle:
    """Backprop ``dout`` (dL/d output, same shape as the batch output) through a cached pass.

    Per-sample gradients are summed over the batch.
    """
    out = cache[-1]
    dout = np.asarray(dout, dtype=np.float64).reshape(out.shape)
    n_layers = len(params.weights)
    dW = [None] * n_layers
    db = [None] * n_layers
    dg = [None] * (n_layers - 1)
    dbeta = [None] * (n_layers - 1)

    d = dout * (1.0 - out * out) if params.out_act == "tanh" else dout
    h_in = cache[-2]
    dW[-1] = d.T @ h_in
    db[-1] = d.sum(axis=0)
    dh = d @ params.weights[-1]
    for i in range(n_layers - 2, -1, -1):
        xhat, inv_std, y = cache[2 * i + 1]
        dy = dh * (y > 0.0)
        if params.ln_gains is not None:
            dg[i] = (dy * xhat).sum(axis=0)
            dbeta[i] = dy.sum(axis=0)
            dxhat = dy * params.ln_gains[i]
            dz = inv_std * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        else:
            dz = dy
        h_in = cache[2 * i]
        dW[i] = dz.T @ h_in
        db[i] = dz.sum(axis=0)
        dh = dz @ params.weights[i]
    tensors = dW + db
    if params.ln_gains is not None:
        tensors += dg + dbeta
    return GradBundle(tensors, input=dh)


def mlp_backward(params: MlpParams, x, upstream_grad) -> GradBundle:
    """Gradients of L w.r.t. parameters and input, given dL/d output."""
    out, cache = forward_cache(params, x)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.size != out.size:
        raise ShapeError(f"upstream gradient shape {upstream_grad.shape} != output shape {out.shape}")
    grads = backward_cache(params, cache, upstream_grad)
    if np.ndim(x) == 1:
        grads.input = grads.input[0]
    return grads


def global_norm(tensors: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float((t * t).sum()) for t in tensors)))


def adam_update(
    tensors: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    clip_norm: Optional[float] = None,
):
    """Adam on raw tensor lists. Returns new tensors and a new state; inputs are not mutated."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if len(grads) != len(tensors) or len(state.m) != len(tensors):
        raise ShapeError("gradient / moment count does not match parameter count")
    for t, g in zip(tensors, grads):
        if t.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {t.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite gradient passed to Adam")
    grads = list(grads)
    if clip_norm is not None:
        norm = global_norm(grads)
        if norm > clip_norm:
            grads = [g * (clip_norm / norm) for g in grads]
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_t, new_m, new_v = [], [], []
    for t, g, m, v in zip(tensors, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_t.append(t - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_t, replace(state, m=new_m, v=new_v, step=step)


def adam_step(state: AdamState, params: MlpParams, grads: GradBundle, lr: float, clip_norm=None):
    """One Adam step with bias correction. Returns ``(params, state)``."""
    tensors, state = adam_update(params.tensors(), grads.tensors, state, lr, clip_norm)
    return params.with_tensors(tensors), state


def finite_diff_grad(
    loss_fn: Callable[[MlpParams], float], params: MlpParams, eps: float = 1e-5
) -> GradBundle:
    """Central-difference gradient of ``loss_fn`` w.r.t. every parameter (slow oracle)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = [t.copy() for t in params.tensors()]
    grads = []
    for k, t in enumerate(base):
        g = np.zeros_like(t)
        flat = t.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lp = loss_fn(params.with_tensors(base))
            flat[j] = orig - eps
            lm = loss_fn(params.with_tensors(base))
            flat[j] = orig
            gflat[j] = (lp - lm) / (2.0 * eps)
        grads.append(g)
    return GradBundle(grads)


def finite_diff_array(loss_fn: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences for a function of a single array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    xf, gf = x.reshape(-1), g.reshape(-1)
    for j in range(xf.size):
        orig = xf[j]
        xf[j] = orig + eps
        lp = loss_fn(x)
        xf[j] = orig - eps
        lm = loss_fn(x)
        xf[j] = orig
        gf[j] = (lp - lm) / (2.0 * eps)
    return g


def max_rel_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray], floor: float = 1e-6) -> float:
    """Largest componentwise |a - n| / max(|a|, |n|, floor) across all arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(n, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst
