"""Shared numeric primitives: group norm, linear embedding, softmax, seeded init."""

import logging
import math

import numpy as np

from ..errors import ConfigurationError, ShapeError
from ..models import LinearMap, RngSpec, Tensor, as_tensor

log = logging.getLogger(__name__)

GROUPNORM_EPS = 1e-5


def _grouped_view(x: Tensor, groups: int) -> np.ndarray:
    n, c = x.shape[:2]
    if groups < 1 or c % groups:
        raise ConfigurationError(f"{c} channels cannot be split into {groups} norm groups")
    return x.reshape(n, groups, -1)


def group_norm(x: Tensor, groups: int = 4, eps: float = GROUPNORM_EPS) -> Tensor:
    """Normalize each (sample, channel group) to zero mean and unit variance.

    No affine parameters are learned.
    """
    x = as_tensor(x, "group_norm input")
    if eps <= 0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    g = _grouped_view(x, groups)
    mean = g.mean(axis=2, keepdims=True)
    var = g.var(axis=2, keepdims=True)
    return ((g - mean) / np.sqrt(var + eps)).reshape(x.shape).astype(x.dtype, copy=False)


def group_norm_backward(x: Tensor, upstream: Tensor, groups: int = 4, eps: float = GROUPNORM_EPS) -> Tensor:
    """Gradient of ``sum(group_norm(x) * upstream)`` with respect to ``x``."""
    g = _grouped_view(x, groups)
    u = upstream.reshape(g.shape)
    mean = g.mean(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(g.var(axis=2, keepdims=True) + eps)
    xhat = (g - mean) * inv_std
    du = u - u.mean(axis=2, keepdims=True) - xhat * (u * xhat).mean(axis=2, keepdims=True)
    return (inv_std * du).reshape(x.shape)


def linear_embed(x: Tensor, m: LinearMap) -> Tensor:
    """Apply ``m`` to the channel vector at every spatial position."""
    x = as_tensor(x, "linear_embed input")
    if x.shape[1] != m.cols:
        raise ShapeError(f"LinearMap expects {m.cols} channels, input has {x.shape[1]}")
    return np.einsum("dc,nchw->ndhw", m.weights.astype(x.dtype, copy=False), x)


def linear_embed_backward(x: Tensor, m: LinearMap, upstream: Tensor) -> tuple[Tensor, np.ndarray]:
    """Return (d_x, d_weights) for ``sum(linear_embed(x, m) * upstream)``."""
    d_x = np.einsum("dc,ndhw->nchw", m.weights, upstream)
    d_w = np.einsum("ndhw,nchw->dc", upstream, x)
    return d_x, d_w


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_vec(v) -> np.ndarray:
    """Softmax of a single vector of S >= 1 finite reals."""
    v = np.asarray(v, dtype=np.result_type(np.asarray(v).dtype, np.float32))
    if v.ndim != 1 or v.size < 1:
        raise ShapeError(f"softmax_vec expects a non-empty vector, got shape {v.shape}")
    return softmax(v)


def xavier_bound(shape: tuple[int, ...]) -> float:
    """Uniform-Xavier half-range sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        receptive = math.prod(shape[2:])
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    return math.sqrt(6.0 / (fan_in + fan_out))


def seeded_init(shape: tuple[int, ...], rng: RngSpec, dtype=np.float64) -> np.ndarray:
    """Deterministic uniform-Xavier initialization for ``shape``."""
    if not shape or any(int(s) < 1 for s in shape):
        raise ShapeError(f"invalid shape {shape}")
    shape = tuple(int(s) for s in shape)
    bound = xavier_bound(shape)
    values = rng.generator().uniform(-bound, bound, size=shape)
    log.debug("xavier init shape=%s seed=%d bound=%.4f", shape, rng.seed, bound)
    return values.astype(dtype)


def init_linear_map(rows: int, cols: int, rng: RngSpec, dtype=np.float64) -> LinearMap:
    """Seeded d x C projection."""
    return LinearMap(seeded_init((rows, cols), rng, dtype))
