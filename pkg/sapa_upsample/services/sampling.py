"""Coordinate generation and value sampling.

Coordinates are (row, col) pairs in low-res index space, stored in the last axis of
an array.  Out-of-range coordinates are clamped to the edge, for windows and for
fractional samples alike.
"""

import logging

import numpy as np

from ..errors import ConfigurationError, ShapeError
from ..models import Corners, Tensor, as_tensor

log = logging.getLogger(__name__)


def _check_kernel(k: int) -> None:
    if k < 1 or k % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd and positive, got {k}")


def window_coords(l: tuple[int, int], k: int) -> list[tuple[int, int]]:
    """The K*K integer coordinates centered at ``l``, raster order, unclamped."""
    _check_kernel(k)
    r = k // 2
    i, j = l
    return [(i + u, j + v) for u in range(-r, r + 1) for v in range(-r, r + 1)]


def window_offsets(k: int) -> np.ndarray:
    """Window displacements as a (K*K, 2) array in raster order."""
    _check_kernel(k)
    r = k // 2
    u, v = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    return np.stack([u.ravel(), v.ravel()], axis=-1).astype(np.float64)


def grid_offsets(points: int) -> np.ndarray:
    """Regular sqrt(S) x sqrt(S) displacement pattern centered on the origin."""
    side = int(round(np.sqrt(points)))
    if side * side != points:
        raise ConfigurationError(f"grid initialization needs a square point count, got S={points}")
    axis = np.arange(side) - (side - 1) / 2.0
    u, v = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([u.ravel(), v.ravel()], axis=-1)


def base_coords(h: int, w: int, ratio: int) -> np.ndarray:
    """Low-res anchor l = floor(l' / s) for every output position, shape (sH, sW, 2)."""
    rows = np.arange(h * ratio) // ratio
    cols = np.arange(w * ratio) // ratio
    r, c = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([r, c], axis=-1).astype(np.float64)


def bilinear_corners(coords: np.ndarray, h: int, w: int) -> Corners:
    """Clamp ``coords`` to the map and resolve their four integer neighbors."""
    y = coords[..., 0]
    x = coords[..., 1]
    cy = np.clip(y, 0.0, h - 1)
    cx = np.clip(x, 0.0, w - 1)
    i0 = np.floor(cy).astype(np.intp)
    j0 = np.floor(cx).astype(np.intp)
    return Corners(
        i0=i0,
        i1=np.minimum(i0 + 1, h - 1),
        j0=j0,
        j1=np.minimum(j0 + 1, w - 1),
        fy=cy - i0,
        fx=cx - j0,
        inside_y=(y > 0) & (y < h - 1),
        inside_x=(x > 0) & (x < w - 1),
    )


def _gather(x: Tensor, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    """x[b, :, i, j] for index arrays shaped (n, ...), result (n, ..., c)."""
    n = x.shape[0]
    b = np.arange(n).reshape((n,) + (1,) * (i.ndim - 1))
    return np.moveaxis(x, 1, -1)[b, i, j]


def bilinear_sample(x: Tensor, coords: np.ndarray, corners: Corners | None = None) -> np.ndarray:
    """Sample ``x`` (n, c, h, w) at ``coords`` (n, ..., 2); returns (n, c, ...).

    Integer coordinates reproduce stored values exactly.
    """
    x = as_tensor(x, "bilinear_sample input")
    coords = np.asarray(coords)
    if coords.shape[0] != x.shape[0] or coords.shape[-1] != 2:
        raise ShapeError(f"coords of shape {coords.shape} do not match a batch of {x.shape[0]}")
    c = corners if corners is not None else bilinear_corners(coords, x.shape[2], x.shape[3])
    if not c.fy.any() and not c.fx.any():
        return np.moveaxis(_gather(x, c.i0, c.j0), -1, 1)
    fy = c.fy[..., None].astype(x.dtype, copy=False)
    fx = c.fx[..., None].astype(x.dtype, copy=False)
    top = _gather(x, c.i0, c.j0) * (1 - fx) + _gather(x, c.i0, c.j1) * fx
    bottom = _gather(x, c.i1, c.j0) * (1 - fx) + _gather(x, c.i1, c.j1) * fx
    return np.moveaxis(top * (1 - fy) + bottom * fy, -1, 1)


def bilinear_sample_backward(
    x: Tensor, coords: np.ndarray, upstream: np.ndarray, corners: Corners | None = None
) -> tuple[Tensor, np.ndarray, int]:
    """Gradients of ``sum(bilinear_sample(x, coords) * upstream)``.

    Returns (d_x, d_coords, boundary) where ``boundary`` counts coordinates at or
    beyond the clamp range; their coordinate gradient is set to 0 on that axis.
    """
    n, ch, h, w = x.shape
    c = corners if corners is not None else bilinear_corners(coords, h, w)
    u = np.moveaxis(upstream, 1, -1)
    fy = c.fy[..., None]
    fx = c.fx[..., None]

    d_x = np.zeros((n, h, w, ch), dtype=np.result_type(x.dtype, upstream.dtype))
    b = np.broadcast_to(np.arange(n).reshape((n,) + (1,) * (c.i0.ndim - 1)), c.i0.shape)
    for i, j, wt in (
        (c.i0, c.j0, (1 - fy) * (1 - fx)),
        (c.i0, c.j1, (1 - fy) * fx),
        (c.i1, c.j0, fy * (1 - fx)),
        (c.i1, c.j1, fy * fx),
    ):
        np.add.at(d_x, (b, i, j), u * wt)

    v00 = _gather(x, c.i0, c.j0)
    v01 = _gather(x, c.i0, c.j1)
    v10 = _gather(x, c.i1, c.j0)
    v11 = _gather(x, c.i1, c.j1)
    dy = (((v10 - v00) * (1 - fx) + (v11 - v01) * fx) * u).sum(axis=-1)
    dx = (((v01 - v00) * (1 - fy) + (v11 - v10) * fy) * u).sum(axis=-1)
    d_coords = np.stack([np.where(c.inside_y, dy, 0.0), np.where(c.inside_x, dx, 0.0)], axis=-1)
    boundary = int(np.count_nonzero(~c.inside_y) + np.count_nonzero(~c.inside_x))
    return np.moveaxis(d_x, -1, 1), d_coords, boundary


def nn_upsample(x: Tensor, s: int) -> Tensor:
    """Nearest-neighbor upsampling: out[i', j'] = x[i' // s, j' // s]."""
    x = as_tensor(x, "nn_upsample input")
    if s < 1:
        raise ConfigurationError(f"ratio must be >= 1, got {s}")
    return np.repeat(np.repeat(x, s, axis=2), s, axis=3)


def bilinear_upsample(x: Tensor, s: int, align_corners: bool = False) -> Tensor:
    """Bilinear resize by ``s``; half-pixel source mapping unless ``align_corners``."""
    x = as_tensor(x, "bilinear_upsample input")
    if s < 1:
        raise ConfigurationError(f"ratio must be >= 1, got {s}")
    n, _, h, w = x.shape

    def source(size: int) -> np.ndarray:
        dst = np.arange(size * s, dtype=np.float64)
        if align_corners:
            return dst * ((size - 1) / (size * s - 1)) if size * s > 1 else dst
        return np.clip((dst + 0.5) / s - 0.5, 0.0, size - 1)

    r, c = np.meshgrid(source(h), source(w), indexing="ij")
    coords = np.broadcast_to(np.stack([r, c], axis=-1), (n, h * s, w * s, 2))
    return bilinear_sample(x, coords).astype(x.dtype, copy=False)


def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """(n, c, h, w) -> (n, c/s^2, sh, sw) with out[k, si+u, sj+v] = in[k*s^2 + u*s + v, i, j]."""
    x = as_tensor(x, "pixel_shuffle input")
    n, c, h, w = x.shape
    if s < 1 or c % (s * s):
        raise ShapeError(f"pixel_shuffle needs channels divisible by s^2={s * s}, got {c}")
    out = x.reshape(n, c // (s * s), s, s, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(out.reshape(n, c // (s * s), h * s, w * s))


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Exact inverse of ``pixel_shuffle``."""
    x = as_tensor(x, "pixel_unshuffle input")
    n, c, h, w = x.shape
    if s < 1 or h % s or w % s:
        raise ShapeError(f"pixel_unshuffle needs spatial dims divisible by {s}, got {h}x{w}")
    out = x.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(out.reshape(n, c * s * s, h // s, w // s))
