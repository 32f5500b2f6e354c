"""Slow float64 reference of the SAPA forward pass.

Written with plain per-position loops and no shared helpers from the vectorized
path, so that the two implementations can be checked against each other.
"""

import math
from typing import Optional

import numpy as np

from ..models import NormFn, OffsetInit, ParamSet, SapaConfig, Variant


def _group_norm(x: np.ndarray, groups: int, eps: float = 1e-5) -> np.ndarray:
    out = np.empty_like(x)
    n, c, _, _ = x.shape
    cg = c // groups
    for b in range(n):
        for k in range(groups):
            block = x[b, k * cg:(k + 1) * cg]
            mean = block.sum() / block.size
            var = ((block - mean) ** 2).sum() / block.size
            out[b, k * cg:(k + 1) * cg] = (block - mean) / math.sqrt(var + eps)
    return out


def _sample(x: np.ndarray, b: int, y: float, xc: float) -> np.ndarray:
    _, _, h, w = x.shape
    y = min(max(y, 0.0), h - 1.0)
    xc = min(max(xc, 0.0), w - 1.0)
    i0, j0 = int(math.floor(y)), int(math.floor(xc))
    i1, j1 = min(i0 + 1, h - 1), min(j0 + 1, w - 1)
    fy, fx = y - i0, xc - j0
    return (
        x[b, :, i0, j0] * (1 - fy) * (1 - fx)
        + x[b, :, i0, j1] * (1 - fy) * fx
        + x[b, :, i1, j0] * fy * (1 - fx)
        + x[b, :, i1, j1] * fy * fx
    )


def _normalize(scores: list[float], h: NormFn) -> list[float]:
    if h is NormFn.NONE:
        return list(scores)
    if h is NormFn.EXP:
        top = max(scores)
        vals = [math.exp(v - top) for v in scores]
    elif h is NormFn.RELU:
        vals = [max(v, 0.0) for v in scores]
    elif h is NormFn.SIGMOID:
        vals = [1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v)) for v in scores]
    else:
        vals = [math.log1p(math.exp(-abs(v))) + max(v, 0.0) for v in scores]
    total = sum(vals)
    if total == 0:
        return [1.0 / len(scores)] * len(scores)
    return [v / total for v in vals]


def _points(cfg: SapaConfig, decoder: np.ndarray, params: Optional[ParamSet], b: int, k: int, oi: int, oj: int):
    """Sampling coordinates for output (oi, oj) of group k."""
    s = cfg.ratio
    li, lj = oi // s, oj // s
    if cfg.variant is not Variant.D:
        r = cfg.kernel_size // 2
        return [(float(li + u), float(lj + v)) for u in range(-r, r + 1) for v in range(-r, r + 1)]

    phi = params.phi.weights.astype(np.float64)
    side = int(round(math.sqrt(cfg.num_points)))
    coords = []
    for p in range(cfg.num_points):
        pair = []
        for a in range(2):
            ch = (k * cfg.num_points + p) * 2 + a
            if cfg.offset_dof == 1:
                row = ch
            else:
                row = ch * s * s + (oi % s) * s + (oj % s)
            offset = float(phi[row] @ decoder[b, :, li, lj])
            if cfg.offset_init is OffsetInit.GRID:
                offset += (p // side if a == 0 else p % side) - (side - 1) / 2.0
            pair.append(offset)
        coords.append((li + pair[0], lj + pair[1]))
    return coords


def reference_forward(
    decoder: np.ndarray, encoder: Optional[np.ndarray], cfg: SapaConfig, params: Optional[ParamSet] = None
) -> np.ndarray:
    """Naive SAPA forward for any variant, always in float64."""
    x = np.asarray(decoder, dtype=np.float64)
    n, c, h, w = x.shape
    s, g = cfg.ratio, cfg.groups
    if cfg.guidance:
        y = np.asarray(encoder, dtype=np.float64)
    else:
        y = np.empty((n, c, h * s, w * s))
        for oi in range(h * s):
            for oj in range(w * s):
                y[:, :, oi, oj] = x[:, :, oi // s, oj // s]
    cg = c // g
    xf = _group_norm(x, cfg.norm_groups) if cfg.pre_groupnorm else x
    yf = _group_norm(y, cfg.norm_groups) if cfg.pre_groupnorm else y

    out = np.zeros((n, c, h * s, w * s))
    for b in range(n):
        for k in range(g):
            sl = slice(k * cg, (k + 1) * cg)
            for oi in range(h * s):
                for oj in range(w * s):
                    if cfg.variant is Variant.I:
                        query = yf[b, sl, oi, oj]
                    else:
                        query = params.my[k].weights.astype(np.float64) @ yf[b, :, oi, oj]
                    scores, values = [], []
                    for py, px in _points(cfg, x, params, b, k, oi, oj):
                        feat = _sample(xf, b, py, px)
                        key = feat[sl] if cfg.variant is Variant.I else params.mx[k].weights.astype(np.float64) @ feat
                        scores.append(float(key @ query))
                        values.append(_sample(x, b, py, px)[sl])
                    for wt, v in zip(_normalize(scores, cfg.norm_fn), values):
                        out[b, sl, oi, oj] += wt * v
    return out
