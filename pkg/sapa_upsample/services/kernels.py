"""Kernel weight generation from local mutual similarity.

A weight is ``h(sim(x, y)) / sum_z h(sim(z, y))`` over the S decoder points
``x`` associated with the encoder point ``y``.  No temperature is applied to the
similarity scores.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigurationError, InapplicableError, ShapeError
from ..models import Corners, KernelMap, LinearMap, NormFn, SapaConfig, SimilarityFn, Tensor, as_tensor
from .sampling import bilinear_corners, bilinear_sample
from .tensor_ops import group_norm, linear_embed, softmax

log = logging.getLogger(__name__)


@dataclass
class NormStats:
    """Diagnostics gathered while normalizing kernels."""
    fallbacks: int = 0


def _h(scores: np.ndarray, h: NormFn) -> np.ndarray:
    if h is NormFn.RELU:
        return np.maximum(scores, 0.0)
    if h is NormFn.SIGMOID:
        return 0.5 * (1.0 + np.tanh(0.5 * scores))
    if h is NormFn.SOFTPLUS:
        return np.logaddexp(0.0, scores)
    raise ConfigurationError(f"no direct form for normalization '{h.value}'")


def normalize_weights(
    scores: np.ndarray, h: NormFn = NormFn.EXP, axis: int = -1, stats: Optional[NormStats] = None
) -> np.ndarray:
    """Turn similarity scores into kernel weights along ``axis``.

    ``none`` passes scores through untouched.  A zero denominator falls back to
    uniform weights 1/S and is counted in ``stats``.
    """
    scores = np.asarray(scores)
    h = NormFn(h)
    if h is NormFn.NONE:
        return scores.copy()
    if h is NormFn.EXP:
        return softmax(scores, axis=axis)

    num = _h(scores, h)
    den = num.sum(axis=axis, keepdims=True)
    zero = den == 0
    weights = np.where(zero, 1.0 / scores.shape[axis], num / np.where(zero, 1.0, den))
    fallbacks = int(np.count_nonzero(zero))
    if fallbacks:
        log.warning("%d kernels had a zero '%s' denominator; using uniform weights", fallbacks, h.value)
        if stats is not None:
            stats.fallbacks += fallbacks
    return weights.astype(scores.dtype, copy=False)


def softmax_backward(weights: np.ndarray, upstream: np.ndarray, axis: int = -1) -> np.ndarray:
    """Jacobian-vector product of softmax: w_i * (u_i - sum_j u_j w_j)."""
    return weights * (upstream - np.sum(upstream * weights, axis=axis, keepdims=True))


def normalize_backward(
    scores: np.ndarray, weights: np.ndarray, upstream: np.ndarray, h: NormFn = NormFn.EXP, axis: int = -1
) -> np.ndarray:
    """Gradient of the weights with respect to the scores, for every NormFn."""
    h = NormFn(h)
    if h is NormFn.NONE:
        return upstream.copy()
    if h is NormFn.EXP:
        return softmax_backward(weights, upstream, axis)

    if h is NormFn.RELU:
        dh = (scores > 0).astype(scores.dtype)
    else:
        sig = 0.5 * (1.0 + np.tanh(0.5 * scores))
        dh = sig * (1.0 - sig) if h is NormFn.SIGMOID else sig
    den = _h(scores, h).sum(axis=axis, keepdims=True)
    safe = np.where(den == 0, 1.0, den)
    grad = dh / safe * (upstream - np.sum(upstream * weights, axis=axis, keepdims=True))
    # uniform fallback is locally constant
    return np.where(den == 0, 0.0, grad)


def mutual_similarity(
    y_point,
    points,
    f: SimilarityFn = SimilarityFn.INNER,
    mx: Optional[LinearMap] = None,
    my: Optional[LinearMap] = None,
) -> np.ndarray:
    """Scores between one encoder vector and S decoder vectors (rows of ``points``)."""
    y = np.asarray(y_point, dtype=np.float64)
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if SimilarityFn(f) is SimilarityFn.INNER:
        if x.shape[1] != y.shape[0]:
            raise InapplicableError(
                f"inner similarity needs equal channels, decoder has {x.shape[1]} and encoder {y.shape[0]}"
            )
        return x @ y
    if mx is None or my is None:
        raise ConfigurationError("embedded similarity needs both mx and my")
    if mx.rows != my.rows:
        raise ShapeError(f"embedding dims differ: mx has {mx.rows} rows, my has {my.rows}")
    if mx.cols != x.shape[1] or my.cols != y.shape[0]:
        raise ShapeError(
            f"embedding expects {mx.cols}/{my.cols} channels, got {x.shape[1]}/{y.shape[0]}"
        )
    return (x @ mx.weights.T) @ (my.weights @ y)


def per_group(maps, groups: int, name: str) -> list[LinearMap]:
    """Normalize a single LinearMap or a sequence into one map per group."""
    if maps is None:
        raise ConfigurationError(f"{name} is required for embedded similarity")
    if isinstance(maps, LinearMap):
        return [maps] * groups
    maps = list(maps)
    if len(maps) != groups:
        raise ConfigurationError(f"{name} has {len(maps)} maps for {groups} groups")
    return maps


def check_pair(decoder: Tensor, encoder: Tensor, cfg: SapaConfig) -> None:
    """Validate the decoder/encoder pairing for ``cfg``."""
    n, c, h, w = decoder.shape
    s = cfg.ratio
    if encoder.shape[0] != n:
        raise ShapeError(f"batch sizes differ: decoder {n}, encoder {encoder.shape[0]}")
    if encoder.shape[2:] != (h * s, w * s):
        raise ShapeError(
            f"encoder spatial dims {encoder.shape[2:]} must be {s}x decoder dims {(h, w)}"
        )
    if c % cfg.groups:
        raise ShapeError(f"{c} decoder channels cannot be split into {cfg.groups} groups")
    if cfg.similarity is SimilarityFn.INNER and encoder.shape[1] != c:
        raise InapplicableError(
            f"SAPA-I inapplicable: decoder has {c} channels but encoder has {encoder.shape[1]} (channel mismatch)"
        )


def similarity_features(
    decoder: Tensor,
    encoder: Tensor,
    cfg: SapaConfig,
    mx: Optional[Sequence[LinearMap]] = None,
    my: Optional[Sequence[LinearMap]] = None,
) -> tuple[list[np.ndarray], list[np.ndarray], Tensor, Tensor]:
    """Per-group key maps (low-res) and queries (high-res) feeding the similarity.

    Returns (key_maps, queries, dec_feat, enc_feat) where the features are the
    optionally group-normalized inputs.
    """
    dec_feat = group_norm(decoder, cfg.norm_groups) if cfg.pre_groupnorm else decoder
    enc_feat = group_norm(encoder, cfg.norm_groups) if cfg.pre_groupnorm else encoder
    g = cfg.groups
    if cfg.similarity is SimilarityFn.INNER:
        cg = decoder.shape[1] // g
        keys = [dec_feat[:, k * cg:(k + 1) * cg] for k in range(g)]
        queries = [enc_feat[:, k * cg:(k + 1) * cg] for k in range(g)]
        return keys, queries, dec_feat, enc_feat

    mx = per_group(mx, g, "mx")
    my = per_group(my, g, "my")
    for a, b in zip(mx, my):
        if a.rows != b.rows:
            raise ShapeError(f"embedding dims differ: mx has {a.rows} rows, my has {b.rows}")
    keys = [linear_embed(dec_feat, m) for m in mx]
    queries = [linear_embed(enc_feat, m) for m in my]
    return keys, queries, dec_feat, enc_feat


def group_scores(
    key_map: np.ndarray,
    query: np.ndarray,
    coords: np.ndarray,
    corners: Optional[Corners] = None,
    retain: bool = False,
) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Similarity of every query with its S sampled keys.

    ``coords`` is (n, S, sH, sW, 2); returns scores (n, S, sH, sW) and, with
    ``retain``, the sampled keys (n, S, d, sH, sW).
    """
    n, points = coords.shape[:2]
    if corners is None:
        corners = bilinear_corners(coords, key_map.shape[2], key_map.shape[3])
    scores = np.empty((n, points) + query.shape[2:], dtype=query.dtype)
    keys = [] if retain else None
    for p in range(points):
        key = bilinear_sample(key_map, coords[:, p], corners.point(p))
        scores[:, p] = np.einsum("ndhw,ndhw->nhw", key, query)
        if retain:
            keys.append(key)
    return scores, (np.stack(keys, axis=1) if retain else None)


def generate_kernel_map(
    decoder: Tensor,
    encoder: Tensor,
    coords: np.ndarray,
    cfg: SapaConfig,
    mx: Optional[Sequence[LinearMap]] = None,
    my: Optional[Sequence[LinearMap]] = None,
    stats: Optional[NormStats] = None,
) -> KernelMap:
    """Kernel weights for every output position and group.

    ``coords`` is (n, g, S, sH, sW, 2) in low-res units.
    """
    decoder = as_tensor(decoder, "decoder")
    encoder = as_tensor(encoder, "encoder")
    check_pair(decoder, encoder, cfg)
    coords = np.asarray(coords)
    if coords.ndim != 6 or coords.shape[1] != cfg.groups:
        raise ShapeError(f"coords must be (n, g={cfg.groups}, S, sH, sW, 2), got {coords.shape}")
    stats = stats if stats is not None else NormStats()
    keys, queries, _, _ = similarity_features(decoder, encoder, cfg, mx, my)
    weights = np.stack(
        [
            normalize_weights(group_scores(keys[k], queries[k], coords[:, k])[0], cfg.norm_fn, axis=1, stats=stats)
            for k in range(cfg.groups)
        ],
        axis=1,
    )
    return KernelMap(weights=weights, fallbacks=stats.fallbacks)
