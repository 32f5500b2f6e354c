"""Analytic backward passes for the SAPA operators.

Gradients flow from the output through the assembly (decoder values), the
normalization, the similarity (key maps and queries), the optional group norm and,
for SAPA-D, the sampling coordinates back into the offset layer.
"""

import logging

import numpy as np

from ..errors import ConfigurationError, ShapeError
from ..models import ForwardState, GradBundle, SapaConfig, SimilarityFn, Tensor, Variant
from .kernels import normalize_backward, per_group
from .sampling import bilinear_sample_backward, pixel_unshuffle
from .tensor_ops import group_norm_backward, linear_embed_backward

log = logging.getLogger(__name__)


def offset_backward(d_offsets: np.ndarray, cfg: SapaConfig) -> np.ndarray:
    """Transpose of the offset distribution: (n, g, S, sH, sW, 2) -> (n, 2*S*g*dof, h, w)."""
    n, g, points, hs, ws, _ = d_offsets.shape
    s = cfg.ratio
    high = d_offsets.transpose(0, 1, 2, 5, 3, 4).reshape(n, g * points * 2, hs, ws)
    if cfg.offset_dof == 1:
        return high.reshape(n, g * points * 2, hs // s, s, ws // s, s).sum(axis=(3, 5))
    return pixel_unshuffle(high, s)


def sapa_backward(state: ForwardState, upstream: Tensor) -> GradBundle:
    """Exact gradients of ``sum(forward_output * upstream)`` for any variant."""
    cfg = state.cfg
    decoder, encoder = state.decoder, state.encoder
    n, c, h, w = decoder.shape
    g, points = cfg.groups, cfg.points
    cg = c // g
    upstream = np.asarray(upstream)
    expected = (n, c, h * cfg.ratio, w * cfg.ratio)
    if upstream.shape != expected:
        raise ShapeError(f"upstream gradient must have shape {expected}, got {upstream.shape}")

    dtype = np.result_type(decoder.dtype, upstream.dtype)
    d_decoder = np.zeros(decoder.shape, dtype=dtype)
    d_dec_feat = np.zeros(state.dec_feat.shape, dtype=dtype)
    d_enc_feat = np.zeros(state.enc_feat.shape, dtype=dtype)
    dynamic = cfg.variant is Variant.D
    d_coords = np.zeros(state.coords.shape, dtype=dtype) if dynamic else None
    d_mx, d_my = [], []
    boundary = 0

    if cfg.similarity is SimilarityFn.EMBEDDED:
        mx = per_group(state.params.mx, g, "mx")
        my = per_group(state.params.my, g, "my")

    for k in range(g):
        sl = slice(k * cg, (k + 1) * cg)
        uk = upstream[:, sl]
        weights = state.weights[:, k]
        values = state.values[k]
        keys = state.keys[k]
        query = state.queries[k]
        key_map = state.key_maps[k]

        d_weights = np.einsum("nschw,nchw->nshw", values, uk)
        d_scores = normalize_backward(state.scores[:, k], weights, d_weights, cfg.norm_fn, axis=1)
        d_query = np.einsum("nshw,nsdhw->ndhw", d_scores, keys)
        d_key_map = np.zeros(key_map.shape, dtype=dtype)

        for p in range(points):
            corners = state.corners[k].point(p)
            cp = state.coords[:, k, p]
            d_xk, d_cv, hits = bilinear_sample_backward(decoder[:, sl], cp, weights[:, p, None] * uk, corners)
            d_decoder[:, sl] += d_xk
            d_km, d_ck, _ = bilinear_sample_backward(key_map, cp, d_scores[:, p, None] * query, corners)
            d_key_map += d_km
            if dynamic:
                d_coords[:, k, p] = d_cv + d_ck
                boundary += hits

        if cfg.similarity is SimilarityFn.INNER:
            d_dec_feat[:, sl] += d_key_map
            d_enc_feat[:, sl] += d_query
        else:
            d_feat, d_w = linear_embed_backward(state.dec_feat, mx[k], d_key_map)
            d_dec_feat += d_feat
            d_mx.append(d_w)
            d_feat, d_w = linear_embed_backward(state.enc_feat, my[k], d_query)
            d_enc_feat += d_feat
            d_my.append(d_w)

    if cfg.pre_groupnorm:
        d_decoder += group_norm_backward(decoder, d_dec_feat, cfg.norm_groups)
        d_encoder = group_norm_backward(encoder, d_enc_feat, cfg.norm_groups)
    else:
        d_decoder += d_dec_feat
        d_encoder = d_enc_feat
    if not cfg.guidance:
        # the guide was nn_upsample(decoder); fold each s x s block back
        r = cfg.ratio
        d_decoder += d_encoder.reshape(n, c, h, r, w, r).sum(axis=(3, 5))
        d_encoder = np.zeros_like(d_encoder)

    d_phi = None
    if dynamic:
        d_raw = offset_backward(d_coords, cfg)
        d_x, d_phi = linear_embed_backward(decoder, state.params.phi, d_raw)
        d_decoder += d_x
        if boundary:
            log.debug("%d clamped sampling coordinates received a zero coordinate gradient", boundary)

    return GradBundle(
        d_decoder=d_decoder,
        d_encoder=d_encoder,
        d_mx=d_mx or None,
        d_my=d_my or None,
        d_phi=d_phi,
        boundary_coords=boundary,
    )


def _require(state: ForwardState, variant: Variant) -> None:
    if state is None:
        raise ConfigurationError("backward needs a forward run with retain=True")
    if state.cfg.variant is not variant:
        raise ConfigurationError(f"state comes from {state.cfg.variant.label}, not {variant.label}")


def sapa_i_backward(state: ForwardState, upstream: Tensor) -> GradBundle:
    _require(state, Variant.I)
    return sapa_backward(state, upstream)


def sapa_b_backward(state: ForwardState, upstream: Tensor) -> GradBundle:
    """Gradients for decoder (weight and assembly paths), encoder, Mx and My."""
    _require(state, Variant.B)
    return sapa_backward(state, upstream)


def sapa_d_backward(state: ForwardState, upstream: Tensor) -> GradBundle:
    """SAPA-B gradients plus the offset layer through the coordinate chain."""
    _require(state, Variant.D)
    return sapa_backward(state, upstream)
