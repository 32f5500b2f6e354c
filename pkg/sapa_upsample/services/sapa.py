"""SAPA-I, SAPA-B and SAPA-D forward passes.

Every variant runs the same three steps per channel group: select S points around
the low-res anchor of each output position, weight them by mutual similarity with
the encoder point (the nearest-upsampled decoder point with guidance off), and
assemble the weighted sum of the raw decoder points.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigurationError, ShapeError
from ..models import (
    ForwardState,
    KernelMap,
    LinearMap,
    OffsetField,
    OffsetInit,
    ParamSet,
    RngSpec,
    SapaConfig,
    Tensor,
    Variant,
    as_tensor,
)
from .kernels import (
    NormStats,
    check_pair,
    generate_kernel_map,
    group_scores,
    normalize_weights,
    per_group,
    similarity_features,
)
from .sampling import (
    base_coords,
    bilinear_corners,
    bilinear_sample,
    grid_offsets,
    nn_upsample,
    pixel_shuffle,
    window_offsets,
)
from .tensor_ops import init_linear_map, linear_embed

log = logging.getLogger(__name__)


def assemble(points, weights) -> np.ndarray:
    """Weighted sum of S point vectors (rows of ``points``)."""
    points = np.atleast_2d(np.asarray(points))
    weights = np.asarray(weights)
    if points.shape[0] != weights.shape[0]:
        raise ShapeError(f"{weights.shape[0]} weights for {points.shape[0]} points")
    return weights @ points


def grouped_split(x: Tensor, g: int) -> list[Tensor]:
    """Split channels into ``g`` contiguous groups."""
    x = as_tensor(x, "grouped_split input")
    if g < 1 or x.shape[1] % g:
        raise ShapeError(f"{x.shape[1]} channels cannot be split into {g} groups")
    return np.split(x, g, axis=1)


def grouped_merge(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate channel groups back together."""
    return np.concatenate(list(parts), axis=1)


def window_coord_field(n: int, h: int, w: int, cfg: SapaConfig) -> np.ndarray:
    """K x K window coordinates for every output position, shape (n, g, K*K, sH, sW, 2)."""
    base = base_coords(h, w, cfg.ratio)
    coords = base[None, :, :, :] + window_offsets(cfg.kernel_size)[:, None, None, :]
    return np.broadcast_to(coords, (n, cfg.groups) + coords.shape)


def offset_generate(decoder: Tensor, phi: LinearMap, cfg: SapaConfig) -> OffsetField:
    """Project the decoder into per-group sampling offsets for every output position.

    With DOF=s^2 the s^2 offset sets of a low-res cell are distributed by pixel
    shuffle; with DOF=1 one set is copied to all s^2 siblings.
    """
    decoder = as_tensor(decoder, "decoder")
    if phi.rows != cfg.offset_channels:
        raise ConfigurationError(
            f"offset layer must output 2*S*g*dof={cfg.offset_channels} channels, has {phi.rows}"
        )
    n, _, h, w = decoder.shape
    s, g, points = cfg.ratio, cfg.groups, cfg.num_points
    raw = linear_embed(decoder, phi)
    high = nn_upsample(raw, s) if cfg.offset_dof == 1 else pixel_shuffle(raw, s)
    offsets = high.reshape(n, g, points, 2, h * s, w * s).transpose(0, 1, 2, 4, 5, 3)
    if cfg.offset_init is OffsetInit.GRID:
        offsets = offsets + grid_offsets(points)[None, None, :, None, None, :]
    return OffsetField(offsets=np.ascontiguousarray(offsets), dof=cfg.offset_dof, ratio=s)


def offset_coords(field: OffsetField) -> np.ndarray:
    """Absolute sampling coordinates l + offset, shape (n, g, S, sH, sW, 2)."""
    _, _, _, hs, ws, _ = field.offsets.shape
    base = base_coords(hs // field.ratio, ws // field.ratio, field.ratio)
    return field.offsets + base[None, None, None]


def derive_rng(rng: RngSpec, index: int) -> RngSpec:
    """Independent child seed for the ``index``-th parameter tensor."""
    state = np.random.SeedSequence([rng.seed, index]).generate_state(1, dtype=np.uint64)[0]
    return RngSpec(seed=int(state), scheme=rng.scheme)


def init_params(
    cfg: SapaConfig,
    channels: int,
    encoder_channels: Optional[int] = None,
    rng: RngSpec = RngSpec(),
    random_offsets: bool = False,
    dtype=np.float64,
) -> ParamSet:
    """Seeded parameters for ``cfg``.

    Embeddings are Xavier-uniform.  The offset layer starts at zero (both origin and
    grid initialization) unless ``random_offsets`` asks for a Xavier draw.
    """
    cfg.validate()
    c_enc = channels if encoder_channels is None or not cfg.guidance else encoder_channels
    if cfg.variant is Variant.I:
        return ParamSet()
    d, g = cfg.embed_dim, cfg.groups
    mx = [init_linear_map(d, channels, derive_rng(rng, k), dtype) for k in range(g)]
    my = [init_linear_map(d, c_enc, derive_rng(rng, g + k), dtype) for k in range(g)]
    phi = None
    if cfg.variant is Variant.D:
        if random_offsets:
            phi = init_linear_map(cfg.offset_channels, channels, derive_rng(rng, 2 * g), dtype)
        else:
            phi = LinearMap.zeros(cfg.offset_channels, channels, dtype)
    return ParamSet(mx=mx, my=my, phi=phi)


def guide_feature(decoder: Tensor, encoder: Optional[Tensor], cfg: SapaConfig) -> Tensor:
    """The high-res feature queries are read from.

    Without guidance this is ``nn_upsample(decoder)`` and ``encoder`` is ignored.
    """
    if not cfg.guidance:
        return nn_upsample(decoder, cfg.ratio)
    if encoder is None:
        raise ConfigurationError(f"{cfg.variant.label} needs an encoder feature unless guidance is off")
    return as_tensor(encoder, "encoder")


def sample_coords(decoder: Tensor, cfg: SapaConfig, params: Optional[ParamSet]) -> tuple[np.ndarray, Optional[OffsetField]]:
    """Point-selection step: window coordinates for I/B, generated offsets for D."""
    n, _, h, w = decoder.shape
    if cfg.variant is not Variant.D:
        return window_coord_field(n, h, w, cfg), None
    if params is None or params.phi is None:
        raise ConfigurationError("SAPA-D needs an offset layer (phi)")
    field = offset_generate(decoder, params.phi, cfg)
    return offset_coords(field), field


def sapa_forward(
    decoder: Tensor,
    encoder: Optional[Tensor],
    cfg: SapaConfig,
    params: Optional[ParamSet] = None,
    retain: bool = False,
    stats: Optional[NormStats] = None,
) -> tuple[Tensor, Optional[ForwardState]]:
    """Run any SAPA variant; with ``retain`` also return the state for backward."""
    cfg.validate()
    decoder = as_tensor(decoder, "decoder")
    encoder = guide_feature(decoder, encoder, cfg)
    dtype = np.result_type(decoder.dtype, encoder.dtype)
    decoder, encoder = decoder.astype(dtype, copy=False), encoder.astype(dtype, copy=False)
    check_pair(decoder, encoder, cfg)

    n, c, h, w = decoder.shape
    g, points = cfg.groups, cfg.points
    cg = c // g
    log.debug("%s forward decoder=%s encoder=%s S=%d g=%d", cfg.variant.label, decoder.shape, encoder.shape, points, g)

    mx = my = None
    if cfg.variant is not Variant.I:
        if params is None:
            raise ConfigurationError(f"{cfg.variant.label} needs embedding parameters")
        mx, my = per_group(params.mx, g, "mx"), per_group(params.my, g, "my")
    key_maps, queries, dec_feat, enc_feat = similarity_features(decoder, encoder, cfg, mx, my)
    coords, field = sample_coords(decoder, cfg, params)

    stats = stats if stats is not None else NormStats()
    out = np.empty((n, c, h * cfg.ratio, w * cfg.ratio), dtype=dtype)
    all_scores = np.empty((n, g, points) + out.shape[2:], dtype=dtype)
    all_weights = np.empty_like(all_scores)
    corners_per_group, keys_per_group, values_per_group = [], [], []

    for k in range(g):
        ck = coords[:, k]
        corners = bilinear_corners(ck, h, w)
        scores, keys = group_scores(key_maps[k], queries[k], ck, corners, retain)
        weights = normalize_weights(scores, cfg.norm_fn, axis=1, stats=stats)
        xk = decoder[:, k * cg:(k + 1) * cg]
        acc = np.zeros((n, cg) + out.shape[2:], dtype=dtype)
        values = []
        for p in range(points):
            v = bilinear_sample(xk, ck[:, p], corners.point(p))
            acc += weights[:, p, None] * v
            if retain:
                values.append(v)
        out[:, k * cg:(k + 1) * cg] = acc
        all_scores[:, k] = scores
        all_weights[:, k] = weights
        if retain:
            corners_per_group.append(corners)
            keys_per_group.append(keys)
            values_per_group.append(np.stack(values, axis=1))

    if not retain:
        return out, None
    state = ForwardState(
        cfg=cfg,
        decoder=decoder,
        encoder=encoder,
        params=params,
        dec_feat=dec_feat,
        enc_feat=enc_feat,
        coords=coords,
        offsets=field,
        key_maps=key_maps,
        queries=queries,
        corners=corners_per_group,
        keys=keys_per_group,
        values=values_per_group,
        scores=all_scores,
        weights=all_weights,
    )
    return out, state


def _expect(cfg: SapaConfig, variant: Variant) -> SapaConfig:
    if cfg.variant is not variant:
        return cfg.with_overrides(variant=variant)
    return cfg


def sapa_i_forward(decoder: Tensor, encoder: Tensor, cfg: SapaConfig) -> Tensor:
    """Parameter-free SAPA-I: softmax(x^T y) over the clamped K x K window."""
    return sapa_forward(decoder, encoder, _expect(cfg, Variant.I))[0]


def sapa_b_forward(
    decoder: Tensor,
    encoder: Tensor,
    mx: LinearMap | Sequence[LinearMap],
    my: LinearMap | Sequence[LinearMap],
    cfg: SapaConfig,
) -> Tensor:
    """SAPA-B: softmax(x^T Mx^T My y) over the window, assembling raw decoder points."""
    cfg = _expect(cfg, Variant.B)
    params = ParamSet(mx=per_group(mx, cfg.groups, "mx"), my=per_group(my, cfg.groups, "my"))
    return sapa_forward(decoder, encoder, cfg, params)[0]


def sapa_d_forward(
    decoder: Tensor,
    encoder: Tensor,
    mx: LinearMap | Sequence[LinearMap],
    my: LinearMap | Sequence[LinearMap],
    phi: LinearMap,
    cfg: SapaConfig,
) -> Tensor:
    """SAPA-D: bilinearly sampled points at l + phi(X), weighted by embedded similarity."""
    cfg = _expect(cfg, Variant.D)
    params = ParamSet(mx=per_group(mx, cfg.groups, "mx"), my=per_group(my, cfg.groups, "my"), phi=phi)
    return sapa_forward(decoder, encoder, cfg, params)[0]


def compute_kernel_map(
    decoder: Tensor, encoder: Optional[Tensor], cfg: SapaConfig, params: Optional[ParamSet] = None
) -> KernelMap:
    """Kernel weights the forward pass would use, for inspection and export."""
    cfg.validate()
    decoder = as_tensor(decoder, "decoder")
    mx = my = None
    if cfg.variant is not Variant.I:
        if params is None:
            raise ConfigurationError(f"{cfg.variant.label} needs embedding parameters")
        mx, my = params.mx, params.my
    coords, _ = sample_coords(decoder, cfg, params)
    return generate_kernel_map(decoder, guide_feature(decoder, encoder, cfg), coords, cfg, mx, my)


def init_subpixel(channels: int, ratio: int, rng: RngSpec = RngSpec(), dtype=np.float64) -> LinearMap:
    """Seeded 1x1 projection C -> C*s^2 for the pixel-shuffle baseline."""
    return init_linear_map(channels * ratio * ratio, channels, rng, dtype)


def subpixel_upsample(x: Tensor, proj: LinearMap, ratio: int) -> Tensor:
    """Pixel-shuffle baseline: 1x1 projection to C*s^2 channels, then pixel_shuffle."""
    x = as_tensor(x, "pixelshuffle input")
    if proj.cols != x.shape[1] or proj.rows != x.shape[1] * ratio * ratio:
        raise ShapeError(
            f"pixel-shuffle projection must be {x.shape[1] * ratio * ratio}x{x.shape[1]}, got {proj.rows}x{proj.cols}"
        )
    return pixel_shuffle(linear_embed(x, proj), ratio)
