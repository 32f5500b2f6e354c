"""Executable properties of the upsampling operators, run by ``sapa selftest``."""

import io
import logging
import time
from typing import Callable, Optional

import numpy as np

from ..models import LinearMap, OffsetInit, ParamSet, PropertyResult, RngSpec, SapaConfig, Variant
from .gradcheck import finite_diff_check, random_case, sapa_op
from .reference import reference_forward
from .sampling import nn_upsample, pixel_shuffle, pixel_unshuffle
from .sapa import (
    compute_kernel_map,
    grouped_merge,
    grouped_split,
    init_params,
    offset_coords,
    offset_generate,
    sapa_forward,
)
from .tensor_io import dump_tensor, load_tensor

log = logging.getLogger(__name__)

TAUS = (1.0, 2.0, 5.0, 10.0, 20.0)


def smooth_window(trials: int = 100, tol: float = 1e-6) -> str:
    """A spatially constant decoder gives weights 1/S and reproduces the constant."""
    for variant in Variant:
        for seed in range(trials):
            rng = np.random.default_rng(seed)
            cfg = SapaConfig.defaults(variant).with_overrides(embed_dim=8, groups=1 if variant is not Variant.D else 2)
            level = rng.standard_normal((1, 8, 1, 1))
            decoder = np.broadcast_to(level, (1, 8, 16, 16)).copy()
            encoder = rng.standard_normal((1, 8, 32, 32))
            params = init_params(cfg, 8, 8, RngSpec(seed), random_offsets=True)
            kmap = compute_kernel_map(decoder, encoder, cfg, params)
            if np.max(np.abs(kmap.weights - 1.0 / cfg.points)) > tol:
                raise AssertionError(f"{variant.label} seed {seed}: weights differ from 1/S")
            out, _ = sapa_forward(decoder, encoder, cfg, params)
            if np.max(np.abs(out - level)) > tol:
                raise AssertionError(f"{variant.label} seed {seed}: output differs from the constant")
    return f"{trials} trials x {len(Variant)} variants"


def detail_window() -> str:
    """Near a cluster border, a sharper encoder match pulls the output onto its cluster."""
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    decoder = np.empty((1, 2, 8, 8))
    decoder[0, :, :, :4] = a[:, None, None]
    decoder[0, :, :, 4:] = b[:, None, None]
    cfg = SapaConfig(variant=Variant.I, kernel_size=3)
    distances = []
    for tau in TAUS:
        encoder = np.broadcast_to((tau * a)[None, :, None, None], (1, 2, 16, 16))
        out, _ = sapa_forward(decoder, encoder, cfg)
        distances.append(float(np.linalg.norm(out[0, :, 8, 7] - a)))
    if any(later >= earlier for earlier, later in zip(distances, distances[1:])):
        raise AssertionError(f"distance to cluster is not strictly decreasing: {distances}")
    if distances[-1] >= 1e-3 * np.linalg.norm(a - b):
        raise AssertionError(f"residual {distances[-1]:.3e} at tau={TAUS[-1]} is too large")
    return "residual " + ", ".join(f"{d:.1e}" for d in distances)


def origin_identity(trials: int = 50, tol: float = 1e-6) -> str:
    """SAPA-D with a zero offset layer reduces to nearest-neighbor upsampling."""
    for seed in range(trials):
        cfg, named = random_case(Variant.D, seed)
        for dof in (1, cfg.ratio * cfg.ratio):
            c = cfg.with_overrides(offset_dof=dof, offset_init=OffsetInit.ORIGIN)
            params = ParamSet.from_dict(named)
            params.phi = LinearMap.zeros(c.offset_channels, named["decoder"].shape[1])
            out, _ = sapa_forward(named["decoder"], named["encoder"], c, params)
            if np.max(np.abs(out - nn_upsample(named["decoder"], c.ratio))) > tol:
                raise AssertionError(f"seed {seed}, dof {dof}: output differs from nn_upsample")
    return f"{trials} configs, both DOF settings"


def oracle(trials: int = 50, tol: float = 1e-5) -> str:
    """Vectorized forwards match the naive reference loops."""
    worst = 0.0
    for variant in Variant:
        for seed in range(trials):
            cfg, named = random_case(variant, seed)
            params = ParamSet.from_dict({k: v for k, v in named.items() if k not in ("decoder", "encoder")})
            fast, _ = sapa_forward(named["decoder"], named["encoder"], cfg, params)
            slow = reference_forward(named["decoder"], named["encoder"], cfg, params)
            err = float(np.max(np.abs(fast - slow)) / max(np.max(np.abs(slow)), 1e-12))
            worst = max(worst, err)
            if err > tol:
                raise AssertionError(f"{variant.label} seed {seed}: relative error {err:.2e}")
    return f"max relative error {worst:.1e}"


def round_trips(seed: int = 0) -> str:
    """Shuffle, channel grouping and tensor files invert exactly."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 12, 4, 6))
    if not np.array_equal(pixel_unshuffle(pixel_shuffle(x, 2), 2), x):
        raise AssertionError("pixel_unshuffle does not invert pixel_shuffle")
    if not np.array_equal(grouped_merge(grouped_split(x, 3)), x):
        raise AssertionError("grouped_merge does not invert grouped_split")
    for arr in (x, x.astype(np.float32), x[0, 0, 0], x[0]):
        buf = io.BytesIO()
        dump_tensor(buf, arr)
        buf.seek(0)
        back = load_tensor(buf)
        if back.dtype != arr.dtype or back.tobytes() != np.ascontiguousarray(arr).tobytes():
            raise AssertionError(f"tensor file round-trip changed a {arr.dtype} rank-{arr.ndim} tensor")
    return "shuffle, groups, tensor files"


def dof_siblings(trials: int = 20) -> str:
    """DOF=1 shares offsets among the s^2 siblings; DOF=s^2 lets them differ."""
    differing = 0
    for seed in range(trials):
        cfg = SapaConfig.defaults(Variant.D).with_overrides(num_points=4, groups=2)
        rng = np.random.default_rng(seed)
        decoder = rng.standard_normal((1, 4, 3, 3))
        for dof in (1, 4):
            c = cfg.with_overrides(offset_dof=dof)
            params = init_params(c, 4, rng=RngSpec(seed), random_offsets=True)
            coords = offset_coords(offset_generate(decoder, params.phi, c))
            cells = coords.reshape(coords.shape[:3] + (3, 2, 3, 2, 2))
            spread = np.ptp(cells, axis=(4, 6)).max()
            if dof == 1 and spread != 0:
                raise AssertionError(f"seed {seed}: DOF=1 siblings differ")
            if dof == 4 and spread > 0:
                differing += 1
    if differing != trials:
        raise AssertionError(f"DOF=s^2 siblings coincided in {trials - differing} of {trials} seeds")
    return f"{trials} seeds"


def gradients(trials: int = 10, tol: float = 1e-4, max_entries: Optional[int] = 24) -> str:
    """Analytic SAPA-B and SAPA-D gradients agree with finite differences."""
    worst = 0.0
    for variant in (Variant.B, Variant.D):
        for seed in range(trials):
            cfg, named = random_case(variant, seed)
            report = finite_diff_check(sapa_op(cfg), named, rel_tol=tol, seed=seed, max_entries=max_entries)
            worst = max(worst, report.max_rel_err)
            if not report.passed:
                raise AssertionError(f"{variant.label} seed {seed}: {', '.join(report.failing)}")
    return f"max relative error {worst:.1e}"


PROPERTIES: dict[str, Callable[[], str]] = {
    "smooth-window": smooth_window,
    "detail-window": detail_window,
    "origin-identity": origin_identity,
    "oracle": oracle,
    "round-trip": round_trips,
    "dof-siblings": dof_siblings,
    "gradients": gradients,
}


def run_selftest(names: Optional[list[str]] = None) -> list[PropertyResult]:
    """Run the named properties (all by default) and collect their outcomes."""
    results = []
    for name in names or list(PROPERTIES):
        start = time.perf_counter()
        try:
            detail = PROPERTIES[name]()
            passed = True
        except AssertionError as e:
            detail, passed = str(e), False
            log.warning("property %s failed: %s", name, e)
        results.append(PropertyResult(name, passed, detail, time.perf_counter() - start))
    return results
