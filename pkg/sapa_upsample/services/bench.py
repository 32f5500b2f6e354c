"""Latency benchmark of the implemented upsamplers on seeded random inputs."""

import logging
import statistics
import time
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ConfigurationError
from ..models import BenchRecord, CostQuery, RngSpec, SapaConfig, Upsampler, Variant
from .complexity import cost
from .sampling import bilinear_upsample, nn_upsample
from .sapa import init_params, init_subpixel, sapa_forward, subpixel_upsample

log = logging.getLogger(__name__)

BASELINES = ("nn", "bilinear", "pixelshuffle")
SAPA_NAMES = {"sapa-i": Variant.I, "sapa-b": Variant.B, "sapa-d": Variant.D}
DEFAULT_VARIANTS = ("nn", "bilinear", "pixelshuffle", "sapa-i", "sapa-b", "sapa-d")
MIN_ITERS = 10


def _time(fn: Callable[[], object], warmup: int, iters: int) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(iters):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1e3)
    return statistics.fmean(samples), statistics.pstdev(samples)


def _cost_only(name: str) -> Optional[Upsampler]:
    try:
        up = Upsampler.parse(name)
    except ConfigurationError:
        return None
    return None if up.value.lower() in SAPA_NAMES else up


def run_bench(
    shape: tuple[int, int, int, int] = (1, 256, 120, 120),
    ratio: int = 2,
    variants: Sequence[str] = DEFAULT_VARIANTS,
    warmup: int = 3,
    iters: int = MIN_ITERS,
    seed: int = 0,
    configs: Optional[dict[Variant, SapaConfig]] = None,
) -> list[BenchRecord]:
    """Time each variant on one seeded decoder/encoder pair.

    Cost-only upsamplers are reported with status ``skipped``.
    """
    if iters < MIN_ITERS:
        raise ConfigurationError(f"at least {MIN_ITERS} timed iterations are required, got {iters}")
    if warmup < 0:
        raise ConfigurationError(f"warmup must be >= 0, got {warmup}")
    n, c, h, w = shape
    if min(shape) < 1:
        raise ConfigurationError(f"shape must be positive, got {shape}")

    rng = np.random.default_rng(seed)
    decoder = rng.standard_normal((n, c, h, w)).astype(np.float32)
    encoder = rng.standard_normal((n, c, h * ratio, w * ratio)).astype(np.float32)
    configs = configs or {}

    records: list[BenchRecord] = []
    for raw in variants:
        name = raw.strip().lower()
        base = dict(upsampler=name, shape=(n, c, h, w), warmup=warmup, iters=iters)

        if name in BASELINES:
            params = 0
            if name == "nn":
                fn = lambda: nn_upsample(decoder, ratio)
            elif name == "bilinear":
                fn = lambda: bilinear_upsample(decoder, ratio)
            else:
                proj = init_subpixel(c, ratio, RngSpec(seed), np.float32)
                params = proj.weights.size
                fn = lambda: subpixel_upsample(decoder, proj, ratio)
            mean, std = _time(fn, warmup, iters)
            records.append(BenchRecord(**base, mean_ms=mean, std_ms=std, params=params))

        elif name in SAPA_NAMES:
            variant = SAPA_NAMES[name]
            cfg = configs.get(variant) or SapaConfig.defaults(variant, ratio)
            cfg.validate()
            params = init_params(cfg, c, c, RngSpec(seed), dtype=np.float32)
            mean, std = _time(lambda: sapa_forward(decoder, encoder, cfg, params), warmup, iters)
            report = cost(CostQuery(
                Upsampler.parse(variant.label),
                C=c, d=cfg.embed_dim, K=cfg.kernel_size, S=cfg.num_points, g=cfg.groups, H=h, W=w,
            ))
            records.append(BenchRecord(
                **base, mean_ms=mean, std_ms=std, gflops=report.gflops, params=cfg.param_count(c, c),
            ))

        elif (up := _cost_only(name)) is not None:
            log.warning("%s has no forward implementation; reported as skipped", up.value)
            records.append(BenchRecord(**base, status="skipped"))

        else:
            raise ConfigurationError(f"unknown bench variant '{raw}'")
        log.info("bench %s: %s", name, records[-1].status)

    check_ordering(records)
    return records


def check_ordering(records: Sequence[BenchRecord]) -> bool:
    """Soft check that SAPA-I < SAPA-B < SAPA-D in mean latency."""
    timed = {r.upsampler: r.mean_ms for r in records if r.status == "ok" and r.upsampler in SAPA_NAMES}
    present = [timed[k] for k in ("sapa-i", "sapa-b", "sapa-d") if k in timed]
    ordered = all(a < b for a, b in zip(present, present[1:]))
    if not ordered:
        log.warning("SAPA latencies are not ordered I < B < D: %s", {k: round(v, 3) for k, v in timed.items()})
    return ordered
