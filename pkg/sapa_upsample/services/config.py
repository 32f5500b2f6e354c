"""KEY=VAL configuration parsing and per-model presets."""

import logging
from dataclasses import dataclass, fields
from typing import Iterable, Optional

from ..errors import ConfigurationError
from ..models import NormFn, OffsetInit, SapaConfig, Variant

log = logging.getLogger(__name__)

# Aliases accepted on the command line.
KEY_ALIASES = {
    "k": "kernel_size",
    "s": "num_points",
    "d": "embed_dim",
    "g": "groups",
    "dof": "offset_dof",
}

# Hyper-parameters used per downstream model: (points, groups, dof, groupnorm).
# A dof of None means s^2 for the configured ratio.
MODEL_PRESETS: dict[str, tuple[int, int, Optional[int], bool]] = {
    "segformer": (9, 4, 1, True),
    "upernet": (9, 1, 1, False),
    "faster_rcnn": (9, 4, None, False),
    "mask_rcnn": (9, 4, None, False),
    "panoptic_fpn": (9, 4, None, False),
    "a2u_matting": (9, 1, 1, True),
    "depthformer": (9, 4, None, True),
}


@dataclass
class RunOptions:
    """Settings that do not belong to the operator itself."""
    seed: int = 0
    align_corners: bool = False


def _bool(key: str, raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"{key} expects a boolean, got '{raw}'")


def _int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"{key} expects an integer, got '{raw}'") from None


def _enum(key: str, enum, raw: str):
    try:
        return enum(raw.strip().lower())
    except ValueError:
        choices = ", ".join(m.value for m in enum)
        raise ConfigurationError(f"{key} must be one of {choices}, got '{raw}'") from None


def split_pair(pair: str) -> tuple[str, str]:
    """Split ``KEY=VAL`` into a canonical key and its raw value."""
    if "=" not in pair:
        raise ConfigurationError(f"expected KEY=VAL, got '{pair}'")
    key, _, value = pair.partition("=")
    key = key.strip()
    canonical = KEY_ALIASES.get(key.lower(), key.lower())
    return canonical, value.strip()


def apply_preset(cfg: SapaConfig, name: str) -> SapaConfig:
    """Overwrite points, groups, DOF and groupnorm with a model preset."""
    try:
        points, groups, dof, groupnorm = MODEL_PRESETS[name.strip().lower()]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset '{name}', choose from {', '.join(MODEL_PRESETS)}"
        ) from None
    return cfg.with_overrides(
        num_points=points,
        groups=groups,
        offset_dof=cfg.ratio * cfg.ratio if dof is None else dof,
        pre_groupnorm=groupnorm,
    )


def parse_overrides(
    pairs: Iterable[str], base: Optional[SapaConfig] = None
) -> tuple[SapaConfig, RunOptions]:
    """Build a validated config from repeated ``KEY=VAL`` pairs.

    ``variant`` is applied first (it selects the defaults), then ``preset``, then
    every other key in order.  ``offset_dof`` accepts ``1``, ``s2`` or ``s²`` and is
    resolved against the final ratio.
    """
    parsed = [split_pair(p) for p in pairs]
    values = dict(parsed)
    if len(values) != len(parsed):
        log.debug("repeated keys in overrides; the last value wins")

    cfg = base if base is not None else SapaConfig.defaults(_enum("variant", Variant, values.get("variant", "b")))
    if base is not None and "variant" in values:
        cfg = cfg.with_overrides(variant=_enum("variant", Variant, values["variant"]))
    if "ratio" in values:
        ratio = _int("ratio", values["ratio"])
        # a full-DOF default follows the ratio
        dof = 1 if cfg.offset_dof == 1 else ratio * ratio
        cfg = cfg.with_overrides(ratio=ratio, offset_dof=dof)
    if "preset" in values:
        cfg = apply_preset(cfg, values["preset"])

    opts = RunOptions()
    known = {f.name for f in fields(SapaConfig)}
    changes: dict = {}
    dof_raw = None
    for key, raw in values.items():
        if key in ("variant", "ratio", "preset"):
            continue
        if key == "seed":
            opts.seed = _int(key, raw)
        elif key == "align_corners":
            opts.align_corners = _bool(key, raw)
        elif key == "offset_dof":
            dof_raw = raw
        elif key == "offset_init":
            changes[key] = _enum(key, OffsetInit, raw)
        elif key == "norm_fn":
            changes[key] = _enum(key, NormFn, raw)
        elif key in ("pre_groupnorm", "guidance"):
            changes[key] = _bool(key, raw)
        elif key in known:
            changes[key] = _int(key, raw)
        else:
            raise ConfigurationError(f"unknown configuration key '{key}'")

    cfg = cfg.with_overrides(**changes)
    if dof_raw is not None:
        if dof_raw.lower() in ("s2", "s²", "s^2"):
            cfg = cfg.with_overrides(offset_dof=cfg.ratio * cfg.ratio)
        else:
            cfg = cfg.with_overrides(offset_dof=_int("offset_dof", dof_raw))
    log.debug("configuration %s seed=%d", cfg, opts.seed)
    return cfg.validate(), opts
