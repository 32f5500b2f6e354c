"""Analytic FLOPs and parameter counts for dynamic upsamplers.

FLOPs are given per low-res position and multiplied by ``H * W``.  Steps are named
I (point selection), II (weight generation) and III (feature assembly); only
SAPA-D has a point-selection cost.
"""

import logging
from dataclasses import replace
from typing import Callable

from ..errors import ConfigurationError
from ..models import CostQuery, CostReport, StepCost, Upsampler

log = logging.getLogger(__name__)

STEP_NAMES = {"I": "point selection", "II": "weight generation", "III": "feature assembly"}

# Upsamplers with a forward implementation in this package.
IMPLEMENTED = frozenset({Upsampler.SAPA_I, Upsampler.SAPA_B, Upsampler.SAPA_D})


def default_query(upsampler: Upsampler | str, C: int = 256, H: int = 120, W: int = 120) -> CostQuery:
    """Query carrying the usual hyper-parameters for ``upsampler``."""
    up = upsampler if isinstance(upsampler, Upsampler) else Upsampler.parse(upsampler)
    if up in (Upsampler.CARAFE, Upsampler.FADE):
        return CostQuery(up, C=C, d=64, K=5, H=H, W=W)
    if up is Upsampler.A2U:
        return CostQuery(up, C=C, K=3, H=H, W=W)
    return CostQuery(up, C=C, d=32, K=5, S=9, g=4, H=H, W=W)


def _steps(q: CostQuery) -> dict[str, tuple[int, int]]:
    """Per-position FLOPs and params for every step of ``q.upsampler``."""
    C, d, K, S, g = q.C, q.d, q.K, q.S, q.g
    K2 = K * K
    up = q.upsampler
    if up is Upsampler.CARAFE:
        return {"II": (C * d + 36 * K2 * d, C * d + 36 * K2 * d), "III": (4 * K2 * C, 0)}
    if up is Upsampler.INDEXNET_HIN:
        return {"II": (32 * C * C + 8 * C, 32 * C * C + 8 * C), "III": (4 * C, 0)}
    if up is Upsampler.INDEXNET_M2O:
        return {"II": (68 * C * C, 68 * C * C), "III": (4 * C, 0)}
    if up is Upsampler.A2U:
        return {"II": (73 * C + 4 * K2, 4 * K2 * C + 2 * C), "III": (4 * K2 * C, 0)}
    if up is Upsampler.FADE:
        return {"II": (5 * C * d + 45 * K2 * d, 2 * C * d + 9 * K2 * d), "III": (4 * K2 * C, 0)}
    if up is Upsampler.SAPA_I:
        return {"II": (4 * K2 * C, 0), "III": (4 * K2 * C, 0)}
    if up is Upsampler.SAPA_B:
        return {"II": (5 * C * d + 4 * K2 * d, 2 * C * d), "III": (4 * K2 * C, 0)}
    if up is Upsampler.SAPA_D:
        return {
            "I": (32 * S * d * g + 32 * S * C + 8 * S * C * g, 8 * S * C * g),
            "II": (5 * C * d * g + 4 * S * d * g, 2 * C * d * g),
            "III": (4 * S * C, 0),
        }
    raise ConfigurationError(f"Unknown upsampler '{up}'")


def _check(q: CostQuery) -> None:
    if not isinstance(q.upsampler, Upsampler):
        raise ConfigurationError(f"Unknown upsampler '{q.upsampler}'")
    for name in ("C", "d", "K", "S", "g", "H", "W"):
        value = getattr(q, name)
        if not isinstance(value, int) or value < 1:
            raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")


def cost(q: CostQuery) -> CostReport:
    """Step-wise cost report; flops are absolute counts over the H x W input."""
    if isinstance(q.upsampler, str) and not isinstance(q.upsampler, Upsampler):
        q = replace(q, upsampler=Upsampler.parse(q.upsampler))
    _check(q)
    hw = q.H * q.W
    steps = {name: StepCost(flops=f * hw, params=p) for name, (f, p) in _steps(q).items()}
    log.debug("cost %s C=%d H=%d W=%d -> %d flops", q.upsampler.value, q.C, q.H, q.W, sum(s.flops for s in steps.values()))
    return CostReport(query=q, steps=steps)


def closed_form(q: CostQuery) -> tuple[int, int]:
    """(total flops, params) from the summed expressions, without step bookkeeping."""
    _check(q)
    C, d, K, S, g = q.C, q.d, q.K, q.S, q.g
    K2 = K * K
    per_pos, params = {
        Upsampler.CARAFE: (C * d + 36 * K2 * d + 4 * K2 * C, C * d + 36 * K2 * d),
        Upsampler.INDEXNET_HIN: (32 * C * C + 12 * C, 32 * C * C + 8 * C),
        Upsampler.INDEXNET_M2O: (68 * C * C + 4 * C, 68 * C * C),
        Upsampler.A2U: (73 * C + 4 * K2 + 4 * K2 * C, 4 * K2 * C + 2 * C),
        Upsampler.FADE: (5 * C * d + 45 * K2 * d + 4 * K2 * C, 2 * C * d + 9 * K2 * d),
        Upsampler.SAPA_I: (8 * K2 * C, 0),
        Upsampler.SAPA_B: (5 * C * d + 4 * K2 * d + 4 * K2 * C, 2 * C * d),
        Upsampler.SAPA_D: (5 * C * d * g + 36 * S * d * g + 36 * S * C + 8 * S * C * g, 2 * C * d * g + 8 * S * C * g),
    }[q.upsampler]
    return per_pos * q.H * q.W, params


# Quoted closed-form FLOPs per position.  The SAPA-D entry
# reads 38Sdg although its step rows add up to 36Sdg.
PRINTED_TOTALS: dict[Upsampler, Callable[[CostQuery], int]] = {
    Upsampler.CARAFE: lambda q: q.C * q.d + 36 * q.K**2 * q.d + 4 * q.K**2 * q.C,
    Upsampler.INDEXNET_HIN: lambda q: 32 * q.C**2 + 12 * q.C,
    Upsampler.INDEXNET_M2O: lambda q: 68 * q.C**2 + 4 * q.C,
    Upsampler.A2U: lambda q: 73 * q.C + 4 * q.K**2 + 4 * q.K**2 * q.C,
    Upsampler.FADE: lambda q: 5 * q.C * q.d + 45 * q.K**2 * q.d + 4 * q.K**2 * q.C,
    Upsampler.SAPA_I: lambda q: 8 * q.K**2 * q.C,
    Upsampler.SAPA_B: lambda q: 5 * q.C * q.d + 4 * q.K**2 * q.d + 4 * q.K**2 * q.C,
    Upsampler.SAPA_D: lambda q: 5 * q.C * q.d * q.g + 38 * q.S * q.d * q.g + 36 * q.S * q.C + 8 * q.S * q.C * q.g,
}

PRINTED_EXPRESSIONS = {
    Upsampler.CARAFE: ("Cd+36K²d+4K²C", "Cd+36K²d"),
    Upsampler.INDEXNET_HIN: ("32C²+12C", "32C²+8C"),
    Upsampler.INDEXNET_M2O: ("68C²+4C", "68C²"),
    Upsampler.A2U: ("73C+4K²+4K²C", "4K²C+2C"),
    Upsampler.FADE: ("5Cd+45K²d+4K²C", "2Cd+9K²d"),
    Upsampler.SAPA_I: ("8K²C", "0"),
    Upsampler.SAPA_B: ("5Cd+4K²d+4K²C", "2Cd"),
    Upsampler.SAPA_D: ("5Cdg+38Sdg+36SC+8SCg", "2Cdg+8SCg"),
}


def printed_total_differs(q: CostQuery) -> bool:
    """True when the quoted total disagrees with the sum of its step rows."""
    report = cost(q)
    return PRINTED_TOTALS[q.upsampler](q) != report.flops_per_position


def cost_table(C: int = 256, H: int = 120, W: int = 120) -> list[CostReport]:
    """Reports for all upsamplers at their default hyper-parameters."""
    return [cost(default_query(up, C, H, W)) for up in Upsampler]
