"""Data models for sapa-upsample."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, TypeAlias

import numpy as np

from .errors import ConfigurationError, ShapeError

# Dense N x C x H x W array, float32 or float64, row-major.
Tensor: TypeAlias = np.ndarray

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def as_tensor(x, name: str = "tensor", rank: int = 4) -> Tensor:
    """Coerce ``x`` to a contiguous float32/float64 array of the given rank."""
    arr = np.asarray(x)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float32 if arr.dtype == np.float16 else np.float64)
    if arr.ndim != rank:
        raise ShapeError(f"{name} must have rank {rank}, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Variant(str, Enum):
    I = "i"
    B = "b"
    D = "d"

    @property
    def label(self) -> str:
        return f"SAPA-{self.name}"


class NormFn(str, Enum):
    NONE = "none"
    EXP = "exp"
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"


class SimilarityFn(str, Enum):
    INNER = "inner"
    EMBEDDED = "embedded-inner"


class OffsetInit(str, Enum):
    ORIGIN = "origin"
    GRID = "grid"


class InitScheme(str, Enum):
    UNIFORM_XAVIER = "uniform-xavier"


class Upsampler(str, Enum):
    CARAFE = "CARAFE"
    INDEXNET_HIN = "IndexNet-HIN"
    INDEXNET_M2O = "IndexNet-M2O"
    A2U = "A2U"
    FADE = "FADE"
    SAPA_I = "SAPA-I"
    SAPA_B = "SAPA-B"
    SAPA_D = "SAPA-D"

    @classmethod
    def parse(cls, name: str) -> "Upsampler":
        key = name.strip().lower().replace("_", "-")
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ConfigurationError(f"Unknown upsampler '{name}'")


@dataclass(frozen=True)
class RngSpec:
    seed: int = 0
    scheme: InitScheme = InitScheme.UNIFORM_XAVIER

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass
class LinearMap:
    """Bias-free d x C projection applied to every spatial position."""
    weights: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights)
        if self.weights.dtype not in FLOAT_DTYPES:
            self.weights = self.weights.astype(np.float64)
        if self.weights.ndim != 2 or min(self.weights.shape) < 1:
            raise ShapeError(f"LinearMap weights must be a non-empty matrix, got {self.weights.shape}")
        if not np.all(np.isfinite(self.weights)):
            raise ConfigurationError("LinearMap weights must be finite")

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def identity(cls, size: int, dtype=np.float64) -> "LinearMap":
        return cls(np.eye(size, dtype=dtype))

    @classmethod
    def zeros(cls, rows: int, cols: int, dtype=np.float64) -> "LinearMap":
        return cls(np.zeros((rows, cols), dtype=dtype))


@dataclass
class SapaConfig:
    variant: Variant = Variant.B
    ratio: int = 2
    kernel_size: int = 5
    num_points: int = 9
    embed_dim: int = 32
    groups: int = 1
    offset_dof: int = 1
    offset_init: OffsetInit = OffsetInit.ORIGIN
    pre_groupnorm: bool = False
    norm_fn: NormFn = NormFn.EXP
    norm_groups: int = 4
    guidance: bool = True

    @classmethod
    def defaults(cls, variant: Variant | str, ratio: int = 2) -> "SapaConfig":
        """Reference defaults: d=32, S=9, g=4, DOF=s^2 for D; K=5, d=32, g=1 for I/B."""
        variant = Variant(variant)
        if variant is Variant.D:
            return cls(variant=variant, ratio=ratio, groups=4, offset_dof=ratio * ratio)
        return cls(variant=variant, ratio=ratio)

    def with_overrides(self, **changes) -> "SapaConfig":
        return replace(self, **changes)

    @property
    def similarity(self) -> SimilarityFn:
        return SimilarityFn.INNER if self.variant is Variant.I else SimilarityFn.EMBEDDED

    @property
    def points(self) -> int:
        """Number of points S gathered per kernel."""
        if self.variant is Variant.D:
            return self.num_points
        return self.kernel_size * self.kernel_size

    @property
    def offset_channels(self) -> int:
        return 2 * self.num_points * self.groups * self.offset_dof

    def validate(self) -> "SapaConfig":
        if self.ratio < 1:
            raise ConfigurationError(f"ratio must be >= 1, got {self.ratio}")
        if self.variant is not Variant.D and (self.kernel_size < 1 or self.kernel_size % 2 == 0):
            raise ConfigurationError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.num_points < 1:
            raise ConfigurationError(f"num_points must be >= 1, got {self.num_points}")
        if self.embed_dim < 1:
            raise ConfigurationError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if self.groups < 1:
            raise ConfigurationError(f"groups must be >= 1, got {self.groups}")
        if self.norm_groups < 1:
            raise ConfigurationError(f"norm_groups must be >= 1, got {self.norm_groups}")
        if self.offset_dof not in (1, self.ratio * self.ratio):
            raise ConfigurationError(
                f"offset_dof must be 1 or s^2={self.ratio * self.ratio}, got {self.offset_dof}"
            )
        return self

    def param_count(self, channels: int, encoder_channels: Optional[int] = None) -> int:
        """Learned parameter count for the given channel numbers."""
        c_enc = channels if encoder_channels is None or not self.guidance else encoder_channels
        if self.variant is Variant.I:
            return 0
        embed = self.groups * self.embed_dim * (channels + c_enc)
        if self.variant is Variant.B:
            return embed
        return embed + channels * self.offset_channels


@dataclass
class OffsetField:
    """Sampling offsets (row, col) in low-res pixel units, one set per output position.

    ``offsets`` has shape (n, g, S, sH, sW, 2); with DOF=1 the s x s siblings of a
    low-res cell carry identical values.
    """
    offsets: np.ndarray
    dof: int
    ratio: int

    @property
    def groups(self) -> int:
        return self.offsets.shape[1]

    @property
    def points(self) -> int:
        return self.offsets.shape[2]


@dataclass
class KernelMap:
    """Normalized kernel weights of shape (n, g, S, sH, sW)."""
    weights: np.ndarray
    fallbacks: int = 0

    @property
    def groups(self) -> int:
        return self.weights.shape[1]

    @property
    def points(self) -> int:
        return self.weights.shape[2]

    def at(self, row: int, col: int, group: int = 0, sample: int = 0) -> np.ndarray:
        """The S-vector of weights at one output position."""
        return self.weights[sample, group, :, row, col]


@dataclass
class ParamSet:
    """Learned tensors of a SAPA operator: per-group embeddings and the offset layer."""
    mx: list[LinearMap] = field(default_factory=list)
    my: list[LinearMap] = field(default_factory=list)
    phi: Optional[LinearMap] = None

    def as_dict(self) -> dict[str, np.ndarray]:
        named: dict[str, np.ndarray] = {}
        for k, m in enumerate(self.mx):
            named[f"mx.{k}"] = m.weights
        for k, m in enumerate(self.my):
            named[f"my.{k}"] = m.weights
        if self.phi is not None:
            named["phi"] = self.phi.weights
        return named

    @classmethod
    def from_dict(cls, named: dict[str, np.ndarray]) -> "ParamSet":
        def ordered(prefix: str) -> list[LinearMap]:
            keys = sorted((k for k in named if k.startswith(prefix + ".")), key=lambda k: int(k.split(".")[1]))
            return [LinearMap(named[k]) for k in keys]

        phi = named.get("phi")
        return cls(mx=ordered("mx"), my=ordered("my"), phi=LinearMap(phi) if phi is not None else None)


@dataclass
class Corners:
    """Clamped bilinear corner indices and fractions for a coordinate array."""
    i0: np.ndarray
    i1: np.ndarray
    j0: np.ndarray
    j1: np.ndarray
    fy: np.ndarray
    fx: np.ndarray
    # True where the coordinate lies strictly inside the clamp range.
    inside_y: np.ndarray
    inside_x: np.ndarray

    def point(self, p: int) -> "Corners":
        """Corners of point slot ``p`` for arrays laid out (n, S, ...)."""
        return Corners(**{name: getattr(self, name)[:, p] for name in self.__dataclass_fields__})


@dataclass
class ForwardState:
    """Everything a backward pass needs, retained by a forward with ``retain=True``."""
    cfg: SapaConfig
    decoder: Tensor
    encoder: Tensor
    params: Optional[ParamSet]
    dec_feat: Tensor
    enc_feat: Tensor
    coords: np.ndarray
    offsets: Optional[OffsetField]
    key_maps: list[np.ndarray]
    queries: list[np.ndarray]
    corners: list[Corners]
    keys: list[np.ndarray]
    values: list[np.ndarray]
    scores: np.ndarray
    weights: np.ndarray


@dataclass
class GradBundle:
    d_decoder: Tensor
    d_encoder: Tensor
    d_mx: Optional[list[np.ndarray]] = None
    d_my: Optional[list[np.ndarray]] = None
    d_phi: Optional[np.ndarray] = None
    boundary_coords: int = 0

    def as_dict(self) -> dict[str, np.ndarray]:
        named = {"decoder": self.d_decoder, "encoder": self.d_encoder}
        for k, g in enumerate(self.d_mx or []):
            named[f"mx.{k}"] = g
        for k, g in enumerate(self.d_my or []):
            named[f"my.{k}"] = g
        if self.d_phi is not None:
            named["phi"] = self.d_phi
        return named

    @classmethod
    def reduce(cls, partials: list["GradBundle"]) -> "GradBundle":
        """Sum per-thread partial bundles of identical layout."""
        if not partials:
            raise ValueError("nothing to reduce")

        def add_lists(lists):
            if lists[0] is None:
                return None
            return [sum(parts) for parts in zip(*lists)]

        return cls(
            d_decoder=sum(p.d_decoder for p in partials),
            d_encoder=sum(p.d_encoder for p in partials),
            d_mx=add_lists([p.d_mx for p in partials]),
            d_my=add_lists([p.d_my for p in partials]),
            d_phi=None if partials[0].d_phi is None else sum(p.d_phi for p in partials),
            boundary_coords=sum(p.boundary_coords for p in partials),
        )


@dataclass
class GradCheckEntry:
    tensor: str
    max_rel_err: float
    mean_rel_err: float
    checked: int
    excluded: int
    passed: bool


@dataclass
class GradCheckReport:
    rel_tol: float
    seed: int
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def failing(self) -> list[str]:
        return [e.tensor for e in self.entries if not e.passed]

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)


@dataclass
class CostQuery:
    upsampler: Upsampler
    C: int = 256
    d: int = 32
    K: int = 5
    S: int = 9
    g: int = 4
    H: int = 120
    W: int = 120


@dataclass
class StepCost:
    flops: int
    params: int


@dataclass
class CostReport:
    """Per-step cost; flops are absolute counts (per-position formula x H x W)."""
    query: CostQuery
    steps: dict[str, StepCost]

    @property
    def flops(self) -> int:
        return sum(s.flops for s in self.steps.values())

    @property
    def params(self) -> int:
        return sum(s.params for s in self.steps.values())

    @property
    def flops_per_position(self) -> int:
        return self.flops // (self.query.H * self.query.W)

    @property
    def gflops(self) -> float:
        return self.flops / 1e9


@dataclass
class BenchRecord:
    upsampler: str
    shape: tuple[int, int, int, int]
    warmup: int
    iters: int
    mean_ms: Optional[float] = None
    std_ms: Optional[float] = None
    gflops: Optional[float] = None
    params: Optional[int] = None
    status: str = "ok"


@dataclass
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0
