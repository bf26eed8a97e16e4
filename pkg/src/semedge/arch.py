"""Basic / DSN / CASENet network graphs over a miniature 5-stage residual backbone.

Output naming used throughout the package:

* ``score``           Basic (and the softmax baseline): the single classifier output
* ``side1`` .. ``side5``  K-channel side classification activations
* ``feat1`` .. ``feat3``  1-channel side features (CASENet family)
* ``fused``           the K-grouped fused classification output
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from semedge.errors import ConfigError
from semedge.kernel import Conv2d, Parameter, ResidualBlock, Tensor, concat_channels, param_rng, upsample_bilinear

STAGE_STRIDES = (1, 2, 4, 8, 8)


class ArchVariant(enum.Enum):
    BASIC = 0
    DSN = 1
    CASENET = 2
    CASENET_MINUS = 3
    CASENET_EDGE = 4
    BASIC_SOFTMAX = 5

    @classmethod
    def parse(cls, name: "str | ArchVariant") -> "ArchVariant":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("⁻", "minus")
        if key.endswith("-"):
            key = key[:-1] + "minus"
        key = key.replace("-", "").replace("_", "")
        aliases = {
            "basic": cls.BASIC,
            "dsn": cls.DSN,
            "casenet": cls.CASENET,
            "casenetminus": cls.CASENET_MINUS,
            "casenetedge": cls.CASENET_EDGE,
            "basicsoftmax": cls.BASIC_SOFTMAX,
            "softmax": cls.BASIC_SOFTMAX,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ConfigError(f"unknown architecture variant {name!r}") from None

    @property
    def label(self) -> str:
        return {
            ArchVariant.BASIC: "Basic",
            ArchVariant.DSN: "DSN",
            ArchVariant.CASENET: "CASENet",
            ArchVariant.CASENET_MINUS: "CASENet-minus",
            ArchVariant.CASENET_EDGE: "CASENet-edge",
            ArchVariant.BASIC_SOFTMAX: "Basic-softmax",
        }[self]

    @property
    def is_casenet(self) -> bool:
        return self in (ArchVariant.CASENET, ArchVariant.CASENET_MINUS, ArchVariant.CASENET_EDGE)


@dataclass(frozen=True)
class BackboneConfig:
    stage_channels: tuple[int, ...] = (16, 32, 64, 128, 128)
    blocks_per_stage: int = 1
    stage5_dilation: int = 2
    in_channels: int = 3
    stage_cumulative_strides: tuple[int, ...] = field(default=STAGE_STRIDES)

    def __post_init__(self):
        if len(self.stage_channels) != 5:
            raise ConfigError("backbone needs exactly 5 stage channel counts")
        if tuple(self.stage_cumulative_strides) != STAGE_STRIDES:
            raise ConfigError(f"stage strides are fixed at {STAGE_STRIDES}")
        if self.blocks_per_stage < 1 or self.stage5_dilation < 1 or min(self.stage_channels) < 1:
            raise ConfigError("invalid backbone configuration")

    @property
    def local_strides(self) -> tuple[int, ...]:
        prev = (1,) + STAGE_STRIDES[:-1]
        return tuple(s // p for s, p in zip(STAGE_STRIDES, prev))

    @property
    def total_stride(self) -> int:
        return STAGE_STRIDES[-1]

    def to_dict(self) -> dict:
        return {
            "stage_channels": list(self.stage_channels),
            "blocks_per_stage": self.blocks_per_stage,
            "stage5_dilation": self.stage5_dilation,
            "in_channels": self.in_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(
            stage_channels=tuple(int(c) for c in d.get("stage_channels", cls.stage_channels)),
            blocks_per_stage=int(d.get("blocks_per_stage", 1)),
            stage5_dilation=int(d.get("stage5_dilation", 2)),
            in_channels=int(d.get("in_channels", 3)),
        )


# ------------------------------------------------------------- graph primitives


def side_classification(x: Tensor, k: int, conv: Conv2d, factor: int) -> Tensor:
    """1x1 conv to K class activations, then bilinear upsampling to input resolution."""
    if conv.weight.shape[0] != k:
        raise ConfigError(f"classification conv has {conv.weight.shape[0]} outputs, expected {k}")
    return upsample_bilinear(conv(x), factor)


def side_feature(x: Tensor, conv: Conv2d, factor: int) -> Tensor:
    """1x1 conv to a single feature channel, then bilinear upsampling."""
    if conv.weight.shape[0] != 1:
        raise ConfigError("side feature conv must produce exactly one channel")
    return upsample_bilinear(conv(x), factor)


def sliced_order(k: int, sides: int = 5) -> list[int]:
    # output channel (class c, side j) <- input side j channel c
    return [j * k + c for c in range(k) for j in range(sides)]


def shared_order(k: int, n_feat: int = 3) -> list[int]:
    return [i for c in range(k) for i in (*range(n_feat), n_feat + c)]


def sliced_concat(sides: list[Tensor]) -> Tensor:
    """{A1_1..A5_1, A1_2..A5_2, ..., A5_K}: channels of the same class made adjacent."""
    if len(sides) != 5:
        raise ConfigError(f"sliced concatenation takes 5 side maps, got {len(sides)}")
    k = sides[0].shape[1]
    if any(s.shape[1] != k for s in sides):
        raise ConfigError("all side maps must have the same number of classes")
    return concat_channels(sides, sliced_order(k))


def shared_concat(feats: list[Tensor], top: Tensor) -> Tensor:
    """{F, A5_1, F, A5_2, ..., F, A5_K} with F = (F1, F2, F3) replicated per class."""
    if len(feats) != 3 or any(f.shape[1] != 1 for f in feats):
        raise ConfigError("shared concatenation takes three 1-channel side features")
    return concat_channels([*feats, top], shared_order(top.shape[1], len(feats)))


def fused_classification(af: Tensor, k: int, conv: Conv2d) -> Tensor:
    """K-grouped 1x1 conv: class k reads only its own channel group."""
    if af.shape[1] % k:
        raise ConfigError(f"fused input has {af.shape[1]} channels, not divisible by K={k}")
    if conv.groups != k or conv.weight.shape[:2] != (k, af.shape[1] // k):
        raise ConfigError("fused classification conv does not match K groups")
    return conv(af)


# ---------------------------------------------------------------------- network


class Network:
    """An executable graph for one architecture variant."""

    def __init__(self, variant: ArchVariant, k: int, cfg: BackboneConfig):
        self.variant = variant
        self.k = k
        self.cfg = cfg
        self.stages: list[list[ResidualBlock]] = []
        in_ch = cfg.in_channels
        for s, (out_ch, stride) in enumerate(zip(cfg.stage_channels, cfg.local_strides), start=1):
            dilation = cfg.stage5_dilation if s == 5 else 1
            blocks = []
            for b in range(cfg.blocks_per_stage):
                blocks.append(ResidualBlock(f"res{s}.{b}", in_ch, out_ch,
                                            stride=stride if b == 0 else 1, dilation=dilation))
                in_ch = out_ch
            self.stages.append(blocks)

        ch = cfg.stage_channels
        self.heads: dict[str, Conv2d] = {}
        self.fuse: Conv2d | None = None
        if variant is ArchVariant.BASIC:
            self.heads["score"] = Conv2d("score", ch[4], k, kernel=1)
        elif variant is ArchVariant.BASIC_SOFTMAX:
            self.heads["score"] = Conv2d("score", ch[4], k + 1, kernel=1)
        elif variant is ArchVariant.DSN:
            for j in range(5):
                self.heads[f"side{j + 1}"] = Conv2d(f"side{j + 1}", ch[j], k, kernel=1)
            self.fuse = Conv2d("fuse", 5 * k, k, kernel=1, groups=k)
        else:
            for j in range(3):
                self.heads[f"feat{j + 1}"] = Conv2d(f"feat{j + 1}", ch[j], 1, kernel=1)
            self.heads["side5"] = Conv2d("side5", ch[4], k, kernel=1)
            self.fuse = Conv2d("fuse", 4 * k, k, kernel=1, groups=k)

    # -- structure

    @property
    def output_names(self) -> list[str]:
        names = list(self.heads)
        if self.fuse is not None:
            names.append("fused")
        return names

    @property
    def primary_output(self) -> str:
        return "fused" if self.fuse is not None else "score"

    @property
    def out_channels(self) -> int:
        return self.k + 1 if self.variant is ArchVariant.BASIC_SOFTMAX else self.k

    def convs(self) -> list[Conv2d]:
        out = [c for blocks in self.stages for blk in blocks for c in blk.convs()]
        out.extend(self.heads.values())
        if self.fuse is not None:
            out.append(self.fuse)
        return out

    def parameters(self) -> list[Parameter]:
        return [p for c in self.convs() for p in c.parameters()]

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        return [(p.name, p) for p in self.parameters()]

    def initialize(self, seed: int) -> "Network":
        for i, conv in enumerate(self.convs()):
            if conv is self.fuse:
                conv.init_constant(1.0 / conv.weight.shape[1])
            else:
                conv.init_he(param_rng(seed, i))
        return self

    def astype(self, dtype) -> "Network":
        for p in self.parameters():
            p.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    # -- execution

    def backbone(self, x: Tensor) -> list[Tensor]:
        feats = []
        for blocks in self.stages:
            for blk in blocks:
                x = blk(x)
            feats.append(x)
        return feats

    def forward(self, x: Tensor) -> dict[str, Tensor]:
        n, c, h, w = x.shape
        if c != self.cfg.in_channels:
            raise ConfigError(f"expected {self.cfg.in_channels} input channels, got {c}")
        stride = self.cfg.total_stride
        if h % stride or w % stride:
            raise ConfigError(f"input size {h}x{w} must be divisible by {stride}")
        feats = self.backbone(x)
        out: dict[str, Tensor] = {}
        if "score" in self.heads:
            out["score"] = side_classification(feats[4], self.out_channels, self.heads["score"], STAGE_STRIDES[4])
        elif self.variant is ArchVariant.DSN:
            sides = [side_classification(feats[j], self.k, self.heads[f"side{j + 1}"], STAGE_STRIDES[j])
                     for j in range(5)]
            for j, s in enumerate(sides):
                out[f"side{j + 1}"] = s
            out["fused"] = fused_classification(sliced_concat(sides), self.k, self.fuse)
        else:
            fs = [side_feature(feats[j], self.heads[f"feat{j + 1}"], STAGE_STRIDES[j]) for j in range(3)]
            a5 = side_classification(feats[4], self.k, self.heads["side5"], STAGE_STRIDES[4])
            for j, f in enumerate(fs):
                out[f"feat{j + 1}"] = f
            out["side5"] = a5
            out["fused"] = fused_classification(shared_concat(fs, a5), self.k, self.fuse)
        for name, t in out.items():
            t.name = name
            if t.shape[2:] != (h, w):
                raise ConfigError(f"output {name} has size {t.shape[2:]}, expected {(h, w)}")
        return out

    __call__ = forward


def build(variant: "ArchVariant | str", k: int, cfg: BackboneConfig | None = None, seed: int | None = 0) -> Network:
    """Construct (and, unless ``seed`` is None, initialize) a network."""
    variant = ArchVariant.parse(variant)
    if k < 1:
        raise ConfigError(f"K must be >= 1 (got {k})")
    net = Network(variant, k, cfg or BackboneConfig())
    if seed is not None:
        net.initialize(seed)
    return net


def to_input(image: np.ndarray, dtype=np.float32) -> Tensor:
    """(H, W, 3) uint8 RGB -> (1, 3, H, W) tensor scaled to roughly [-1, 1]."""
    arr = np.asarray(image)
    if arr.ndim != 3:
        raise ConfigError(f"image must be (H, W, C), got {arr.shape}")
    x = arr.astype(dtype).transpose(2, 0, 1)[None] / dtype(127.5) - dtype(1.0)
    return Tensor(np.ascontiguousarray(x, dtype=dtype))
