"""Full network assembly: configuration, parameter store, forward paths,
self-ensemble and fractional-factor inference, and checkpoint I/O.

The network is a shared trunk (input conv, block chain, hierarchical
unit, mix conv) with one sub-pixel reconstruction head per supported
factor; exactly one head participates in any forward pass, so a single
checkpoint serves every configured factor.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

from . import blocks as B
from .data import (
    Image,
    bicubic_resize,
    dihedral_apply,
    dihedral_invert,
    image_to_tensor,
    tensor_to_image,
)
from .errors import (
    BadMagicError,
    CheckpointError,
    ConfigError,
    ContractViolationError,
    TruncatedCheckpointError,
    UnsupportedFactorError,
    VersionMismatchError,
)
from .tensor import Tensor, add, zeros

__all__ = [
    "ModelConfig",
    "ParameterStore",
    "default_hfdb_inner",
    "build",
    "forward",
    "self_ensemble_forward",
    "super_resolve_fractional",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
]

BLOCK_KINDS = ("mdcb", "msrb", "resblock")
HIERARCHIES = ("A", "B", "C", "D", "HFDB")
PATH_MODES = ("both", "top", "bottom")
VALID_FACTORS = (2, 3, 4)

CHECKPOINT_MAGIC = b"MDCN"
CHECKPOINT_VERSION = 1


def default_hfdb_inner(channels: int) -> int:
    """Distillation width: 96 at full scale, about half the trunk width
    (but below it) at desk scale."""
    if channels >= 128:
        return 96
    return min(max(-(-channels // 2), 4), max(channels - 1, 1))


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int = 12
    channels: int = 128
    hfdb_inner: int = 96
    cam_reduction: int = 16
    factors: tuple[int, ...] = (2, 3, 4)
    block_kind: str = "mdcb"
    hierarchy: str = "HFDB"
    paths: str = "both"
    fefm: bool = True
    residual: bool = True

    def __post_init__(self):
        if not isinstance(self.n_blocks, int) or self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be an integer >= 1, got {self.n_blocks!r}")
        if not isinstance(self.channels, int) or self.channels < 4:
            raise ConfigError(f"channels must be an integer >= 4, got {self.channels!r}")
        if not isinstance(self.hfdb_inner, int) or self.hfdb_inner < 1:
            raise ConfigError(f"hfdb_inner must be an integer >= 1, got {self.hfdb_inner!r}")
        if not isinstance(self.cam_reduction, int) or self.cam_reduction < 1:
            raise ConfigError(
                f"cam_reduction must be an integer >= 1, got {self.cam_reduction!r}"
            )
        try:
            factors = tuple(sorted(set(int(f) for f in self.factors)))
        except (TypeError, ValueError):
            raise ConfigError(f"factors must be integers, got {self.factors!r}") from None
        if not factors or any(f not in VALID_FACTORS for f in factors):
            raise ConfigError(
                f"factors must be a non-empty subset of {set(VALID_FACTORS)}, got {self.factors!r}"
            )
        object.__setattr__(self, "factors", factors)
        if self.block_kind not in BLOCK_KINDS:
            raise ConfigError(f"block_kind must be one of {BLOCK_KINDS}, got {self.block_kind!r}")
        if self.hierarchy not in HIERARCHIES:
            raise ConfigError(f"hierarchy must be one of {HIERARCHIES}, got {self.hierarchy!r}")
        if self.paths not in PATH_MODES:
            raise ConfigError(f"paths must be one of {PATH_MODES}, got {self.paths!r}")
        if self.paths != "both":
            if self.block_kind != "mdcb":
                raise ConfigError("paths: single-path variants exist only for mdcb blocks")
            if self.fefm:
                raise ConfigError("fefm: feature exchange needs both paths enabled")
        if self.hierarchy == "HFDB" and self.hfdb_inner >= self.channels:
            raise ConfigError(
                f"hfdb_inner must be below channels ({self.channels}), got {self.hfdb_inner}"
            )
        if self.hierarchy != "A" and self.n_blocks < 2:
            raise ConfigError(
                f"hierarchy {self.hierarchy!r} needs n_blocks >= 2 to collect features"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["factors"] = list(self.factors)
        return d

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        if not isinstance(payload, dict):
            raise ConfigError(f"model config must be a JSON object, got {type(payload).__name__}")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"unknown model config field(s): {', '.join(unknown)}")
        missing = sorted(known - set(payload))
        if missing:
            raise ConfigError(f"missing model config field(s): {', '.join(missing)}")
        clean = dict(payload)
        if isinstance(clean.get("factors"), list):
            clean["factors"] = tuple(clean["factors"])
        return cls(**clean)


@dataclass
class ModelParts:
    """Structured view over the store's tensors, used by the forward pass."""

    input: B.Conv
    blocks: list
    hier: object | None
    mix: B.Conv
    drb: B.DrbParams
    output: B.Conv


class ParameterStore:
    """Ordered name -> Tensor map with trunk/head partition labels."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self._tensors: dict[str, Tensor] = {}
        self._partitions: dict[str, str] = {}
        self.parts: ModelParts | None = None

    def add(self, name: str, tensor: Tensor, partition: str) -> None:
        if name in self._tensors:
            raise ContractViolationError(f"duplicate parameter name {name!r}")
        self._tensors[name] = tensor
        self._partitions[name] = partition

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def partition(self, name: str) -> str:
        return self._partitions[name]

    def partition_names(self, label: str) -> list[str]:
        return [n for n, p in self._partitions.items() if p == label]

    def partition_labels(self) -> list[str]:
        seen = dict.fromkeys(self._partitions.values())
        return list(seen)

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def param_count(self) -> int:
        return sum(t.numel for t in self._tensors.values())

    def partition_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for name, t in self._tensors.items():
            label = self._partitions[name]
            counts[label] = counts.get(label, 0) + t.numel
        return counts


def _build_block(make_conv, prefix: str, cfg: ModelConfig):
    c = cfg.channels
    if cfg.block_kind == "mdcb":
        has_top = cfg.paths in ("both", "top")
        has_bot = cfg.paths in ("both", "bottom")
        fuse_in = (3 * c if cfg.fefm else 2 * c) if (has_top and has_bot) else 2 * c
        tail_in = 5 * c if (has_top and has_bot) else 3 * c
        top1 = top_fuse = top2 = bot1 = bot_fuse = bot2 = None
        if has_top:
            top1 = make_conv(f"{prefix}.top1", c, c, 3)
            top_fuse = make_conv(f"{prefix}.top_fuse", fuse_in, c, 1)
            top2 = make_conv(f"{prefix}.top2", c, c, 3)
        if has_bot:
            bot1 = make_conv(f"{prefix}.bot1", c, c, 5)
            bot_fuse = make_conv(f"{prefix}.bot_fuse", fuse_in, c, 1)
            bot2 = make_conv(f"{prefix}.bot2", c, c, 5)
        tail = make_conv(f"{prefix}.tail", tail_in, c, 1)
        return B.MdcbParams(top1, top_fuse, top2, bot1, bot_fuse, bot2, tail,
                            fefm=cfg.fefm, residual=cfg.residual)
    if cfg.block_kind == "msrb":
        return B.MsrbParams(
            conv3_1=make_conv(f"{prefix}.conv3_1", c, c, 3),
            conv5_1=make_conv(f"{prefix}.conv5_1", c, c, 5),
            conv3_2=make_conv(f"{prefix}.conv3_2", 2 * c, 2 * c, 3),
            conv5_2=make_conv(f"{prefix}.conv5_2", 2 * c, 2 * c, 5),
            tail=make_conv(f"{prefix}.tail", 4 * c, c, 1),
        )
    return B.ResblockParams(
        conv1=make_conv(f"{prefix}.conv1", c, c, 3),
        conv2=make_conv(f"{prefix}.conv2", c, c, 3),
    )


MERGE_INIT_GAIN = 0.1
_MERGE_LAYERS = (".tail", "hfdb.tail", "hier.fuse", "output")


def build(config: ModelConfig, seed: int, dtype=np.float32) -> ParameterStore:
    """Create a fully initialized parameter store; deterministic in (config, seed)."""
    rng = np.random.default_rng(seed)
    store = ParameterStore(config)
    partition = ["trunk"]

    def make_conv(name: str, in_c: int, out_c: int, k: int) -> B.Conv:
        gain = MERGE_INIT_GAIN if name.endswith(_MERGE_LAYERS) else 1.0
        w = Tensor(B.init_conv_weight(rng, out_c, in_c, k, dtype, gain=gain),
                   requires_grad=True)
        b = zeros((1, out_c, 1, 1), dtype=dtype, requires_grad=True)
        store.add(f"{name}.w", w, partition[0])
        store.add(f"{name}.b", b, partition[0])
        return B.Conv(w, b)

    c = config.channels
    conv_in = make_conv("input", 3, c, 3)
    block_params = [
        _build_block(make_conv, f"block{i:02d}", config)
        for i in range(1, config.n_blocks + 1)
    ]
    hier = None
    if config.hierarchy == "HFDB":
        m = (config.n_blocks - 1) * c
        inner = config.hfdb_inner
        cw = B.cam_width(inner, config.cam_reduction)
        hier = B.HfdbParams(
            head=make_conv("hfdb.head", m, inner, 1),
            cam=B.CamParams(
                down=make_conv("hfdb.cam.down", inner, cw, 1),
                up=make_conv("hfdb.cam.up", cw, inner, 1),
                reduction=config.cam_reduction,
            ),
            tail=make_conv("hfdb.tail", inner, c, 1),
        )
    elif config.hierarchy == "D":
        hier = B.HierarchyDParams(fuse=make_conv("hier.fuse", (config.n_blocks - 1) * c, c, 1))
    conv_mix = make_conv("mix", c, c, 3)
    heads: dict[int, list[tuple[B.Conv, int]]] = {}
    for f in config.factors:
        partition[0] = f"head:{f}"
        if f == 4:
            heads[f] = [
                (make_conv(f"head{f}.up1", c, 4 * c, 1), 2),
                (make_conv(f"head{f}.up2", c, 4 * c, 1), 2),
            ]
        else:
            heads[f] = [(make_conv(f"head{f}.up1", c, f * f * c, 1), f)]
    partition[0] = "trunk"
    conv_out = make_conv("output", c, 3, 3)
    store.parts = ModelParts(
        input=conv_in,
        blocks=block_params,
        hier=hier,
        mix=conv_mix,
        drb=B.DrbParams(heads),
        output=conv_out,
    )
    return store


def _block_forward(x: Tensor, params, kind: str) -> Tensor:
    if kind == "mdcb":
        return B.mdcb_forward(x, params)
    return B.baseline_block_forward(kind, x, params)


def forward(store: ParameterStore, x: Tensor, factor: int) -> Tensor:
    """Super-resolve a (n, 3, h, w) batch to (n, 3, factor*h, factor*w)."""
    cfg = store.config
    parts = store.parts
    l_input = parts.input(x)
    feats = []
    cur = l_input
    for params in parts.blocks:
        cur = _block_forward(cur, params, cfg.block_kind)
        feats.append(cur)
    l_output = feats[-1]
    hier_feats = feats[:-1]
    if cfg.hierarchy == "A":
        l_dis = None
    elif cfg.hierarchy == "HFDB":
        l_dis = B.hfdb_forward(hier_feats, parts.hier)
    else:
        l_dis = B.hierarchical_aggregate(cfg.hierarchy, hier_feats, l_input, parts.hier)
    mixed = add(l_input, l_output) if l_dis is None else add(add(l_input, l_dis), l_output)
    l_mix = parts.mix(mixed)
    return parts.output(B.drb_forward(l_mix, factor, parts.drb))


def self_ensemble_forward(store: ParameterStore, x: Tensor, factor: int) -> Tensor:
    """Average the inverse-transformed outputs over all 8 dihedral inputs."""
    outs = []
    for k in range(8):
        xt = Tensor(np.ascontiguousarray(dihedral_apply(x.data, k)))
        yt = forward(store, xt, factor)
        outs.append(np.ascontiguousarray(dihedral_invert(yt.data, k)))
    return Tensor(np.mean(outs, axis=0, dtype=outs[0].dtype))


def super_resolve_fractional(store: ParameterStore, image: Image, s: float) -> Image:
    """Upscale by a possibly fractional ratio s > 1: run the largest
    integer factor <= s, then bicubic-adjust the remainder."""
    s = float(s)
    if s <= 1.0:
        raise ContractViolationError(f"fractional factor must exceed 1, got {s}")
    usable = [f for f in store.config.factors if f <= s]
    if not usable:
        raise UnsupportedFactorError(s, store.config.factors)
    f = max(usable)
    y = forward(store, image_to_tensor(image), f)
    if s == f:
        return tensor_to_image(y)
    out_h = math.floor(image.height * s + 0.5)
    out_w = math.floor(image.width * s + 0.5)
    arr = bicubic_resize(
        y.data[0].transpose(1, 2, 0), antialias=False, out_shape=(out_h, out_w)
    )
    return Image(np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8))


def param_count(config: ModelConfig) -> int:
    """Number of scalar trainables :func:`build` creates for this config."""
    return build(config, seed=0).param_count()


# ---------------------------------------------------------------------------
# Checkpoint format (little-endian):
#   "MDCN" | u32 version | u32 config length | config JSON | u32 tensor count
#   then per tensor: u16 name length | name | u8 rank | rank*u32 dims | f32 data
# ---------------------------------------------------------------------------


def save_checkpoint(store: ParameterStore, path) -> None:
    cfg_json = json.dumps(store.config.to_dict(), sort_keys=True).encode("utf-8")
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    buf += struct.pack("<I", len(cfg_json))
    buf += cfg_json
    buf += struct.pack("<I", len(store))
    for name, t in store.items():
        encoded = name.encode("utf-8")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
        buf += struct.pack("<B", 4)
        buf += struct.pack("<4I", *t.shape)
        buf += np.ascontiguousarray(t.data, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint ends at byte {len(self.data)}, "
                f"needed {self.pos + n}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> tuple[ParameterStore, ModelConfig]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    r = _Reader(raw)
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"bad checkpoint magic {magic!r}")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {version}, supported version {CHECKPOINT_VERSION}"
        )
    cfg_len = r.u32()
    try:
        cfg_payload = json.loads(r.take(cfg_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint config block corrupt: {exc}") from None
    config = ModelConfig.from_dict(cfg_payload)
    count = r.u32()
    loaded: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        if rank != 4:
            raise CheckpointError(f"tensor {name!r} has rank {rank}, expected 4")
        dims = struct.unpack("<4I", r.take(16))
        numel = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * numel), dtype="<f4").reshape(dims)
        loaded[name] = arr.astype(np.float32)
    store = build(config, seed=0)
    expected = set(store.names())
    if set(loaded) != expected:
        missing = sorted(expected - set(loaded))
        extra = sorted(set(loaded) - expected)
        raise CheckpointError(
            f"checkpoint tensors do not match config: missing={missing}, extra={extra}"
        )
    for name, arr in loaded.items():
        t = store[name]
        if t.shape != arr.shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {arr.shape}, expected {t.shape}"
            )
        t.data = arr
    return store, config
