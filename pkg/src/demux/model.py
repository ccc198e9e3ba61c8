"""Multi-tab demixing network and the single-scale convolutional baseline.

The main network: parallel residual conv branches with distinct odd kernel
sizes fused by a pointwise convolution, a two-stage transformer encoder whose
first stage rotates query/key subspaces by position (so attention scores
depend only on relative offsets), an expanding inter-stage projection, and an
up-project-then-mean-pool sigmoid head. Reference sizes follow the published
configuration; everything is configurable down to toy scale.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class ModelConfigError(ValueError):
    pass


POSITIONAL_KINDS = ("rope", "none", "sinusoidal", "learnable")
AGGREGATION_KINDS = ("upproj_mean", "mean", "flatten")


@dataclass(frozen=True)
class ModelConfig:
    classes: int
    input_channels: int = 8
    branch_kernels: tuple[int, ...] = (3, 5, 7)
    channel_progression: tuple[int, ...] = (8, 32, 64, 128, 256)
    pool_kernel: int = 8
    pool_stride: int = 4
    fuse_out: int = 256
    stage1_layers: int = 2
    stage1_heads: int = 8
    stage1_ffn: int = 1024
    rope_base: float = 10_000.0
    interstage_out: int = 384
    stage2_layers: int = 2
    stage2_heads: int = 8
    stage2_ffn: int = 1536
    upproj_out: int = 1024
    positional: str = "rope"
    aggregation: str = "upproj_mean"
    # no-aggregation variant: raw +/-1 direction sequence through a width-1 stem
    raw_input: bool = False
    input_length: int | None = None  # required for the flatten head
    max_positions: int = 8192  # learnable positional table size

    def __post_init__(self):
        if self.classes < 1:
            raise ModelConfigError("classes must be >= 1")
        if any(k % 2 == 0 for k in self.branch_kernels):
            raise ModelConfigError("branch kernels must be odd")
        if self.channel_progression[0] != self.input_channels:
            raise ModelConfigError("channel progression must start at input_channels")
        for dim, heads, tag in (
            (self.fuse_out, self.stage1_heads, "stage1"),
            (self.interstage_out, self.stage2_heads, "stage2"),
        ):
            if dim % heads != 0:
                raise ModelConfigError(f"{tag}: dim {dim} not divisible by {heads} heads")
            if (dim // heads) % 2 != 0:
                raise ModelConfigError(f"{tag}: per-head dim must be even (2-D rotation subspaces)")
        if self.positional not in POSITIONAL_KINDS:
            raise ModelConfigError(f"unknown positional kind {self.positional!r}")
        if self.aggregation not in AGGREGATION_KINDS:
            raise ModelConfigError(f"unknown aggregation kind {self.aggregation!r}")
        if self.aggregation == "flatten" and self.input_length is None:
            raise ModelConfigError("flatten aggregation requires a fixed input_length")

    @property
    def num_stages(self) -> int:
        return len(self.channel_progression) - 1

    @property
    def branch_out(self) -> int:
        return self.channel_progression[-1]


def toy_config(classes: int = 4, **overrides) -> ModelConfig:
    """Reduced configuration for tests and desk-scale experiments."""
    defaults = dict(
        classes=classes,
        input_channels=8,
        branch_kernels=(3, 5, 7),
        channel_progression=(8, 16, 32),
        pool_kernel=4,
        pool_stride=2,
        fuse_out=48,
        stage1_layers=1,
        stage1_heads=4,
        stage1_ffn=96,
        interstage_out=64,
        stage2_layers=1,
        stage2_heads=4,
        stage2_ffn=128,
        upproj_out=96,
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


def pooled_length(n: int, cfg: ModelConfig) -> int:
    """Sequence length left after all pooling stages (right-zero-pad rule)."""
    for _ in range(cfg.num_stages):
        n = -(-n // cfg.pool_stride)  # ceil
    return n


def min_input_length(cfg: ModelConfig) -> int:
    # with ceil-mode pooling any nonempty sequence survives all stages
    return 1


def rope_rotate(x: torch.Tensor, positions: torch.Tensor, base: float = 10_000.0) -> torch.Tensor:
    """Rotate 2-D subspaces of x by position-proportional angles.

    x: (..., L, d_h) with even d_h; positions: (L,). Subspace j (dims 2j, 2j+1)
    of the token at position m is rotated by angle m * base**(-2j/d_h).
    """
    d_h = x.shape[-1]
    if d_h % 2 != 0:
        raise ModelConfigError("rotary embedding requires an even per-head dim")
    # angles are formed in float64 regardless of input dtype: at 32-bit the
    # position-frequency product loses enough precision for large positions
    # to break the relative-offset property
    j = torch.arange(d_h // 2, dtype=torch.float64, device=x.device)
    theta = base ** (-2.0 * j / d_h)
    angles = positions.to(torch.float64)[:, None] * theta[None, :]  # (L, d_h/2)
    cos = torch.cos(angles).to(x.dtype)
    sin = torch.sin(angles).to(x.dtype)
    x1 = x[..., 0::2]
    x2 = x[..., 1::2]
    out = torch.empty_like(x)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos
    return out


def sinusoidal_table(length: int, dim: int, device=None, dtype=torch.float32) -> torch.Tensor:
    """Classic absolute sinusoidal position table, shape (length, dim)."""
    pos = torch.arange(length, dtype=dtype, device=device)[:, None]
    j = torch.arange(0, dim, 2, dtype=dtype, device=device)
    div = torch.exp(-math.log(10_000.0) * j / dim)
    table = torch.zeros(length, dim, dtype=dtype, device=device)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div[: table[:, 1::2].shape[1]])
    return table


class MultiHeadSelfAttention(nn.Module):
    """Softmax attention over the sequence, optional rotary q/k rotation."""

    def __init__(self, dim: int, heads: int, rope: bool, rope_base: float = 10_000.0):
        super().__init__()
        if dim % heads != 0:
            raise ModelConfigError(f"dim {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.rope = rope
        self.rope_base = rope_base
        if rope and self.head_dim % 2 != 0:
            raise ModelConfigError("rotary attention requires an even per-head dim")
        self.w_q = nn.Linear(dim, dim)
        self.w_k = nn.Linear(dim, dim)
        self.w_v = nn.Linear(dim, dim)
        self.w_o = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, positions: torch.Tensor | None = None) -> torch.Tensor:
        b, length, dim = x.shape
        if dim != self.dim:
            raise ModelConfigError(f"expected width {self.dim}, got {dim}")

        def split(t):
            return t.view(b, length, self.heads, self.head_dim).transpose(1, 2)

        q = split(self.w_q(x))
        k = split(self.w_k(x))
        v = split(self.w_v(x))
        if self.rope:
            if positions is None:
                positions = torch.arange(length, device=x.device)
            q = rope_rotate(q, positions, self.rope_base)
            k = rope_rotate(k, positions, self.rope_base)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, length, dim)
        return self.w_o(out)


class EncoderLayer(nn.Module):
    """Pre-norm transformer encoder layer (attention + FFN sub-layers)."""

    def __init__(self, dim: int, heads: int, ffn_dim: int, rope: bool, rope_base: float):
        super().__init__()
        self.attn = MultiHeadSelfAttention(dim, heads, rope, rope_base)
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, dim))

    def forward(self, x: torch.Tensor, positions: torch.Tensor | None = None) -> torch.Tensor:
        x = x + self.attn(self.norm1(x), positions)
        return x + self.ffn(self.norm2(x))


class ResidualConvBlock(nn.Module):
    """BN(act(Conv_k(z))) + shortcut(z), same-length via symmetric zero padding.

    The shortcut is the identity when channel widths match and a learned
    width-1 projection otherwise.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int):
        super().__init__()
        if kernel % 2 == 0:
            raise ModelConfigError("conv kernel must be odd")
        self.conv = nn.Conv1d(in_ch, out_ch, kernel, padding=kernel // 2)
        self.bn = nn.BatchNorm1d(out_ch)
        self.shortcut = nn.Identity() if in_ch == out_ch else nn.Conv1d(in_ch, out_ch, 1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:  # (B, C, L)
        return self.bn(F.relu(self.conv(z))) + self.shortcut(z)


class RightPadMaxPool(nn.Module):
    """Max pool with right-side zero padding so out_len = ceil(in_len/stride)."""

    def __init__(self, kernel: int, stride: int):
        super().__init__()
        self.kernel = kernel
        self.stride = stride

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        length = z.shape[-1]
        out_len = -(-length // self.stride)
        need = (out_len - 1) * self.stride + self.kernel - length
        if need > 0:
            z = F.pad(z, (0, need))
        return F.max_pool1d(z, self.kernel, self.stride)


class ConvBranch(nn.Module):
    def __init__(self, cfg: ModelConfig, kernel: int):
        super().__init__()
        stages = []
        prog = cfg.channel_progression
        for i in range(cfg.num_stages):
            stages.append(ResidualConvBlock(prog[i], prog[i + 1], kernel))
            stages.append(RightPadMaxPool(cfg.pool_kernel, cfg.pool_stride))
        self.stages = nn.Sequential(*stages)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.stages(z)


class MultiScaleCNN(nn.Module):
    """Parallel conv branches concatenated and fused by a pointwise conv."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.branches = nn.ModuleList(ConvBranch(cfg, k) for k in cfg.branch_kernels)
        self.fuse = nn.Conv1d(len(cfg.branch_kernels) * cfg.branch_out, cfg.fuse_out, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, L, C) -> (B, L', fuse_out)."""
        if x.shape[1] < min_input_length(self.cfg):
            raise ModelConfigError(
                f"input length {x.shape[1]} below minimum {min_input_length(self.cfg)}"
            )
        z = x.transpose(1, 2)  # (B, C, L)
        outs = [branch(z) for branch in self.branches]
        fused = self.fuse(torch.cat(outs, dim=1))
        return fused.transpose(1, 2)


class DemuxModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = nn.Conv1d(1, cfg.input_channels, 1) if cfg.raw_input else None
        self.backbone = MultiScaleCNN(cfg)
        d, d2 = cfg.fuse_out, cfg.interstage_out
        self.pos_table = (
            nn.Embedding(cfg.max_positions, d) if cfg.positional == "learnable" else None
        )
        self.stage1 = nn.ModuleList(
            EncoderLayer(d, cfg.stage1_heads, cfg.stage1_ffn, cfg.positional == "rope", cfg.rope_base)
            for _ in range(cfg.stage1_layers)
        )
        self.interstage = nn.Linear(d, d2)
        self.stage2 = nn.ModuleList(
            EncoderLayer(d2, cfg.stage2_heads, cfg.stage2_ffn, rope=False, rope_base=cfg.rope_base)
            for _ in range(cfg.stage2_layers)
        )
        if cfg.aggregation == "upproj_mean":
            self.up_proj = nn.Linear(d2, cfg.upproj_out, bias=False)
            self.classifier = nn.Linear(cfg.upproj_out, cfg.classes)
        elif cfg.aggregation == "mean":
            self.up_proj = None
            self.classifier = nn.Linear(d2, cfg.classes)
        else:  # flatten
            self.up_proj = None
            flat = pooled_length(cfg.input_length, cfg) * d2
            self.classifier = nn.Linear(flat, cfg.classes)

    def encode(self, h: torch.Tensor) -> torch.Tensor:
        """(B, L', d) -> (B, L', d') through both encoder stages."""
        length = h.shape[1]
        positions = torch.arange(length, device=h.device)
        if self.cfg.positional == "sinusoidal":
            h = h + sinusoidal_table(length, h.shape[-1], device=h.device, dtype=h.dtype)
        elif self.cfg.positional == "learnable":
            if length > self.cfg.max_positions:
                raise ModelConfigError("sequence longer than learnable positional table")
            h = h + self.pos_table(positions)
        for layer in self.stage1:
            h = layer(h, positions)
        z = self.interstage(h)
        for layer in self.stage2:
            z = layer(z)
        return z

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        if self.stem is not None:
            x = self.stem(x.transpose(1, 2)).transpose(1, 2)
        h = self.backbone(x)
        z = self.encode(h)
        if self.cfg.aggregation == "upproj_mean":
            pooled = self.up_proj(z).mean(dim=1)
        elif self.cfg.aggregation == "mean":
            pooled = z.mean(dim=1)
        else:
            pooled = z.reshape(z.shape[0], -1)
        return self.classifier(pooled)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, L, C) feature tensor (or (B, N, 1) raw directions) -> (B, M) probabilities."""
        return torch.sigmoid(self.logits(x))


@dataclass(frozen=True)
class BaselineConfig:
    """Minimal single-scale stacked-conv classifier (DF-like stand-in)."""

    classes: int
    input_channels: int = 1  # 1 = raw direction sequence, 8 = window feature tensor
    kernel: int = 5
    channels: tuple[int, ...] = (32, 64)
    pool_kernel: int = 8
    pool_stride: int = 4


class BaselineModel(nn.Module):
    def __init__(self, cfg: BaselineConfig):
        super().__init__()
        self.cfg = cfg
        layers = []
        in_ch = cfg.input_channels
        for out_ch in cfg.channels:
            layers += [
                nn.Conv1d(in_ch, out_ch, cfg.kernel, padding=cfg.kernel // 2),
                nn.ReLU(),
                nn.BatchNorm1d(out_ch),
                RightPadMaxPool(cfg.pool_kernel, cfg.pool_stride),
            ]
            in_ch = out_ch
        self.features = nn.Sequential(*layers)
        self.classifier = nn.Linear(in_ch, cfg.classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.cfg.input_channels:
            raise ModelConfigError(
                f"baseline expects {self.cfg.input_channels} channels, got {x.shape[-1]}"
            )
        z = self.features(x.transpose(1, 2))
        return torch.sigmoid(self.classifier(z.mean(dim=-1)))


def build_model(cfg: ModelConfig | BaselineConfig, seed: int) -> nn.Module:
    """Deterministic construction: identical seed + config -> identical weights."""
    torch.manual_seed(seed)
    if isinstance(cfg, BaselineConfig):
        return BaselineModel(cfg)
    return DemuxModel(cfg)


# --- checkpoint container ------------------------------------------------
#
# magic DMXC, u32 version, u32 header length, JSON header, raw tensor data.
# Header maps each layer path to dtype/shape/offset; the model config is
# embedded so checkpoints are self-describing.

CKPT_MAGIC = b"DMXC"
CKPT_VERSION = 1
_DTYPES = {"<f4": torch.float32, "<i8": torch.int64}


def _config_dict(cfg) -> dict:
    d = asdict(cfg)
    d["__kind__"] = "baseline" if isinstance(cfg, BaselineConfig) else "demux"
    return d


def config_from_dict(d: dict) -> ModelConfig | BaselineConfig:
    d = dict(d)
    kind = d.pop("__kind__", "demux")
    for key in ("branch_kernels", "channel_progression", "channels"):
        if key in d and d[key] is not None:
            d[key] = tuple(d[key])
    return BaselineConfig(**d) if kind == "baseline" else ModelConfig(**d)


def save_checkpoint(model: nn.Module, path, extra: dict | None = None) -> None:
    state = model.state_dict()
    index = {}
    blobs = []
    offset = 0
    for name, tensor in state.items():
        t = tensor.detach().cpu()
        if t.dtype in (torch.float32, torch.float64):
            blob = t.to(torch.float32).numpy().astype("<f4").tobytes()
            dtype = "<f4"
        else:
            blob = t.numpy().astype("<i8").tobytes()
            dtype = "<i8"
        index[name] = {"dtype": dtype, "shape": list(t.shape), "offset": offset, "nbytes": len(blob)}
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"config": _config_dict(model.cfg), "tensors": index, "extra": extra or {}},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[nn.Module, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != CKPT_MAGIC:
            raise ModelConfigError(f"{path}: not a checkpoint file")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != CKPT_VERSION:
            raise ModelConfigError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len))
        data = fh.read()
    cfg = config_from_dict(header["config"])
    model = build_model(cfg, seed=0)
    state = {}
    for name, meta in header["tensors"].items():
        raw = data[meta["offset"] : meta["offset"] + meta["nbytes"]]
        arr = np.frombuffer(raw, dtype=meta["dtype"]).reshape(meta["shape"]).copy()
        state[name] = torch.from_numpy(arr)
    model.load_state_dict(state)
    model.eval()
    return model, header.get("extra", {})
