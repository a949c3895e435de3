"""Two-stage network: windowed convolutional encoder and sequential transformer head.

Step 1 trains the encoder on independent 30-second windows (residual blocks
with strided downsampling, then fully connected layers yielding a feature
vector and a per-window logit). Step 2 freezes the encoder and trains a
transformer over the ordered window features, pooling to one recording-level
logit.

Checkpoints are a text manifest (config and a name -> shape -> offset table)
next to a contiguous little-endian float32 blob; round trips are bit-exact.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import AllMasked, IncompatibleCheckpoint, ShapeMismatch
from .sampling import STEP2_COUNT, WINDOW_LEN

CHECKPOINT_MAGIC = "deephhf-checkpoint v1"


@dataclass(frozen=True)
class ModelConfig:
    enc_first_kernel: int = 7
    enc_filters: int = 64            # convolution filter count, shared by all blocks
    enc_strides: tuple = (4, 4, 5, 8)
    dropout_p: float = 0.1
    feat_dim: int = 128
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 3
    ff_dim: int = 256
    seq_len: int = STEP2_COUNT
    input_scale_uv: float = 5000.0   # dynamic range used to scale raw microvolts

    def __post_init__(self):
        prod = math.prod(self.enc_strides)
        if WINDOW_LEN % prod != 0:
            raise ValueError(f"stride product {prod} must divide {WINDOW_LEN}")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if not (0.0 <= self.dropout_p < 1.0):
            raise ValueError("dropout_p must be in [0, 1)")

    @property
    def encoded_steps(self) -> int:
        return WINDOW_LEN // math.prod(self.enc_strides)


class ResidualUnit(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv1d(channels, channels, 1)

    def forward(self, x):
        h = self.conv1(F.elu(x))
        h = self.conv2(F.elu(h))
        return x + h


class DownsampleConv(nn.Module):
    """Strided conv with kernel 2*stride; stride-length asymmetric zero pad
    keeps the output length exactly input / stride for odd strides too."""

    def __init__(self, channels: int, stride: int):
        super().__init__()
        self.stride = stride
        self.conv = nn.Conv1d(channels, channels, 2 * stride, stride=stride)

    def forward(self, x):
        s = self.stride
        x = F.pad(x, (s - s // 2, s // 2))
        return self.conv(x)


class WindowEncoder(nn.Module):
    """30-second window -> (feature vector, window logit)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.enc_filters
        self.conv_in = nn.Conv1d(1, c, config.enc_first_kernel,
                                 padding=config.enc_first_kernel // 2)
        self.blocks = nn.ModuleList()
        for s in config.enc_strides:
            self.blocks.append(nn.ModuleList([ResidualUnit(c), DownsampleConv(c, s)]))
        flat = c * config.encoded_steps
        self.fc1 = nn.Linear(flat, config.feat_dim)
        self.fc2 = nn.Linear(config.feat_dim, config.feat_dim)
        self.cls1 = nn.Linear(config.feat_dim, config.feat_dim)
        self.cls2 = nn.Linear(config.feat_dim, 1)
        self.dropout = nn.Dropout(config.dropout_p)

    def forward(self, windows: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if windows.dim() != 2 or windows.shape[1] != WINDOW_LEN:
            raise ShapeMismatch(f"expected (n, {WINDOW_LEN}), got {tuple(windows.shape)}")
        x = (windows / self.config.input_scale_uv).unsqueeze(1)
        x = self.conv_in(x)
        for res, down in self.blocks:
            x = down(res(x))
        x = F.elu(x).flatten(1)
        x = self.dropout(x)
        features = self.fc2(F.elu(self.fc1(x)))
        h = self.dropout(F.elu(self.cls1(self.dropout(features))))
        logits = self.cls2(h).squeeze(-1)
        return features, logits


def sinusoidal_encoding(seq_len: int, d_model: int) -> torch.Tensor:
    position = torch.arange(seq_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64)
                    * (-math.log(10000.0) / d_model))
    pe = torch.zeros(seq_len, d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div[: d_model // 2])
    return pe.to(torch.float32)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x, key_mask=None, capture=False):
        b, s, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)

        def split(t):
            return t.view(b, s, self.n_heads, self.d_head).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if key_mask is not None:
            scores = scores.masked_fill(key_mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        if capture and attn.requires_grad:
            attn.retain_grad()
        out = (attn @ v).transpose(1, 2).reshape(b, s, d)
        return self.out(out), attn


class TransformerLayer(nn.Module):
    """Post-norm encoder layer: self-attention and GELU feed-forward."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.attn = SelfAttention(config.d_model, config.n_heads)
        self.norm1 = nn.LayerNorm(config.d_model)
        self.norm2 = nn.LayerNorm(config.d_model)
        self.ff1 = nn.Linear(config.d_model, config.ff_dim)
        self.ff2 = nn.Linear(config.ff_dim, config.d_model)
        self.dropout = nn.Dropout(config.dropout_p)

    def forward(self, x, key_mask=None, capture=False):
        h, attn = self.attn(x, key_mask, capture)
        x = self.norm1(x + self.dropout(h))
        h = self.ff2(F.gelu(self.ff1(x)))
        x = self.norm2(x + self.dropout(h))
        return x, attn


class SequentialHead(nn.Module):
    """Ordered window features -> one recording-level logit.

    Adds fixed sinusoidal positional encoding, runs the transformer layers
    with padding positions excluded from attention, mean-pools the unmasked
    positions, and finishes with two fully connected layers.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.in_proj = nn.Linear(config.feat_dim, config.d_model)
        self.register_buffer("pos", sinusoidal_encoding(config.seq_len, config.d_model))
        self.layers = nn.ModuleList(TransformerLayer(config) for _ in range(config.n_layers))
        self.out1 = nn.Linear(config.d_model, config.d_model)
        self.out2 = nn.Linear(config.d_model, 1)
        self.dropout = nn.Dropout(config.dropout_p)
        self.last_attention: list[torch.Tensor] | None = None

    def forward(self, features: torch.Tensor, pad_mask: torch.Tensor | None = None,
                capture_attention: bool = False) -> torch.Tensor:
        squeeze = features.dim() == 2
        if squeeze:
            features = features.unsqueeze(0)
            if pad_mask is not None:
                pad_mask = pad_mask.unsqueeze(0)
        b, s, f = features.shape
        if s != self.config.seq_len or f != self.config.feat_dim:
            raise ShapeMismatch(
                f"expected (*, {self.config.seq_len}, {self.config.feat_dim}), got {tuple(features.shape)}"
            )
        if pad_mask is not None and bool(pad_mask.all(dim=1).any()):
            raise AllMasked("a sequence consists entirely of padding")

        x = self.in_proj(features) + self.pos.to(features.dtype)
        x = self.dropout(x)
        attns = []
        for layer in self.layers:
            x, attn = layer(x, pad_mask, capture_attention)
            attns.append(attn)
        self.last_attention = attns if capture_attention else None

        if pad_mask is None:
            pooled = x.mean(dim=1)
        else:
            keep = (~pad_mask).to(x.dtype).unsqueeze(-1)
            pooled = (x * keep).sum(dim=1) / keep.sum(dim=1)
        h = self.dropout(F.gelu(self.out1(pooled)))
        logit = self.out2(h).squeeze(-1)
        return logit.squeeze(0) if squeeze else logit


def weighted_bce(logits: torch.Tensor, labels: torch.Tensor, pos_weight: float = 1.0) -> torch.Tensor:
    """Class-weighted binary cross-entropy on logits.

    Uses softplus for both branches so extreme logits stay finite, and
    accumulates the batch mean in float64.
    """
    if pos_weight <= 0:
        raise ValueError("pos_weight must be > 0")
    labels = labels.to(logits.dtype)
    per = pos_weight * labels * F.softplus(-logits) + (1.0 - labels) * F.softplus(logits)
    return per.to(torch.float64).mean()


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def init_parameters(module: nn.Module, seed: int):
    """Uniform fan-in initialization, deterministic in module definition order."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.Linear)):
            fan_in = m.weight.shape[1] * (m.weight.shape[2] if m.weight.dim() == 3 else 1)
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=gen)
        elif isinstance(m, nn.LayerNorm):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.fill_(0.0)
    return module


def build_encoder(config: ModelConfig, seed: int = 0) -> WindowEncoder:
    return init_parameters(WindowEncoder(config), seed)


def build_head(config: ModelConfig, seed: int = 0) -> SequentialHead:
    return init_parameters(SequentialHead(config), seed + 1)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict                  # name -> float32 ndarray
    meta: dict = field(default_factory=dict)

    def has_head(self) -> bool:
        return any(name.startswith("head.") for name in self.params)


def _config_to_lines(config: ModelConfig):
    for key, value in asdict(config).items():
        if isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        yield f"{key}={value}"


def _config_from_fields(fields: dict) -> ModelConfig:
    kwargs = {}
    for key, value in fields.items():
        if key == "enc_strides":
            kwargs[key] = tuple(int(v) for v in value.split(","))
        elif key in ("dropout_p", "input_scale_uv"):
            kwargs[key] = float(value)
        else:
            kwargs[key] = int(value)
    return ModelConfig(**kwargs)


def save_checkpoint(path, config: ModelConfig, encoder: WindowEncoder,
                    head: SequentialHead | None = None, meta: dict | None = None) -> Path:
    """Write manifest at `path` and the float32 blob at `path + .bin`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    named = [("encoder." + n, p) for n, p in encoder.named_parameters()]
    if head is not None:
        named += [("head." + n, p) for n, p in head.named_parameters()]
    lines = [CHECKPOINT_MAGIC, "[config]"]
    lines.extend(_config_to_lines(config))
    lines.append("[meta]")
    for key, value in sorted((meta or {}).items()):
        lines.append(f"{key}={value}")
    lines.append("[params]")
    blobs = []
    offset = 0
    for name, p in named:
        arr = p.detach().cpu().to(torch.float32).numpy()
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"{name} {shape} {offset}")
        blobs.append(arr.astype("<f4").tobytes())
        offset += arr.size
    path.write_text("\n".join(lines) + "\n")
    Path(str(path) + ".bin").write_bytes(b"".join(blobs))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise IncompatibleCheckpoint(f"checkpoint not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise IncompatibleCheckpoint(f"{path.name}: not a checkpoint manifest")
    section = None
    config_fields, meta, table = {}, {}, []
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if line in ("[config]", "[meta]", "[params]"):
            section = line
            continue
        if section == "[config]":
            key, value = line.split("=", 1)
            config_fields[key] = value
        elif section == "[meta]":
            key, value = line.split("=", 1)
            meta[key] = value
        elif section == "[params]":
            name, shape, offset = line.rsplit(" ", 2)
            table.append((name, tuple(int(d) for d in shape.split(",")), int(offset)))
    try:
        config = _config_from_fields(config_fields)
    except (KeyError, TypeError, ValueError) as exc:
        raise IncompatibleCheckpoint(f"{path.name}: bad config ({exc})") from exc
    blob = np.frombuffer(Path(str(path) + ".bin").read_bytes(), dtype="<f4")
    params = {}
    for name, shape, offset in table:
        size = int(np.prod(shape)) if shape else 1
        arr = blob[offset:offset + size].reshape(shape).astype(np.float32)
        if arr.size != size:
            raise IncompatibleCheckpoint(f"{path.name}: blob truncated at {name}")
        if not np.all(np.isfinite(arr)):
            raise IncompatibleCheckpoint(f"{path.name}: non-finite values in {name}")
        params[name] = arr
    return Checkpoint(config=config, params=params, meta=meta)


def _load_into(module: nn.Module, params: dict, prefix: str):
    state = {}
    for name, tensor in module.state_dict().items():
        if name == "pos":      # fixed buffer, not persisted
            state[name] = tensor
            continue
        key = prefix + name
        if key not in params:
            raise IncompatibleCheckpoint(f"missing parameter {key}")
        arr = params[key]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise IncompatibleCheckpoint(
                f"{key}: shape {arr.shape} != expected {tuple(tensor.shape)}"
            )
        state[name] = torch.from_numpy(arr.copy())
    module.load_state_dict(state)
    return module


def encoder_from_checkpoint(ckpt: Checkpoint) -> WindowEncoder:
    encoder = WindowEncoder(ckpt.config)
    if not any(k.startswith("encoder.") for k in ckpt.params):
        raise IncompatibleCheckpoint("checkpoint holds no encoder parameters")
    return _load_into(encoder, ckpt.params, "encoder.")


def head_from_checkpoint(ckpt: Checkpoint) -> SequentialHead:
    if not ckpt.has_head():
        raise IncompatibleCheckpoint("checkpoint holds no head parameters")
    head = SequentialHead(ckpt.config)
    return _load_into(head, ckpt.params, "head.")
