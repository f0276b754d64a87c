"""The conditional diffusion transformer.

Four modality slots (PPG, ECG, BP, AM) are encoded by per-modality
multi-scale convolutions into a shared token sequence of shape
(k*L, C). A stack of gated transformer modules with a task-specific
additive attention mask routes information from condition slots into
the generation slot; residual/skip aggregation feeds a per-modality
decoder. The AM slot owns an encoder but no decoder: at decode time it
binds, by reference, to the decoder of the task's target modality.

Checkpoints use a self-describing container (magic ``UCKPT1``): a JSON
header with the config and tensor directory, then raw little-endian
float32 tensor data.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import FormatError, NonFiniteSignalError, ParameterError, TaskError
from .tasks import Modality, N_SLOTS, SlotRole, TaskSpec, assign_slots

CHECKPOINT_MAGIC = b"UCKPT1"


@dataclass(frozen=True)
class ModelConfig:
    L: int = 128
    C: int = 48
    n_modules: int = 5
    n_heads: int = 4
    kernel_sizes: tuple[int, ...] = (1, 3, 5, 7, 9, 11)
    n_diffusion_steps: int = 50
    neg_mask_value: float = -1e9
    k: int = N_SLOTS

    def __post_init__(self):
        if self.k != N_SLOTS:
            raise ParameterError(f"k is fixed at {N_SLOTS} slots, got {self.k}")
        if self.L < 1:
            raise ParameterError(f"L must be >= 1, got {self.L}")
        if self.C % self.n_heads != 0:
            raise ParameterError(
                f"C={self.C} must be divisible by n_heads={self.n_heads}"
            )
        if self.C % len(self.kernel_sizes) != 0:
            raise ParameterError(
                f"C={self.C} must be divisible by the {len(self.kernel_sizes)} kernel sizes"
            )
        if any(ks < 1 or ks % 2 == 0 for ks in self.kernel_sizes):
            raise ParameterError(
                f"kernel sizes must be odd and positive for same-padding, got {self.kernel_sizes}"
            )
        if self.n_modules < 1:
            raise ParameterError(f"n_modules must be >= 1, got {self.n_modules}")
        if self.n_diffusion_steps < 1:
            raise ParameterError("n_diffusion_steps must be >= 1")
        if self.neg_mask_value > -1e9:
            raise ParameterError(
                f"neg_mask_value must be <= -1e9, got {self.neg_mask_value}"
            )

    @property
    def d_head(self) -> int:
        return self.C // self.n_heads


def build_attention_mask(
    task: TaskSpec, config: ModelConfig, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """Dense (kL, kL) additive mask: 0 on allowed interactions, a large
    negative elsewhere. Allowed blocks: each condition with itself, the
    generation slot with itself, and the generation slot reading every
    condition. Conditions never read each other or the generation slot.
    """
    roles = assign_slots(task)
    gen = [s for s, r in roles.items() if r is SlotRole.GENERATION]
    conds = [
        s
        for s, r in roles.items()
        if r in (SlotRole.CONDITION_CLEAN, SlotRole.CONDITION_DEGRADED)
    ]
    if len(gen) != 1:
        raise TaskError(f"task {task.name()} has {len(gen)} generation slots")
    g = gen[0]
    L = config.L
    mask = torch.full(
        (config.k * L, config.k * L), config.neg_mask_value, dtype=dtype
    )

    def rows(slot: Modality) -> slice:
        return slice(int(slot) * L, (int(slot) + 1) * L)

    for c in conds:
        mask[rows(c), rows(c)] = 0.0
    mask[rows(g), rows(g)] = 0.0
    for c in conds:
        mask[rows(g), rows(c)] = 0.0
    return mask


class MultiScaleEncoder(nn.Module):
    """Parallel 1D convolutions at several kernel sizes, stride 1,
    same-padding; outputs concatenated along channels to width C."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        per_kernel = config.C // len(config.kernel_sizes)
        self.convs = nn.ModuleList(
            nn.Conv1d(1, per_kernel, ks, padding=ks // 2)
            for ks in config.kernel_sizes
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, L) -> (B, L, C)
        h = x.unsqueeze(1)
        feats = torch.cat([conv(h) for conv in self.convs], dim=1)
        return feats.transpose(1, 2)


class GatedTransformerModule(nn.Module):
    """Masked multi-head attention followed by a time-conditioned gated
    unit; emits a residual update and a skip contribution."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        C = config.C
        self.n_heads = config.n_heads
        self.d_head = config.d_head
        self.w_q = nn.Linear(C, C)
        self.w_k = nn.Linear(C, C)
        self.w_v = nn.Linear(C, C)
        # default Linear init leaves QK logits so small that attention
        # starts uniform and cross-slot alignment learns glacially under
        # SGD; widening q/k breaks that degeneracy
        with torch.no_grad():
            self.w_q.weight.mul_(4.0)
            self.w_k.weight.mul_(4.0)
        self.out_proj = nn.Linear(C, C)
        self.f1 = nn.Linear(C, 2 * C)
        self.f2 = nn.Linear(C, 2 * C)

    def forward(
        self,
        h: torch.Tensor,  # (B, kL, C)
        mask: torch.Tensor,  # (kL, kL)
        d_emb: torch.Tensor,  # (B, 1, C)
        t_emb: torch.Tensor,  # (1, kL, 2C)
    ) -> tuple[torch.Tensor, torch.Tensor]:
        B, T, C = h.shape
        x = h + d_emb
        q = self.w_q(x).view(B, T, self.n_heads, self.d_head).transpose(1, 2)
        k = self.w_k(x).view(B, T, self.n_heads, self.d_head).transpose(1, 2)
        v = self.w_v(x).view(B, T, self.n_heads, self.d_head).transpose(1, 2)
        # scores = (q / sqrt(d)) k^T + mask, fused so the (T, T) score
        # tensor is written once
        q = q.reshape(-1, T, self.d_head) / math.sqrt(self.d_head)
        k = k.reshape(-1, T, self.d_head)
        scores = torch.baddbmm(mask.unsqueeze(0), q, k.transpose(-2, -1))
        attn = torch.softmax(scores, dim=-1)
        ctx = attn @ v.reshape(-1, T, self.d_head)
        ctx = ctx.view(B, self.n_heads, T, self.d_head).transpose(1, 2).reshape(B, T, C)
        y = self.f1(self.out_proj(ctx)) + t_emb
        h1, h2 = y.chunk(2, dim=-1)
        gated = torch.tanh(h1) * torch.sigmoid(h2)
        r, s = self.f2(gated).chunk(2, dim=-1)
        return h + r, s


class UniCardioNet(nn.Module):
    """End-to-end noise predictor over the four-slot token layout."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        C = config.C
        self.encoders = nn.ModuleList(
            MultiScaleEncoder(config) for _ in range(config.k)
        )
        self.diffusion_embedding = nn.Embedding(config.n_diffusion_steps + 1, C)
        nn.init.normal_(self.diffusion_embedding.weight, std=0.1)
        self.time_proj = nn.Linear(C, 2 * C)
        self.register_buffer("time_base", _sinusoid_table(config.L, C))
        self.modules_ = nn.ModuleList(
            GatedTransformerModule(config) for _ in range(config.n_modules)
        )
        self.f3 = nn.Linear(C, C)
        # one decoder per signal modality, indexed by slot; AM has none
        self.decoders = nn.ModuleList(
            nn.Sequential(nn.Linear(C, C), nn.ReLU(), nn.Linear(C, 1))
            for _ in range(config.k - 1)
        )

    def time_embedding(self) -> torch.Tensor:
        """(L, 2C) learnable projection of the sinusoidal position code;
        the same block is reused for every modality slot."""
        return self.time_proj(self.time_base)

    def bound_decoder(self, task: TaskSpec) -> nn.Module:
        """The decoder the generation slot uses: always the target
        modality's. For restoration the AM slot inherits it by
        reference, so the binding is exact by construction."""
        return self.decoders[int(task.target)]

    def forward(
        self,
        task: TaskSpec,
        slot_inputs: torch.Tensor,  # (B, k, L) or (k, L)
        t,  # int or (B,) long tensor
        disable_mask: bool = False,
    ) -> torch.Tensor:
        cfg = self.config
        squeeze = slot_inputs.dim() == 2
        if squeeze:
            slot_inputs = slot_inputs.unsqueeze(0)
        B, k, L = slot_inputs.shape
        if k != cfg.k or L != cfg.L:
            raise ParameterError(
                f"slot inputs of shape {(k, L)} do not match config ({cfg.k}, {cfg.L})"
            )
        dtype = self.time_base.dtype
        slot_inputs = slot_inputs.to(dtype)
        if not isinstance(t, torch.Tensor):
            t = torch.as_tensor(t, dtype=torch.long)
        if t.dim() == 0:
            t = t.expand(B)
        if torch.any(t < 0) or torch.any(t > cfg.n_diffusion_steps):
            raise ParameterError("diffusion step out of range")

        # Tokens of non-participating slots are unreachable: the mask bars
        # every allowed pair from touching them and only generation rows
        # are decoded. Dropping them up front gives the same values while
        # attention cost scales with the task's slot count.
        if disable_mask:
            active = list(range(cfg.k))
            mask = torch.zeros(cfg.k * L, cfg.k * L, dtype=dtype)
        else:
            roles = assign_slots(task)
            active = sorted(
                int(s) for s, r in roles.items() if r is not SlotRole.BLOCKED
            )
            full = build_attention_mask(task, cfg, dtype=dtype)
            token_idx = torch.cat(
                [torch.arange(s * L, (s + 1) * L) for s in active]
            )
            mask = full[token_idx][:, token_idx]
        feats = torch.cat(
            [self.encoders[i](slot_inputs[:, i, :]) for i in active], dim=1
        )
        d_emb = self.diffusion_embedding(t).unsqueeze(1)
        t_emb = self.time_embedding().repeat(len(active), 1).unsqueeze(0)

        h = feats
        skip_sum = torch.zeros_like(h)
        for i, module in enumerate(self.modules_):
            h, s = module(h, mask, d_emb, t_emb)
            if not torch.isfinite(h).all():
                raise NonFiniteSignalError(
                    f"non-finite activation leaving module {i} (task {task.name()})"
                )
            skip_sum = skip_sum + s
        hs = self.f3(skip_sum)
        g = active.index(int(task.generation_slot))
        rows = hs[:, g * L : (g + 1) * L, :]
        eps_hat = self.bound_decoder(task)(rows).squeeze(-1)
        if not torch.isfinite(eps_hat).all():
            raise NonFiniteSignalError(f"non-finite prediction (task {task.name()})")
        return eps_hat.squeeze(0) if squeeze else eps_hat


def _sinusoid_table(L: int, C: int) -> torch.Tensor:
    """Classic sinusoidal position code over sample indices 0..L-1."""
    pos = torch.arange(L, dtype=torch.float64).unsqueeze(1)
    i = torch.arange(0, C, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / C)
    table = torch.zeros(L, C, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : C // 2])
    return table.to(torch.float32)


def encode_modality(model: UniCardioNet, x: torch.Tensor, modality: Modality) -> torch.Tensor:
    """Features (L, C) for one modality's input vector."""
    if x.dim() == 1:
        return model.encoders[int(modality)](x.unsqueeze(0)).squeeze(0)
    return model.encoders[int(modality)](x)


def model_forward(task: TaskSpec, slot_inputs, t, params: UniCardioNet) -> torch.Tensor:
    """Functional entry point mirroring the module call."""
    if not isinstance(slot_inputs, torch.Tensor):
        slot_inputs = torch.as_tensor(np.asarray(slot_inputs))
    return params(task, slot_inputs, t)


def save_checkpoint(model: UniCardioNet, path, extra: dict | None = None) -> None:
    """Write the UCKPT1 container: JSON header (config + tensor
    directory + extra) followed by named float32 tensors."""
    names = [n for n, _ in model.named_parameters()]
    tensors = dict(model.named_parameters())
    header = {
        "format_version": 1,
        "config": asdict(model.config),
        "tensors": [
            {"name": n, "shape": list(tensors[n].shape)} for n in names
        ],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            arr = tensors[n].detach().cpu().numpy().astype("<f4")
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path) -> tuple[UniCardioNet, dict]:
    """Rebuild the model from a UCKPT1 file; returns (model, extra)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"unreadable checkpoint header: {exc}") from exc
        if header.get("format_version") != 1:
            raise FormatError(f"unsupported format version {header.get('format_version')}")
        cfg_dict = dict(header["config"])
        cfg_dict["kernel_sizes"] = tuple(cfg_dict["kernel_sizes"])
        config = ModelConfig(**cfg_dict)
        model = UniCardioNet(config)
        params = dict(model.named_parameters())
        listed = [entry["name"] for entry in header["tensors"]]
        if set(listed) != set(params):
            raise FormatError("checkpoint tensor directory does not match the model")
        with torch.no_grad():
            for entry in header["tensors"]:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(count * 4)
                if len(raw) != count * 4:
                    raise FormatError(f"truncated tensor data for {entry['name']}")
                arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
                param = params[entry["name"]]
                if tuple(param.shape) != shape:
                    raise FormatError(
                        f"shape mismatch for {entry['name']}: {shape} vs {tuple(param.shape)}"
                    )
                param.copy_(torch.from_numpy(arr.copy()))
        if fh.read(1):
            raise FormatError("trailing bytes after checkpoint payload")
    return model, header.get("extra", {})
