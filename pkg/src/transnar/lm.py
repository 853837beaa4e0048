"""Small decoder-only transformer with rotary positions.

Positions are passed in explicitly so that training can use randomized,
sorted position indices drawn from a range much longer than the sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .text import VOCAB

MAX_POSITION = 8192


class SequenceTooLongError(ValueError):
    pass


@dataclass
class LMConfig:
    vocab_size: int = len(VOCAB)
    width: int = 128
    layers: int = 6
    heads: int = 4
    ffn_mult: int = 4
    context: int = 512
    rope_base: float = 10000.0
    max_position: int = MAX_POSITION
    tie_embeddings: bool = False
    init_std: float = 0.02

    @property
    def head_dim(self) -> int:
        return self.width // self.heads


def sample_positions(seq_len: int, max_len: int = MAX_POSITION, rng=None, deterministic: bool = False) -> np.ndarray:
    """Sorted, unique positions for a sequence of ``seq_len`` tokens.

    Randomized mode draws a uniform random ``seq_len``-subset of
    ``[0, max_len)``; deterministic mode returns ``0..seq_len-1``.
    """
    if seq_len > max_len:
        raise ValueError(f"sequence length {seq_len} exceeds the position range {max_len}")
    if deterministic or seq_len == max_len:
        return np.arange(seq_len, dtype=np.int64)
    if rng is None:
        rng = np.random.default_rng()
    return np.sort(rng.choice(max_len, size=seq_len, replace=False)).astype(np.int64)


def rope_angles(positions: torch.Tensor, head_dim: int, base: float, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    inv_freq = 1.0 / (base ** (torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim))
    ang = positions.to(torch.float64)[..., None] * inv_freq
    return torch.cos(ang).to(dtype), torch.sin(ang).to(dtype)


def apply_rope(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    # x: (B, H, T, d); cos/sin: (B, T, d/2); rotates interleaved pairs
    cos, sin = cos[:, None], sin[:, None]
    x1, x2 = x[..., ::2], x[..., 1::2]
    return torch.stack([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1).flatten(-2)


def attend(q, k, v, allowed: torch.Tensor | None) -> torch.Tensor:
    """softmax(q k^T / sqrt(d)) v with disallowed entries given zero weight."""
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    if allowed is not None:
        # finfo.min rather than -inf keeps fully masked (padding) rows finite
        scores = scores.masked_fill(~allowed, torch.finfo(scores.dtype).min)
    return torch.softmax(scores, dim=-1) @ v


class SelfAttention(nn.Module):
    def __init__(self, cfg: LMConfig):
        super().__init__()
        self.cfg = cfg
        self.q = nn.Linear(cfg.width, cfg.width, bias=False)
        self.k = nn.Linear(cfg.width, cfg.width, bias=False)
        self.v = nn.Linear(cfg.width, cfg.width, bias=False)
        self.o = nn.Linear(cfg.width, cfg.width, bias=False)

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.cfg.heads, self.cfg.head_dim).transpose(1, 2)

    def forward(self, x, cos, sin, allowed, cache: dict | None = None):
        q = apply_rope(self._split(self.q(x)), cos, sin)
        k = apply_rope(self._split(self.k(x)), cos, sin)
        v = self._split(self.v(x))
        if cache is not None:
            if "k" in cache:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        out = attend(q, k, v, None if allowed is None else allowed[:, None])
        b, _, t, _ = out.shape
        return self.o(out.transpose(1, 2).reshape(b, t, self.cfg.width))


class FeedForward(nn.Module):
    def __init__(self, width: int, mult: int):
        super().__init__()
        self.fc1 = nn.Linear(width, mult * width)
        self.fc2 = nn.Linear(mult * width, width)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    def __init__(self, cfg: LMConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.width)
        self.attn = SelfAttention(cfg)
        self.norm2 = nn.LayerNorm(cfg.width)
        self.ffn = FeedForward(cfg.width, cfg.ffn_mult)

    def forward(self, x, cos, sin, allowed, cache=None):
        x = x + self.attn(self.norm1(x), cos, sin, allowed, cache)
        return x + self.ffn(self.norm2(x))


LayerHook = Callable[[int, torch.Tensor], torch.Tensor]


class LanguageModel(nn.Module):
    def __init__(self, cfg: LMConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or LMConfig()
        if cfg.width % cfg.heads or cfg.head_dim % 2:
            raise ValueError("width must split into an even head dimension")
        self.embed = nn.Embedding(cfg.vocab_size, cfg.width)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.layers))
        self.norm = nn.LayerNorm(cfg.width)
        self.head = None if cfg.tie_embeddings else nn.Linear(cfg.width, cfg.vocab_size, bias=False)
        self.reset_parameters()

    def reset_parameters(self):
        std = self.cfg.init_std
        for name, p in self.named_parameters():
            if name.endswith("bias"):
                nn.init.zeros_(p)
            elif "norm" in name:
                nn.init.ones_(p)
            elif name.endswith("o.weight") or name.endswith("fc2.weight"):
                nn.init.normal_(p, std=std / math.sqrt(2 * self.cfg.layers))
            else:
                nn.init.normal_(p, std=std)

    def forward(
        self,
        tokens: torch.Tensor,
        positions: torch.Tensor | None = None,
        allowed: torch.Tensor | None = None,
        hook: LayerHook | None = None,
        cache: list[dict] | None = None,
    ) -> torch.Tensor:
        """Logits of shape (B, T, |V|).

        ``allowed`` is a (B, T, T_total) boolean attention mask; by default a
        causal mask over the given tokens. ``hook(i, x)`` runs after block i.
        ``cache`` (one dict per block) enables incremental decoding.
        """
        b, t = tokens.shape
        past = cache[0]["k"].shape[2] if cache and "k" in cache[0] else 0
        if past + t > self.cfg.context:
            raise SequenceTooLongError(f"sequence of {past + t} tokens exceeds context {self.cfg.context}")
        if positions is None:
            positions = torch.arange(past, past + t).expand(b, t)
        if allowed is None:
            allowed = causal_mask(t, past, tokens.device).expand(b, t, past + t)
        x = self.embed(tokens)
        cos, sin = rope_angles(positions, self.cfg.head_dim, self.cfg.rope_base, x.dtype)
        for i, block in enumerate(self.blocks):
            x = block(x, cos, sin, allowed, None if cache is None else cache[i])
            if hook is not None:
                x = hook(i, x)
        x = self.norm(x)
        weight = self.embed.weight if self.head is None else self.head.weight
        return x @ weight.T


def causal_mask(t: int, past: int = 0, device=None) -> torch.Tensor:
    q = torch.arange(past, past + t, device=device)[:, None]
    k = torch.arange(past + t, device=device)[None, :]
    return (k <= q)[None]


def token_loss(logits: torch.Tensor, tokens: torch.Tensor, loss_mask: torch.Tensor) -> torch.Tensor:
    """Next-token cross-entropy; ``loss_mask[b, t]`` selects predicted tokens t >= 1."""
    pred = logits[:, :-1]
    tgt = tokens[:, 1:]
    m = loss_mask[:, 1:].to(pred.dtype)
    nll = F.cross_entropy(pred.reshape(-1, pred.shape[-1]), tgt.reshape(-1), reduction="none")
    return (nll * m.reshape(-1)).sum() / m.sum().clamp_min(1)


def lm_forward(model: LanguageModel, tokens, positions=None) -> torch.Tensor:
    tokens = torch.as_tensor(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None]
    if positions is not None:
        positions = torch.as_tensor(positions).reshape(tokens.shape)
    return model(tokens, positions)
