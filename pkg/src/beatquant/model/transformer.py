"""Small T5-style encoder-decoder with bucketed relative position bias."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..tokenizer import PAD, VOCAB_SIZE


@dataclass
class ModelConfig:
    layers: int = 2
    heads: int = 4
    d_model: int = 128
    d_kv: int = 64
    d_ff: int = 1024
    vocab: int = VOCAB_SIZE
    dropout: float = 0.1
    num_buckets: int = 32
    max_distance: int = 128
    tie_embeddings: bool = False
    eps: float = 1e-6

    def __post_init__(self):
        for name in ("layers", "heads", "d_model", "d_kv", "d_ff", "vocab", "num_buckets", "max_distance"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def relative_position_bucket(
    relative_position: torch.Tensor,
    bidirectional: bool,
    num_buckets: int = 32,
    max_distance: int = 128,
) -> torch.Tensor:
    """Map key-minus-query offsets to buckets: exact when small, log-spaced beyond."""
    ret = torch.zeros_like(relative_position)
    if bidirectional:
        num_buckets //= 2
        ret += (relative_position > 0).long() * num_buckets
        n = relative_position.abs()
    else:
        n = (-relative_position).clamp(min=0)
    max_exact = num_buckets // 2
    is_small = n < max_exact
    # clamp before log so n=0 never reaches it
    large = max_exact + (
        torch.log(n.clamp(min=1).float() / max_exact)
        / math.log(max_distance / max_exact)
        * (num_buckets - max_exact)
    ).long()
    large = large.clamp(max=num_buckets - 1)
    return ret + torch.where(is_small, n, large)


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.eps = eps

    def forward(self, x):
        var = x.pow(2).mean(-1, keepdim=True)
        return self.weight * x * torch.rsqrt(var + self.eps)


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig, bias: str | None = None):
        """``bias`` is None, "bidirectional" or "causal" (relative position bias owner)."""
        super().__init__()
        inner = cfg.heads * cfg.d_kv
        self.heads, self.d_kv = cfg.heads, cfg.d_kv
        self.q = nn.Linear(cfg.d_model, inner, bias=False)
        self.k = nn.Linear(cfg.d_model, inner, bias=False)
        self.v = nn.Linear(cfg.d_model, inner, bias=False)
        self.o = nn.Linear(inner, cfg.d_model, bias=False)
        self.dropout = nn.Dropout(cfg.dropout)
        self.bias_kind = bias
        self.cfg = cfg
        if bias is not None:
            self.relative_bias = nn.Embedding(cfg.num_buckets, cfg.heads)

    def position_bias(self, q_len: int, k_len: int, device=None) -> torch.Tensor:
        q_pos = torch.arange(q_len, device=device)[:, None]
        k_pos = torch.arange(k_len, device=device)[None, :]
        buckets = relative_position_bucket(
            k_pos - q_pos,
            bidirectional=self.bias_kind == "bidirectional",
            num_buckets=self.cfg.num_buckets,
            max_distance=self.cfg.max_distance,
        )
        # (1, heads, q, k)
        return self.relative_bias(buckets).permute(2, 0, 1).unsqueeze(0)

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.d_kv).transpose(1, 2)

    def forward(self, x, kv=None, bias=None, mask=None):
        kv = x if kv is None else kv
        q, k, v = self._split(self.q(x)), self._split(self.k(kv)), self._split(self.v(kv))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_kv)
        if bias is not None:
            scores = scores + bias
        if mask is not None:
            scores = scores.masked_fill(~mask, torch.finfo(scores.dtype).min)
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(x.shape[0], x.shape[1], -1)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.wi = nn.Linear(cfg.d_model, cfg.d_ff, bias=False)
        self.wo = nn.Linear(cfg.d_ff, cfg.d_model, bias=False)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x):
        return self.wo(self.dropout(F.relu(self.wi(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, has_bias: bool):
        super().__init__()
        self.norm1 = RMSNorm(cfg.d_model, cfg.eps)
        self.attn = Attention(cfg, "bidirectional" if has_bias else None)
        self.norm2 = RMSNorm(cfg.d_model, cfg.eps)
        self.ff = FeedForward(cfg)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, bias, mask):
        x = x + self.dropout(self.attn(self.norm1(x), bias=bias, mask=mask))
        return x + self.dropout(self.ff(self.norm2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig, has_bias: bool):
        super().__init__()
        self.norm1 = RMSNorm(cfg.d_model, cfg.eps)
        self.self_attn = Attention(cfg, "causal" if has_bias else None)
        self.norm2 = RMSNorm(cfg.d_model, cfg.eps)
        self.cross_attn = Attention(cfg)
        self.norm3 = RMSNorm(cfg.d_model, cfg.eps)
        self.ff = FeedForward(cfg)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, self_bias, self_mask, cross_mask):
        x = x + self.dropout(self.self_attn(self.norm1(x), bias=self_bias, mask=self_mask))
        x = x + self.dropout(self.cross_attn(self.norm2(x), kv=memory, mask=cross_mask))
        return x + self.dropout(self.ff(self.norm3(x)))


class Seq2Seq(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab, cfg.d_model)
        self.encoder = nn.ModuleList(EncoderLayer(cfg, i == 0) for i in range(cfg.layers))
        self.encoder_norm = RMSNorm(cfg.d_model, cfg.eps)
        self.decoder = nn.ModuleList(DecoderLayer(cfg, i == 0) for i in range(cfg.layers))
        self.decoder_norm = RMSNorm(cfg.d_model, cfg.eps)
        self.dropout = nn.Dropout(cfg.dropout)
        if not cfg.tie_embeddings:
            self.lm_head = nn.Linear(cfg.d_model, cfg.vocab, bias=False)
        self.reset_parameters()

    def reset_parameters(self):
        for module in self.modules():
            if isinstance(module, RMSNorm):
                nn.init.ones_(module.weight)
            elif isinstance(module, nn.Linear):
                nn.init.normal_(module.weight, std=module.in_features ** -0.5)
            elif isinstance(module, nn.Embedding):
                nn.init.normal_(module.weight, std=self.cfg.d_model ** -0.5)

    def encode(self, src: torch.Tensor):
        mask = (src != PAD)[:, None, None, :]
        x = self.dropout(self.embed(src))
        bias = self.encoder[0].attn.position_bias(src.shape[1], src.shape[1], src.device)
        for layer in self.encoder:
            x = layer(x, bias, mask)
        return self.dropout(self.encoder_norm(x)), mask

    def decode(self, dec_in: torch.Tensor, memory: torch.Tensor, memory_mask: torch.Tensor):
        n = dec_in.shape[1]
        causal = torch.ones(n, n, dtype=torch.bool, device=dec_in.device).tril()[None, None]
        bias = self.decoder[0].self_attn.position_bias(n, n, dec_in.device)
        x = self.dropout(self.embed(dec_in))
        for layer in self.decoder:
            x = layer(x, memory, bias, causal, memory_mask)
        x = self.dropout(self.decoder_norm(x))
        if self.cfg.tie_embeddings:
            return x @ self.embed.weight.t() * self.cfg.d_model ** -0.5
        return self.lm_head(x)

    def forward(self, src: torch.Tensor, tgt: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits (batch, target length, vocab)."""
        if src.dim() != 2 or tgt.dim() != 2 or src.shape[0] != tgt.shape[0]:
            raise ValueError(f"shape mismatch: source {tuple(src.shape)}, target {tuple(tgt.shape)}")
        memory, mask = self.encode(src)
        return self.decode(shift_right(tgt), memory, mask)


def shift_right(tgt: torch.Tensor) -> torch.Tensor:
    """Decoder input: PAD as start symbol followed by target[:-1]."""
    start = torch.full_like(tgt[:, :1], PAD)
    return torch.cat([start, tgt[:, :-1]], dim=1)


def sequence_loss(logits: torch.Tensor, target: torch.Tensor, pad_id: int = PAD) -> torch.Tensor:
    """Mean token cross-entropy over non-PAD target positions."""
    if logits.shape[:2] != target.shape:
        raise ValueError(f"logits {tuple(logits.shape)} do not match target {tuple(target.shape)}")
    if not (target != pad_id).any():
        raise ValueError("target batch contains only PAD tokens")
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), target.reshape(-1), ignore_index=pad_id)


def token_accuracy(logits: torch.Tensor, target: torch.Tensor, pad_id: int = PAD) -> tuple[int, int]:
    """(correct, total) teacher-forced argmax matches over non-PAD positions."""
    keep = target != pad_id
    correct = ((logits.argmax(-1) == target) & keep).sum().item()
    return int(correct), int(keep.sum().item())
