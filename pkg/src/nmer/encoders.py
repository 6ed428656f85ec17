"""Utterance-level encoders and the specificity / invariance heads."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .noise import MODALITIES


@dataclass
class EncoderConfig:
    dim_a: int = 130
    dim_v: int = 342
    dim_l: int = 1024
    hidden: int = 128  # LSTM / TextCNN output width
    kernel_sizes: tuple[int, ...] = (3, 4, 5)
    textcnn_merge: str = "sum"  # or "concat"
    specific_dim: int = 128  # per modality; h' is 3x this
    invariant_dim: int = 128
    invariant_hidden: int = 256
    dropout: float = 0.1

    def __post_init__(self):
        self.kernel_sizes = tuple(self.kernel_sizes)
        if self.textcnn_merge not in ("sum", "concat"):
            raise ValueError(f"textcnn_merge must be 'sum' or 'concat', got {self.textcnn_merge!r}")


def masked_max(x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
    """Max over time (dim 1) restricted to the first ``lengths[b]`` frames."""
    if torch.any(lengths < 1):
        raise ValueError("zero-length sequence in batch")
    mask = torch.arange(x.shape[1], device=x.device)[None, :] < lengths[:, None]
    x = x.masked_fill(~mask[:, :, None], float("-inf"))
    return x.max(dim=1).values


class LSTMEncoder(nn.Module):
    """Unidirectional LSTM with masked max-pooling; padding past the true length never leaks in."""

    def __init__(self, input_dim: int, hidden: int = 128):
        super().__init__()
        self.rnn = nn.LSTM(input_dim, hidden, batch_first=True)

    def forward(self, x, lengths):
        out, _ = self.rnn(x)
        return masked_max(out, lengths)


class TextCNN(nn.Module):
    def __init__(self, input_dim: int, hidden: int = 128, kernel_sizes=(3, 4, 5), merge: str = "sum"):
        super().__init__()
        self.kernel_sizes = tuple(kernel_sizes)
        self.merge = merge
        self.convs = nn.ModuleList(nn.Conv1d(input_dim, hidden, k) for k in self.kernel_sizes)
        self.proj = nn.Linear(hidden * len(self.kernel_sizes), hidden) if merge == "concat" else None

    def forward(self, x, lengths):
        x = x.transpose(1, 2)  # (B, D, L)
        pooled = []
        for k, conv in zip(self.kernel_sizes, self.convs):
            # right-pad with zeros so every window starting inside the sequence exists
            y = F.relu(conv(F.pad(x, (0, k - 1))))
            pooled.append(masked_max(y.transpose(1, 2), lengths))
        if self.merge == "sum":
            return torch.stack(pooled).sum(0)
        return self.proj(torch.cat(pooled, dim=-1))


class ModalityEncoders(nn.Module):
    """Acoustic and visual LSTMs, lexical TextCNN; each yields a ``hidden``-wide vector."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.a = LSTMEncoder(cfg.dim_a, cfg.hidden)
        self.v = LSTMEncoder(cfg.dim_v, cfg.hidden)
        self.l = TextCNN(cfg.dim_l, cfg.hidden, cfg.kernel_sizes, cfg.textcnn_merge)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, batch):
        return tuple(
            self.dropout(getattr(self, m)(batch.feats[m], batch.lengths[m])) for m in MODALITIES
        )


class SpecificityEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.heads = nn.ModuleList(nn.Linear(cfg.hidden, cfg.specific_dim) for _ in MODALITIES)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, pooled):
        h = torch.cat([F.relu(head(x)) for head, x in zip(self.heads, pooled)], dim=-1)
        return self.dropout(h)


class InvarianceEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(3 * cfg.hidden, cfg.invariant_hidden),
            nn.ReLU(),
            nn.Linear(cfg.invariant_hidden, cfg.invariant_dim),
        )
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, pooled):
        return self.dropout(self.net(torch.cat(pooled, dim=-1)))


class Backbone(nn.Module):
    """Modality encoders followed by both heads; returns (h', H')."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.modality = ModalityEncoders(cfg)
        self.specific = SpecificityEncoder(cfg)
        self.invariant = InvarianceEncoder(cfg)

    def forward(self, batch):
        pooled = self.modality(batch)
        return self.specific(pooled), self.invariant(pooled)
