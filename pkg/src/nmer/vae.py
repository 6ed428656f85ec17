"""Guided VAE over (h', H'), emotion classifier, and the assembled models.

Three assemblies share the same :class:`~nmer.encoders.Backbone` parameter
names so checkpoints line up:

* :class:`NMER` -- backbone -> VAE -> classifier on the decoded joint vector C.
* :class:`NMERAblation` -- backbone -> classifier on concat(h', H') (no VAE).
* :class:`Teacher` -- same layout as the ablation, trained on clean data only;
  its h' and H' serve as the targets C-hat and H.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoders import Backbone, EncoderConfig

LOGVAR_CLAMP = 10.0


@dataclass
class VAEConfig:
    latent_dim: int = 64
    d_model: int = 128  # token width; (h' + H') width must be a multiple
    n_layers: int = 5
    n_heads: int = 4
    ff_dim: int = 256
    dropout: float = 0.1
    decoder_dims: tuple[int, ...] = (64, 128, 384)

    def __post_init__(self):
        self.decoder_dims = tuple(self.decoder_dims)


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    vae: VAEConfig = field(default_factory=VAEConfig)
    classifier_dims: tuple[int, ...] = (384, 128, 4)

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.vae, dict):
            self.vae = VAEConfig(**self.vae)
        self.classifier_dims = tuple(self.classifier_dims)

    @property
    def specific_width(self) -> int:
        return 3 * self.encoder.specific_dim

    @property
    def n_classes(self) -> int:
        return self.classifier_dims[-1]


class LatentParams(NamedTuple):
    mu: torch.Tensor
    logvar: torch.Tensor


class NMEROutput(NamedTuple):
    C: torch.Tensor
    H: torch.Tensor  # H' from the (possibly noisy) input
    h: torch.Tensor
    latent: LatentParams
    z: torch.Tensor
    logits: torch.Tensor


def _check_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise FloatingPointError(f"non-finite values after {where}")
    return x


class VAEEncoder(nn.Module):
    """Concat -> tokens of width d_model -> transformer -> mean over tokens -> (mu, logvar)."""

    def __init__(self, in_dim: int, cfg: VAEConfig):
        super().__init__()
        if in_dim % cfg.d_model:
            raise ValueError(f"VAE input width {in_dim} is not a multiple of d_model={cfg.d_model}")
        self.n_tokens = in_dim // cfg.d_model
        self.d_model = cfg.d_model
        # learned token-position offsets; the tokens are otherwise exchangeable
        self.pos = nn.Parameter(torch.zeros(self.n_tokens, cfg.d_model))
        layer = nn.TransformerEncoderLayer(
            cfg.d_model, cfg.n_heads, cfg.ff_dim, cfg.dropout, batch_first=True
        )
        self.transformer = nn.TransformerEncoder(layer, cfg.n_layers, enable_nested_tensor=False)
        self.mu = nn.Linear(cfg.d_model, cfg.latent_dim)
        self.logvar = nn.Linear(cfg.d_model, cfg.latent_dim)

    def forward(self, h, H) -> LatentParams:
        x = torch.cat([h, H], dim=-1).reshape(h.shape[0], self.n_tokens, self.d_model) + self.pos
        for i, layer in enumerate(self.transformer.layers):
            x = _check_finite(layer(x), f"VAE transformer layer {i}")
        pooled = x.mean(dim=1)
        mu = _check_finite(self.mu(pooled), "VAE mu head")
        logvar = _check_finite(self.logvar(pooled), "VAE logvar head")
        return LatentParams(mu, logvar.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP))


def reparameterize(params: LatentParams, training: bool = True,
                   generator: torch.Generator | None = None,
                   eps: torch.Tensor | None = None) -> torch.Tensor:
    """z = mu + exp(logvar/2) * eps during training, z = mu otherwise."""
    if not training:
        return params.mu
    if eps is None:
        eps = torch.randn(params.mu.shape, generator=generator, dtype=params.mu.dtype)
    return params.mu + torch.exp(0.5 * params.logvar) * eps


class VAEDecoder(nn.Module):
    """Decodes concat(z, H') through affine layers; H' is the guidance signal."""

    def __init__(self, latent_dim: int, guide_dim: int, dims=(64, 128, 384)):
        super().__init__()
        layers, prev = [], latent_dim + guide_dim
        for i, d in enumerate(dims):
            layers.append(nn.Linear(prev, d))
            if i < len(dims) - 1:
                layers.append(nn.ReLU())
            prev = d
        self.net = nn.Sequential(*layers)

    def forward(self, z, H):
        return self.net(torch.cat([z, H], dim=-1))


class GuidedVAE(nn.Module):
    def __init__(self, spec_dim: int, inv_dim: int, cfg: VAEConfig):
        super().__init__()
        self.encoder = VAEEncoder(spec_dim + inv_dim, cfg)
        self.decoder = VAEDecoder(cfg.latent_dim, inv_dim, cfg.decoder_dims)

    def forward(self, h, H, generator=None):
        params = self.encoder(h, H)
        z = reparameterize(params, self.training, generator)
        return self.decoder(z, H), params, z


class Classifier(nn.Module):
    def __init__(self, in_dim: int, dims=(384, 128, 4), dropout: float = 0.1):
        super().__init__()
        layers, prev = [], in_dim
        for i, d in enumerate(dims):
            layers.append(nn.Linear(prev, d))
            if i < len(dims) - 1:
                layers += [nn.ReLU(), nn.Dropout(dropout)]
            prev = d
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class NMER(nn.Module):
    kind = "nmer"

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        if cfg.vae.decoder_dims[-1] != cfg.specific_width:
            raise ValueError(
                f"decoder output {cfg.vae.decoder_dims[-1]} must equal joint width {cfg.specific_width}"
            )
        self.backbone = Backbone(cfg.encoder)
        self.vae = GuidedVAE(cfg.specific_width, cfg.encoder.invariant_dim, cfg.vae)
        self.classifier = Classifier(cfg.specific_width, cfg.classifier_dims, cfg.encoder.dropout)

    def forward(self, batch, generator: torch.Generator | None = None) -> NMEROutput:
        h, H = self.backbone(batch)
        C, params, z = self.vae(h, H, generator)
        return NMEROutput(C, H, h, params, z, self.classifier(C))

    def logits(self, batch) -> torch.Tensor:
        return self.forward(batch).logits


class NMERAblation(nn.Module):
    """Classifier fed directly with concat(h', H')."""

    kind = "ablation"

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        self.backbone = Backbone(cfg.encoder)
        self.classifier = Classifier(
            cfg.specific_width + cfg.encoder.invariant_dim, cfg.classifier_dims, cfg.encoder.dropout
        )

    def features(self, batch):
        """(h', H', logits)."""
        h, H = self.backbone(batch)
        return h, H, self.classifier(torch.cat([h, H], dim=-1))

    def forward(self, batch, generator=None) -> torch.Tensor:
        return self.features(batch)[2]

    def logits(self, batch) -> torch.Tensor:
        return self.forward(batch)


class Teacher(NMERAblation):
    """Full-modality network; after pretraining it only supplies targets."""

    kind = "teacher"

    @torch.no_grad()
    def targets(self, batch) -> tuple[torch.Tensor, torch.Tensor]:
        """(C-hat, H) computed in eval mode."""
        was_training = self.training
        self.eval()
        h, H = self.backbone(batch)
        self.train(was_training)
        return h, H

    def freeze(self) -> "Teacher":
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self


MODEL_KINDS = {cls.kind: cls for cls in (NMER, NMERAblation, Teacher)}


def predict(model: nn.Module, batch) -> torch.Tensor:
    with torch.no_grad():
        return model.logits(batch).argmax(dim=-1)


def softmax(logits: torch.Tensor) -> torch.Tensor:
    return F.softmax(logits, dim=-1)
