"""Training objective: L = L_gen + L_inv + L_cls, with L_gen = L_kl + L_mse."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F


@dataclass
class LossWeights:
    kl: float = 1.0
    mse: float = 1.0
    inv: float = 1.0
    cls: float = 1.0


@dataclass
class LossBreakdown:
    kl: float
    mse_gen: float
    gen: float
    inv: float
    cls: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


def _require_finite(*xs: torch.Tensor) -> None:
    for x in xs:
        if not torch.isfinite(x).all():
            raise ValueError("loss input contains non-finite values")


def kl_loss(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, 1)), averaged over latent dims and batch."""
    _require_finite(mu, logvar)
    return (-0.5 * (logvar - logvar.exp() - mu.pow(2) + 1.0)).mean()


def mse_loss(y: torch.Tensor, y_hat: torch.Tensor) -> torch.Tensor:
    return (y - y_hat).pow(2).mean()


def gen_loss(C, C_hat, mu, logvar, weights: LossWeights | None = None) -> torch.Tensor:
    w = weights or LossWeights()
    return w.kl * kl_loss(mu, logvar) + w.mse * mse_loss(C, C_hat.detach())


def inv_loss(H_student: torch.Tensor, H_teacher: torch.Tensor) -> torch.Tensor:
    # the teacher feature is a fixed target
    return mse_loss(H_student, H_teacher.detach())


def cls_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.cross_entropy(logits, labels)


def total_loss(gen, inv, cls, weights: LossWeights | None = None):
    w = weights or LossWeights()
    return gen + w.inv * inv + w.cls * cls


def nmer_loss(out, C_hat, H_teacher, labels, weights: LossWeights | None = None):
    """Returns the differentiable total and a float breakdown for logging."""
    w = weights or LossWeights()
    kl = kl_loss(out.latent.mu, out.latent.logvar)
    mse = mse_loss(out.C, C_hat.detach())
    gen = w.kl * kl + w.mse * mse
    inv = inv_loss(out.H, H_teacher)
    cls = cls_loss(out.logits, labels)
    total = total_loss(gen, inv, cls, w)
    if not torch.isfinite(total):
        raise FloatingPointError("non-finite training loss")
    breakdown = LossBreakdown(
        kl=kl.item(), mse_gen=mse.item(), gen=gen.item(), inv=inv.item(), cls=cls.item(), total=total.item()
    )
    return total, breakdown


def ablation_loss(logits, H_student, H_teacher, labels, weights: LossWeights | None = None):
    """The VAE-free variant keeps the invariance and classification terms."""
    w = weights or LossWeights()
    inv = inv_loss(H_student, H_teacher)
    cls = cls_loss(logits, labels)
    total = total_loss(torch.zeros((), dtype=cls.dtype), inv, cls, w)
    if not torch.isfinite(total):
        raise FloatingPointError("non-finite training loss")
    return total, LossBreakdown(0.0, 0.0, 0.0, inv.item(), cls.item(), total.item())
