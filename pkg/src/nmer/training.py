"""Two-stage training: a clean-data teacher, then NMER on corrupted data."""
from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import UtteranceRecord, batches
from .evaluation import confusion_matrix, unweighted_accuracy, weighted_accuracy
from .io import atomic_write_bytes, atomic_write_text
from .losses import LossBreakdown, LossWeights, ablation_loss, cls_loss, nmer_loss
from .noise import CONDITIONS, NoiseSchedule, NoiseType, corrupt_condition, derive_rng
from .vae import MODEL_KINDS, NMER, ModelConfig, NMERAblation, Teacher, predict

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 0.01
    batch_size: int = 128
    epochs: int = 80
    teacher_epochs: int = 80
    lr_pivot: int = 20  # lr flat up to this epoch, then linear decay to 0 at `epochs`
    folds: int = 10
    fold: int = 0
    val_fraction: float = 0.1
    seed: int = 0
    noise_types: tuple[str, ...] = ("gaussian", "impulse")
    impulse_p: float = 0.3
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        self.noise_types = tuple(self.noise_types)
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.teacher_epochs < 1:
            raise ValueError("lr must be positive; batch_size and epoch counts must be >= 1")
        for nt in self.noise_types:
            NoiseType(nt, self.impulse_p)

    @property
    def noise(self) -> list[NoiseType]:
        return [NoiseType(nt, self.impulse_p) for nt in self.noise_types]


def lr_lambda(epoch: int, total: int = 80, pivot: int = 20) -> float:
    """Multiplier for 1-based ``epoch``: 1 through ``pivot``, then linear to 0 at ``total``."""
    if epoch <= pivot or total <= pivot:
        return 1.0
    return max(0.0, (total - epoch) / (total - pivot))


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    losses: dict
    val_wa: float
    val_ua: float


@dataclass
class RunRecord:
    config: dict
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_wa: float = -1.0
    checkpoint: str | None = None
    wall_clock: float = 0.0

    def gen_curve(self) -> list[float]:
        return [e.losses["gen"] for e in self.epochs]

    def to_jsonl(self) -> str:
        """One line per epoch; wall clock stays out (it lives in the sidecar meta file)."""
        lines = [json.dumps({"type": "config", "config": self.config}, sort_keys=True)]
        lines += [json.dumps({"type": "epoch", **asdict(e)}, sort_keys=True) for e in self.epochs]
        lines.append(json.dumps({"type": "summary", "best_epoch": self.best_epoch,
                                 "best_val_wa": self.best_val_wa, "checkpoint": self.checkpoint},
                                sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "RunRecord":
        rec = cls(config={})
        for line in text.splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            kind = doc.pop("type")
            if kind == "config":
                rec.config = doc["config"]
            elif kind == "epoch":
                rec.epochs.append(EpochRecord(**doc))
            elif kind == "summary":
                rec.best_epoch, rec.best_val_wa = doc["best_epoch"], doc["best_val_wa"]
                rec.checkpoint = doc["checkpoint"]
        return rec

    def save(self, run_dir) -> Path:
        run_dir = Path(run_dir)
        atomic_write_text(run_dir / "meta.json", json.dumps({"wall_clock_s": self.wall_clock,
                                                             "finished": time.time()}) + "\n")
        return atomic_write_text(run_dir / "run.jsonl", self.to_jsonl())


def state_checksum(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in model.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(model, path, config: dict | None = None) -> Path:
    payload = {
        "kind": model.kind,
        "model_config": asdict(model.cfg),
        "config": config or {},
        "state_dict": model.state_dict(),
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    return atomic_write_bytes(path, buf.getvalue())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path, expected_kind: str | None = None):
    """Rebuild the model recorded in the checkpoint; mismatched tensors are named in the error."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    kind = payload["kind"]
    if expected_kind and kind != expected_kind:
        raise CheckpointError(f"checkpoint {path} holds a {kind!r} model, expected {expected_kind!r}")
    model = MODEL_KINDS[kind](ModelConfig(**payload["model_config"]))
    load_state_strict(model, payload["state_dict"])
    model.eval()
    model.config_snapshot = payload.get("config", {})
    return model


def load_state_strict(model: torch.nn.Module, state: dict) -> None:
    own = model.state_dict()
    missing = sorted(set(own) - set(state))
    extra = sorted(set(state) - set(own))
    if missing or extra:
        raise CheckpointError(f"checkpoint tensors do not match model: missing={missing[:5]} unexpected={extra[:5]}")
    for name, t in state.items():
        if tuple(t.shape) != tuple(own[name].shape):
            raise CheckpointError(
                f"tensor {name}: checkpoint shape {tuple(t.shape)} != model shape {tuple(own[name].shape)}"
            )
    model.load_state_dict(state)


def _accuracy(model, records, batch_size=256) -> tuple[float, float]:
    model.eval()
    labels, preds = [], []
    for b in batches(records, batch_size):
        labels.append(b.labels.numpy())
        preds.append(predict(model, b).numpy())
    cm = confusion_matrix(np.concatenate(labels), np.concatenate(preds))
    return weighted_accuracy(cm), unweighted_accuracy(cm)


def _make_optimizer(model, cfg: TrainConfig, total_epochs: int):
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    # LambdaLR counts from 0; the multiplier is defined on 1-based epochs
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda e: lr_lambda(e + 1, total_epochs, cfg.lr_pivot)
    )
    return opt, sched


def pretrain_teacher(train: Sequence[UtteranceRecord], val: Sequence[UtteranceRecord],
                     model_cfg: ModelConfig, cfg: TrainConfig, config_snapshot: dict | None = None):
    """Cross-entropy on clean inputs; returns the best-validation teacher (frozen) and its RunRecord."""
    torch.manual_seed(cfg.seed)
    teacher = Teacher(model_cfg)
    opt, lr_sched = _make_optimizer(teacher, cfg, cfg.teacher_epochs)
    record = RunRecord(config=config_snapshot or {})
    best_state = None
    t0 = time.perf_counter()
    for epoch in range(1, cfg.teacher_epochs + 1):
        teacher.train()
        lr = opt.param_groups[0]["lr"]
        sums, n = 0.0, 0
        for b in batches(train, cfg.batch_size, seed=cfg.seed * 1000 + epoch):
            loss = cls_loss(teacher(b), b.labels)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"teacher loss diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums += loss.item() * len(b)
            n += len(b)
        lr_sched.step()
        wa, ua = _accuracy(teacher, val)
        cls = sums / n
        record.epochs.append(EpochRecord(epoch, lr, LossBreakdown(0, 0, 0, 0, cls, cls).as_dict(), wa, ua))
        log.info("teacher epoch %d cls=%.4f val WA=%.4f UA=%.4f", epoch, cls, wa, ua)
        if wa > record.best_val_wa:
            record.best_epoch, record.best_val_wa = epoch, wa
            best_state = copy.deepcopy(teacher.state_dict())
    teacher.load_state_dict(best_state)
    record.wall_clock = time.perf_counter() - t0
    return teacher.freeze(), record


def teacher_targets(teacher: Teacher, records: Sequence[UtteranceRecord], batch_size=256) -> dict:
    """Map record id -> (C-hat, H) computed on the clean record."""
    out = {}
    for b in batches(records, batch_size):
        C, H = teacher.targets(b)
        for i, rid in enumerate(b.ids):
            out[rid] = (C[i], H[i])
    return out


def corrupt_for_training(records, sched: NoiseSchedule, noise: Sequence[NoiseType], seed: int, epoch: int):
    """Each sample independently draws a condition, an intensity in 1..T and a noise type."""
    noisy = []
    for r in records:
        rng = derive_rng(seed, "train", epoch, r.id)
        cond = CONDITIONS[rng.integers(len(CONDITIONS))]
        t = int(rng.integers(1, sched.T + 1))
        nt = noise[rng.integers(len(noise))]
        noisy.append(corrupt_condition(r, cond, nt, t, sched, rng))
    return noisy


def _stack_targets(targets: dict, ids):
    try:
        C = torch.stack([targets[i][0] for i in ids])
        H = torch.stack([targets[i][1] for i in ids])
    except KeyError as e:
        raise KeyError(f"missing teacher target for record {e.args[0]}") from None
    return C, H


def train_nmer(train: Sequence[UtteranceRecord], val: Sequence[UtteranceRecord], teacher: Teacher,
               model_cfg: ModelConfig, cfg: TrainConfig, sched: NoiseSchedule, ablation: bool = False,
               config_snapshot: dict | None = None):
    """Stage-2 training against frozen teacher targets.

    Returns the best-validation model and its RunRecord.  Validation uses one
    fixed corruption of the validation set so epochs are comparable.
    """
    if any(p.requires_grad for p in teacher.parameters()):
        raise ValueError("teacher must be frozen before NMER training")
    checksum = state_checksum(teacher)
    targets = teacher_targets(teacher, list(train))

    torch.manual_seed(cfg.seed)
    model = NMERAblation(model_cfg) if ablation else NMER(model_cfg)
    gen = torch.Generator().manual_seed(cfg.seed)
    opt, lr_sched = _make_optimizer(model, cfg, cfg.epochs)
    noise = cfg.noise
    val_noisy = corrupt_for_training(val, sched, noise, cfg.seed, epoch=-1)

    record = RunRecord(config=config_snapshot or {})
    best_state = None
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        lr = opt.param_groups[0]["lr"]
        noisy = corrupt_for_training(train, sched, noise, cfg.seed, epoch)
        sums: dict[str, float] = {}
        n = 0
        for b in batches(noisy, cfg.batch_size, seed=cfg.seed * 1000 + epoch):
            C_hat, H_t = _stack_targets(targets, b.ids)
            if ablation:
                _, H, logits = model.features(b)
                loss, parts = ablation_loss(logits, H, H_t, b.labels, cfg.loss_weights)
            else:
                out = model(b, generator=gen)
                loss, parts = nmer_loss(out, C_hat, H_t, b.labels, cfg.loss_weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            for k, v in parts.as_dict().items():
                sums[k] = sums.get(k, 0.0) + v * len(b)
            n += len(b)
        lr_sched.step()
        wa, ua = _accuracy(model, val_noisy)
        losses = {k: v / n for k, v in sums.items()}
        record.epochs.append(EpochRecord(epoch, lr, losses, wa, ua))
        log.info("%s epoch %d total=%.4f gen=%.4f val WA=%.4f", model.kind, epoch, losses["total"],
                 losses["gen"], wa)
        if wa > record.best_val_wa:
            record.best_epoch, record.best_val_wa = epoch, wa
            best_state = copy.deepcopy(model.state_dict())

    if state_checksum(teacher) != checksum:
        raise RuntimeError("teacher parameters changed during NMER training")
    model.load_state_dict(best_state)
    model.eval()
    record.wall_clock = time.perf_counter() - t0
    return model, record
