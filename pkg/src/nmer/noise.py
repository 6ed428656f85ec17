"""Forward-noise scheduler for corrupting modality embeddings.

Noisy embeddings are drawn in closed form from the clean ones::

    E_t = sqrt(alpha_bar_t) * E_0 + sqrt(1 - alpha_bar_t) * eps

with ``alpha_bar_t`` the running product of ``1 - beta_s``.  ``eps`` is either
standard Gaussian or ternary impulse noise in {-1, 0, +1}.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

MODALITIES = ("a", "v", "l")
SCHEDULE_KINDS = ("scaled_linear", "linear")
NOISE_KINDS = ("gaussian", "impulse")


@dataclass(frozen=True)
class NoiseSchedule:
    beta_start: float
    beta_end: float
    total_steps: int
    kind: str
    betas: np.ndarray = field(repr=False)
    # index 0..T, alpha_bars[0] == 1
    alpha_bars: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return self.total_steps

    def signal_scale(self, t: int) -> float:
        return float(np.sqrt(self.alpha_bars[t]))

    def noise_scale(self, t: int) -> float:
        return float(np.sqrt(1.0 - self.alpha_bars[t]))

    def check_step(self, t: int) -> None:
        if not (0 <= int(t) <= self.total_steps) or int(t) != t:
            raise ValueError(f"noise step t={t} outside [0, {self.total_steps}]")


def build_schedule(
    beta_start: float = 0.01,
    beta_end: float = 0.5,
    T: int = 100,
    kind: str = "scaled_linear",
) -> NoiseSchedule:
    """Precompute betas and cumulative alpha products.

    ``scaled_linear`` is linear in sqrt(beta); ``linear`` is linear in beta.
    """
    if not (0.0 < beta_start < 1.0 and 0.0 < beta_end < 1.0):
        raise ValueError(f"beta bounds must lie in (0, 1), got ({beta_start}, {beta_end})")
    if beta_start >= beta_end:
        raise ValueError(f"beta_start={beta_start} must be < beta_end={beta_end}")
    if int(T) != T or T < 1:
        raise ValueError(f"total steps T must be a positive integer, got {T}")
    T = int(T)
    if kind == "scaled_linear":
        betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), T, dtype=np.float64) ** 2
    elif kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    # squaring the endpoints can drift by an ulp
    betas = np.clip(betas, beta_start, beta_end)
    betas[0] = beta_start
    if T > 1:
        betas[-1] = beta_end
    alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    betas.setflags(write=False)
    alpha_bars.setflags(write=False)
    return NoiseSchedule(beta_start, beta_end, T, kind, betas, alpha_bars)


@dataclass(frozen=True)
class NoiseType:
    kind: str = "gaussian"
    p: float = 0.3  # zero probability, impulse only

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise type {self.kind!r}; expected one of {NOISE_KINDS}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"impulse zero probability p={self.p} outside [0, 1]")


@dataclass(frozen=True)
class ConditionPattern:
    """Which modalities stay clean; the complement gets corrupted."""

    clean: frozenset

    def __post_init__(self):
        clean = frozenset(self.clean)
        if not clean or not clean < frozenset(MODALITIES):
            raise ValueError(
                f"condition must keep a nonempty proper subset of {MODALITIES} clean, got {sorted(clean)}"
            )
        object.__setattr__(self, "clean", clean)

    @property
    def noisy(self) -> tuple[str, ...]:
        return tuple(m for m in MODALITIES if m not in self.clean)

    @property
    def name(self) -> str:
        return "{" + ",".join(m for m in MODALITIES if m in self.clean) + "}"

    @classmethod
    def parse(cls, text: str) -> "ConditionPattern":
        """Accepts ``"al"``, ``"a,l"`` or ``"{a,l}"``."""
        letters = [c for c in str(text) if not c in "{}, "]
        if any(c not in MODALITIES for c in letters) or len(set(letters)) != len(letters):
            raise ValueError(f"unknown condition {text!r}")
        return cls(frozenset(letters))

    def __str__(self) -> str:
        return self.name


CONDITIONS: tuple[ConditionPattern, ...] = tuple(
    ConditionPattern(frozenset(c)) for c in ("a", "v", "l", "av", "al", "vl")
)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator keyed by a seed plus arbitrary hashable labels.

    String keys go through blake2b so streams do not depend on PYTHONHASHSEED.
    """
    words = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        if isinstance(k, (int, np.integer)):
            words.append(int(k) & 0xFFFFFFFF)
        else:
            digest = hashlib.blake2b(str(k).encode(), digest_size=8).digest()
            words.extend(np.frombuffer(digest, dtype="<u4").tolist())
    return np.random.default_rng(np.random.SeedSequence(words))


def _mix(E0: np.ndarray, eps: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    out = sched.signal_scale(t) * E0.astype(np.float64) + sched.noise_scale(t) * eps
    return out.astype(E0.dtype, copy=False)


def _check_input(E0: np.ndarray, t: int, sched: NoiseSchedule) -> np.ndarray:
    sched.check_step(t)
    E0 = np.asarray(E0)
    if not np.all(np.isfinite(E0)):
        raise ValueError("input embedding contains non-finite values")
    return E0


def apply_gaussian(E0: np.ndarray, t: int, sched: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    E0 = _check_input(E0, t, sched)
    if t == 0:
        return E0.copy()
    eps = rng.standard_normal(E0.shape)
    return _mix(E0, eps, t, sched)


def make_impulse_noise(shape: Sequence[int], p: float, rng: np.random.Generator) -> np.ndarray:
    """Ternary noise: 0 with probability p, else -1 or +1 with equal odds."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"impulse zero probability p={p} outside [0, 1]")
    u = rng.random(shape)
    half = p + (1.0 - p) / 2.0
    return np.where(u < p, 0.0, np.where(u < half, -1.0, 1.0))


def apply_impulse(
    E0: np.ndarray, t: int, p: float, sched: NoiseSchedule, rng: np.random.Generator
) -> np.ndarray:
    E0 = _check_input(E0, t, sched)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"impulse zero probability p={p} outside [0, 1]")
    if t == 0:
        return E0.copy()
    eps = make_impulse_noise(E0.shape, p, rng)
    return _mix(E0, eps, t, sched)


def apply_noise(E0, t, ntype: NoiseType, sched: NoiseSchedule, rng) -> np.ndarray:
    if ntype.kind == "gaussian":
        return apply_gaussian(E0, t, sched, rng)
    return apply_impulse(E0, t, ntype.p, sched, rng)


def corrupt_condition(record, cond: ConditionPattern, ntype: NoiseType, t: int,
                      sched: NoiseSchedule, rng: np.random.Generator):
    """Corrupt every modality outside ``cond.clean``; clean ones are passed through untouched."""
    if not isinstance(cond, ConditionPattern):
        raise TypeError(f"expected ConditionPattern, got {type(cond).__name__}")
    if not isinstance(ntype, NoiseType):
        raise TypeError(f"expected NoiseType, got {type(ntype).__name__}")
    sched.check_step(t)
    updates = {}
    for m in cond.noisy:
        updates[f"feat_{m}"] = apply_noise(getattr(record, f"feat_{m}"), t, ntype, sched, rng)
    return dataclasses.replace(record, **updates)


def parse_conditions(items: Iterable[str] | None) -> tuple[ConditionPattern, ...]:
    if items is None:
        return CONDITIONS
    return tuple(c if isinstance(c, ConditionPattern) else ConditionPattern.parse(c) for c in items)
