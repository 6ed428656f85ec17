"""Utterance records, synthetic data, on-disk feature format, folds and batching.

On-disk layout: ``manifest.json`` next to a ``tensors/`` directory holding one
header-less little-endian float32 file per (record, modality), row-major
``(length, dim)``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .io import atomic_write_bytes
from .noise import MODALITIES

LABELS = ("happy", "angry", "sad", "neutral")
MANIFEST_VERSION = 1


class DatasetError(ValueError):
    """Raised on malformed feature files; message names the offending record."""


@dataclass
class UtteranceRecord:
    id: str
    label: int
    feat_a: np.ndarray
    feat_v: np.ndarray
    feat_l: np.ndarray

    def __post_init__(self):
        if not 0 <= int(self.label) < len(LABELS):
            raise DatasetError(f"record {self.id}: label {self.label} outside 0..{len(LABELS) - 1}")
        for m in MODALITIES:
            x = getattr(self, f"feat_{m}")
            if x.ndim != 2 or x.shape[0] < 1:
                raise DatasetError(f"record {self.id}: modality {m} must be (length>=1, dim), got {x.shape}")

    def feat(self, m: str) -> np.ndarray:
        return getattr(self, f"feat_{m}")

    @property
    def dims(self) -> dict[str, int]:
        return {m: self.feat(m).shape[1] for m in MODALITIES}


@dataclass
class DatasetManifest:
    records: list[UtteranceRecord]
    dims: dict[str, int]
    provenance: str = "synthetic"

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DatasetError("duplicate record ids in manifest")
        for r in self.records:
            if r.dims != self.dims:
                raise DatasetError(f"record {r.id}: dims {r.dims} do not match manifest dims {self.dims}")

    def __len__(self):
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def by_id(self) -> dict[str, UtteranceRecord]:
        return {r.id: r for r in self.records}

    def subset(self, ids: Sequence[str]) -> list[UtteranceRecord]:
        index = self.by_id()
        return [index[i] for i in ids]


@dataclass
class SyntheticSpec:
    n_per_class: int = 200
    dim_a: int = 130
    dim_v: int = 342
    dim_l: int = 1024
    latent_dim: int = 16
    separation: float = 3.0
    len_a: tuple[int, int] = (4, 10)
    len_v: tuple[int, int] = (4, 10)
    len_l: tuple[int, int] = (6, 12)
    frame_noise_var: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.len_a, self.len_v, self.len_l = (tuple(x) for x in (self.len_a, self.len_v, self.len_l))
        if min(self.n_per_class, self.dim_a, self.dim_v, self.dim_l) < 1:
            raise ValueError("synthetic counts and dims must be positive")
        if self.latent_dim < len(LABELS):
            raise ValueError(f"latent_dim must be >= {len(LABELS)} so class means are distinct axes")
        if self.separation < 0 or self.frame_noise_var < 0:
            raise ValueError("separation and frame_noise_var must be nonnegative")
        for lo, hi in (self.len_a, self.len_v, self.len_l):
            if not 1 <= lo <= hi:
                raise ValueError(f"bad length range ({lo}, {hi})")


def generate_synthetic(spec: SyntheticSpec) -> DatasetManifest:
    """Class signal enters every modality through one shared latent per utterance.

    Class ``c`` has latent mean ``separation * e_c``; each modality sees
    ``A_m u + b_m`` per frame plus isotropic frame noise.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.latent_dim
    dims = {"a": spec.dim_a, "v": spec.dim_v, "l": spec.dim_l}
    lens = {"a": spec.len_a, "v": spec.len_v, "l": spec.len_l}
    proj = {m: rng.standard_normal((k, dims[m])) / np.sqrt(k) for m in MODALITIES}
    bias = {m: 0.5 * rng.standard_normal(dims[m]) for m in MODALITIES}
    means = spec.separation * np.eye(len(LABELS), k)
    frame_std = np.sqrt(spec.frame_noise_var)

    labels = np.repeat(np.arange(len(LABELS)), spec.n_per_class)
    labels = labels[rng.permutation(len(labels))]
    records = []
    for i, y in enumerate(labels):
        u = means[y] + rng.standard_normal(k)
        feats = {}
        for m in MODALITIES:
            length = int(rng.integers(lens[m][0], lens[m][1] + 1))
            clean = u @ proj[m] + bias[m]
            frames = clean[None, :] + frame_std * rng.standard_normal((length, dims[m]))
            feats[f"feat_{m}"] = frames.astype(np.float32)
        records.append(UtteranceRecord(id=f"syn{i:05d}", label=int(y), **feats))
    return DatasetManifest(records, dims, provenance="synthetic")


def save_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> Path:
    """Write ``manifest.json`` and tensors under directory ``path``."""
    root = Path(path)
    entries = []
    for r in manifest.records:
        shapes, paths = {}, {}
        for m in MODALITIES:
            x = np.ascontiguousarray(r.feat(m), dtype="<f4")
            rel = f"tensors/{r.id}_{m}.f32"
            atomic_write_bytes(root / rel, x.tobytes(order="C"))
            shapes[m] = list(x.shape)
            paths[m] = rel
        entries.append({"id": r.id, "label": int(r.label), "shapes": shapes, "paths": paths})
    doc = {
        "version": MANIFEST_VERSION,
        "provenance": manifest.provenance,
        "labels": list(LABELS),
        "dims": dict(manifest.dims),
        "records": entries,
    }
    atomic_write_bytes(root / "manifest.json", (json.dumps(doc, indent=1) + "\n").encode())
    return root / "manifest.json"


def _read_tensor(root: Path, entry: dict, m: str, dim: int) -> np.ndarray:
    rid = entry["id"]
    shape = tuple(entry["shapes"][m])
    if len(shape) != 2 or shape[0] < 1:
        raise DatasetError(f"record {rid}: bad shape {shape} for modality {m}")
    if shape[1] != dim:
        raise DatasetError(f"record {rid}: shape mismatch for modality {m}: manifest dim {dim}, tensor dim {shape[1]}")
    path = root / entry["paths"][m]
    if not path.exists():
        raise DatasetError(f"record {rid}: missing tensor file {path}")
    raw = path.read_bytes()
    expected = shape[0] * shape[1] * 4
    if len(raw) != expected:
        raise DatasetError(
            f"record {rid}: tensor file {path.name} has {len(raw)} bytes, expected {expected} for shape {shape}"
        )
    x = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if not np.all(np.isfinite(x)):
        raise DatasetError(f"record {rid}: non-finite values in modality {m}")
    return x


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Load a dataset directory (or its ``manifest.json``)."""
    path = Path(path)
    mfile = path / "manifest.json" if path.is_dir() else path
    if not mfile.exists():
        raise DatasetError(f"manifest not found: {mfile}")
    root = mfile.parent
    doc = json.loads(mfile.read_text())
    if doc.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"unsupported manifest version {doc.get('version')!r}")
    dims = {m: int(doc["dims"][m]) for m in MODALITIES}
    records = []
    for entry in doc["records"]:
        feats = {f"feat_{m}": _read_tensor(root, entry, m, dims[m]) for m in MODALITIES}
        records.append(UtteranceRecord(id=entry["id"], label=int(entry["label"]), **feats))
    return DatasetManifest(records, dims, provenance=doc.get("provenance", "ingested"))


@dataclass
class FoldSplit:
    k: int
    assignments: dict[str, int]

    def fold_ids(self, fold: int) -> list[str]:
        return [i for i, f in self.assignments.items() if f == fold]

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.assignments.values():
            counts[f] += 1
        return counts

    def train_val_test(self, fold: int, val_fraction: float = 0.1, seed: int = 0):
        """Hold out ``fold`` for test and a seeded slice of the rest for validation."""
        if not 0 <= fold < self.k:
            raise ValueError(f"fold {fold} outside 0..{self.k - 1}")
        test = self.fold_ids(fold)
        rest = [i for i, f in self.assignments.items() if f != fold]
        rng = np.random.default_rng([seed, fold, 7])
        rest = [rest[j] for j in rng.permutation(len(rest))]
        n_val = max(1, int(round(val_fraction * len(rest))))
        return rest[n_val:], rest[:n_val], test


def make_folds(manifest: DatasetManifest | Sequence[str], k: int = 10, seed: int = 0) -> FoldSplit:
    ids = manifest.ids if isinstance(manifest, DatasetManifest) else list(manifest)
    if not 2 <= k <= len(ids):
        raise ValueError(f"k={k} must satisfy 2 <= k <= {len(ids)} records")
    order = np.random.default_rng(seed).permutation(len(ids))
    return FoldSplit(k, {ids[j]: pos % k for pos, j in enumerate(order)})


@dataclass
class Batch:
    ids: list[str]
    labels: torch.Tensor  # (B,) long
    feats: dict[str, torch.Tensor]  # m -> (B, Lmax, D), zero padded
    lengths: dict[str, torch.Tensor] = field(default_factory=dict)  # m -> (B,) long

    def __len__(self):
        return len(self.ids)

    def mask(self, m: str) -> torch.Tensor:
        L = self.feats[m].shape[1]
        return torch.arange(L)[None, :] < self.lengths[m][:, None]

    def to(self, dtype: torch.dtype) -> "Batch":
        return Batch(self.ids, self.labels, {m: x.to(dtype) for m, x in self.feats.items()}, self.lengths)


def collate(records: Sequence[UtteranceRecord], pad_to: dict[str, int] | None = None) -> Batch:
    feats, lengths = {}, {}
    for m in MODALITIES:
        xs = [r.feat(m) for r in records]
        lens = [x.shape[0] for x in xs]
        L = max(max(lens), (pad_to or {}).get(m, 0))
        out = np.zeros((len(xs), L, xs[0].shape[1]), dtype=np.float32)
        for i, x in enumerate(xs):
            out[i, : x.shape[0]] = x
        feats[m] = torch.from_numpy(out)
        lengths[m] = torch.tensor(lens, dtype=torch.long)
    labels = torch.tensor([r.label for r in records], dtype=torch.long)
    return Batch([r.id for r in records], labels, feats, lengths)


def batches(records: Sequence[UtteranceRecord], batch_size: int = 128,
            seed: int | None = None) -> Iterator[Batch]:
    """Padded batches; shuffled when ``seed`` is given. The last partial batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(records))
    if seed is not None:
        order = np.random.default_rng(seed).permutation(len(records))
    for s in range(0, len(order), batch_size):
        yield collate([records[j] for j in order[s : s + batch_size]])
