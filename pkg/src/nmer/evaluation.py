"""WA/UA metrics, the condition x noise-type x intensity grid, and reports."""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch

from .io import atomic_write_text
from .data import LABELS, UtteranceRecord, batches
from .noise import (CONDITIONS, ConditionPattern, NoiseSchedule, NoiseType,
                    corrupt_condition, derive_rng)
from .vae import predict

N_CLASSES = len(LABELS)
INTENSITIES = (20, 40, 60, 80, 100)
CSV_COLUMNS = ("variant", "noise_type", "intensity", "condition", "n", "WA", "UA")


def confusion_matrix(labels, preds, n_classes: int = N_CLASSES) -> np.ndarray:
    labels, preds = np.asarray(labels, dtype=int), np.asarray(preds, dtype=int)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def weighted_accuracy(cm: np.ndarray) -> float:
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm) / total)


def unweighted_accuracy(cm: np.ndarray) -> float:
    """Mean per-class recall over classes that actually occur."""
    support = cm.sum(axis=1)
    if support.sum() == 0:
        raise ValueError("empty confusion matrix")
    present = support > 0
    return float(np.mean(np.diag(cm)[present] / support[present]))


@dataclass
class Cell:
    variant: str
    noise_type: str
    intensity: int
    condition: str
    n: int
    WA: float
    UA: float

    @property
    def key(self):
        return (self.variant, self.noise_type, self.intensity, self.condition)


@dataclass
class ResultsTable:
    cells: list[Cell] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def averages(self) -> list[Cell]:
        """One condition-averaged row per (variant, noise type, intensity)."""
        groups: dict[tuple, list[Cell]] = defaultdict(list)
        for c in self.cells:
            groups[(c.variant, c.noise_type, c.intensity)].append(c)
        return [
            Cell(v, nt, t, "Avg", sum(c.n for c in cs),
                 float(np.mean([c.WA for c in cs])), float(np.mean([c.UA for c in cs])))
            for (v, nt, t), cs in groups.items()
        ]

    def average(self, variant: str, noise_type: str, intensity: int) -> Cell:
        for c in self.averages():
            if (c.variant, c.noise_type, c.intensity) == (variant, noise_type, intensity):
                return c
        raise KeyError((variant, noise_type, intensity))

    def variants(self) -> list[str]:
        return list(dict.fromkeys(c.variant for c in self.cells))

    def lookup(self) -> dict[tuple, Cell]:
        return {c.key: c for c in self.cells}

    def merged(self, other: "ResultsTable") -> "ResultsTable":
        return ResultsTable(self.cells + other.cells, {**self.meta, **other.meta})

    # structured (JSON) round trip
    def to_dict(self) -> dict:
        return {"meta": self.meta, "cells": [asdict(c) for c in self.cells]}

    @classmethod
    def from_dict(cls, doc: dict) -> "ResultsTable":
        return cls([Cell(**c) for c in doc["cells"]], doc.get("meta", {}))


def evaluate_grid(
    model: torch.nn.Module,
    records: Sequence[UtteranceRecord],
    sched: NoiseSchedule,
    noise_types: Iterable[NoiseType | str] = ("gaussian", "impulse"),
    intensities: Iterable[int] = INTENSITIES,
    conditions: Iterable[ConditionPattern] = CONDITIONS,
    seed: int = 0,
    variant: str = "NMER",
    draws: int = 1,
    batch_size: int = 256,
) -> ResultsTable:
    """Corrupt the records deterministically per cell and score the model in eval mode.

    With ``draws > 1`` each cell pools predictions over independent corruptions.
    """
    ntypes = [nt if isinstance(nt, NoiseType) else NoiseType(nt) for nt in noise_types]
    intensities = [int(t) for t in intensities]
    for t in intensities:
        if not 1 <= t <= sched.T:
            raise ValueError(f"intensity {t} outside 1..{sched.T}")
    if draws < 1:
        raise ValueError("draws must be >= 1")
    model.eval()
    table = ResultsTable(meta={"seed": seed, "draws": draws})
    for nt in ntypes:
        for t in intensities:
            for cond in conditions:
                labels, preds = [], []
                for d in range(draws):
                    noisy = [
                        corrupt_condition(r, cond, nt, t, sched,
                                          derive_rng(seed, "eval", nt.kind, t, cond.name, d, r.id))
                        for r in records
                    ]
                    for b in batches(noisy, batch_size):
                        labels.append(b.labels.numpy())
                        preds.append(predict(model, b).numpy())
                cm = confusion_matrix(np.concatenate(labels), np.concatenate(preds))
                table.cells.append(Cell(variant, nt.kind, t, cond.name, int(cm.sum()),
                                        weighted_accuracy(cm), unweighted_accuracy(cm)))
    return table


def evaluate_ablation(model, records, sched, **kwargs) -> ResultsTable:
    kwargs.setdefault("variant", "w/o VAE")
    return evaluate_grid(model, records, sched, **kwargs)


def mean_tables(tables: Sequence[ResultsTable]) -> ResultsTable:
    """Cell-wise mean over repeated runs; every table must cover the same cells."""
    if not tables:
        raise ValueError("no tables to aggregate")
    keys = [c.key for c in tables[0].cells]
    lookups = [t.lookup() for t in tables]
    for lk in lookups[1:]:
        if set(lk) != set(keys):
            raise ValueError("tables cover different grid cells")
    cells = []
    for k in keys:
        cs = [lk[k] for lk in lookups]
        cells.append(Cell(*k, n=cs[0].n, WA=float(np.mean([c.WA for c in cs])),
                          UA=float(np.mean([c.UA for c in cs]))))
    return ResultsTable(cells, {"repeats": len(tables)})


def to_csv(table: ResultsTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in table.cells:
        w.writerow([c.variant, c.noise_type, c.intensity, c.condition, c.n, repr(c.WA), repr(c.UA)])
    return buf.getvalue()


def to_json(table: ResultsTable) -> str:
    return json.dumps(table.to_dict(), indent=1, sort_keys=True) + "\n"


def from_json(text: str) -> ResultsTable:
    return ResultsTable.from_dict(json.loads(text))


def to_markdown(table: ResultsTable) -> str:
    """Averages laid out variants x (intensity, noise type), then per-condition detail."""
    avgs = {(c.variant, c.noise_type, c.intensity): c for c in table.averages()}
    ntypes = list(dict.fromkeys(c.noise_type for c in table.cells))
    intens = sorted({c.intensity for c in table.cells}, reverse=True)
    conds = list(dict.fromkeys(c.condition for c in table.cells))
    cols = [(t, nt) for t in intens for nt in ntypes]

    lines = ["## Condition-averaged WA / UA", ""]
    lines.append("| System | " + " | ".join(f"{t} (Avg) {nt} WA | {t} (Avg) {nt} UA" for t, nt in cols) + " |")
    lines.append("|---" * (1 + 2 * len(cols)) + "|")
    for v in table.variants():
        row = []
        for t, nt in cols:
            c = avgs.get((v, nt, t))
            row += [f"{c.WA:.4f}", f"{c.UA:.4f}"] if c else ["-", "-"]
        lines.append(f"| {v} | " + " | ".join(row) + " |")

    lookup = table.lookup()
    for v in table.variants():
        for nt in ntypes:
            lines += ["", f"## {v}: per-condition results, {nt} noise", ""]
            lines.append("| Intensity | " + " | ".join(f"{c} WA | {c} UA" for c in conds + ["Avg"]) + " |")
            lines.append("|---" * (1 + 2 * (len(conds) + 1)) + "|")
            for t in intens:
                row = []
                for cond in conds:
                    c = lookup.get((v, nt, t, cond))
                    row += [f"{c.WA:.4f}", f"{c.UA:.4f}"] if c else ["-", "-"]
                a = avgs.get((v, nt, t))
                row += [f"{a.WA:.4f}", f"{a.UA:.4f}"] if a else ["-", "-"]
                lines.append(f"| {t} | " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


REPORT_WRITERS = {"csv": (to_csv, "results.csv"), "markdown": (to_markdown, "results.md"),
                  "structured": (to_json, "results.json")}


def emit_report(table: ResultsTable, out_dir, formats=("csv", "markdown", "structured")) -> list:
    written = []
    for fmt in formats:
        if fmt not in REPORT_WRITERS:
            raise ValueError(f"unknown report format {fmt!r}")
        fn, name = REPORT_WRITERS[fmt]
        written.append(atomic_write_text(f"{out_dir}/{name}", fn(table)))
    return written
