import csv
import io

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from nmer.evaluation import (Cell, ResultsTable, confusion_matrix, evaluate_ablation, evaluate_grid,
                             from_json, mean_tables, to_csv, to_json, to_markdown,
                             unweighted_accuracy, weighted_accuracy)
from nmer.noise import CONDITIONS, build_schedule
from nmer.vae import NMER, NMERAblation

from conftest import random_records, tiny_model_config
from oracles import brute_force_wa_ua


def test_perfect_diagonal():
    cm = confusion_matrix([0, 1, 2, 3, 3], [0, 1, 2, 3, 3])
    assert weighted_accuracy(cm) == 1.0 and unweighted_accuracy(cm) == 1.0


def test_hand_example():
    cm = confusion_matrix([0, 0, 1, 1, 1, 2], [0, 1, 1, 1, 0, 2])
    assert abs(weighted_accuracy(cm) - 4 / 6) < 1e-12
    assert abs(unweighted_accuracy(cm) - (1 / 2 + 2 / 3 + 1) / 3) < 1e-12
    assert unweighted_accuracy(cm) == pytest.approx(0.7222, abs=1e-4)


def test_balanced_classes_wa_equals_ua():
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(4), 25)
    preds = rng.integers(0, 4, 100)
    cm = confusion_matrix(labels, preds)
    assert weighted_accuracy(cm) == pytest.approx(unweighted_accuracy(cm), abs=1e-15)


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        weighted_accuracy(np.zeros((4, 4), dtype=int))
    with pytest.raises(ValueError):
        unweighted_accuracy(np.zeros((4, 4), dtype=int))


@settings(max_examples=100, deadline=None)
@given(pairs=st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=1000))
def test_metrics_match_brute_force(pairs):
    labels, preds = zip(*pairs)
    cm = confusion_matrix(labels, preds)
    assert cm.sum() == len(pairs)
    wa, ua = brute_force_wa_ua(labels, preds)
    assert abs(weighted_accuracy(cm) - wa) < 1e-12
    assert abs(unweighted_accuracy(cm) - ua) < 1e-12


@pytest.fixture(scope="module")
def grid_setup():
    torch.manual_seed(0)
    cfg = tiny_model_config()
    return NMER(cfg), NMERAblation(cfg), random_records(12, seed=5), build_schedule()


def test_grid_size_and_averages(grid_setup):
    model, _, recs, sched = grid_setup
    table = evaluate_grid(model, recs, sched, seed=1)
    assert len(table.cells) == 60
    avgs = table.averages()
    assert len(avgs) == 10
    for a in avgs:
        cells = [c for c in table.cells if (c.variant, c.noise_type, c.intensity) ==
                 (a.variant, a.noise_type, a.intensity)]
        assert len(cells) == 6
        assert abs(a.WA - np.mean([c.WA for c in cells])) < 1e-9
        assert abs(a.UA - np.mean([c.UA for c in cells])) < 1e-9
    assert all(0 <= c.WA <= 1 and 0 <= c.UA <= 1 and c.n == 12 for c in table.cells)
    # per-condition detail row as reported for the lexical-clean condition
    assert ("NMER", "gaussian", 100, "{l}") in table.lookup()


def test_grid_replay_is_identical(grid_setup):
    model, _, recs, sched = grid_setup
    a = evaluate_grid(model, recs, sched, seed=7)
    b = evaluate_grid(model, recs, sched, seed=7)
    assert to_csv(a) == to_csv(b) and to_json(a) == to_json(b)


def test_grid_draws_pool_samples(grid_setup):
    model, _, recs, sched = grid_setup
    table = evaluate_grid(model, recs, sched, noise_types=["impulse"], intensities=[40],
                          conditions=CONDITIONS[:2], draws=3)
    assert [c.n for c in table.cells] == [36, 36]


def test_grid_rejects_bad_values(grid_setup):
    model, _, recs, sched = grid_setup
    with pytest.raises(ValueError):
        evaluate_grid(model, recs, sched, intensities=[101])
    with pytest.raises(ValueError):
        evaluate_grid(model, recs, sched, noise_types=["speckle"])


def test_ablation_table_schema(grid_setup):
    model, abl, recs, sched = grid_setup
    full = evaluate_grid(model, recs, sched, seed=1)
    ab = evaluate_ablation(abl, recs, sched, seed=1)
    assert ab.variants() == ["w/o VAE"] and full.variants() == ["NMER"]
    assert [c.key[1:] for c in ab.cells] == [c.key[1:] for c in full.cells]
    assert to_csv(ab).splitlines()[0] == to_csv(full).splitlines()[0]


def _table(variant="NMER", shift=0.0):
    cells = [Cell(variant, nt, t, c.name, 10, min(1.0, 0.5 + shift + 0.001 * t), 0.4 + shift)
             for nt in ("gaussian", "impulse") for t in (20, 40, 60, 80, 100) for c in CONDITIONS]
    return ResultsTable(cells)


def test_reports():
    table = _table()
    assert from_json(to_json(table)) == table
    rows = list(csv.reader(io.StringIO(to_csv(table))))
    assert rows[0] == ["variant", "noise_type", "intensity", "condition", "n", "WA", "UA"]
    assert len(rows) == 61
    md = to_markdown(table.merged(_table("w/o VAE", -0.1)))
    header = md.splitlines()[2]
    assert header.count("(Avg)") == 20  # 5 intensities x 2 types x (WA, UA)
    assert "| NMER |" in md and "| w/o VAE |" in md
    for nt in ("gaussian", "impulse"):
        assert f"NMER: per-condition results, {nt} noise" in md


def test_mean_tables():
    a, b, c = _table(shift=0.0), _table(shift=0.1), _table(shift=0.2)
    m = mean_tables([a, b, c])
    for cell, ca, cb, cc in zip(m.cells, a.cells, b.cells, c.cells):
        assert abs(cell.WA - (ca.WA + cb.WA + cc.WA) / 3) < 1e-12
        assert abs(cell.UA - (ca.UA + cb.UA + cc.UA) / 3) < 1e-12
    with pytest.raises(ValueError):
        mean_tables([a, ResultsTable(a.cells[:-1])])
