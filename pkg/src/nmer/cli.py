"""Command-line entry points.

Subcommands: synth, teacher-train, train, corrupt, evaluate, report, plot-loss.
Exit codes: 0 success, 1 runtime error (one ``error: kind=... msg=...`` line on
stderr), 2 usage error.  ``NMER_OUT`` overrides the output root.
"""
from __future__ import annotations

import argparse
import dataclasses
import io
import logging
import os
import shutil
import sys
from pathlib import Path

from .config import RunConfig, dump_config, load_config
from .data import (DatasetManifest, generate_synthetic, load_manifest, make_folds,
                   save_manifest)
from .evaluation import emit_report, evaluate_grid, from_json, mean_tables
from .io import atomic_write_bytes, atomic_write_text
from .noise import ConditionPattern, NoiseType, corrupt_condition, derive_rng, parse_conditions
from .training import (RunRecord, load_checkpoint, pretrain_teacher, save_checkpoint,
                       train_nmer)
from .vae import ModelConfig

log = logging.getLogger("nmer")

OUT_ENV = "NMER_OUT"


# --- helpers -----------------------------------------------------------------

def _out_root(args, cfg: RunConfig) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or cfg.out)


def _setup(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.train.seed = cfg.seed
    return cfg, _out_root(args, cfg)


def _dataset(cfg: RunConfig, out: Path) -> DatasetManifest:
    path = Path(cfg.dataset) if cfg.dataset else out / "data"
    return load_manifest(path)


def _model_config(cfg: RunConfig, ds: DatasetManifest) -> ModelConfig:
    enc = dataclasses.replace(cfg.model.encoder, dim_a=ds.dims["a"], dim_v=ds.dims["v"], dim_l=ds.dims["l"])
    return dataclasses.replace(cfg.model, encoder=enc)


def _split(cfg: RunConfig, ds: DatasetManifest):
    folds = make_folds(ds, cfg.train.folds, seed=cfg.data.seed)
    tr, va, te = folds.train_val_test(cfg.train.fold, cfg.train.val_fraction, seed=cfg.data.seed)
    return ds.subset(tr), ds.subset(va), ds.subset(te)


# --- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.data.seed = args.seed
    out = _out_root(args, cfg)
    ds = generate_synthetic(cfg.data)
    save_manifest(ds, out / "data")
    atomic_write_text(out / "data" / "config.yaml", dump_config(cfg))
    print(f"wrote {len(ds)} records to {out / 'data'}")
    return 0


def cmd_teacher_train(args) -> int:
    cfg, out = _setup(args)
    ds = _dataset(cfg, out)
    train, val, _ = _split(cfg, ds)
    teacher, record = pretrain_teacher(train, val, _model_config(cfg, ds), cfg.train, cfg.snapshot())
    run_dir = out / "teacher"
    record.checkpoint = str(run_dir / "teacher.pt")
    save_checkpoint(teacher, record.checkpoint, cfg.snapshot())
    record.save(run_dir)
    print(f"teacher best val WA={record.best_val_wa:.4f} (epoch {record.best_epoch}) -> {record.checkpoint}")
    return 0


def run_dir_for(out: Path, ablation: bool, seed: int) -> Path:
    return out / ("ablation" if ablation else "nmer") / f"seed_{seed}"


def cmd_train(args) -> int:
    cfg, out = _setup(args)
    ds = _dataset(cfg, out)
    train, val, _ = _split(cfg, ds)
    teacher = load_checkpoint(args.teacher or out / "teacher" / "teacher.pt", expected_kind="teacher")
    teacher.freeze()
    sched = cfg.schedule.build()
    for r in range(args.repeats):
        seed = cfg.seed + r
        tcfg = dataclasses.replace(cfg.train, seed=seed)
        snap = {**cfg.snapshot(), "seed": seed}
        model, record = train_nmer(train, val, teacher, _model_config(cfg, ds), tcfg, sched,
                                   ablation=args.ablation, config_snapshot=snap)
        run_dir = run_dir_for(out, args.ablation, seed)
        record.checkpoint = str(run_dir / "model.pt")
        save_checkpoint(model, record.checkpoint, snap)
        record.save(run_dir)
        print(f"{model.kind} seed={seed} best val WA={record.best_val_wa:.4f} -> {run_dir}")
    return 0


def cmd_corrupt(args) -> int:
    cfg, _ = _setup(args)
    sched = cfg.schedule.build()
    sched.check_step(args.t)
    cond = ConditionPattern.parse(args.condition)
    ntype = NoiseType(args.noise_type, cfg.train.impulse_p)
    src, dst = Path(args.input), Path(args.output)
    if args.t == 0:
        # identity: copy bytes verbatim
        ds = load_manifest(src)
        shutil.copytree(src, dst, dirs_exist_ok=True)
        print(f"t=0: copied {len(ds)} records unchanged to {dst}")
        return 0
    ds = load_manifest(src)
    noisy = [corrupt_condition(r, cond, ntype, args.t, sched, derive_rng(cfg.seed, "corrupt", args.t, r.id))
             for r in ds.records]
    save_manifest(DatasetManifest(noisy, ds.dims, ds.provenance), dst)
    print(f"corrupted {len(noisy)} records ({ntype.kind}, t={args.t}, clean={cond.name}) -> {dst}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, out = _setup(args)
    model = load_checkpoint(args.checkpoint)
    if model.kind == "teacher":
        raise ValueError("evaluate expects an NMER or ablation checkpoint, got a teacher")
    ds = _dataset(cfg, out)
    _, _, test = _split(cfg, ds)
    sched = cfg.schedule.build()
    noise_types = [args.noise_type] if args.noise_type else list(cfg.eval.noise_types)
    intensities = [args.t] if args.t is not None else list(cfg.eval.intensities)
    conditions = parse_conditions([args.condition] if args.condition else cfg.eval.conditions)
    variant = "w/o VAE" if model.kind == "ablation" else "NMER"
    table = evaluate_grid(
        model, test, sched,
        noise_types=[NoiseType(nt, cfg.train.impulse_p) for nt in noise_types],
        intensities=intensities, conditions=conditions, seed=cfg.seed, variant=variant,
        draws=args.eval_draws or cfg.eval.draws, batch_size=cfg.eval.batch_size,
    )
    eval_dir = Path(args.checkpoint).parent / "eval"
    emit_report(table, eval_dir)
    for c in table.averages():
        print(f"{c.variant} {c.noise_type} t={c.intensity} avg WA={c.WA:.4f} UA={c.UA:.4f}")
    return 0


def _find_results(run_dir: Path) -> Path:
    for cand in (run_dir / "eval" / "results.json", run_dir / "results.json"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"no results.json under {run_dir}")


def cmd_report(args) -> int:
    """Mean over repeats per variant, merged into one comparison table."""
    by_variant: dict[str, list] = {}
    for d in args.run_dirs:
        table = from_json(_find_results(Path(d)).read_text())
        for v in table.variants():
            sub = type(table)([c for c in table.cells if c.variant == v], table.meta)
            by_variant.setdefault(v, []).append(sub)
    if not by_variant:
        raise ValueError("no results found")
    combined = None
    for v, tables in by_variant.items():
        mean = mean_tables(tables)
        combined = mean if combined is None else combined.merged(mean)
    combined.meta = {"runs": [str(d) for d in args.run_dirs],
                     "repeats": {v: len(ts) for v, ts in by_variant.items()}}
    out = Path(args.out or os.environ.get(OUT_ENV) or "report")
    emit_report(combined, out)
    print(f"report over {len(args.run_dirs)} runs -> {out}")
    return 0


def cmd_plot_loss(args) -> int:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    run_dir = Path(args.run_dir)
    record = RunRecord.from_jsonl((run_dir / "run.jsonl").read_text())
    curve = record.gen_curve()
    out = Path(args.out) if args.out else run_dir
    lines = ["epoch,gen,kl,mse_gen"] + [
        f"{e.epoch},{e.losses['gen']!r},{e.losses['kl']!r},{e.losses['mse_gen']!r}" for e in record.epochs
    ]
    atomic_write_text(out / "gen_loss.csv", "\n".join(lines) + "\n")

    plt.rcParams["svg.hashsalt"] = "nmer"
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot([e.epoch for e in record.epochs], curve, color="tab:blue")
    ax.set_xlabel("epoch")
    ax.set_ylabel("generation loss")
    ax.set_title("L_gen convergence")
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_bytes(out / "gen_loss.svg", buf.getvalue())
    print(f"wrote {out / 'gen_loss.csv'} and {out / 'gen_loss.svg'}")
    return 0


# --- parser ------------------------------------------------------------------

def _intensity(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"intensity must be an integer, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="nmer", description=__doc__.splitlines()[0], formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", default=None, help="YAML run config")
        sp.add_argument("--out", default=None, help=f"output root (overrides config; env {OUT_ENV})")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="override the config seed")

    sp = sub.add_parser("synth", help="generate a synthetic dataset", formatter_class=fmt)
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("teacher-train", help="pretrain the clean-data teacher", formatter_class=fmt)
    common(sp)
    sp.set_defaults(func=cmd_teacher_train)

    sp = sub.add_parser("train", help="train NMER against the teacher", formatter_class=fmt)
    common(sp)
    sp.add_argument("--teacher", default=None, help="teacher checkpoint (default <out>/teacher/teacher.pt)")
    sp.add_argument("--ablation", action="store_true", help="train the w/o-VAE variant")
    sp.add_argument("--repeats", type=int, default=1, help="independent runs with seeds seed..seed+N-1")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("corrupt", help="apply the noise scheduler to a feature dataset", formatter_class=fmt)
    common(sp)
    sp.add_argument("--input", required=True, help="source dataset directory")
    sp.add_argument("--output", required=True, help="destination dataset directory")
    sp.add_argument("--noise-type", choices=("gaussian", "impulse"), default="gaussian")
    sp.add_argument("--t", type=_intensity, required=True, help="noise intensity step 0..T")
    sp.add_argument("--condition", default="a", help="clean modalities, e.g. 'a,l'")
    sp.set_defaults(func=cmd_corrupt)

    sp = sub.add_parser("evaluate", help="evaluate a checkpoint over the noise grid", formatter_class=fmt)
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--noise-type", choices=("gaussian", "impulse"), default=None,
                    help="restrict to one noise type (default: config)")
    sp.add_argument("--t", type=_intensity, default=None, help="restrict to one intensity 1..T")
    sp.add_argument("--condition", default=None, help="restrict to one condition")
    sp.add_argument("--eval-draws", type=int, default=None, help="corruption draws per cell (default: config)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="average results over runs and compare variants", formatter_class=fmt)
    sp.add_argument("run_dirs", nargs="+")
    sp.add_argument("--out", default=None, help="report directory")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("plot-loss", help="emit the L_gen trajectory as csv + svg", formatter_class=fmt)
    sp.add_argument("run_dir")
    sp.add_argument("--out", default=None, help="output directory (default: run_dir)")
    sp.set_defaults(func=cmd_plot_loss)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        msg = str(e).replace("\n", " ")
        print(f"error: kind={type(e).__name__} msg={msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
