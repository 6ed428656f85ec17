"""Full desk-scale experiment on the separable synthetic set.

synth -> teacher -> NMER and w/o-VAE over N seeds -> evaluate -> report -> L_gen plot.

    python3 scripts/run_synthetic_experiment.py --out runs/synthetic --repeats 3
"""
import argparse
import sys
import time
from pathlib import Path

from nmer.cli import main as nmer


def step(*argv):
    t0 = time.perf_counter()
    rc = nmer([str(a) for a in argv])
    if rc != 0:
        sys.exit(rc)
    print(f"  [{time.perf_counter() - t0:6.1f}s] {argv[0]}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(Path(__file__).resolve().parents[1] / "configs" / "synthetic.yaml"))
    p.add_argument("--out", default="runs/synthetic")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    out = Path(args.out)
    common = ["--config", args.config, "--out", out, "--seed", args.seed]
    step("synth", *common)
    step("teacher-train", *common)
    run_dirs = []
    for variant in ("nmer", "ablation"):
        step("train", *common, "--repeats", args.repeats, *(["--ablation"] if variant == "ablation" else []))
        for r in range(args.repeats):
            d = out / variant / f"seed_{args.seed + r}"
            step("evaluate", *common, "--checkpoint", d / "model.pt")
            run_dirs.append(d)
    step("report", *run_dirs, "--out", out / "report")
    step("plot-loss", out / "nmer" / f"seed_{args.seed}", "--out", out / "report")
    print((out / "report" / "results.md").read_text().split("\n\n")[0])


if __name__ == "__main__":
    main()
