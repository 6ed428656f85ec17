"""Plot the signal and noise scales of the noise schedule against the step t."""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from nmer.noise import build_schedule  # noqa: E402


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="schedule.png")
    p.add_argument("--kind", default="scaled_linear", choices=("scaled_linear", "linear"))
    args = p.parse_args()

    s = build_schedule(kind=args.kind)
    t = np.arange(s.T + 1)
    fig, ax = plt.subplots(figsize=(4.5, 3))
    ax.plot(t, np.sqrt(s.alpha_bars), label="signal scale")
    ax.plot(t, np.sqrt(1 - s.alpha_bars), label="noise scale")
    for mark in (20, 40, 60, 80, 100):
        ax.axvline(mark, color="0.85", lw=0.8, zorder=0)
    ax.set_xlabel("t")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
