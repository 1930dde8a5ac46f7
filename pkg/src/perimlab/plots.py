"""Optional SVG rendering of a finished run (needs matplotlib)."""

from __future__ import annotations

from pathlib import Path

from .metrics import read_csv


def plot_run(run_dir: str | Path, path: str | Path | None = None) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    run_dir = Path(run_dir)
    mfd = read_csv(run_dir / "mfd.csv")
    gates = read_csv(run_dir / "gates.csv")
    ttt = [float(r["ttt"]) for r in mfd]
    ttd = [float(r["ttd"]) for r in mfd]
    t = [int(r["interval_start"]) for r in mfd]
    queue: dict[int, float] = {}
    for r in gates:
        queue[int(r["t"])] = queue.get(int(r["t"]), 0.0) + float(r["queue"])

    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
    axes[0].scatter(ttt, ttd, s=6)
    axes[0].set(xlabel="PN-TTT per interval (veh*s)", ylabel="PN-TTD (veh*m)", title="MFD")
    axes[1].plot(t, ttt)
    axes[1].set(xlabel="time (s)", ylabel="PN-TTT (veh*s)")
    axes[2].plot(sorted(queue), [queue[k] for k in sorted(queue)])
    axes[2].set(xlabel="time (s)", ylabel="total gate queue (veh)")
    fig.tight_layout()
    out = Path(path) if path else run_dir / "plots.svg"
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out
