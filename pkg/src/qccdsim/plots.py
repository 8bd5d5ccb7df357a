"""Optional PNG figures for the CSV outputs (requires matplotlib)."""
from __future__ import annotations

import csv
from pathlib import Path


def _read(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _num(x):
    try:
        return float(x)
    except ValueError:
        return None


def render_directory(out: Path) -> list[Path]:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as e:
        raise RuntimeError("figures need matplotlib: pip install 'artifact[plots]'") from e
    made = []
    for path in sorted(Path(out).glob("*.csv")):
        header, rows = _read(path)
        if not rows or len(header) < 2:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.5))
        x = [_num(r[0]) for r in rows]
        if path.name.startswith("sweep_single_ion"):
            groups = {}
            for r in rows:
                groups.setdefault((r[1], r[2]), []).append((float(r[0]), float(r[3])))
            for (nv, d), pts in groups.items():
                ax.semilogy(*zip(*pts), label=f"n_val={nv}, d={float(d):.0f} um")
            ax.set_ylabel(header[3])
        elif path.name.startswith("all2all"):
            ax.semilogy([int(r[0]) for r in rows], [float(r[-1]) for r in rows], "o-")
            ax.set_ylabel(header[-1])
        else:
            numeric = [i for i in range(1, len(header)) if all(_num(r[i]) is not None for r in rows)]
            if None in x or not numeric:
                plt.close(fig)
                continue
            for i in numeric:
                ax.plot(x, [float(r[i]) for r in rows], ".-", label=header[i])
        ax.set_xlabel(header[0])
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=7)
        fig.tight_layout()
        png = path.with_suffix(".png")
        fig.savefig(png, dpi=120, metadata={"Software": None})
        plt.close(fig)
        made.append(png)
    return made
