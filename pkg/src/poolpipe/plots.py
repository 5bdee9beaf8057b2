"""PNG renderings of sweep CSV rows (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path


def plot_sweep(rows: list[dict], path: str | Path, target: float = 0.99) -> Path:
    """Attainment vs load factor, one line per (mode, scheduler)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series: dict[str, list[tuple[float, float, bool]]] = {}
    for r in rows:
        label = f"{r['mode']}/{r['scheduler']}"
        series.setdefault(label, []).append((float(r["load_factor"]), float(r["attainment"]),
                                             bool(int(r.get("aborted", 0)))))
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, pts in sorted(series.items()):
        pts.sort()
        line, = ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
        cut = [p for p in pts if p[2]]
        if cut:
            # runs stopped once the target was out of reach: attainment is a lower bound
            ax.plot([p[0] for p in cut], [p[1] for p in cut], linestyle="none", marker="x",
                    markersize=9, color=line.get_color())
    ax.axhline(target, color="grey", linestyle="--", linewidth=1)
    ax.set_xlabel("load factor")
    ax.set_ylabel("SLO attainment (x: stopped early, lower bound)")
    ax.set_xlim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_max_load(summary: list[dict], path: str | Path) -> Path:
    """Bar chart of max load factor per (mode, scheduler)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [f"{s['mode']}/{s['scheduler']}" for s in summary]
    values = [float(s["max_load_factor"]) for s in summary]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, values)
    ax.set_ylabel("max load factor at target attainment")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
