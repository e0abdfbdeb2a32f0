"""Run artifacts: delimited series output, archive snapshots, and rendered figures.

Every run directory gets `report.json`, `series.csv`, and `archive.json`;
when figures are enabled, a fitness curve and an archive occupancy heatmap
are rendered next to them under `figures/`.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

SERIES_FIELDS = [
    "step",
    "best_fitness",
    "inserted",
    "accepted_new",
    "replaced",
    "discarded",
    "offspring_created",
    "migrations",
    "mutation_failures",
]


def write_json(path: Path, payload: Dict[str, Any]) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_series_csv(path: Path, series: List[Dict[str, Any]]) -> None:
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(SERIES_FIELDS)
        for entry in series:
            writer.writerow(
                [
                    entry["step"],
                    "" if entry.get("best_fitness") is None else repr(entry["best_fitness"]),
                    entry["inserted"],
                    entry["accepted_new"],
                    entry["replaced"],
                    entry["discarded"],
                    entry["offspring_created"],
                    entry["migrations"],
                    sum(entry.get("mutation_failures", {}).values()),
                ]
            )


def render_fitness_curve(series: List[Dict[str, Any]], path: Path, title: str = "") -> None:
    steps = [entry["step"] for entry in series if entry.get("best_fitness") is not None]
    values = [entry["best_fitness"] for entry in series if entry.get("best_fitness") is not None]
    fig, ax = plt.subplots(figsize=(6, 4))
    if steps:
        ax.plot(steps, values, marker="o", linewidth=1.5)
    else:
        ax.text(0.5, 0.5, "no valid elites yet", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("generation")
    ax.set_ylabel("best fitness")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_archive_heatmap(
    island_snapshot: Dict[str, Any], schemas: List[Dict[str, Any]], path: Path
) -> None:
    """Occupancy grid of the first two behavior axes, colored by primary metric."""
    import numpy as np

    space = island_snapshot["space"]
    dims = space["dims"]
    n_x = int(dims[0][1])
    if len(dims) >= 2:
        n_y = int(dims[1][1])
        y_label = dims[1][0]
    elif space.get("validity_dim", True):
        n_y = 2
        y_label = "is_valid"
    else:
        n_y = 1
        y_label = ""
    primary = next((s for s in schemas if s.get("is_primary")), None)
    grid = np.full((n_y, n_x), np.nan)
    for key, elite in island_snapshot.get("cells", {}).items():
        coords = [int(c) for c in key.split(",")]
        x = min(coords[0], n_x - 1)
        y = min(coords[1] if len(coords) > 1 else 0, n_y - 1)
        value = elite["metrics"].get(primary["name"]) if primary else 1.0
        grid[y, x] = value

    fig, ax = plt.subplots(figsize=(7, 3.0 + 0.15 * n_y))
    image = ax.imshow(grid, aspect="auto", origin="lower", cmap="viridis")
    ax.set_xlabel(f"{dims[0][0]} bin")
    ax.set_ylabel(y_label)
    ax.set_title(f"archive occupancy: {island_snapshot.get('island', '')}")
    fig.colorbar(image, ax=ax, label=primary["name"] if primary else "occupied")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_run_artifacts(
    out_dir: Path,
    run_report: Dict[str, Any],
    snapshot: Dict[str, Any],
    figures: bool = True,
) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "report.json", run_report)
    write_json(out_dir / "archive.json", snapshot)
    write_series_csv(out_dir / "series.csv", run_report.get("series", []))
    if figures:
        figures_dir = out_dir / "figures"
        figures_dir.mkdir(exist_ok=True)
        render_fitness_curve(
            run_report.get("series", []),
            figures_dir / "fitness_curve.png",
            title=run_report.get("problem", ""),
        )
        for island_snapshot in snapshot.get("islands", []):
            name = island_snapshot.get("island", "island")
            render_archive_heatmap(
                island_snapshot,
                snapshot.get("schemas", []),
                figures_dir / f"archive_{name}.png",
            )


def format_archive_table(snapshot: Dict[str, Any]) -> str:
    """Human-readable occupancy listing, metrics rounded per schema precision."""
    schemas = snapshot.get("schemas", [])
    precision = {s["name"]: int(s.get("precision", 4)) for s in schemas}
    primary = next((s for s in schemas if s.get("is_primary")), None)
    lines = []
    islands = snapshot.get("islands", [])
    if not islands or all(not i.get("cells") for i in islands):
        return "empty archive"
    for island in islands:
        cells = island.get("cells", {})
        lines.append(f"{island.get('island', 'island')}: {len(cells)} occupied cells")
        best_key, best_value = None, None
        for key, elite in sorted(cells.items()):
            metrics = elite["metrics"]
            rendered = ", ".join(
                f"{name}={metrics[name]:.{precision.get(name, 4)}f}"
                for name in sorted(metrics)
            )
            lines.append(f"  cell ({key}): {elite['program_id'][:8]} {rendered}")
            if primary and metrics.get("is_valid") == 1:
                value = metrics.get(primary["name"])
                better = (
                    best_value is None
                    or (value > best_value) == bool(primary["higher_is_better"])
                )
                if value is not None and better:
                    best_key, best_value = key, value
        if primary and best_value is not None:
            lines.append(
                f"  best {primary['name']}: {best_value:.{precision.get(primary['name'], 4)}f}"
                f" at cell ({best_key})"
            )
    return "\n".join(lines)
