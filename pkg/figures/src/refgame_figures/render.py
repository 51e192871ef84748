"""The five figure kinds and their CSV schemas.

difficulty_scatter  per_class.csv        difficulty vs mean conversation length
accuracy_bars       length_bins.csv      accuracy per realized length
entropy_curves      series,step,value    per-step mean entropy lines
bandwidth_bars      sweep.csv            held-out accuracy per message dimension
learning_curves     one or more log.csv  validation accuracy per epoch

Each render writes the image plus `<image>.points.json`, the exact point set
that was drawn.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


class SchemaError(Exception):
    """Input CSV does not carry the columns the figure kind needs."""


@dataclass
class FigureSpec:
    kind: str
    inputs: list[str]
    output: str
    labels: list[str] | None = None
    title: str | None = None


@dataclass
class Points:
    points: list[dict] = field(default_factory=list)

    def add(self, series: str | None, x: float, y: float) -> None:
        self.points.append({"series": series, "x": x, "y": y})


def _read_csv(path: str, required: list[str]) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        columns = reader.fieldnames or []
        missing = [c for c in required if c not in columns]
        if missing:
            raise SchemaError(
                f"{path}: missing columns {missing} (found {columns})")
        return list(reader)


def _finish(fig, ax, spec: FigureSpec, pts: Points, xlabel: str, ylabel: str) -> None:
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if spec.title:
        ax.set_title(spec.title)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, bbox_inches="tight")
    plt.close(fig)
    sidecar = out.with_suffix(out.suffix + ".points.json")
    sidecar.write_text(json.dumps({"kind": spec.kind, "points": pts.points},
                                  indent=1, sort_keys=True))


def _render_difficulty_scatter(spec: FigureSpec) -> Points:
    rows = _read_csv(spec.inputs[0], ["class_id", "mean_length", "difficulty"])
    pts = Points()
    fig, ax = plt.subplots(figsize=(5, 4))
    xs, ys = [], []
    for row in rows:
        if row["difficulty"] in ("", None):
            continue
        x, y = float(row["difficulty"]), float(row["mean_length"])
        xs.append(x)
        ys.append(y)
        pts.add(row.get("name") or row["class_id"], x, y)
    ax.scatter(xs, ys)
    _finish(fig, ax, spec, pts, "difficulty score (higher = easier)",
            "mean conversation length")
    return pts


def _render_accuracy_bars(spec: FigureSpec) -> Points:
    rows = _read_csv(spec.inputs[0], ["length", "count", "acc_at_1", "acc_at_k"])
    pts = Points()
    fig, ax = plt.subplots(figsize=(5, 4))
    lengths = [float(r["length"]) for r in rows]
    for key, offset in (("acc_at_1", -0.2), ("acc_at_k", 0.2)):
        vals = [float(r[key]) for r in rows]
        ax.bar([x + offset for x in lengths], vals, width=0.4, label=key)
        for x, v in zip(lengths, vals):
            pts.add(key, x, v)
    ax.legend()
    _finish(fig, ax, spec, pts, "conversation length", "accuracy")
    return pts


def _render_entropy_curves(spec: FigureSpec) -> Points:
    pts = Points()
    fig, ax = plt.subplots(figsize=(5, 4))
    for path in spec.inputs:
        rows = _read_csv(path, ["series", "step", "value"])
        by_series: dict[str, list[tuple[float, float]]] = {}
        for row in rows:
            by_series.setdefault(row["series"], []).append(
                (float(row["step"]), float(row["value"])))
        for series, data in by_series.items():
            xs = [d[0] for d in data]
            ys = [d[1] for d in data]
            ax.plot(xs, ys, marker="o", label=series)
            for x, y in data:
                pts.add(series, x, y)
    if pts.points:
        ax.legend()
    _finish(fig, ax, spec, pts, "step", "mean entropy (nats)")
    return pts


def _render_bandwidth_bars(spec: FigureSpec) -> Points:
    rows = _read_csv(spec.inputs[0], ["dim", "split", "acc_at_k", "status"])
    pts = Points()
    fig, ax = plt.subplots(figsize=(5, 4))
    by_split: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        if row["status"] != "ok" or row["acc_at_k"] in ("", None):
            continue
        by_split.setdefault(row["split"], []).append(
            (float(row["dim"]), float(row["acc_at_k"])))
    n = max(len(by_split), 1)
    for i, (split, data) in enumerate(sorted(by_split.items())):
        positions = [j + (i - (n - 1) / 2) * 0.8 / n for j, _ in enumerate(data)]
        ax.bar(positions, [d[1] for d in data], width=0.8 / n, label=split)
        for (x, y) in data:
            pts.add(split, x, y)
        ax.set_xticks(range(len(data)), [str(int(d[0])) for d in data])
    if pts.points:
        ax.legend()
    _finish(fig, ax, spec, pts, "message dimension", "accuracy@K")
    return pts


def _render_learning_curves(spec: FigureSpec) -> Points:
    pts = Points()
    fig, ax = plt.subplots(figsize=(5, 4))
    labels = spec.labels or [Path(p).parent.name or Path(p).stem for p in spec.inputs]
    if len(labels) != len(spec.inputs):
        raise SchemaError(f"{len(spec.inputs)} inputs but {len(labels)} labels")
    for path, label in zip(spec.inputs, labels):
        rows = _read_csv(path, ["epoch", "val_acc@1"])
        xs = [float(r["epoch"]) for r in rows]
        ys = [float(r["val_acc@1"]) for r in rows]
        ax.plot(xs, ys, label=label)
        for x, y in zip(xs, ys):
            pts.add(label, x, y)
    if pts.points:
        ax.legend()
    _finish(fig, ax, spec, pts, "epoch", "validation accuracy@1")
    return pts


FIGURE_KINDS = {
    "difficulty_scatter": _render_difficulty_scatter,
    "accuracy_bars": _render_accuracy_bars,
    "entropy_curves": _render_entropy_curves,
    "bandwidth_bars": _render_bandwidth_bars,
    "learning_curves": _render_learning_curves,
}


def render(spec: FigureSpec) -> Points:
    """Render one figure; returns the plotted point set (also written as JSON)."""
    try:
        fn = FIGURE_KINDS[spec.kind]
    except KeyError:
        raise SchemaError(
            f"unknown figure kind {spec.kind!r}; known: {sorted(FIGURE_KINDS)}") from None
    if not spec.inputs:
        raise SchemaError("no input CSVs")
    return fn(spec)
