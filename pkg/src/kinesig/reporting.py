"""Plain-text and JSON result tables.

Each table is built once as rows of :class:`Cell` values; the text and JSON
renderings read the same cells, so both always carry the same numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .efficiency import EfficiencyReport


def format_millions(count: int) -> str:
    """Parameter count in millions: 3 decimals, trailing zeros dropped, at least 2 kept."""
    s = f"{count / 1e6:.3f}"
    while s.endswith("0") and len(s.split(".")[1]) > 2:
        s = s[:-1]
    return s


@dataclass
class Cell:
    value: float | str | None
    text: str

    @classmethod
    def num(cls, value: float | None, digits: int, suffix: str = "") -> "Cell":
        if value is None:
            return cls(None, "-")
        v = round(float(value), digits)
        return cls(v, f"{v:.{digits}f}{suffix}")

    @classmethod
    def label(cls, text: str) -> "Cell":
        return cls(text, text)


@dataclass
class Table:
    title: str
    columns: list[str]
    rows: list[list[Cell]] = field(default_factory=list)
    groups: list[str | None] = field(default_factory=list)

    def add(self, cells: list[Cell], group: str | None = None) -> None:
        if len(cells) != len(self.columns):
            raise ValueError(f"row has {len(cells)} cells, table has {len(self.columns)} columns")
        self.rows.append(cells)
        self.groups.append(group)

    def to_text(self) -> str:
        widths = [len(c) for c in self.columns]
        for row in self.rows:
            widths = [max(w, len(c.text)) for w, c in zip(widths, row)]
        line = "+".join("-" * (w + 2) for w in widths)
        fmt = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))
        out = [self.title, fmt(self.columns), line]
        current = None
        for row, group in zip(self.rows, self.groups):
            if group is not None and group != current:
                out.append(f"[{group}]")
                current = group
            out.append(fmt([c.text for c in row]))
        return "\n".join(out)

    def to_json(self) -> dict:
        return {
            "title": self.title,
            "columns": self.columns,
            "rows": [
                {**({"group": g} if g else {}), **{col: c.value for col, c in zip(self.columns, row)}}
                for row, g in zip(self.rows, self.groups)
            ],
        }


# -- row naming --------------------------------------------------------------
_GROUPS = {"str": "Spatial Transformer", "ttr": "Temporal Transformer",
           "msttr": "Temporal Transformer", "dual": "Dual-Stream Fusion"}


def method_name(metrics) -> tuple[str, str]:
    """(method, training strategy) for a run's Metrics."""
    cfg = metrics.config
    kind = metrics.model
    if kind == "str":
        return "STR", "From scratch"
    if kind == "ttr":
        name = f"TTR (k={cfg.get('k', 9)})"
        return name + (" + Velocity" if cfg.get("velocity") else ""), "From scratch"
    if kind == "msttr":
        return "Multi-Scale TTR", "Multi-scale k=3, 5"
    temporal = "MS-TTR" if cfg.get("temporal", "msttr") == "msttr" else f"TTR (k={cfg.get('k', 9)})"
    return f"STR + {temporal} (Feature Fusion)", "Feature-level fusion"


def head_accuracy(metrics, which: str = "best") -> float:
    summary = metrics.best if which == "best" else metrics.final
    return summary["test_acc"][metrics.head]


# -- tables ----------------------------------------------------------------
def accuracy_table(metrics_list, which: str = "best") -> Table:
    table = Table("Identification accuracy", ["Method", "Accuracy (%)", "Training Strategy"])
    order = {"str": 0, "ttr": 1, "msttr": 2, "dual": 3}
    for m in sorted(metrics_list, key=lambda m: order[m.model]):
        name, strategy = method_name(m)
        table.add([Cell.label(name), Cell.num(100 * head_accuracy(m, which), 2), Cell.label(strategy)],
                  _GROUPS[m.model])
    return table


def velocity_table(metrics_list, which: str = "best") -> Table:
    """Position-input TTR runs are baselines; each velocity run is compared with the first baseline."""
    table = Table("Velocity input on the temporal transformer", ["Method", "Accuracy (%)", "Change"])
    ttr = [m for m in metrics_list if m.model == "ttr"]
    base = next((m for m in ttr if not m.config.get("velocity")), None)
    for m in ttr:
        acc = 100 * head_accuracy(m, which)
        name, _ = method_name(m)
        if m is base or base is None:
            change = Cell.label("Baseline") if m is base else Cell.label("-")
        else:
            change = Cell.num(acc - 100 * head_accuracy(base, which), 2, "%")
        table.add([Cell.label(name), Cell.num(acc, 2), change])
    return table


def efficiency_table(reports: list[EfficiencyReport]) -> Table:
    table = Table("Computational efficiency", ["Model", "Params (M)", "FLOPs (G)", "FPS"])
    for r in reports:
        params = format_millions(r.params)
        fps = r.throughput.fps_mean if r.throughput else None
        table.add([Cell.label(r.model), Cell(float(params), params), Cell.num(r.flops / 1e9, 3), Cell.num(fps, 2)])
    return table


def report(metrics_list=(), efficiency_list=(), which: str = "best") -> tuple[str, dict]:
    """Render all three tables; returns (text, JSON-ready dict)."""
    tables = [accuracy_table(metrics_list, which), velocity_table(metrics_list, which),
              efficiency_table(list(efficiency_list))]
    text = "\n\n".join(t.to_text() for t in tables) + "\n"
    data = {"checkpoint": which, "tables": [t.to_json() for t in tables]}
    return text, data


def write_report(text: str, data: dict, text_path, json_path) -> None:
    with open(text_path, "w") as fh:
        fh.write(text)
    with open(json_path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
