"""Report tables and their CSV / Markdown / JSON renderings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

DASH = "—"


@dataclass(frozen=True)
class Cell:
    """One reported number and the configuration that produced it."""

    value: float | None
    bits: int | None = None
    n_speakers: int | None = None
    k_samples: int | None = None
    seed: int | None = None
    note: str | None = None

    def to_dict(self):
        return {
            "value": self.value,
            "bits": self.bits,
            "n_speakers": self.n_speakers,
            "k_samples": self.k_samples,
            "seed": self.seed,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class ReportTable:
    name: str
    caption: str
    row_header: str
    columns: list
    rows: list = field(default_factory=list)  # [(label, [Cell, ...]), ...]
    units: str = "bits"

    def __post_init__(self):
        for label, cells in self.rows:
            if len(cells) != len(self.columns):
                raise ValueError(f"row {label!r} has {len(cells)} cells for {len(self.columns)} columns")
            for c in cells:
                if c.value is not None and not math.isfinite(c.value):
                    raise ValueError(f"row {label!r} has a non-finite cell")

    def to_dict(self):
        return {
            "name": self.name,
            "caption": self.caption,
            "row_header": self.row_header,
            "columns": list(self.columns),
            "units": self.units,
            "rows": [{"label": label, "cells": [c.to_dict() for c in cells]} for label, cells in self.rows],
        }

    @classmethod
    def from_dict(cls, d):
        rows = [(r["label"], [Cell.from_dict(c) for c in r["cells"]]) for r in d["rows"]]
        return cls(d["name"], d["caption"], d["row_header"], list(d["columns"]), rows, d.get("units", "bits"))


def _fmt(cell):
    return DASH if cell.value is None else f"{cell.value:.2f}"


def _md(text):
    return str(text).replace("|", "\\|")


def render(table: ReportTable, format="markdown"):
    if format == "json":
        return json.dumps(table.to_dict(), sort_keys=True, indent=2) + "\n"
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([table.row_header] + list(table.columns))
        for label, cells in table.rows:
            w.writerow([label] + [_fmt(c) for c in cells])
        return buf.getvalue()
    if format in ("markdown", "md"):
        lines = [
            f"**{table.caption}** ({table.units})",
            "",
            "| " + " | ".join(_md(h) for h in [table.row_header] + list(table.columns)) + " |",
            "|" + "|".join(["---"] * (len(table.columns) + 1)) + "|",
        ]
        for label, cells in table.rows:
            lines.append("| " + " | ".join([_md(label)] + [_fmt(c) for c in cells]) + " |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {format!r}")
