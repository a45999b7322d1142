"""Line plots of experiment results: mean curve and a +-1 std band per series.
"""

import configparser
import os
from dataclasses import dataclass
from typing import Optional, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

PLOT_KEYS = ("x", "y", "series", "title", "xlabel", "ylabel", "logx", "logy", "categorical", "rows")


class PlotError(ValueError):
    """The CSV or the plot spec cannot produce a plot."""


@dataclass(frozen=True)
class PlotSpec:
    """What to plot from a results CSV.

    Attributes:
        x: Column on the x axis.
        y: One or more metric columns; each becomes a series when `series` is unset.
        series: Optional column whose values split the rows into series.
        categorical: Treat x values as categories placed in order of appearance.
        rows: Value of the row_type column to aggregate; ignored without that column.
    """

    x: str
    y: Tuple[str, ...]
    series: Optional[str] = None
    title: str = ""
    xlabel: Optional[str] = None
    ylabel: Optional[str] = None
    logx: bool = False
    logy: bool = False
    categorical: bool = False
    rows: str = "seed"

    def __post_init__(self):
        y = (self.y,) if isinstance(self.y, str) else tuple(self.y)
        if not y:
            raise PlotError("Plot spec needs at least one y column")
        object.__setattr__(self, "y", y)

    @property
    def columns(self):
        return [self.x, *self.y] + ([self.series] if self.series else [])


def load_plot_spec(path: str):
    """Reads a plot spec from the [plot] section of an INI file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(path, encoding="utf-8"):
        raise PlotError(f"Cannot read plot spec {path}")
    if not parser.has_section("plot"):
        raise PlotError(f"{path}: missing [plot] section")

    section = parser["plot"]
    unknown = [k for k in section if k not in PLOT_KEYS]
    if unknown:
        raise PlotError(f"{path}: unknown key plot.{unknown[0]}")
    for key in ("x", "y"):
        if not section.get(key):
            raise PlotError(f"{path}: missing key plot.{key}")

    try:
        return PlotSpec(
            x=section["x"].strip(),
            y=tuple(v.strip() for v in section["y"].split(",") if v.strip()),
            series=section.get("series", "").strip() or None,
            title=section.get("title", ""),
            xlabel=section.get("xlabel"),
            ylabel=section.get("ylabel"),
            logx=section.getboolean("logx", False),
            logy=section.getboolean("logy", False),
            categorical=section.getboolean("categorical", False),
            rows=section.get("rows", "seed").strip(),
        )
    except ValueError as ex:
        raise PlotError(f"{path}: {ex}")


def aggregate(df: pd.DataFrame, spec: PlotSpec):
    """Mean and population std per (series, x).

    Returns:
        A dict label -> DataFrame with columns x, mean, std sorted by x
        (or in order of appearance for categorical x).
    """
    if "row_type" in df.columns:
        df = df[df["row_type"] == spec.rows]

    groups = {}
    for y in spec.y:
        if spec.series:
            parts = [(f"{s}" if len(spec.y) == 1 else f"{s} {y}", g) for s, g in df.groupby(spec.series, sort=False)]
        else:
            parts = [(y, df)]

        for label, g in parts:
            values = g[[spec.x, y]].dropna(subset=[y])
            if values.empty:
                continue
            stats = values.groupby(spec.x, sort=not spec.categorical)[y].agg(mean="mean", std=lambda v: float(np.std(v)))
            groups[label] = stats.reset_index().rename(columns={spec.x: "x"})

    return groups


def plot(csv_path: str, spec: PlotSpec, out_path: str):
    """Writes an SVG line plot of a results CSV.

    Raises:
        PlotError: On an empty CSV, missing columns or nothing to plot. No
            file is written then.
    """
    try:
        df = pd.read_csv(csv_path)
    except pd.errors.EmptyDataError:
        raise PlotError(f"{csv_path} is empty")

    if df.empty:
        raise PlotError(f"{csv_path} has no rows")

    missing = [c for c in spec.columns if c not in df.columns]
    if missing:
        raise PlotError(f"{csv_path} is missing columns {missing}")

    groups = aggregate(df, spec)
    if not groups:
        raise PlotError(f"{csv_path} has no values for {list(spec.y)}")

    fig, ax = plt.subplots(figsize=(6, 4))
    categories = []
    if spec.categorical:
        for g in groups.values():
            categories.extend(v for v in g["x"].astype(str) if v not in categories)

    for label, g in groups.items():
        x = np.array([categories.index(v) for v in g["x"].astype(str)]) if spec.categorical else g["x"].to_numpy(float)
        mean, std = g["mean"].to_numpy(float), g["std"].to_numpy(float)
        line = ax.plot(x, mean, marker="o", label=str(label))[0]
        ax.fill_between(x, mean - std, mean + std, color=line.get_color(), alpha=0.2, linewidth=0)

    if spec.categorical:
        ax.set_xticks(range(len(categories)))
        ax.set_xticklabels(categories, rotation=30, ha="right")
    if spec.logx:
        ax.set_xscale("log", base=2)
    if spec.logy:
        ax.set_yscale("log")

    ax.set_xlabel(spec.xlabel or spec.x)
    ax.set_ylabel(spec.ylabel or (spec.y[0] if len(spec.y) == 1 else "value"))
    if spec.title:
        ax.set_title(spec.title)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()

    if os.path.dirname(out_path):
        os.makedirs(os.path.dirname(out_path), exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)

    return out_path
