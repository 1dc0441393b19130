"""
Plot-data emission

Rendering is left to external tools; this module only lays result tables out
as whitespace-separated series, one file per method, with a '#' header line
naming the columns.
"""

from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd

FLOAT_FORMAT = "%.9g"


def plot_series(table) -> Dict[str, pd.DataFrame]:
    """
    Wide series per method

    Args:
        table: ResultTable for a single scenario

    Returns:
        method -> DataFrame indexed by sweep value, one column per tier label,
        plus 'ci95' (of the total) for Monte-Carlo coverage methods
    """
    frame = table.frame
    series = {}
    for method in dict.fromkeys(frame["method"]):
        sub = frame[frame["method"] == method]
        tiers = list(dict.fromkeys(sub["tier"]))
        wide = sub.pivot_table(index="sweep_value", columns="tier", values="value", dropna=False)
        wide = wide[[t for t in tiers if t in wide.columns]]
        totals = sub[sub["tier"] == "total"]
        if len(totals) and totals["ci95"].notna().any():
            wide["ci95"] = totals.set_index("sweep_value")["ci95"]
        series[method] = wide.sort_index()
    return series


def format_series(wide: pd.DataFrame, index_label: str = "sweep_value") -> str:
    """Series as text: a '#' header line, then one whitespace-separated row per sweep value."""
    header = "# " + " ".join([index_label] + [str(c) for c in wide.columns])
    body = wide.reset_index().to_csv(sep=" ", header=False, index=False, float_format=FLOAT_FORMAT,
                                     na_rep="nan", lineterminator="\n")
    return header + "\n" + body


def write_plotdata(table, out_dir, stem: str) -> List[Path]:
    """Write <stem>.<method>.dat for every method in the table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    label = table.variable if table.variable else "sweep_value"
    paths = []
    for method, wide in plot_series(table).items():
        path = out / f"{stem}.{method}.dat"
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(format_series(wide, label))
        paths.append(path)
    return paths


def terrestrial_share(table, method: str) -> pd.Series:
    """Fraction of the total carried by the first tier, per sweep value."""
    wide = plot_series(table)[method]
    tiers = [c for c in wide.columns if c not in ("total", "none", "ci95")]
    if not tiers:
        return pd.Series(dtype=float)
    first = wide[tiers[0]]
    if "total" in wide.columns:
        with np.errstate(divide="ignore", invalid="ignore"):
            return first / wide["total"]
    return first
