"""Loss tables in the optimality / constraints layout and plain-text summaries."""
from typing import Dict, List, Mapping, Union

import numpy as np
import pandas as pd

from .config import REPORT_WINDOW

# (type, component label, loss key) in display order
REPORT_ROWS = [
    ("", "Total Loss", "total"),
    ("Optimality", "Euler Equation Loss", "ee"),
    ("Optimality", "Phillips Curve Loss", "nkpc"),
    ("Optimality", "Labour Supply Loss", "ls"),
    ("Constraints", "KKT Loss", "kkt"),
    ("Constraints", "Output Constraint Loss", "oc"),
    ("Constraints", "Net Supply of Bonds", "rc"),
]
REPORT_COLUMNS = ["type", "component", "key", "value"]
MACHINE_ZERO = 1e-20


def _log_frame(log) -> pd.DataFrame:
    if isinstance(log, pd.DataFrame):
        return log
    return log.to_frame()


def loss_report(log, window: int = REPORT_WINDOW) -> pd.DataFrame:
    """Mean of every loss component over the final ``window`` iterations.

    Args:
        log: A ``TrainLog`` or its frame.
        window: Number of trailing iterations averaged.

    Returns:
        DataFrame with ``REPORT_COLUMNS``, one row per entry of ``REPORT_ROWS``.

    Raises:
        ValueError: The log holds fewer than ``window`` iterations.
    """
    frame = _log_frame(log)
    if len(frame) < window:
        raise ValueError(f"loss report needs at least {window} logged iterations, got {len(frame)}")
    tail = frame.tail(window)
    rows = [
        {"type": kind, "component": label, "key": key, "value": float(tail[key].mean())}
        for kind, label, key in REPORT_ROWS
    ]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def compare_reports(reports: Mapping[str, pd.DataFrame]) -> pd.DataFrame:
    """Lay several loss reports side by side, one value column per label."""
    if not reports:
        raise ValueError("compare_reports needs at least one report")
    base = pd.DataFrame(REPORT_ROWS, columns=["type", "component", "key"])
    for label, report in reports.items():
        values = report.set_index("key")["value"]
        base[label] = base["key"].map(values)
    return base


def loss_status(key: str, value: float) -> str:
    """Return 'exact', 'penalised' or 'failed' for one loss component.

    Precedence: a non-finite value is 'failed' whatever the component.
    """
    if not np.isfinite(value):
        return "failed"
    if key in ("kkt", "oc", "rc", "ls") and abs(value) <= MACHINE_ZERO:
        return "exact"
    return "penalised"


def status_counts(report: pd.DataFrame) -> Dict[str, int]:
    """Aggregate status counts over the constraint and optimality rows."""
    counts = {"total": 0, "exact": 0, "penalised": 0, "failed": 0}
    for key, value in zip(report["key"], report["value"]):
        if key == "total":
            continue
        counts["total"] += 1
        counts[loss_status(key, value)] += 1
    return counts


def format_report(reports: Union[pd.DataFrame, Mapping[str, pd.DataFrame]], title: str = "Loss Report") -> str:
    """Render one report or a comparison as fixed-width text, closed by status counts."""
    labelled = dict(reports) if isinstance(reports, Mapping) else {"": reports}
    table = compare_reports(reports) if isinstance(reports, Mapping) else reports.rename(columns={"value": "mean"})
    value_columns = [col for col in table.columns if col not in ("type", "component", "key")]

    lines: List[str] = [title, "=" * 80]
    header = f"{'Type':<12}{'Component':<26}" + "".join(f"{col:>14}" for col in value_columns)
    lines.append(header)
    lines.append("-" * len(header))
    for _, row in table.iterrows():
        cells = "".join(f"{row[col]:>14.2e}" for col in value_columns)
        lines.append(f"{row['type']:<12}{row['component']:<26}{cells}")
    lines.append("=" * 80)
    for label, report in labelled.items():
        counts = status_counts(report)
        prefix = f"Status [{label}]" if label else "Status"
        lines.append(
            f"{prefix}: {counts['exact']} exact, {counts['penalised']} penalised, "
            f"{counts['failed']} failed (of {counts['total']})"
        )
    return "\n".join(lines) + "\n"


__all__ = [
    "MACHINE_ZERO",
    "REPORT_COLUMNS",
    "REPORT_ROWS",
    "compare_reports",
    "format_report",
    "loss_report",
    "loss_status",
    "status_counts",
]
