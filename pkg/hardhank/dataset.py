"""Long-format tables behind every analysis CSV.

Responses and profiles are emitted as one row per observation, so new
variables or splits arrive as new rows, never new columns.
"""
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from .analysis import AggregateDistribution, DistStats, DivergenceResult, IrfResult, MpcProfile, SweepResult
from .config import logger

IRF_COLUMNS = ["horizon", "variable", "split", "value", "raw"]
MPC_COLUMNS = ["state", "agent", "wealth", "c", "mpc", "bound_flag"]
DIST_COLUMNS = ["statistic", "value"]
SWEEP_COLUMNS = ["bbar", "constrained_proportion", "below_bound_mass", "cdf_at_default"]
DIVERGE_COLUMNS = ["period", "total_loss", "net_bond_supply", "truncated"]
AGGDIST_COLUMNS = ["sample", "variable", "value", "steady_state"]


def build_irf_long_df(result: IrfResult) -> pd.DataFrame:
    """One row per (split, variable, horizon); horizons start at 1.

    Splits with no initial states are omitted.
    """
    frames: List[pd.DataFrame] = []
    horizons = np.arange(1, result.horizons + 1)

    for split, responses in result.responses.items():
        raw = result.raw[split]
        for col, variable in enumerate(result.variables):
            frames.append(
                pd.DataFrame(
                    {
                        "horizon": horizons,
                        "variable": variable,
                        "split": split,
                        "value": responses[:, col],
                        "raw": raw[:, col],
                    }
                )
            )

    if not frames:
        return pd.DataFrame(columns=IRF_COLUMNS)

    return pd.concat(frames, ignore_index=True)[IRF_COLUMNS]


def build_mpc_df(profile: MpcProfile) -> pd.DataFrame:
    n_states, n_agents = profile.mpc.shape
    return pd.DataFrame(
        {
            "state": np.repeat(np.arange(n_states), n_agents),
            "agent": np.tile(np.arange(n_agents), n_states),
            "wealth": profile.wealth.ravel(),
            "c": profile.consumption.ravel(),
            "mpc": profile.mpc.ravel(),
            "bound_flag": profile.bound.ravel().astype(bool),
        }
    )[MPC_COLUMNS]


def build_dist_df(stats: DistStats) -> pd.DataFrame:
    return pd.DataFrame(list(asdict(stats).items()), columns=DIST_COLUMNS)


def build_sweep_df(result: SweepResult) -> pd.DataFrame:
    return pd.DataFrame({col: getattr(result, col) for col in SWEEP_COLUMNS})[SWEEP_COLUMNS]


def build_diverge_df(result: DivergenceResult) -> pd.DataFrame:
    """Per-period loss and bond supply; ``truncated`` is repeated on every row."""
    periods = len(result.total_loss)
    return pd.DataFrame(
        {
            "period": np.arange(1, periods + 1),
            "total_loss": result.total_loss,
            "net_bond_supply": result.net_bond_supply,
            "truncated": np.full(periods, result.truncated, dtype=bool),
        }
    )[DIVERGE_COLUMNS]


def build_aggdist_long_df(result: AggregateDistribution) -> pd.DataFrame:
    frames = [
        pd.DataFrame(
            {
                "sample": np.arange(len(values)),
                "variable": variable,
                "value": values,
                "steady_state": result.markers.get(variable, np.nan),
            }
        )
        for variable, values in result.series.items()
    ]
    if not frames:
        return pd.DataFrame(columns=AGGDIST_COLUMNS)
    return pd.concat(frames, ignore_index=True)[AGGDIST_COLUMNS]


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write a frame to CSV without the index. Returns the path written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info("Wrote %s row(s) to %s", len(frame), path)
    return path


def write_tables(tables: Dict[str, pd.DataFrame], out_dir: Union[str, Path]) -> Sequence[Path]:
    """Write ``{stem: frame}`` as ``<out_dir>/<stem>.csv`` in mapping order."""
    return [write_csv(frame, Path(out_dir) / f"{stem}.csv") for stem, frame in tables.items()]


__all__ = [
    "AGGDIST_COLUMNS",
    "DIST_COLUMNS",
    "DIVERGE_COLUMNS",
    "IRF_COLUMNS",
    "MPC_COLUMNS",
    "SWEEP_COLUMNS",
    "build_aggdist_long_df",
    "build_diverge_df",
    "build_dist_df",
    "build_irf_long_df",
    "build_mpc_df",
    "build_sweep_df",
    "write_csv",
    "write_tables",
]
