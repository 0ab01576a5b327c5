import numpy as np
import pandas as pd

from hardhank.analysis import (
    AggregateDistribution,
    DistStats,
    DivergenceResult,
    IRF_VARIABLES,
    IrfResult,
    MpcProfile,
    SweepResult,
)
from hardhank.dataset import (
    AGGDIST_COLUMNS,
    DIST_COLUMNS,
    DIVERGE_COLUMNS,
    IRF_COLUMNS,
    MPC_COLUMNS,
    SWEEP_COLUMNS,
    build_aggdist_long_df,
    build_diverge_df,
    build_dist_df,
    build_irf_long_df,
    build_mpc_df,
    build_sweep_df,
    write_csv,
    write_tables,
)


def _irf(splits=("all", "non_zlb"), horizons=3):
    n_vars = len(IRF_VARIABLES)
    raw = {split: np.arange(horizons * n_vars, dtype=float).reshape(horizons, n_vars) for split in splits}
    return IrfResult(
        shock="tfp",
        size_sd=1.0,
        horizons=horizons,
        variables=IRF_VARIABLES,
        responses={split: values / 2.0 for split, values in raw.items()},
        raw=raw,
        norm_mean={},
        norm_std={},
        counts={"all": 2, "zlb": 0, "non_zlb": 2},
    )


def test_build_irf_long_df_shape_and_values():
    out = build_irf_long_df(_irf())

    assert list(out.columns) == IRF_COLUMNS
    assert len(out) == 2 * len(IRF_VARIABLES) * 3
    assert set(out["split"]) == {"all", "non_zlb"}
    # empty zlb split is left out rather than written as NaN rows
    assert "zlb" not in set(out["split"])

    y = out[(out["split"] == "all") & (out["variable"] == "y")]
    assert y["horizon"].tolist() == [1, 2, 3]
    n_vars = len(IRF_VARIABLES)
    assert y["raw"].tolist() == [0.0, float(n_vars), float(2 * n_vars)]
    assert (y["value"] * 2.0).tolist() == y["raw"].tolist()


def test_build_irf_long_df_without_splits_keeps_columns():
    out = build_irf_long_df(_irf(splits=()))
    assert list(out.columns) == IRF_COLUMNS
    assert out.empty


def test_build_mpc_df_is_state_major():
    profile = MpcProfile(
        wealth=np.array([[1.0, 2.0], [3.0, 4.0]]),
        consumption=np.array([[0.5, 1.0], [1.5, 2.0]]),
        mpc=np.array([[0.1, 1.0], [0.2, np.nan]]),
        bound=np.array([[False, True], [False, False]]),
    )
    out = build_mpc_df(profile)

    assert list(out.columns) == MPC_COLUMNS
    assert out["state"].tolist() == [0, 0, 1, 1]
    assert out["agent"].tolist() == [0, 1, 0, 1]
    assert out["wealth"].tolist() == [1.0, 2.0, 3.0, 4.0]
    assert out["bound_flag"].tolist() == [False, True, False, False]
    assert out["mpc"].isna().tolist() == [False, False, False, True]


def test_build_dist_df_lists_every_statistic():
    stats = DistStats(0.25, 0.1, 0.2, 0.05, 0.0, 1e-3)
    out = build_dist_df(stats)
    assert list(out.columns) == DIST_COLUMNS
    assert out.set_index("statistic")["value"].to_dict() == {
        "constrained_proportion": 0.25,
        "wealth_std": 0.1,
        "consumption_std": 0.2,
        "gini": 0.05,
        "net_bond_supply": 0.0,
        "output_gap_to_consumption": 1e-3,
    }


def test_build_sweep_df():
    result = SweepResult(
        bbar=np.array([-0.5, -0.1]),
        constrained_proportion=np.array([0.0, 0.3]),
        below_bound_mass=np.array([0.0, 0.0]),
        cdf_at_default=np.array([0.1, 0.1]),
    )
    out = build_sweep_df(result)
    assert list(out.columns) == SWEEP_COLUMNS
    assert out["bbar"].tolist() == [-0.5, -0.1]


def test_build_diverge_df_marks_truncation():
    result = DivergenceResult(np.array([1.0, 2.0]), np.array([0.0, 0.5]), truncated=True, failed_period=2)
    out = build_diverge_df(result)
    assert list(out.columns) == DIVERGE_COLUMNS
    assert out["period"].tolist() == [1, 2]
    assert out["truncated"].all()


def test_build_diverge_df_empty():
    out = build_diverge_df(DivergenceResult(np.array([]), np.array([])))
    assert list(out.columns) == DIVERGE_COLUMNS
    assert out.empty


def test_build_aggdist_long_df_attaches_markers():
    result = AggregateDistribution(
        series={"pi": np.array([1.0, 1.01]), "n": np.array([0.9, 1.1])},
        markers={"pi": 1.005},
    )
    out = build_aggdist_long_df(result)
    assert list(out.columns) == AGGDIST_COLUMNS
    assert out[out["variable"] == "pi"]["steady_state"].tolist() == [1.005, 1.005]
    # no steady-state marker for hours
    assert out[out["variable"] == "n"]["steady_state"].isna().all()
    assert out["sample"].tolist() == [0, 1, 0, 1]


def test_write_csv_creates_parent_and_round_trips(tmp_path):
    df = build_diverge_df(DivergenceResult(np.array([1.0, 2.0]), np.array([0.0, 0.5])))
    path = write_csv(df, tmp_path / "nested" / "diverge.csv")

    assert path.exists()
    loaded = pd.read_csv(path)
    assert list(loaded.columns) == DIVERGE_COLUMNS
    assert len(loaded) == 2


def test_write_tables_uses_stems(tmp_path):
    paths = write_tables({"dist": build_dist_df(DistStats(0.0, 0.0, 0.0, 0.0, 0.0, 0.0))}, tmp_path)
    assert [p.name for p in paths] == ["dist.csv"]
    assert pd.read_csv(paths[0])["statistic"].iloc[0] == "constrained_proportion"
