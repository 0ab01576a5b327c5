"""Diagnostics of a trained policy: simulations, impulse responses, MPCs and sweeps.

Analysis runs use a single calibration (float-valued ``ModelParams``). Each job
draws its randomness from a named stream of the root seed, and fan-out across
states uses a thread pool whose results are collected in submission order, so
every output is reproducible bit for bit.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import autodiff as ad
from .config import (
    BINDING_TOL,
    DEFAULT_BBAR,
    INIT_SCALE,
    MAX_WORKERS,
    NORM_PERIODS,
    NORMALIZATION_FLOOR,
    PARAM_NAMES,
    ZLB_TOL,
    logger,
)
from .errors import NumericalError, ProjectionSpecError, SimulationError
from .losses import batch_loss
from .model import (
    SHOCKS,
    ConstraintRegime,
    EconomyState,
    ModelParams,
    PolicyBundle,
    ShockDraw,
    agent_mean,
    draw_shocks,
    state_transition,
)
from .network import ParamVector
from .regimes import PolicyNetworks, policy_step
from .reporting import loss_report
from .rng import stream
from .trainer import TrainerConfig, draw_init_state, fit

IRF_VARIABLES = (
    "y",
    "c",
    "pi",
    "r",
    "w",
    "n",
    "mc",
    "constrained_proportion",
    "wealth_std",
    "consumption_std",
    "gini",
    "net_bond_supply",
    "agent0_c",
    "agent0_b",
)
AGGREGATE_VARIABLES = ("y", "c", "pi", "w", "r", "n", "mc")
SPLITS = ("all", "zlb", "non_zlb")

_FAILURES = (NumericalError, ProjectionSpecError)


def _flat(theta):
    return theta.values if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)


def single_calibration(params: ModelParams) -> ModelParams:
    """Collapse one-row parameter arrays to floats; reject genuinely batched parameters."""
    values = {}
    for name in PARAM_NAMES:
        val = np.asarray(getattr(params, name), dtype=float)
        if val.size != 1:
            raise ValueError(f"analysis needs a single calibration, '{name}' has {val.size} values")
        values[name] = float(val.reshape(()))
    return replace(params, **values)


def gini(x: np.ndarray) -> np.ndarray:
    """Gini coefficient along the last axis from the mean absolute difference.

    Raises:
        ValueError: Empty input or a non-positive total.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0 or x.shape[-1] == 0:
        raise ValueError("gini needs a non-empty sample")
    mean = x.mean(axis=-1)
    if np.any(mean <= 0):
        raise ValueError("gini needs a positive mean")
    n = x.shape[-1]
    spread = np.abs(x[..., :, None] - x[..., None, :]).sum(axis=(-2, -1))
    return spread / (2.0 * n * n * mean)


def _at_limit(b: np.ndarray, b_min) -> np.ndarray:
    limit = np.asarray(b_min, dtype=float)
    return np.abs(b - limit) <= BINDING_TOL * np.maximum(1.0, np.abs(limit))


def bundle_variables(bundle: PolicyBundle, params: ModelParams) -> Dict[str, np.ndarray]:
    """Per-economy outcome variables of one period, each of shape ``(mb,)``."""
    b = np.asarray(ad.value(bundle.b), dtype=float)
    c = np.asarray(ad.value(bundle.c), dtype=float)

    def column(x):
        return np.asarray(ad.value(x), dtype=float)[:, 0]

    return {
        "y": column(bundle.y),
        "c": c.mean(axis=-1),
        "pi": column(bundle.pi),
        "r": column(bundle.r),
        "w": column(bundle.w),
        "n": column(bundle.n),
        "mc": column(bundle.mc),
        "constrained_proportion": _at_limit(b, params.b_min).mean(axis=-1),
        "wealth_std": b.std(axis=-1),
        "consumption_std": c.std(axis=-1),
        "gini": gini(c),
        "net_bond_supply": b.mean(axis=-1),
        "agent0_c": c[:, 0],
        "agent0_b": b[:, 0],
    }


def _step(theta, nets, state, shocks, params, regime, idio_mode, period: int) -> Tuple[PolicyBundle, EconomyState]:
    try:
        bundle = policy_step(theta, nets, state, shocks, params, regime, idio_mode).detached()
    except _FAILURES as exc:
        raise SimulationError(period, str(exc)) from exc
    following = state_transition(state, bundle).detached()
    for name in ("b_prev", "c_prev", "r_prev"):
        if not np.all(np.isfinite(getattr(following, name))):
            raise SimulationError(period, f"non-finite {name}")
    return bundle, following


def ergodic_sample(
    theta,
    nets: PolicyNetworks,
    params: ModelParams,
    regime: ConstraintRegime,
    burn_in: int,
    count: int,
    seed: int,
    stride: int = 1,
    idio_mode: str = "clip",
) -> EconomyState:
    """Simulate one economy from the starting state and collect ``count`` states.

    Raises:
        SimulationError: The simulation produced a non-finite value; names the period.
    """
    if burn_in < 0 or count < 0 or stride < 1:
        raise ValueError("burn_in and count must be non-negative and stride at least 1")
    params = single_calibration(params)
    theta = _flat(theta)
    state = draw_init_state(params, 1)
    if count == 0:
        return state.take(slice(0, 0))

    rng = stream(seed, "ergodic")
    collected: List[EconomyState] = []
    period = 0
    while len(collected) < count:
        shocks = draw_shocks(rng, 1, params.n_agents)
        _, state = _step(theta, nets, state, shocks, params, regime, idio_mode, period)
        period += 1
        if period > burn_in and (period - burn_in) % stride == 0:
            collected.append(state)
    return EconomyState.stack(collected)


def simulate_series(
    theta,
    nets: PolicyNetworks,
    params: ModelParams,
    regime: ConstraintRegime,
    periods: int,
    seed: int,
    burn_in: int = 0,
    idio_mode: str = "clip",
    name: str = "series",
) -> Dict[str, np.ndarray]:
    """Time series of every outcome variable from one long simulation."""
    params = single_calibration(params)
    theta = _flat(theta)
    state = draw_init_state(params, 1)
    rng = stream(seed, name)
    series: Dict[str, List[float]] = {var: [] for var in IRF_VARIABLES}
    for period in range(burn_in + periods):
        shocks = draw_shocks(rng, 1, params.n_agents)
        bundle, state = _step(theta, nets, state, shocks, params, regime, idio_mode, period)
        if period >= burn_in:
            for var, val in bundle_variables(bundle, params).items():
                series[var].append(float(val[0]))
    return {var: np.asarray(vals) for var, vals in series.items()}


def normalization_constants(
    theta,
    nets: PolicyNetworks,
    params: ModelParams,
    regime: ConstraintRegime,
    periods: int = NORM_PERIODS,
    seed: int = 0,
    idio_mode: str = "clip",
) -> Tuple[Dict[str, float], Dict[str, float]]:
    """Per-variable mean and standard deviation from a long simulation."""
    series = simulate_series(theta, nets, params, regime, periods, seed, idio_mode=idio_mode, name="norm")
    means = {var: float(np.mean(vals)) if len(vals) else 0.0 for var, vals in series.items()}
    stds = {var: float(np.std(vals)) if len(vals) else 0.0 for var, vals in series.items()}
    return means, stds


@dataclass
class IrfResult:
    """Mean response per horizon and variable for each conditioning split.

    Attributes:
        responses: split -> ``(horizons, len(variables))`` normalised responses.
        raw: split -> unnormalised responses (shocked minus baseline).
        counts: split -> number of initial states in the split.
    """

    shock: str
    size_sd: float
    horizons: int
    variables: Tuple[str, ...]
    responses: Dict[str, np.ndarray]
    raw: Dict[str, np.ndarray]
    norm_mean: Dict[str, float]
    norm_std: Dict[str, float]
    counts: Dict[str, int] = field(default_factory=dict)


def _paired_paths(theta, nets, state, params, regime, shock, size_sd, horizons, draws, seed, index, idio_mode):
    """Mean shocked-minus-baseline path for one initial state, ``(horizons, n_vars)``."""
    rng = stream(seed, "irf", index)
    start = state.take(slice(index, index + 1)).repeat(draws)
    draws_seq = [draw_shocks(rng, draws, params.n_agents) for _ in range(horizons)]
    shocked_seq = [draws_seq[0].with_impulse(shock, size_sd)] + draws_seq[1:]

    def run(sequence: List[ShockDraw]) -> np.ndarray:
        current = start
        path = np.empty((horizons, len(IRF_VARIABLES)))
        for period, shocks in enumerate(sequence):
            bundle, current = _step(theta, nets, current, shocks, params, regime, idio_mode, period)
            variables = bundle_variables(bundle, params)
            path[period] = [variables[var].mean() for var in IRF_VARIABLES]
        return path

    return run(shocked_seq) - run(draws_seq)


def generalized_irf(
    theta,
    nets: PolicyNetworks,
    params: ModelParams,
    regime: ConstraintRegime,
    shock: str,
    size_sd: float,
    horizons: int,
    states: EconomyState,
    draws_per_state: int,
    seed: int,
    norm: Optional[Tuple[Dict[str, float], Dict[str, float]]] = None,
    norm_periods: int = NORM_PERIODS,
    idio_mode: str = "clip",
) -> IrfResult:
    """Generalised impulse responses with paired baseline paths.

    For every initial state, ``draws_per_state`` shock histories are simulated
    twice: once as drawn and once with ``size_sd`` added to the chosen innovation
    at the first period. Differences are averaged over draws, then over states,
    and divided by the long-run standard deviation of each variable (left raw
    when that deviation is negligible).

    Raises:
        ValueError: Empty state batch, unknown shock or no draws.
    """
    if states.batch_size == 0:
        raise ValueError("generalized_irf needs at least one initial state")
    if shock not in SHOCKS:
        raise ValueError(f"unknown shock '{shock}', expected one of {SHOCKS}")
    if horizons < 1 or draws_per_state < 1:
        raise ValueError("horizons and draws_per_state must be at least 1")
    params = single_calibration(params)
    theta = _flat(theta)
    means, stds = norm if norm is not None else normalization_constants(
        theta, nets, params, regime, norm_periods, seed, idio_mode
    )

    n_states = states.batch_size
    logger.info(
        "Generalised IRF: %s shock of %s sd, %s state(s) x %s draw(s), %s worker(s)",
        shock,
        size_sd,
        n_states,
        draws_per_state,
        MAX_WORKERS,
    )

    def job(index: int) -> np.ndarray:
        return _paired_paths(
            theta, nets, states, params, regime, shock, size_sd, horizons, draws_per_state, seed, index, idio_mode
        )

    with ThreadPoolExecutor(max_workers=MAX_WORKERS) as pool:
        paths = np.stack(list(pool.map(job, range(n_states))))

    zlb = np.asarray(states.r_prev)[:, 0] <= 1.0 + ZLB_TOL
    masks = {"all": np.ones(n_states, dtype=bool), "zlb": zlb, "non_zlb": ~zlb}
    scale = np.array([stds[var] if stds[var] >= NORMALIZATION_FLOOR else 1.0 for var in IRF_VARIABLES])

    responses, raw, counts = {}, {}, {}
    for split, mask in masks.items():
        counts[split] = int(mask.sum())
        if not mask.any():
            continue
        raw[split] = paths[mask].mean(axis=0)
        responses[split] = raw[split] / scale
    return IrfResult(
        shock=shock,
        size_sd=float(size_sd),
        horizons=int(horizons),
        variables=IRF_VARIABLES,
        responses=responses,
        raw=raw,
        norm_mean=means,
        norm_std=stds,
        counts=counts,
    )


@dataclass
class MpcProfile:
    """Per-agent cash on hand, consumption and MPC, each ``(states, L)``."""

    wealth: np.ndarray
    consumption: np.ndarray
    mpc: np.ndarray
    bound: np.ndarray


def mpc_profile(
    theta,
    nets: PolicyNetworks,
    params: ModelParams,
    regime: ConstraintRegime,
    states: EconomyState,
    seed: int = 0,
    idio_mode: str = "clip",
) -> MpcProfile:
    """Immediate MPCs ``(dc/db_prev) / (domega/db_prev)`` by reverse-mode differentiation.

    Both derivatives are total derivatives through the whole policy map, so an
    agent whose consumption equals its financial capacity has an MPC of one.
    """
    params = single_calibration(params)
    theta = _flat(theta)
    states = states.detached()
    n_states, n_agents = states.batch_size, states.n_agents
    shocks = draw_shocks(stream(seed, "mpc"), n_states, n_agents)

    def bundle_at(b_prev) -> PolicyBundle:
        return policy_step(theta, nets, replace(states, b_prev=b_prev), shocks, params, regime, idio_mode)

    base = bundle_at(states.b_prev)
    d_c = np.empty((n_states, n_agents))
    d_omega = np.empty((n_states, n_agents))
    for agent in range(n_agents):
        _, grad_c = ad.value_and_grad(lambda b: ad.sum(ad.getitem(bundle_at(b).c, (slice(None), agent))), states.b_prev)
        _, grad_w = ad.value_and_grad(lambda b: ad.sum(ad.getitem(bundle_at(b).omega, (slice(None), agent))), states.b_prev)
        d_c[:, agent] = grad_c[:, agent]
        d_omega[:, agent] = grad_w[:, agent]

    degenerate = d_omega == 0.0
    if np.any(degenerate):
        logger.warning("mpc_profile: %s agent(s) with zero d(omega)/d(b_prev); MPC left undefined", int(degenerate.sum()))
    mpc = np.divide(d_c, d_omega, out=np.full_like(d_c, np.nan), where=~degenerate)
    return MpcProfile(
        wealth=np.asarray(base.omega, dtype=float),
        consumption=np.asarray(base.c, dtype=float),
        mpc=mpc,
        bound=np.asarray(base.binding, dtype=bool),
    )


@dataclass(frozen=True)
class DistStats:
    """Cross-sectional statistics pooled over a batch of bundles."""

    constrained_proportion: float
    wealth_std: float
    consumption_std: float
    gini: float
    net_bond_supply: float
    output_gap_to_consumption: float


def dist_stats(bundle: PolicyBundle, params: ModelParams) -> DistStats:
    """Constrained share, dispersion, consumption gini and market-clearing gaps.

    Raises:
        ValueError: Empty batch.
    """
    b = np.asarray(ad.value(bundle.b), dtype=float)
    c = np.asarray(ad.value(bundle.c), dtype=float)
    if b.size == 0:
        raise ValueError("dist_stats needs a non-empty batch")
    y = np.asarray(ad.value(bundle.y), dtype=float)[:, 0]
    gap = np.abs(y - c.mean(axis=-1)) / np.abs(y)
    return DistStats(
        constrained_proportion=float(_at_limit(b, params.b_min).mean()),
        wealth_std=float(b.std(axis=-1).mean()),
        consumption_std=float(c.std(axis=-1).mean()),
        gini=float(gini(c).mean()),
        net_bond_supply=float(np.abs(b.mean(axis=-1)).mean()),
        output_gap_to_consumption=float(gap.mean()),
    )


def evaluate_states(
    theta,
    nets: PolicyNetworks,
    params: ModelParams,
    regime: ConstraintRegime,
    states: EconomyState,
    seed: int,
    idio_mode: str = "clip",
    name: str = "eval",
) -> PolicyBundle:
    """Policies at a batch of states under one fresh shock draw."""
    params = single_calibration(params)
    shocks = draw_shocks(stream(seed, name), states.batch_size, states.n_agents)
    return policy_step(_flat(theta), nets, states.detached(), shocks, params, regime, idio_mode).detached()


@dataclass
class DivergenceResult:
    """Loss and net bond supply per simulated period; ``truncated`` marks an early failure."""

    total_loss: np.ndarray
    net_bond_supply: np.ndarray
    truncated: bool = False
    failed_period: Optional[int] = None


def divergence_experiment(
    nets: PolicyNetworks,
    params: ModelParams,
    regime: ConstraintRegime,
    seed: int,
    periods: int = 200,
    theta=None,
    init_scale: float = INIT_SCALE,
    idio_mode: str = "clip",
) -> DivergenceResult:
    """Simulate an untrained (randomly initialised) policy and track loss and bond supply.

    The series stop at the first period whose loss or state is not finite.
    """
    if periods < 0:
        raise ValueError("periods must be non-negative")
    params = single_calibration(params)
    theta = _flat(theta if theta is not None else nets.init_params(seed, init_scale))
    state = draw_init_state(params, 1)
    losses: List[float] = []
    supply: List[float] = []

    for period in range(periods):
        rng = stream(seed, "diverge", period)
        shocks = tuple(draw_shocks(rng, 1, params.n_agents) for _ in range(3))
        try:
            total, _, bundle = batch_loss(theta, nets, state, params, shocks, regime, idio_mode=idio_mode)
            total = float(np.reshape(ad.value(total), ()))
            net_supply = float(np.asarray(ad.value(agent_mean(bundle.b)))[0, 0])
            if not (np.isfinite(total) and np.isfinite(net_supply)):
                raise NumericalError("non-finite loss or bond supply")
            state = state_transition(state, bundle).detached()
        except _FAILURES as exc:
            logger.warning("Divergence experiment stopped at period %s: %s", period, exc)
            return DivergenceResult(np.asarray(losses), np.asarray(supply), truncated=True, failed_period=period)
        losses.append(total)
        supply.append(net_supply)
    return DivergenceResult(np.asarray(losses), np.asarray(supply))


@dataclass
class SweepResult:
    """Borrowing-limit sweep: one entry per grid point."""

    bbar: np.ndarray
    constrained_proportion: np.ndarray
    below_bound_mass: np.ndarray
    cdf_at_default: np.ndarray


def bbar_sweep(
    theta,
    nets: PolicyNetworks,
    params: ModelParams,
    regime: ConstraintRegime,
    bbar_grid: Sequence[float],
    states: EconomyState,
    seed: int = 0,
    idio_mode: str = "clip",
) -> SweepResult:
    """Re-evaluate the policy at each borrowing limit in ``bbar_grid``.

    Records the share of agents at or below the limit, the mass strictly below
    it, and the share with bonds at or below the default limit.
    """
    grid = np.asarray(bbar_grid, dtype=float)
    low, high = nets.bounds["b_min"]
    outside = (grid < low) | (grid > high)
    if np.any(outside):
        logger.warning("bbar_sweep: %s grid point(s) outside the trained range [%s, %s]; extrapolating", int(outside.sum()), low, high)
    params = single_calibration(params)

    proportion, below, cdf = [], [], []
    for bbar in grid:
        swept = replace(params, b_min=float(bbar))
        try:
            bundle = evaluate_states(theta, nets, swept, regime, states, seed, idio_mode, name="sweep")
        except _FAILURES as exc:
            logger.warning("bbar_sweep: policy evaluation failed at b_min=%s: %s", bbar, exc)
            proportion.append(np.nan)
            below.append(np.nan)
            cdf.append(np.nan)
            continue
        b = np.asarray(bundle.b, dtype=float)
        tol = BINDING_TOL * max(1.0, abs(bbar))
        proportion.append(float(np.mean(b <= bbar + tol)))
        below.append(float(np.mean(b < bbar - tol)))
        cdf.append(float(np.mean(b <= DEFAULT_BBAR + BINDING_TOL)))
    return SweepResult(grid, np.asarray(proportion), np.asarray(below), np.asarray(cdf))


@dataclass
class AggregateDistribution:
    """Ergodic sample of aggregate variables plus their steady-state markers."""

    series: Dict[str, np.ndarray]
    markers: Dict[str, float]


def aggregate_distribution(
    theta,
    nets: PolicyNetworks,
    params: ModelParams,
    regime: ConstraintRegime,
    periods: int,
    burn_in: int,
    seed: int,
    idio_mode: str = "clip",
) -> AggregateDistribution:
    params = single_calibration(params)
    series = simulate_series(theta, nets, params, regime, periods, seed, burn_in, idio_mode, name="aggdist")
    markers = {
        "pi": float(params.pi_bar),
        "r": float(params.r_bar),
        "y": float(params.y_bar),
        "mc": float(params.mc_star),
    }
    return AggregateDistribution({var: series[var] for var in AGGREGATE_VARIABLES}, markers)


def penalty_weight_sweep(
    config: TrainerConfig,
    nets: PolicyNetworks,
    theta0: ParamVector,
    weights: Sequence[float],
) -> pd.DataFrame:
    """Re-fit from ``theta0`` at each penalty weight and report the final losses.

    Each weight is applied to every penalty the regime uses. The training runs are
    independent and share the configured seed.
    """
    if not weights:
        raise ValueError("penalty_weight_sweep needs at least one weight")

    def job(weight: float) -> pd.DataFrame:
        run = replace(config, weights=config.regime.default_weights(float(weight)), checkpoint_every=0)
        _, log = fit(run, nets, theta0)
        report = loss_report(log)
        report.insert(0, "weight", float(weight))
        return report

    logger.info("Penalty-weight sweep over %s weight(s), %s worker(s)", len(weights), MAX_WORKERS)
    with ThreadPoolExecutor(max_workers=MAX_WORKERS) as pool:
        reports = list(pool.map(job, weights))
    return pd.concat(reports, ignore_index=True)


__all__ = [
    "AGGREGATE_VARIABLES",
    "AggregateDistribution",
    "DistStats",
    "DivergenceResult",
    "IRF_VARIABLES",
    "IrfResult",
    "MpcProfile",
    "SPLITS",
    "SweepResult",
    "aggregate_distribution",
    "bbar_sweep",
    "bundle_variables",
    "dist_stats",
    "divergence_experiment",
    "ergodic_sample",
    "evaluate_states",
    "generalized_irf",
    "gini",
    "loss_report",
    "mpc_profile",
    "normalization_constants",
    "penalty_weight_sweep",
    "simulate_series",
    "single_calibration",
]
