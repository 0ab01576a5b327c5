"""Fitting loop: batched loss minimisation with forward simulation and resets.

Each iteration evaluates the loss and its gradient on the current batch of
states, takes one ADAM step, decides whether to reset the states (non-finite
loss or resource-constraint loss above ``tol1``), redraws the structural
parameters and simulates the states ``n`` periods forward under the updated
policy. ``n`` grows by one after ``tol2`` consecutive iterations without a
reset, up to ``max_sims``, and shrinks by one on every reset.
"""
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from . import autodiff as ad
from .config import (
    CALIBRATION,
    DEFAULT_N_AGENTS,
    INIT_SCALE,
    LEARNING_RATES,
    MAX_FORWARD_SIMS,
    PARAM_NAMES,
    logger,
)
from .errors import NumericalError, ProjectionSpecError, TrainingAborted
from .losses import LOSS_COLUMNS, LossBreakdown, batch_loss
from .model import (
    ConstraintRegime,
    EconomyState,
    ModelParams,
    PenaltyWeights,
    draw_shocks,
    state_transition,
    steady_state,
)
from .network import ParamVector, save_checkpoint
from .optim import AdamState, adam_step
from .regimes import PolicyNetworks, policy_step
from .rng import stream

TRAINLOG_COLUMNS = ["iter", *LOSS_COLUMNS, "n", "reset", "gamma_draw_id"]
EXTRA_RESET_TRIGGERS = ("kkt", "oc")

# Failures inside one iteration that count as a non-finite loss.
RECOVERABLE_ERRORS = (NumericalError, ProjectionSpecError)


def default_bounds() -> Dict[str, Tuple[float, float]]:
    return {name: (low, high) for name, (_, low, high) in CALIBRATION.items()}


@dataclass
class TrainerConfig:
    """Settings of one fitting run.

    Attributes:
        iterations: Maximum number of iterations.
        batch_size: Economies per batch.
        max_sims: Upper limit on forward simulations per iteration.
        learning_rate: ADAM step size; ``None`` takes the regime default.
        tol0: Stop once the total loss is at or below this value; ``<= 0`` disables.
        tol1: Reset threshold on the resource-constraint loss.
        tol2: Iterations without a reset before ``n`` increases.
        resample_every: Iterations between structural-parameter redraws.
        reset_on: Additional losses checked against ``tol1`` (``"kkt"``, ``"oc"``).
        max_nan_iterations: Consecutive non-finite iterations tolerated before aborting.
        checkpoint_every: Iterations between checkpoints; 0 disables.
    """

    iterations: int = 1000
    batch_size: int = 64
    max_sims: int = MAX_FORWARD_SIMS
    learning_rate: Optional[float] = None
    tol0: float = 0.0
    tol1: float = 1e-3
    tol2: int = 100
    seed: int = 0
    regime: ConstraintRegime = ConstraintRegime.HARD
    weights: Optional[PenaltyWeights] = None
    resample_every: int = 1
    reset_on: Tuple[str, ...] = ()
    max_nan_iterations: int = 50
    n_agents: int = DEFAULT_N_AGENTS
    bounds: Dict[str, Tuple[float, float]] = field(default_factory=default_bounds)
    idio_mode: str = "clip"
    init_scale: float = INIT_SCALE
    checkpoint_every: int = 0
    checkpoint_path: Optional[Path] = None

    def __post_init__(self) -> None:
        self.regime = ConstraintRegime(self.regime)
        if self.weights is None:
            self.weights = self.regime.default_weights()
        self.reset_on = tuple(self.reset_on)

    @property
    def alpha(self) -> float:
        return float(self.learning_rate) if self.learning_rate is not None else LEARNING_RATES[self.regime.value]

    def validate(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 1 <= self.max_sims <= MAX_FORWARD_SIMS:
            raise ValueError(f"max_sims must lie in [1, {MAX_FORWARD_SIMS}], got {self.max_sims}")
        if not self.alpha > 0:
            raise ValueError("learning rate must be positive")
        if not self.tol1 > 0:
            raise ValueError("tol1 must be positive")
        if self.tol2 < 1:
            raise ValueError("tol2 must be at least one iteration")
        if self.resample_every < 1:
            raise ValueError("resample_every must be at least 1")
        if self.max_nan_iterations < 1:
            raise ValueError("max_nan_iterations must be at least 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be non-negative")
        if self.checkpoint_every and self.checkpoint_path is None:
            raise ValueError("checkpoint_every needs a checkpoint_path")
        unknown = set(self.reset_on) - set(EXTRA_RESET_TRIGGERS)
        if unknown:
            raise ValueError(f"unknown reset triggers {sorted(unknown)}, expected any of {EXTRA_RESET_TRIGGERS}")
        missing = set(PARAM_NAMES) - set(self.bounds)
        if missing:
            raise ValueError(f"bounds missing for {sorted(missing)}")
        for name, (low, high) in self.bounds.items():
            if low > high:
                raise ValueError(f"bounds for '{name}' have min {low} above max {high}")


@dataclass
class TrainLog:
    """One record per iteration plus the reset and depth-change events.

    ``wall_clock`` holds seconds since the start of the run per record. It stays
    in memory only; ``to_frame`` leaves it out so logs of equal runs are identical.
    """

    records: List[Dict[str, float]] = field(default_factory=list)
    events: List[str] = field(default_factory=list)
    wall_clock: List[float] = field(default_factory=list)

    def append(
        self,
        iteration: int,
        losses: LossBreakdown,
        n: int,
        reset: bool,
        gamma_draw_id: int,
        elapsed: float = float("nan"),
    ) -> None:
        row = {"iter": iteration}
        row.update(losses.as_dict())
        row.update({"n": n, "reset": bool(reset), "gamma_draw_id": gamma_draw_id})
        self.records.append(row)
        self.wall_clock.append(float(elapsed))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def reset_count(self) -> int:
        return sum(1 for row in self.records if row["reset"])

    def to_frame(self) -> pd.DataFrame:
        if not self.records:
            return pd.DataFrame(columns=TRAINLOG_COLUMNS)
        frame = pd.DataFrame.from_records(self.records)[TRAINLOG_COLUMNS]
        return frame.astype({"iter": int, "n": int, "reset": bool, "gamma_draw_id": int})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "TrainLog":
        missing = [column for column in TRAINLOG_COLUMNS if column not in frame.columns]
        if missing:
            raise ValueError(f"training log is missing columns {missing}")
        records = frame[TRAINLOG_COLUMNS].to_dict(orient="records")
        return cls(records=records, wall_clock=[float("nan")] * len(records))


def draw_struct_params(
    seed: int,
    counter: int,
    bounds: Optional[Mapping[str, Tuple[float, float]]] = None,
    batch: int = 1,
    n_agents: int = DEFAULT_N_AGENTS,
) -> ModelParams:
    """Draw one structural parameter vector per batch row, uniform within the bounds.

    Parameters whose bounds coincide are returned exactly. The draw depends only
    on ``(seed, counter)``.
    """
    bounds = dict(bounds or default_bounds())
    rng = stream(seed, "params", counter)
    columns = {}
    for name in PARAM_NAMES:
        low, high = bounds[name]
        if low > high:
            raise ValueError(f"bounds for '{name}' have min {low} above max {high}")
        if low == high:
            columns[name] = np.full((batch, 1), float(low))
        else:
            columns[name] = rng.uniform(low, high, size=(batch, 1))
    return ModelParams(n_agents=int(n_agents), **columns)


def draw_init_state(params: ModelParams, batch: int) -> EconomyState:
    """Symmetric zero-bond starting states at target inflation and steady-state output."""
    return steady_state(params, batch)


def simulate_forward(
    theta,
    nets: PolicyNetworks,
    state: EconomyState,
    params: ModelParams,
    periods: int,
    rng: np.random.Generator,
    regime: ConstraintRegime,
    idio_mode: str = "clip",
) -> EconomyState:
    """Iterate the state transition ``periods`` times under the current policy."""
    for _ in range(periods):
        shocks = draw_shocks(rng, state.batch_size, state.n_agents)
        bundle = policy_step(theta, nets, state, shocks, params, regime, idio_mode)
        state = state_transition(state, bundle).detached()
        if not all(np.all(np.isfinite(getattr(state, name))) for name in ("b_prev", "c_prev", "r_prev")):
            raise NumericalError("non-finite state during forward simulation")
    return state


def _reset_due(losses: LossBreakdown, config: TrainerConfig) -> bool:
    if not math.isfinite(losses.total):
        return True
    if losses.rc > config.tol1:
        return True
    return any(getattr(losses, name) > config.tol1 for name in config.reset_on)


def _reset(iteration: int, n_sims: int, params: ModelParams, config: TrainerConfig, log: "TrainLog"):
    """Lower the simulation depth (not below 1) and return fresh starting states."""
    if n_sims > 1:
        n_sims -= 1
        logger.info("Iteration %s: reset, forward simulations lowered to %s", iteration, n_sims)
    else:
        logger.info("Iteration %s: reset", iteration)
    log.events.append(f"{iteration}:reset:n={n_sims}")
    return n_sims, draw_init_state(params, config.batch_size)


def fit(
    config: TrainerConfig,
    nets: PolicyNetworks,
    theta0: Optional[ParamVector] = None,
) -> Tuple[ParamVector, TrainLog]:
    """Train the policy networks.

    Args:
        config: Run settings.
        nets: Network pair; its agent count must match ``config.n_agents``.
        theta0: Warm-start parameters; a fresh draw from ``config.seed`` otherwise.

    Returns:
        Tuple of (final parameters, training log).

    Raises:
        TrainingAborted: More than ``max_nan_iterations`` consecutive non-finite iterations.
    """
    config.validate()
    if nets.n_agents != config.n_agents:
        raise ValueError(f"networks built for {nets.n_agents} agents, config asks for {config.n_agents}")

    theta = theta0.copy() if theta0 is not None else nets.init_params(config.seed, config.init_scale)
    if len(theta) != nets.param_count:
        raise ValueError(f"warm-start vector has {len(theta)} entries, networks need {nets.param_count}")
    adam = AdamState.zeros(len(theta), config.alpha)
    log = TrainLog()

    gamma_draw_id = 0
    params = draw_struct_params(config.seed, gamma_draw_id, config.bounds, config.batch_size, config.n_agents)
    state = draw_init_state(params, config.batch_size)
    n_sims = 1
    its_at_current_n = 0
    nan_run = 0
    started = time.perf_counter()

    logger.info(
        "Training %s regime: %s iterations, batch %s, %s agents, alpha %s",
        config.regime.value,
        config.iterations,
        config.batch_size,
        config.n_agents,
        config.alpha,
    )

    for iteration in range(config.iterations):
        rng = stream(config.seed, "train", iteration)
        shocks = tuple(draw_shocks(rng, config.batch_size, config.n_agents) for _ in range(3))
        used_draw = gamma_draw_id

        def objective(flat):
            total, breakdown, _ = batch_loss(
                flat, nets, state, params, shocks, config.regime, config.weights, config.idio_mode
            )
            return total, breakdown

        try:
            _, grad, breakdown = ad.value_and_grad(objective, theta, has_aux=True)
            losses = breakdown.to_floats()
            if not losses.is_finite():
                raise NumericalError("non-finite loss component")
            adam, theta = adam_step(adam, theta, grad)
        except RECOVERABLE_ERRORS as exc:
            logger.warning("Iteration %s: non-finite loss (%s); update skipped", iteration, exc)
            losses = LossBreakdown.nan()

        nan_run = nan_run + 1 if not math.isfinite(losses.total) else 0
        if nan_run > config.max_nan_iterations:
            logger.error("Aborting after %s consecutive non-finite iterations", nan_run)
            raise TrainingAborted(f"loss non-finite for {nan_run} consecutive iterations (last at iteration {iteration})")

        reset = _reset_due(losses, config)
        if reset:
            n_sims, state = _reset(iteration, n_sims, params, config, log)
            its_at_current_n = 0
        elif its_at_current_n > config.tol2 and n_sims < config.max_sims:
            n_sims += 1
            its_at_current_n = 0
            logger.info("Iteration %s: forward simulations raised to %s", iteration, n_sims)
            log.events.append(f"{iteration}:raise:n={n_sims}")

        next_draw = (iteration + 1) // config.resample_every
        if next_draw != gamma_draw_id:
            gamma_draw_id = next_draw
            params = draw_struct_params(config.seed, gamma_draw_id, config.bounds, config.batch_size, config.n_agents)

        try:
            state = simulate_forward(
                theta.values,
                nets,
                state,
                params,
                n_sims,
                stream(config.seed, "sim", iteration),
                config.regime,
                config.idio_mode,
            )
        except RECOVERABLE_ERRORS as exc:
            logger.warning("Iteration %s: forward simulation failed (%s)", iteration, exc)
            if not reset:
                n_sims, _ = _reset(iteration, n_sims, params, config, log)
            state = draw_init_state(params, config.batch_size)
            its_at_current_n = 0
            reset = True

        its_at_current_n += 1
        log.append(iteration, losses, n_sims, reset, used_draw, time.perf_counter() - started)

        if config.checkpoint_every and (iteration + 1) % config.checkpoint_every == 0:
            save_checkpoint(config.checkpoint_path, theta, nets.specs, config.seed)

        if config.tol0 > 0 and math.isfinite(losses.total) and losses.total <= config.tol0:
            logger.info("Iteration %s: total loss %s at or below tol0, stopping", iteration, losses.total)
            break

    logger.info("Training finished after %s iterations with %s reset(s)", len(log), log.reset_count)
    return theta, log


__all__ = [
    "EXTRA_RESET_TRIGGERS",
    "TRAINLOG_COLUMNS",
    "TrainLog",
    "TrainerConfig",
    "default_bounds",
    "draw_init_state",
    "draw_struct_params",
    "fit",
    "simulate_forward",
]
