"""The discrete-agent HANK economy: parameters, states, shocks and the model blocks.

Shapes: aggregates are ``(mb, 1)`` and per-agent quantities ``(mb, L)``, where
``mb`` is the number of economies evaluated side by side. Structural parameters
are either floats (one calibration for every row) or ``(mb, 1)`` arrays.

The block functions are written against ``autodiff`` primitives so the same
code runs on plain arrays (simulation) and on tape values (training, MPCs).
"""
from dataclasses import dataclass, fields
from enum import Enum
from typing import Any, Mapping, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .config import BINDING_TOL, CALIBRATION, DEFAULT_N_AGENTS, DEFAULT_PENALTY_WEIGHT, PARAM_NAMES


@dataclass(frozen=True)
class ModelParams:
    """Structural parameters of one economy (or one per batch row)."""

    beta: Any
    sigma: Any
    eta: Any
    epsilon: Any
    chi: Any
    habit: Any
    phi: Any
    theta_pi: Any
    theta_y: Any
    pi_bar: Any
    y_bar: Any
    b_min: Any
    rho_psi: Any
    rho_s: Any
    rho_a: Any
    rho_r: Any
    sigma_psi: Any
    sigma_s: Any
    sigma_a: Any
    sigma_mp: Any
    n_agents: int = DEFAULT_N_AGENTS

    @classmethod
    def baseline(cls, n_agents: int = DEFAULT_N_AGENTS, **overrides) -> "ModelParams":
        """Baseline calibration, optionally with some values replaced."""
        unknown = set(overrides) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown structural parameters: {sorted(unknown)}")
        values = {name: float(CALIBRATION[name][0]) for name in PARAM_NAMES}
        values.update(overrides)
        return cls(n_agents=int(n_agents), **values)

    def as_matrix(self, batch: int) -> np.ndarray:
        """Parameters broadcast to a ``(batch, 20)`` matrix in ``PARAM_NAMES`` order."""
        columns = [np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (batch, 1)) for name in PARAM_NAMES]
        return np.concatenate(columns, axis=1)

    @property
    def r_bar(self):
        """Steady-state gross nominal rate, target inflation over beta."""
        return np.divide(self.pi_bar, self.beta)

    @property
    def mc_star(self):
        """Static flexible-price marginal cost (epsilon - 1) / epsilon."""
        return np.divide(np.subtract(self.epsilon, 1.0), self.epsilon)

    def validate(self, bounds: Optional[Mapping[str, Tuple[float, float]]] = None) -> None:
        """Check the model's structural restrictions and, when given, the sampling bounds."""
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be positive, got {self.n_agents}")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"structural parameter '{name}' must be finite")
        if np.any(np.asarray(self.beta) <= 0) or np.any(np.asarray(self.beta) >= 1):
            raise ValueError("beta must lie in (0, 1)")
        if np.any(np.asarray(self.epsilon) <= 1):
            raise ValueError("epsilon must exceed 1")
        if np.any(np.asarray(self.b_min) >= 0):
            raise ValueError("the borrowing limit b_min must be negative")
        for name in ("sigma", "eta", "chi", "phi", "pi_bar", "y_bar"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise ValueError(f"structural parameter '{name}' must be positive")
        if bounds is None:
            return
        for name, (low, high) in bounds.items():
            val = np.asarray(getattr(self, name))
            if np.any(val < low) or np.any(val > high):
                raise ValueError(f"structural parameter '{name}' outside its bounds [{low}, {high}]")


@dataclass
class EconomyState:
    """Lagged states of ``mb`` economies.

    Attributes:
        b_prev: Bond holdings entering the period, ``(mb, L)``.
        s_prev: Idiosyncratic productivity, ``(mb, L)``.
        c_prev: Lagged aggregate consumption, ``(mb, 1)``.
        r_prev: Lagged gross nominal rate, ``(mb, 1)``.
        psi_prev: Preference level, ``(mb, 1)``.
        a_prev: TFP level, ``(mb, 1)``.
    """

    b_prev: Any
    s_prev: Any
    c_prev: Any
    r_prev: Any
    psi_prev: Any
    a_prev: Any

    @property
    def batch_size(self) -> int:
        return int(np.shape(ad.value(self.b_prev))[0])

    @property
    def n_agents(self) -> int:
        return int(np.shape(ad.value(self.b_prev))[-1])

    def detached(self) -> "EconomyState":
        """Copy holding plain arrays only (cuts the tape)."""
        return EconomyState(**{f.name: np.array(ad.value(getattr(self, f.name)), dtype=float) for f in fields(self)})

    def take(self, index) -> "EconomyState":
        """Select batch rows with a slice, integer array or boolean mask."""
        return EconomyState(**{f.name: np.asarray(ad.value(getattr(self, f.name)))[index] for f in fields(self)})

    def repeat(self, count: int) -> "EconomyState":
        """Repeat every row ``count`` times (row-major: row 0 x count, row 1 x count, ...)."""
        return EconomyState(
            **{f.name: np.repeat(np.asarray(ad.value(getattr(self, f.name))), count, axis=0) for f in fields(self)}
        )

    @classmethod
    def stack(cls, states) -> "EconomyState":
        states = list(states)
        if not states:
            raise ValueError("cannot stack an empty list of states")
        return cls(
            **{
                f.name: np.concatenate([np.asarray(ad.value(getattr(s, f.name))) for s in states], axis=0)
                for f in fields(cls)
            }
        )

    def validate(self, params: ModelParams, hard: bool = False) -> None:
        """Check the state invariants; ``hard`` also requires b_prev at or above the limit."""
        b = np.asarray(ad.value(self.b_prev))
        s = np.asarray(ad.value(self.s_prev))
        if b.ndim != 2 or s.shape != b.shape:
            raise ValueError(f"agent states must share shape (mb, L), got {b.shape} and {s.shape}")
        for name in ("c_prev", "r_prev", "psi_prev", "a_prev"):
            if np.shape(ad.value(getattr(self, name))) != (b.shape[0], 1):
                raise ValueError(f"aggregate state '{name}' must have shape ({b.shape[0]}, 1)")
        if not all(np.all(np.isfinite(ad.value(getattr(self, f.name)))) for f in fields(self)):
            raise ValueError("economy state contains non-finite entries")
        if np.any(s <= 0):
            raise ValueError("idiosyncratic productivity must be positive")
        if np.any(np.asarray(ad.value(self.r_prev)) < 1.0):
            raise ValueError("lagged gross nominal rate must be at least 1")
        if np.any(np.asarray(ad.value(self.a_prev)) <= 0) or np.any(np.asarray(ad.value(self.psi_prev)) <= 0):
            raise ValueError("TFP and preference levels must be positive")
        if hard:
            limit = np.asarray(params.b_min)
            if np.any(b < limit - BINDING_TOL * np.maximum(1.0, np.abs(limit))):
                raise ValueError("bond holdings below the borrowing limit")


@dataclass
class ShockDraw:
    """Standard normal innovations for one period."""

    eps_s: np.ndarray
    eps_psi: np.ndarray
    eps_a: np.ndarray
    eps_mp: np.ndarray

    @classmethod
    def zeros(cls, batch: int, n_agents: int) -> "ShockDraw":
        return cls(
            eps_s=np.zeros((batch, n_agents)),
            eps_psi=np.zeros((batch, 1)),
            eps_a=np.zeros((batch, 1)),
            eps_mp=np.zeros((batch, 1)),
        )

    def take(self, index) -> "ShockDraw":
        return ShockDraw(*(np.asarray(getattr(self, f.name))[index] for f in fields(self)))

    def with_impulse(self, shock: str, size: float) -> "ShockDraw":
        """Add ``size`` standard deviations to one innovation (agent 0 for ``idio``)."""
        draw = ShockDraw(*(np.array(getattr(self, f.name), dtype=float) for f in fields(self)))
        if shock == "tfp":
            draw.eps_a = draw.eps_a + size
        elif shock == "mp":
            draw.eps_mp = draw.eps_mp + size
        elif shock == "pref":
            draw.eps_psi = draw.eps_psi + size
        elif shock == "idio":
            draw.eps_s[:, 0] = draw.eps_s[:, 0] + size
        else:
            raise ValueError(f"unknown shock '{shock}', expected one of {SHOCKS}")
        return draw


SHOCKS = ("tfp", "mp", "pref", "idio")


def draw_shocks(rng: np.random.Generator, batch: int, n_agents: int) -> ShockDraw:
    """Draw one period of innovations; the draw order is fixed for reproducibility."""
    return ShockDraw(
        eps_s=rng.standard_normal((batch, n_agents)),
        eps_psi=rng.standard_normal((batch, 1)),
        eps_a=rng.standard_normal((batch, 1)),
        eps_mp=rng.standard_normal((batch, 1)),
    )


@dataclass
class PolicyBundle:
    """Policies and derived quantities of one period.

    ``binding`` marks agents whose end-of-period bonds were set exactly to the
    borrowing limit by the regime mapping.
    """

    pi: Any
    w: Any
    c: Any
    h: Any
    mu: Any
    b: Any
    n: Any
    y: Any
    mc: Any
    div: Any
    r: Any
    omega: Any
    psi: Any
    s: Any
    tfp: Any
    binding: np.ndarray

    def detached(self) -> "PolicyBundle":
        values = {f.name: np.array(ad.value(getattr(self, f.name))) for f in fields(self)}
        return PolicyBundle(**values)


@dataclass(frozen=True)
class PenaltyWeights:
    """Weights on the borrowing-constraint (FB), output and resource penalties."""

    kkt: float = 0.0
    oc: float = 0.0
    rc: float = 0.0

    def __post_init__(self) -> None:
        for name in ("kkt", "oc", "rc"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"penalty weight '{name}' must be finite and non-negative, got {val}")


class ConstraintRegime(str, Enum):
    """Which constraints hold by construction and which are penalised."""

    HARD = "hard"
    SOFT = "soft"
    AGG_HARD = "agg_hard"
    IDIO_HARD = "idio_hard"

    def default_weights(self, weight: float = DEFAULT_PENALTY_WEIGHT) -> PenaltyWeights:
        if self is ConstraintRegime.HARD:
            return PenaltyWeights()
        if self is ConstraintRegime.SOFT:
            return PenaltyWeights(weight, weight, weight)
        if self is ConstraintRegime.AGG_HARD:
            return PenaltyWeights(kkt=weight)
        return PenaltyWeights(oc=weight, rc=weight)

    @classmethod
    def parse(cls, name: str) -> "ConstraintRegime":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().lower().replace("-", "_"))
        except ValueError:
            raise ValueError(f"unknown regime '{name}', expected one of {[r.value for r in cls]}") from None


def agent_mean(x):
    """Cross-sectional mean over the agent axis, independent of agent order."""
    return ad.divide(ad.sorted_sum(x, axis=-1, keepdims=True), float(np.shape(ad.value(x))[-1]))


def shock_step(state: EconomyState, shocks: ShockDraw, params: ModelParams):
    """Advance the exogenous processes one period.

    Returns:
        Tuple ``(psi, s, tfp)``; ``s`` is rescaled to a cross-sectional mean of one.
    """
    psi = ad.exp(ad.add(ad.multiply(params.rho_psi, ad.log(state.psi_prev)), ad.multiply(params.sigma_psi, shocks.eps_psi)))
    s_raw = ad.exp(ad.add(ad.multiply(params.rho_s, ad.log(state.s_prev)), ad.multiply(params.sigma_s, shocks.eps_s)))
    s = ad.divide(s_raw, agent_mean(s_raw))
    tfp = ad.exp(ad.add(ad.multiply(params.rho_a, ad.log(state.a_prev)), ad.multiply(params.sigma_a, shocks.eps_a)))
    return psi, s, tfp


def taylor_rate(pi, y, r_prev, eps_mp, params: ModelParams):
    """Inertial dual-mandate Taylor rule, floored at a gross rate of one."""
    for name, val in (("inflation", pi), ("output", y), ("lagged rate", r_prev)):
        if np.any(np.asarray(ad.value(val)) <= 0):
            raise ValueError(f"taylor_rate needs positive {name}")
    target = ad.add(
        np.log(params.r_bar),
        ad.add(
            ad.multiply(params.theta_pi, ad.log(ad.divide(pi, params.pi_bar))),
            ad.multiply(params.theta_y, ad.log(ad.divide(y, params.y_bar))),
        ),
    )
    log_rate = ad.add(
        ad.add(ad.multiply(params.rho_r, ad.log(r_prev)), ad.multiply(np.subtract(1.0, params.rho_r), target)),
        ad.multiply(params.sigma_mp, eps_mp),
    )
    return ad.maximum(ad.exp(log_rate), 1.0)


def firm_block(w, h, s, tfp, params: ModelParams):
    """Labour input, output, marginal cost and the equal dividend.

    Returns:
        Tuple ``(n, y, mc, div)``.
    """
    if np.any(np.asarray(ad.value(w)) >= np.asarray(ad.value(tfp))):
        raise ValueError("real wage must stay below TFP for dividends to be positive")
    if np.any(np.asarray(ad.value(h)) <= 0):
        raise ValueError("hours must be positive")
    n = agent_mean(ad.multiply(s, h))
    y = ad.multiply(tfp, n)
    mc = ad.divide(w, tfp)
    div = ad.subtract(y, ad.multiply(w, n))
    return n, y, mc, div


def cash_on_hand(state: EconomyState, w, s, h, div, pi, params: ModelParams):
    """Labour income plus dividends plus the real return on last period's bonds."""
    if np.any(np.asarray(ad.value(pi)) <= 0):
        raise ValueError("inflation must be positive")
    labour_income = ad.multiply(ad.multiply(w, s), h)
    bond_income = ad.multiply(ad.divide(state.r_prev, pi), state.b_prev)
    return ad.add(ad.add(labour_income, div), bond_income)


def state_transition(
    state: EconomyState,
    bundle: PolicyBundle,
    psi=None,
    s=None,
    tfp=None,
) -> EconomyState:
    """Next-period state from this period's policies and exogenous levels.

    The exogenous levels default to the ones stored in ``bundle``.
    """
    if np.shape(ad.value(bundle.b)) != np.shape(ad.value(state.b_prev)):
        raise ValueError("policy bundle does not match the state's agent shape")
    return EconomyState(
        b_prev=bundle.b,
        s_prev=bundle.s if s is None else s,
        c_prev=agent_mean(bundle.c),
        r_prev=bundle.r,
        psi_prev=bundle.psi if psi is None else psi,
        a_prev=bundle.tfp if tfp is None else tfp,
    )


def steady_state(params: ModelParams, batch: int = 1) -> EconomyState:
    """Symmetric zero-bond state at target inflation and steady-state output."""
    n_agents = params.n_agents
    ones = np.ones((batch, 1))
    return EconomyState(
        b_prev=np.zeros((batch, n_agents)),
        s_prev=np.ones((batch, n_agents)),
        c_prev=ones * np.asarray(params.y_bar, dtype=float),
        r_prev=ones * np.asarray(params.r_bar, dtype=float),
        psi_prev=ones.copy(),
        a_prev=ones.copy(),
    )


__all__ = [
    "ConstraintRegime",
    "EconomyState",
    "ModelParams",
    "PenaltyWeights",
    "PolicyBundle",
    "SHOCKS",
    "ShockDraw",
    "agent_mean",
    "cash_on_hand",
    "draw_shocks",
    "firm_block",
    "shock_step",
    "state_transition",
    "steady_state",
    "taylor_rate",
]
