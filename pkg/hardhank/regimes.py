"""Network inputs, the two policy networks and the constraint-regime mappings.

The aggregate network sees the whole cross-section and returns the two price
heads. The idiosyncratic network sees the same inputs plus one agent's own
states and returns that agent's consumption, hours and multiplier heads. The
regime mapping turns those raw heads into a ``PolicyBundle``.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .config import (
    BINDING_TOL,
    CALIBRATION,
    DEFAULT_ACTIVATION,
    DEFAULT_HIDDEN_LAYERS,
    DEFAULT_WIDTH,
    INIT_SCALE,
    PARAM_NAMES,
)
from .constraints import BoundedSumSpec, project_redistribute
from .errors import NumericalError, ProjectionSpecError
from .model import (
    ConstraintRegime,
    EconomyState,
    ModelParams,
    PolicyBundle,
    ShockDraw,
    agent_mean,
    cash_on_hand,
    firm_block,
    shock_step,
    taylor_rate,
)
from .network import NetworkSpec, ParamVector, forward, head, init_params

AGGREGATE_HEADS = {"pi": (0, 1), "w": (1, 2)}
IDIOSYNCRATIC_HEADS = {"c": (0, 1), "h": (1, 2), "mu": (2, 3)}
IDIO_MODES = ("clip", "sigmoid")

# log psi, log A, C - Ybar, log R; three aggregate shocks; four cross-sectional moments
N_AGGREGATE_STATES = 4
N_AGGREGATE_SHOCKS = 3
N_MOMENTS = 4


def aggregate_input_width(n_agents: int) -> int:
    return 3 * n_agents + N_AGGREGATE_STATES + N_AGGREGATE_SHOCKS + len(PARAM_NAMES) + N_MOMENTS


def idiosyncratic_input_width(n_agents: int) -> int:
    return aggregate_input_width(n_agents) + 3


def _default_bounds() -> Dict[str, Tuple[float, float]]:
    return {name: (low, high) for name, (_, low, high) in CALIBRATION.items()}


def scale_params(params: ModelParams, bounds: Mapping[str, Tuple[float, float]], batch: int) -> np.ndarray:
    """Structural parameters mapped to [-1, 1] by their sampling ranges; fixed ones map to 0."""
    matrix = params.as_matrix(batch)
    scaled = np.zeros_like(matrix)
    for k, name in enumerate(PARAM_NAMES):
        low, high = bounds[name]
        if high > low:
            scaled[:, k] = (matrix[:, k] - 0.5 * (low + high)) / (0.5 * (high - low))
    return scaled


def encode_inputs(
    state: EconomyState,
    shocks: ShockDraw,
    params: ModelParams,
    bounds: Optional[Mapping[str, Tuple[float, float]]] = None,
):
    """Build the aggregate ``(mb, 3L+31)`` and idiosyncratic ``(mb, L, 3L+34)`` inputs."""
    bounds = bounds or _default_bounds()
    b = state.b_prev
    log_s = ad.log(state.s_prev)
    batch, n_agents = state.batch_size, state.n_agents

    b_mean = agent_mean(b)
    b_dev = ad.subtract(b, b_mean)
    log_s_dev = ad.subtract(log_s, agent_mean(log_s))
    moments = [
        b_mean,
        agent_mean(ad.square(b_dev)),
        agent_mean(ad.square(log_s_dev)),
        agent_mean(ad.multiply(log_s_dev, b_dev)),
    ]
    aggregates = [
        ad.log(state.psi_prev),
        ad.log(state.a_prev),
        ad.subtract(state.c_prev, params.y_bar),
        ad.log(state.r_prev),
    ]
    agg_inputs = ad.concatenate(
        [b, log_s, shocks.eps_s]
        + aggregates
        + [shocks.eps_psi, shocks.eps_a, shocks.eps_mp]
        + [scale_params(params, bounds, batch)]
        + moments,
        axis=-1,
    )

    width = aggregate_input_width(n_agents)
    shared = ad.broadcast_to(ad.reshape(agg_inputs, (batch, 1, width)), (batch, n_agents, width))
    own = ad.concatenate(
        [
            ad.reshape(b, (batch, n_agents, 1)),
            ad.reshape(log_s, (batch, n_agents, 1)),
            np.reshape(shocks.eps_s, (batch, n_agents, 1)),
        ],
        axis=-1,
    )
    idio_inputs = ad.concatenate([shared, own], axis=-1)
    return agg_inputs, idio_inputs


@dataclass(frozen=True)
class RawOutputs:
    """Unconstrained network heads before any regime mapping."""

    z_pi: Any
    z_w: Any
    c_tilde: Any
    h_tilde: Any
    mu_tilde: Any


@dataclass(frozen=True)
class PolicyNetworks:
    """The aggregate and idiosyncratic networks sharing one flat parameter vector.

    The aggregate network's parameters come first.
    """

    agg_spec: NetworkSpec
    idio_spec: NetworkSpec
    bounds: Dict[str, Tuple[float, float]] = field(default_factory=_default_bounds)

    @classmethod
    def build(
        cls,
        n_agents: int,
        hidden_layers: int = DEFAULT_HIDDEN_LAYERS,
        width: int = DEFAULT_WIDTH,
        activation: str = DEFAULT_ACTIVATION,
        bounds: Optional[Mapping[str, Tuple[float, float]]] = None,
    ) -> "PolicyNetworks":
        if n_agents < 1 or hidden_layers < 1 or width < 1:
            raise ValueError("agents, hidden layers and width must all be positive")
        hidden = (int(width),) * int(hidden_layers)
        agg = NetworkSpec((aggregate_input_width(n_agents),) + hidden + (2,), activation, dict(AGGREGATE_HEADS))
        idio = NetworkSpec((idiosyncratic_input_width(n_agents),) + hidden + (3,), activation, dict(IDIOSYNCRATIC_HEADS))
        merged = _default_bounds()
        merged.update(dict(bounds or {}))
        return cls(agg, idio, merged)

    @property
    def specs(self) -> Tuple[NetworkSpec, NetworkSpec]:
        return (self.agg_spec, self.idio_spec)

    @property
    def n_agents(self) -> int:
        return (self.agg_spec.input_width - aggregate_input_width(0)) // 3

    @property
    def param_count(self) -> int:
        return self.agg_spec.param_count + self.idio_spec.param_count

    def split(self, theta):
        """Split a flat vector (array, ParamVector or tape value) into the two networks' parts."""
        theta = theta.values if isinstance(theta, ParamVector) else theta
        if np.shape(ad.value(theta)) != (self.param_count,):
            raise ValueError(f"parameter vector has shape {np.shape(ad.value(theta))}, networks need ({self.param_count},)")
        cut = self.agg_spec.param_count
        return ad.getitem(theta, slice(0, cut)), ad.getitem(theta, slice(cut, self.param_count))

    def init_params(self, seed: int, scale: float = INIT_SCALE) -> ParamVector:
        agg = init_params(self.agg_spec, scale, seed, name="init-agg")
        idio = init_params(self.idio_spec, scale, seed, name="init-idio")
        offsets = tuple(agg.layer_offsets) + tuple(o + len(agg) for o in idio.layer_offsets)
        return ParamVector(np.concatenate([agg.values, idio.values]), offsets)


def evaluate_networks(theta, nets: PolicyNetworks, state: EconomyState, shocks: ShockDraw, params: ModelParams) -> RawOutputs:
    if state.n_agents != nets.n_agents:
        raise ValueError(f"state has {state.n_agents} agents, networks were built for {nets.n_agents}")
    theta_agg, theta_idio = nets.split(theta)
    agg_inputs, idio_inputs = encode_inputs(state, shocks, params, nets.bounds)
    agg_out = forward(theta_agg, nets.agg_spec, agg_inputs)
    idio_out = forward(theta_idio, nets.idio_spec, idio_inputs)
    batch, n_agents = state.batch_size, state.n_agents
    return RawOutputs(
        z_pi=head(agg_out, nets.agg_spec, "pi"),
        z_w=head(agg_out, nets.agg_spec, "w"),
        c_tilde=ad.reshape(head(idio_out, nets.idio_spec, "c"), (batch, n_agents)),
        h_tilde=ad.reshape(head(idio_out, nets.idio_spec, "h"), (batch, n_agents)),
        mu_tilde=ad.reshape(head(idio_out, nets.idio_spec, "mu"), (batch, n_agents)),
    )


def marginal_utility(c, c_prev, params: ModelParams):
    """``(c - habit * C_prev) ** -sigma``; raises when habit-adjusted consumption is not positive."""
    excess = ad.subtract(c, ad.multiply(params.habit, c_prev))
    if np.any(np.asarray(ad.value(excess)) <= 0):
        raise NumericalError("consumption at or below the habit level, marginal utility undefined")
    return ad.exp(ad.multiply(ad.negative(params.sigma), ad.log(excess)))


def _at_bound(x, bound) -> np.ndarray:
    x = np.asarray(ad.value(x), dtype=float)
    bound = np.asarray(ad.value(bound), dtype=float)
    return np.abs(x - bound) <= BINDING_TOL * np.maximum(1.0, np.abs(bound))


def apply_regime(
    raw: RawOutputs,
    state: EconomyState,
    shocks: ShockDraw,
    params: ModelParams,
    regime: ConstraintRegime,
    idio_mode: str = "clip",
) -> PolicyBundle:
    """Turn raw network heads into policies under one constraint regime.

    Hard: consumption projected into ``(0, omega - b_min]`` with sum equal to
    total cash on hand, so bonds clear and the limit can bind exactly.
    IdioHard: consumption clipped at financial capacity (``"clip"``) or scaled by
    a sigmoid of it (``"sigmoid"``). AggHard: consumption rescaled to sum to
    cash on hand. Soft: positive consumption with hours from the labour FOC.

    Raises:
        ProjectionSpecError: Some agent has no financial capacity (omega <= b_min).
        NumericalError: Marginal utility undefined in the Soft regime.
    """
    regime = ConstraintRegime(regime)
    if idio_mode not in IDIO_MODES:
        raise ValueError(f"unknown idio_mode '{idio_mode}', expected one of {IDIO_MODES}")
    for name in ("z_pi", "z_w", "c_tilde", "h_tilde", "mu_tilde"):
        if not np.all(np.isfinite(ad.value(getattr(raw, name)))):
            raise NumericalError(f"network head '{name}' is not finite")

    psi, s, tfp = shock_step(state, shocks, params)
    pi = ad.multiply(params.pi_bar, ad.exp(raw.z_pi))
    w = ad.multiply(tfp, ad.sigmoid(raw.z_w))

    c = None
    if regime is ConstraintRegime.SOFT:
        c = ad.softplus(raw.c_tilde)
        marginal = marginal_utility(c, state.c_prev, params)
        hours_base = ad.divide(ad.multiply(ad.multiply(marginal, s), w), params.chi)
        h = ad.exp(ad.divide(ad.log(hours_base), params.eta))
    else:
        h = ad.softplus(raw.h_tilde)

    n, y, mc, div = firm_block(w, h, s, tfp, params)
    r = taylor_rate(pi, y, state.r_prev, shocks.eps_mp, params)
    omega = cash_on_hand(state, w, s, h, div, pi, params)
    mu_raw = ad.softplus(raw.mu_tilde)
    binding = np.zeros(np.shape(ad.value(omega)), dtype=bool)
    capacity = ad.subtract(omega, params.b_min)

    if regime in (ConstraintRegime.HARD, ConstraintRegime.IDIO_HARD):
        if np.any(np.asarray(ad.value(capacity)) <= 0):
            raise ProjectionSpecError("an agent has no financial capacity (omega <= b_min)")

    if regime is ConstraintRegime.HARD:
        spec = BoundedSumSpec(
            a=np.zeros(np.shape(ad.value(omega))),
            b=capacity,
            C=ad.sorted_sum(omega, axis=-1, keepdims=True),
        )
        result = project_redistribute(ad.softplus(raw.c_tilde), spec, bind_last="upper")
        c = result.w
        binding = result.binding_mask & _at_bound(c, capacity)
        b = ad.where(binding, np.broadcast_to(np.asarray(params.b_min, dtype=float), binding.shape), ad.subtract(omega, c))
        mu = ad.where(binding, mu_raw, 0.0)
    elif regime is ConstraintRegime.IDIO_HARD:
        if idio_mode == "clip":
            c_free = ad.softplus(raw.c_tilde)
            binding = np.asarray(ad.value(c_free)) >= np.asarray(ad.value(capacity))
            c = ad.minimum(c_free, capacity)
        else:
            c = ad.multiply(capacity, ad.sigmoid(raw.c_tilde))
        b = ad.where(binding, np.broadcast_to(np.asarray(params.b_min, dtype=float), binding.shape), ad.subtract(omega, c))
        mu = ad.where(binding, mu_raw, 0.0)
    elif regime is ConstraintRegime.AGG_HARD:
        c_free = ad.softplus(raw.c_tilde)
        c = ad.multiply(agent_mean(omega), ad.divide(c_free, agent_mean(c_free)))
        b = ad.subtract(omega, c)
        binding = _at_bound(b, params.b_min)
        mu = mu_raw
    else:
        b = ad.subtract(omega, c)
        binding = _at_bound(b, params.b_min)
        mu = mu_raw

    return PolicyBundle(
        pi=pi,
        w=w,
        c=c,
        h=h,
        mu=mu,
        b=b,
        n=n,
        y=y,
        mc=mc,
        div=div,
        r=r,
        omega=omega,
        psi=psi,
        s=s,
        tfp=tfp,
        binding=binding,
    )


def policy_step(
    theta,
    nets: PolicyNetworks,
    state: EconomyState,
    shocks: ShockDraw,
    params: ModelParams,
    regime: ConstraintRegime,
    idio_mode: str = "clip",
) -> PolicyBundle:
    """Evaluate both networks and map their heads to policies."""
    raw = evaluate_networks(theta, nets, state, shocks, params)
    return apply_regime(raw, state, shocks, params, regime, idio_mode)


__all__ = [
    "AGGREGATE_HEADS",
    "IDIOSYNCRATIC_HEADS",
    "IDIO_MODES",
    "PolicyNetworks",
    "RawOutputs",
    "aggregate_input_width",
    "apply_regime",
    "encode_inputs",
    "evaluate_networks",
    "idiosyncratic_input_width",
    "marginal_utility",
    "policy_step",
    "scale_params",
]
