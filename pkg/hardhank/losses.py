"""Residual losses of the equilibrium conditions and the constraint penalties."""
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .model import (
    ConstraintRegime,
    EconomyState,
    ModelParams,
    PenaltyWeights,
    PolicyBundle,
    ShockDraw,
    agent_mean,
    state_transition,
)
from .regimes import PolicyNetworks, marginal_utility, policy_step

LOSS_COLUMNS = ("ee", "nkpc", "ls", "kkt", "oc", "rc", "total")


def fb_penalty(slack, multiplier):
    """Squared Fischer-Burmeister function ``(a + b - sqrt(a^2 + b^2))^2``.

    Zero exactly when ``slack >= 0``, ``multiplier >= 0`` and their product is 0.
    """
    return ad.square(ad.subtract(ad.add(slack, multiplier), ad.hypot(slack, multiplier)))


@dataclass
class LossBreakdown:
    """Loss components averaged over the batch; fields may be tape values during training."""

    ee: Any
    nkpc: Any
    ls: Any
    kkt: Any
    oc: Any
    rc: Any
    total: Any

    def to_floats(self) -> "LossBreakdown":
        return LossBreakdown(**{f.name: float(np.reshape(ad.value(getattr(self, f.name)), ())) for f in fields(self)})

    def as_dict(self) -> Dict[str, float]:
        return asdict(self.to_floats())

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.as_dict().values())

    @classmethod
    def nan(cls) -> "LossBreakdown":
        return cls(*(float("nan"),) * len(LOSS_COLUMNS))


def _euler_residual(bundle: PolicyBundle, following: PolicyBundle, state: EconomyState, params: ModelParams):
    """``1 - mu - beta R E[exp(psi')/exp(psi) * lambda'/lambda / Pi']`` for one draw."""
    marginal = marginal_utility(bundle.c, state.c_prev, params)
    marginal_next = marginal_utility(following.c, agent_mean(bundle.c), params)
    preference = ad.exp(ad.subtract(following.psi, bundle.psi))
    discounted = ad.multiply(ad.multiply(params.beta, bundle.r), preference)
    ratio = ad.divide(ad.divide(marginal_next, marginal), following.pi)
    return ad.subtract(ad.subtract(1.0, bundle.mu), ad.multiply(discounted, ratio))


def _nkpc_residual(bundle: PolicyBundle, following: PolicyBundle, params: ModelParams):
    gap = ad.subtract(ad.divide(bundle.pi, params.pi_bar), 1.0)
    pi_next = ad.divide(following.pi, params.pi_bar)
    expectation = ad.multiply(
        ad.multiply(ad.divide(following.pi, bundle.r), ad.subtract(pi_next, 1.0)),
        ad.multiply(pi_next, ad.divide(following.y, bundle.y)),
    )
    return ad.subtract(
        ad.subtract(
            ad.subtract(ad.multiply(params.phi, gap), np.subtract(1.0, params.epsilon)),
            ad.multiply(params.epsilon, bundle.mc),
        ),
        ad.multiply(ad.multiply(params.beta, params.phi), expectation),
    )


def _labour_residual(bundle: PolicyBundle, state: EconomyState, params: ModelParams):
    marginal = marginal_utility(bundle.c, state.c_prev, params)
    disutility = ad.divide(
        ad.multiply(params.chi, ad.exp(ad.multiply(params.eta, ad.log(bundle.h)))),
        ad.multiply(bundle.s, bundle.w),
    )
    return ad.subtract(marginal, disutility)


def residual_losses(
    bundle: PolicyBundle,
    following: Sequence[PolicyBundle],
    state: EconomyState,
    params: ModelParams,
    regime: ConstraintRegime,
    weights: Optional[PenaltyWeights] = None,
) -> LossBreakdown:
    """All loss components from this period's bundle and two independent next-period bundles.

    Expectations are integrated by multiplying the residuals of the two draws.
    ``weights`` default to the regime's defaults.
    """
    if len(following) != 2:
        raise ValueError(f"residual_losses needs exactly two next-period bundles, got {len(following)}")
    regime = ConstraintRegime(regime)
    weights = weights if weights is not None else regime.default_weights()

    first, second = following
    ee = ad.mean(ad.multiply(_euler_residual(bundle, first, state, params), _euler_residual(bundle, second, state, params)))
    nkpc = ad.mean(ad.multiply(_nkpc_residual(bundle, first, params), _nkpc_residual(bundle, second, params)))
    ls = ad.mean(ad.square(_labour_residual(bundle, state, params)))

    kkt = ad.mean(fb_penalty(ad.subtract(bundle.b, params.b_min), bundle.mu))
    oc = ad.mean(ad.square(ad.subtract(bundle.y, agent_mean(bundle.c))))
    rc = ad.mean(ad.square(agent_mean(bundle.b)))

    total = ad.add(ad.add(ee, nkpc), ls)
    for weight, penalty in ((weights.kkt, kkt), (weights.oc, oc), (weights.rc, rc)):
        if weight:
            total = ad.add(total, ad.multiply(weight, penalty))
    return LossBreakdown(ee=ee, nkpc=nkpc, ls=ls, kkt=kkt, oc=oc, rc=rc, total=total)


def batch_loss(
    theta,
    nets: PolicyNetworks,
    state: EconomyState,
    params: ModelParams,
    shocks: Tuple[ShockDraw, ShockDraw, ShockDraw],
    regime: ConstraintRegime,
    weights: Optional[PenaltyWeights] = None,
    idio_mode: str = "clip",
) -> Tuple[Any, LossBreakdown, PolicyBundle]:
    """Total loss on a batch of states, by full recursion to t+1 under two draws.

    Args:
        shocks: ``(current, draw_1, draw_2)`` innovations.

    Returns:
        Tuple ``(total, breakdown, bundle)`` where ``bundle`` holds this period's policies.
    """
    current, draw_1, draw_2 = shocks
    bundle = policy_step(theta, nets, state, current, params, regime, idio_mode)
    next_state = state_transition(state, bundle)
    following = [policy_step(theta, nets, next_state, draw, params, regime, idio_mode) for draw in (draw_1, draw_2)]
    breakdown = residual_losses(bundle, following, state, params, regime, weights)
    return breakdown.total, breakdown, bundle


__all__ = [
    "LOSS_COLUMNS",
    "LossBreakdown",
    "batch_loss",
    "fb_penalty",
    "residual_losses",
]
