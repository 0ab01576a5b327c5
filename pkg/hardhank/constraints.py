"""Differentiable output layers that force vectors into bounds with an exact sum.

The projection problem: given lower bounds ``a``, upper bounds ``b`` and a target
``C`` with ``a < b`` elementwise and ``sum(a) < C < sum(b)``, map any positive
vector ``x`` to ``w`` with ``a <= w <= b`` and ``sum(w) == C``.

Everything here works on the last axis and broadcasts over leading batch axes.
Inputs may be numpy arrays or tape values from ``autodiff``; branch choices
(which elements violate a bound) are read from values and treated as constant,
so the maps are differentiable almost everywhere with kinks at the switch
points. Sums go through ``sorted_sum`` so permuting the inputs permutes the
output exactly.
"""
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import autodiff as ad
from .config import BINDING_TOL, CLAMP_TOL, logger
from .errors import ProjectionSpecError

BOUND_KINDS = ("lower", "upper", "interval")
SMOOTHERS = ("softplus", "exp")


@dataclass
class BoundedSumSpec:
    """Bounds and target sum of one projection problem.

    Attributes:
        a: Lower bounds, shape (..., K).
        b: Upper bounds, shape (..., K).
        C: Target sums, shape (...) or (..., 1).
    """

    a: Any
    b: Any
    C: Any

    def target(self):
        """Target sum with a trailing unit axis, ready to broadcast against (..., K)."""
        c_val = np.asarray(ad.value(self.C), dtype=float)
        a_ndim = np.ndim(ad.value(self.a))
        if c_val.ndim == a_ndim:
            return self.C
        return ad.reshape(self.C, c_val.shape + (1,))

    def validate(self) -> None:
        a = np.asarray(ad.value(self.a), dtype=float)
        b = np.asarray(ad.value(self.b), dtype=float)
        c = np.asarray(ad.value(self.target()), dtype=float)
        if a.shape[-1:] != b.shape[-1:] or a.shape[-1] == 0:
            raise ProjectionSpecError(f"bounds must be non-empty vectors of equal length, got {a.shape} and {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ProjectionSpecError("bounds and target sum must be finite")
        if np.any(a >= b):
            raise ProjectionSpecError("every lower bound must be strictly below its upper bound")
        low = a.sum(axis=-1, keepdims=True)
        high = b.sum(axis=-1, keepdims=True)
        if np.any(low >= c) or np.any(c >= high):
            raise ProjectionSpecError("target sum must lie strictly between sum(a) and sum(b)")


@dataclass
class ProjectionResult:
    """Output of a projection.

    Attributes:
        w: Projected vector, same shape as the input.
        binding_mask: True where ``w`` sits on a bound within the binding tolerance.
        edge_case_flag: Per leading index, True when the final clamp had to move a
            value, in which case the sum constraint is no longer exact.
    """

    w: Any
    binding_mask: np.ndarray
    edge_case_flag: np.ndarray


def _check_finite(z, what: str) -> None:
    if not np.all(np.isfinite(ad.value(z))):
        raise ValueError(f"{what} must be finite")


def _smooth_positive(z, smooth: str):
    if smooth == "softplus":
        return ad.softplus(z)
    if smooth == "exp":
        return ad.exp(z)
    raise ValueError(f"unknown smoother '{smooth}', expected one of {SMOOTHERS}")


def bounded_activation(z, kind: str, a=None, b=None, smooth: str = "softplus"):
    """Map an unconstrained ``z`` into ``(a, inf)``, ``(-inf, b)`` or ``(a, b)``."""
    _check_finite(z, "activation input")
    if kind == "lower":
        if a is None:
            raise ValueError("lower bound activation needs a")
        return ad.add(a, _smooth_positive(z, smooth))
    if kind == "upper":
        if b is None:
            raise ValueError("upper bound activation needs b")
        return ad.subtract(b, _smooth_positive(z, smooth))
    if kind == "interval":
        if a is None or b is None:
            raise ValueError("interval activation needs a and b")
        if np.any(np.asarray(ad.value(a)) >= np.asarray(ad.value(b))):
            raise ValueError("interval activation needs a < b")
        return ad.add(a, ad.multiply(ad.subtract(b, a), ad.sigmoid(z)))
    raise ValueError(f"unknown bound kind '{kind}', expected one of {BOUND_KINDS}")


def softmax_scale(x, C):
    """``C * softmax(x)`` along the last axis."""
    if np.size(ad.value(x)) == 0 or np.shape(ad.value(x))[-1] == 0:
        raise ValueError("softmax_scale needs a non-empty vector")
    _check_finite(x, "softmax input")
    shift = np.max(ad.value(x), axis=-1, keepdims=True)
    e = ad.exp(ad.subtract(x, shift))
    return ad.multiply(C, ad.divide(e, ad.sum(e, axis=-1, keepdims=True)))


def minshift_scale(x, C):
    """``C * (x - min x) / sum(x - min x)`` along the last axis.

    The minimum element maps to exactly zero, so this only suits problems where a
    lower bound of zero may bind.
    """
    if np.size(ad.value(x)) == 0:
        raise ValueError("minshift_scale needs a non-empty vector")
    _check_finite(x, "minshift input")
    order = np.argmin(ad.value(x), axis=-1)[..., None]
    shifted = ad.subtract(x, ad.take_along_axis(x, order, axis=-1))
    total = ad.sorted_sum(shifted, axis=-1, keepdims=True)
    if np.any(ad.value(total) <= 0):
        raise ValueError("minshift_scale is undefined when all elements are equal")
    return ad.multiply(C, ad.divide(shifted, total))


def _rescale_into_bounds(x, spec: BoundedSumSpec):
    """Steps 1-2: stretch into [a, b] proportionally to x, then rescale the sum to C."""
    a, b = spec.a, spec.b
    total_x = ad.sorted_sum(x, axis=-1, keepdims=True)
    z_prime = ad.add(ad.multiply(ad.subtract(b, a), ad.divide(x, total_x)), a)
    return ad.multiply(spec.target(), ad.divide(z_prime, ad.sorted_sum(z_prime, axis=-1, keepdims=True)))


def _safe_denominator(total):
    positive = ad.value(total) > 0.0
    return ad.where(positive, total, 1.0), ~positive


def _redistribute_lower(z, a):
    """Clamp elements below ``a`` up to ``a`` and take the deficit from the rest by slack."""
    violators = ad.value(z) < ad.value(a)
    deficit = ad.sorted_sum(ad.where(violators, ad.subtract(a, z), 0.0), axis=-1, keepdims=True)
    slack = ad.where(violators, 0.0, ad.subtract(z, a))
    denominator, starved = _safe_denominator(ad.sorted_sum(slack, axis=-1, keepdims=True))
    moved = ad.subtract(z, ad.multiply(ad.divide(slack, denominator), deficit))
    no_receivers = starved[..., 0] & violators.any(axis=-1)
    return ad.where(violators, a, moved), no_receivers


def _redistribute_upper(z, b):
    """Clamp elements above ``b`` down to ``b`` and give the excess to the rest by slack."""
    violators = ad.value(z) > ad.value(b)
    excess = ad.sorted_sum(ad.where(violators, ad.subtract(z, b), 0.0), axis=-1, keepdims=True)
    slack = ad.where(violators, 0.0, ad.subtract(b, z))
    denominator, starved = _safe_denominator(ad.sorted_sum(slack, axis=-1, keepdims=True))
    moved = ad.add(z, ad.multiply(ad.divide(slack, denominator), excess))
    no_receivers = starved[..., 0] & violators.any(axis=-1)
    return ad.where(violators, b, moved), no_receivers


def _binding_mask(w, spec: BoundedSumSpec) -> np.ndarray:
    w_val = np.asarray(ad.value(w), dtype=float)
    a = np.asarray(ad.value(spec.a), dtype=float)
    b = np.asarray(ad.value(spec.b), dtype=float)
    at_lower = np.abs(w_val - a) <= BINDING_TOL * np.maximum(1.0, np.abs(a))
    at_upper = np.abs(w_val - b) <= BINDING_TOL * np.maximum(1.0, np.abs(b))
    return at_lower | at_upper


def _finalize(w, spec: BoundedSumSpec, no_receivers: np.ndarray, algorithm: str) -> ProjectionResult:
    """Safety clamp into [a, b]; flag rows where the clamp (or a starved step) changed the result."""
    clamped = ad.minimum(ad.maximum(w, spec.a), spec.b)
    moved = np.abs(np.asarray(ad.value(clamped)) - np.asarray(ad.value(w))) > CLAMP_TOL
    edge = moved.any(axis=-1) | no_receivers
    if np.any(edge):
        logger.warning(
            "%s: %s row(s) hit the redistribution edge case; bounds kept, sum constraint relaxed",
            algorithm,
            int(np.sum(edge)),
        )
    return ProjectionResult(w=clamped, binding_mask=_binding_mask(clamped, spec), edge_case_flag=edge)


def _check_positive_input(x, spec: BoundedSumSpec) -> None:
    x_val = np.asarray(ad.value(x), dtype=float)
    if x_val.shape[-1:] != np.shape(ad.value(spec.a))[-1:]:
        raise ProjectionSpecError(f"input length {x_val.shape[-1:]} does not match bounds {np.shape(ad.value(spec.a))[-1:]}")
    if not np.all(np.isfinite(x_val)) or np.any(x_val <= 0.0):
        raise ProjectionSpecError("projection input must be finite and strictly positive")


def project_redistribute(x, spec: BoundedSumSpec, bind_last: str = "upper", cap_shift: bool = False) -> ProjectionResult:
    """Rescale into bounds, then redistribute violations one bound at a time.

    Violators of the bound handled first are clamped onto it. With ``a = 0`` and
    ``bind_last="upper"`` the rescaled vector is already strictly positive, so the
    lower step never fires and only the upper bound can bind. A positive ``a`` can
    leave elements exactly on ``a``; ``binding_mask`` reports them.

    Args:
        x: Strictly positive input, shape (..., K).
        spec: Bounds and target sum.
        bind_last: ``"upper"`` (fix the lower bound first) or ``"lower"``.
        cap_shift: Apply ``binding_cap_shift`` before redistributing.
    """
    if bind_last not in ("upper", "lower"):
        raise ValueError(f"bind_last must be 'upper' or 'lower', got '{bind_last}'")
    spec.validate()
    _check_positive_input(x, spec)

    z = _rescale_into_bounds(x, spec)
    if cap_shift:
        shifted = binding_cap_shift(z, spec)
        z = ad.multiply(spec.target(), ad.divide(shifted, ad.sorted_sum(shifted, axis=-1, keepdims=True)))

    if bind_last == "upper":
        w, starved_first = _redistribute_lower(z, spec.a)
        w, starved_last = _redistribute_upper(w, spec.b)
    else:
        w, starved_first = _redistribute_upper(z, spec.b)
        w, starved_last = _redistribute_lower(w, spec.a)
    return _finalize(w, spec, starved_first | starved_last, "project_redistribute")


def project_clamp_shift(x, spec: BoundedSumSpec) -> ProjectionResult:
    """Rescale into bounds, clamp, and shift the clamped total onto elements with room.

    Both bounds can bind in the output.
    """
    spec.validate()
    _check_positive_input(x, spec)
    a, b = spec.a, spec.b

    z = _rescale_into_bounds(x, spec)
    above = ad.maximum(ad.subtract(z, b), 0.0)
    below = ad.minimum(ad.subtract(z, a), 0.0)
    imbalance = ad.add(ad.sorted_sum(above, axis=-1, keepdims=True), ad.sorted_sum(below, axis=-1, keepdims=True))

    surplus = ad.value(imbalance) >= 0.0
    receivers = ad.where(
        surplus,
        ad.maximum(ad.subtract(b, z), 0.0),
        ad.maximum(ad.subtract(z, a), 0.0),
    )
    denominator, starved = _safe_denominator(ad.sorted_sum(receivers, axis=-1, keepdims=True))
    clamped = ad.minimum(ad.maximum(z, a), b)
    w = ad.add(clamped, ad.multiply(ad.divide(receivers, denominator), imbalance))

    needed = np.abs(np.asarray(ad.value(imbalance))[..., 0]) > 0.0
    return _finalize(w, spec, starved[..., 0] & needed, "project_clamp_shift")


def max_binding_count(spec: BoundedSumSpec) -> np.ndarray:
    """Largest i* such that the i* largest upper bounds plus the remaining lower bounds stay below C.

    Pairs are ordered by decreasing ``b``; the result is at least 1.
    """
    a = np.asarray(ad.value(spec.a), dtype=float)
    b = np.asarray(ad.value(spec.b), dtype=float)
    c = np.asarray(ad.value(spec.target()), dtype=float)
    order = np.argsort(-b, axis=-1, kind="stable")
    b_sorted = np.take_along_axis(b, order, axis=-1)
    a_sorted = np.take_along_axis(a, order, axis=-1)
    b_head = np.cumsum(b_sorted, axis=-1)
    a_tail = np.sum(a_sorted, axis=-1, keepdims=True) - np.cumsum(a_sorted, axis=-1)
    feasible = (b_head + a_tail) < c
    return np.maximum(feasible.sum(axis=-1), 1)


def binding_cap_shift(z, spec: BoundedSumSpec):
    """Shift ``z`` so the i*-th largest element lands exactly on its bound after rescaling by C.

    Returns ``z - z_bar`` with ``z_bar = (b* sum(z) / C - z*) / (b* K / C - 1)``,
    where ``z*`` is the i*-th largest element of ``z`` and ``b*`` the i*-th largest
    upper bound.

    Raises:
        ValueError: The denominator ``b* K / C - 1`` is zero.
    """
    spec.validate()
    i_star = np.expand_dims(np.asarray(max_binding_count(spec)), -1) - 1
    b = np.asarray(ad.value(spec.b), dtype=float)
    k = b.shape[-1]
    c_target = spec.target()
    c_val = np.asarray(ad.value(c_target), dtype=float)

    b_star = np.take_along_axis(-np.sort(-b, axis=-1), i_star, axis=-1)
    z_order = np.argsort(-np.asarray(ad.value(z), dtype=float), axis=-1, kind="stable")
    z_star = ad.take_along_axis(z, np.take_along_axis(z_order, i_star, axis=-1), axis=-1)

    denominator = b_star * k / c_val - 1.0
    if np.any(np.abs(denominator) <= np.finfo(float).eps):
        logger.error("binding_cap_shift: degenerate denominator b* K / C - 1 = 0 (b*=%s, K=%s, C=%s)", b_star, k, c_val)
        raise ValueError("binding_cap_shift is undefined when b* K / C equals 1")

    total = ad.sorted_sum(z, axis=-1, keepdims=True)
    z_bar = ad.divide(ad.subtract(ad.divide(ad.multiply(b_star, total), c_target), z_star), denominator)
    return ad.subtract(z, z_bar)


__all__ = [
    "BOUND_KINDS",
    "BoundedSumSpec",
    "ProjectionResult",
    "binding_cap_shift",
    "bounded_activation",
    "max_binding_count",
    "minshift_scale",
    "project_clamp_shift",
    "project_redistribute",
    "softmax_scale",
]
