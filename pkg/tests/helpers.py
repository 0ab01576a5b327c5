"""Reference implementations used as test oracles."""
import numpy as np

from hardhank.model import ModelParams
from hardhank.regimes import PolicyNetworks


def central_difference(fn, x, h=1e-6):
    """Central finite-difference gradient of a scalar ``fn`` at ``x``."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[index] = h
        grad[index] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return grad


def reference_redistribute(x, a, b, C):
    """Element-by-element loop version of rescale-then-redistribute (lower bound first)."""
    x, a, b = (np.asarray(v, dtype=float).copy() for v in (x, a, b))
    k = len(x)
    z_prime = [(b[i] - a[i]) * x[i] / x.sum() + a[i] for i in range(k)]
    z = [C * v / sum(z_prime) for v in z_prime]

    for bound, direction in ((a, -1.0), (b, 1.0)):
        violators = [direction * (z[i] - bound[i]) > 0 for i in range(k)]
        moved = sum(direction * (z[i] - bound[i]) for i in range(k) if violators[i])
        slack = [0.0 if violators[i] else direction * (bound[i] - z[i]) for i in range(k)]
        total_slack = sum(slack)
        z = [
            bound[i] if violators[i] else z[i] + direction * slack[i] / total_slack * moved
            for i in range(k)
        ]
    return np.asarray(z)


def tiny_networks(n_agents=3, hidden_layers=1, width=6, activation="tanh"):
    return PolicyNetworks.build(n_agents, hidden_layers, width, activation)


def head_bias_index(nets, name):
    """Position in the flat vector of the output bias feeding idiosyncratic head ``name``."""
    spec = nets.idio_spec
    n_in, n_out = spec.layer_shapes()[-1]
    start, _ = spec.heads[name]
    return nets.agg_spec.param_count + spec.layer_offsets()[-1] + n_in * n_out + start


def baseline_params(n_agents=3, **overrides):
    return ModelParams.baseline(n_agents, **overrides)
