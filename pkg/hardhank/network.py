"""Fully-connected feed-forward networks over a flat parameter vector.

A network is described by a ``NetworkSpec`` (layer widths, hidden activation,
named output heads) and evaluated from a flat vector holding every weight
matrix followed by its bias, layer by layer. The flat layout is what the
optimiser updates and what checkpoints store.
"""
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .config import DEFAULT_ACTIVATION, logger
from .rng import stream

ACTIVATIONS = {
    "tanh": ad.tanh,
    "relu": ad.relu,
}

CHECKPOINT_MAGIC = b"HARDHANK-CKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Shape of one network.

    Attributes:
        layer_widths: Input width, hidden widths, output width.
        activation: Hidden-layer activation, ``"tanh"`` or ``"relu"``. The output
            layer is linear.
        heads: Maps head name -> (start, stop) slice of the output layer.
    """

    layer_widths: Tuple[int, ...]
    activation: str = DEFAULT_ACTIVATION
    heads: Dict[str, Tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("a network needs at least an input and an output width")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}', expected one of {sorted(ACTIVATIONS)}")
        for name, (start, stop) in self.heads.items():
            if not 0 <= start < stop <= widths[-1]:
                raise ValueError(f"head '{name}' slice {(start, stop)} outside output width {widths[-1]}")

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    def layer_shapes(self) -> List[Tuple[int, int]]:
        return list(zip(self.layer_widths[:-1], self.layer_widths[1:]))

    def layer_offsets(self) -> List[int]:
        """Start offset of each layer's block (weights then bias) in the flat vector."""
        offsets = []
        position = 0
        for n_in, n_out in self.layer_shapes():
            offsets.append(position)
            position += n_in * n_out + n_out
        return offsets

    @property
    def param_count(self) -> int:
        return sum(n_in * n_out + n_out for n_in, n_out in self.layer_shapes())


@dataclass
class ParamVector:
    """Flat parameter vector and the layer offsets it was laid out with."""

    values: np.ndarray
    layer_offsets: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("parameter vector must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains non-finite entries")

    def __len__(self) -> int:
        return len(self.values)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), tuple(self.layer_offsets))


def _flat(params):
    if isinstance(params, ParamVector):
        return params.values
    return params


def forward(params, spec: NetworkSpec, inputs):
    """Evaluate the network on ``inputs`` of shape (..., input_width).

    ``params`` may be a ``ParamVector``, a flat array or a tape ``Var``; the
    result is a ``Var`` whenever the parameters or the inputs are.
    """
    theta = _flat(params)
    if ad.value(theta).shape != (spec.param_count,):
        raise ValueError(
            f"parameter vector has shape {ad.value(theta).shape}, network needs ({spec.param_count},)"
        )
    if np.shape(ad.value(inputs))[-1] != spec.input_width:
        raise ValueError(f"input width {np.shape(ad.value(inputs))[-1]} does not match network input {spec.input_width}")

    activation = ACTIVATIONS[spec.activation]
    hidden = inputs
    shapes = spec.layer_shapes()
    for index, ((n_in, n_out), offset) in enumerate(zip(shapes, spec.layer_offsets())):
        weights = ad.reshape(ad.getitem(theta, slice(offset, offset + n_in * n_out)), (n_in, n_out))
        bias = ad.getitem(theta, slice(offset + n_in * n_out, offset + n_in * n_out + n_out))
        hidden = ad.add(ad.matmul(hidden, weights), bias)
        if index < len(shapes) - 1:
            hidden = activation(hidden)
    return hidden


def head(outputs, spec: NetworkSpec, name: str):
    """Slice one named head out of the network output."""
    start, stop = spec.heads[name]
    return ad.getitem(outputs, (Ellipsis, slice(start, stop)))


def init_params(spec: NetworkSpec, scale: float, seed: int, name: str = "init") -> ParamVector:
    """Draw every parameter i.i.d. uniform on [-scale, scale] from a seeded Philox stream."""
    if scale <= 0:
        raise ValueError(f"initial parameter scale must be positive, got {scale}")
    rng = stream(seed, name)
    values = rng.uniform(-scale, scale, size=spec.param_count)
    return ParamVector(values, tuple(spec.layer_offsets()))


def save_checkpoint(path: Union[str, Path], params: ParamVector, specs: Sequence[NetworkSpec], seed: int) -> Path:
    """Write a versioned checkpoint: text header then little-endian float64 payload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    expected = sum(spec.param_count for spec in specs)
    if len(params) != expected:
        raise ValueError(f"parameter vector has {len(params)} entries, specs need {expected}")

    widths = ";".join(",".join(str(w) for w in spec.layer_widths) for spec in specs)
    activations = ";".join(spec.activation for spec in specs)
    header = (
        CHECKPOINT_MAGIC
        + b"\n"
        + f"version={CHECKPOINT_VERSION}\n".encode("ascii")
        + f"widths={widths}\n".encode("ascii")
        + f"activations={activations}\n".encode("ascii")
        + f"seed={int(seed)}\n".encode("ascii")
        + f"count={len(params)}\n".encode("ascii")
        + b"END\n"
    )
    payload = params.values.astype("<f8").tobytes()
    path.write_bytes(header + payload)
    logger.info("Checkpoint written to %s (%s parameters)", path, len(params))
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[ParamVector, List[Tuple[int, ...]], List[str], int]:
    """Read a checkpoint.

    Returns:
        Tuple of (params, layer widths per network, activations, seed).
    """
    path = Path(path)
    raw = path.read_bytes()
    marker = raw.find(b"END\n")
    if not raw.startswith(CHECKPOINT_MAGIC + b"\n") or marker < 0:
        raise ValueError(f"{path} is not a hardhank checkpoint")

    fields: Dict[str, str] = {}
    for line in raw[len(CHECKPOINT_MAGIC) + 1:marker].decode("ascii").splitlines():
        key, _, val = line.partition("=")
        fields[key] = val
    if int(fields.get("version", -1)) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {fields.get('version')} in {path}")

    count = int(fields["count"])
    payload = raw[marker + 4:]
    if len(payload) != count * struct.calcsize("<d"):
        raise ValueError(f"checkpoint payload in {path} holds {len(payload)} bytes, header promises {count} floats")

    widths = [tuple(int(w) for w in block.split(",")) for block in fields["widths"].split(";")]
    activations = fields["activations"].split(";")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    offsets: List[int] = []
    base = 0
    for block in widths:
        spec = NetworkSpec(block)
        offsets.extend(base + offset for offset in spec.layer_offsets())
        base += spec.param_count
    if base != count:
        raise ValueError(f"checkpoint {path} widths need {base} parameters, header promises {count}")
    return ParamVector(values, tuple(offsets)), widths, activations, int(fields["seed"])


def load_checkpoint(path: Union[str, Path], specs: Sequence[NetworkSpec]) -> ParamVector:
    """Read a checkpoint and check it against the expected network shapes."""
    params, widths, activations, _ = read_checkpoint(path)
    expected = [spec.layer_widths for spec in specs]
    if widths != expected:
        raise ValueError(f"checkpoint {path} has layer widths {widths}, configured networks need {expected}")
    if activations != [spec.activation for spec in specs]:
        raise ValueError(f"checkpoint {path} uses activations {activations}, configured networks use {[s.activation for s in specs]}")
    return params


__all__ = [
    "ACTIVATIONS",
    "NetworkSpec",
    "ParamVector",
    "forward",
    "head",
    "init_params",
    "load_checkpoint",
    "read_checkpoint",
    "save_checkpoint",
]
