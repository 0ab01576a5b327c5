"""Run configuration: a flat ``key = value`` file with section prefixes.

Example::

    regime = hard
    seed = 7
    model.n_agents = 10
    model.phi = 700.0, 1300.0      # drawn uniformly during training
    model.beta = 0.9975            # fixed
    net.hidden_layers = 3
    train.iterations = 5000
    analyze.horizons = 40

Unknown keys are rejected. ``RunConfig.to_text`` writes every effective value
and re-parses to an equal ``RunConfig``.
"""
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np

from .config import (
    CALIBRATION,
    DEFAULT_ACTIVATION,
    DEFAULT_HIDDEN_LAYERS,
    DEFAULT_N_AGENTS,
    DEFAULT_PENALTY_WEIGHT,
    DEFAULT_WIDTH,
    INIT_SCALE,
    MAX_FORWARD_SIMS,
    NORM_PERIODS,
    PARAM_NAMES,
    logger,
)
from .errors import ConfigError
from .model import ConstraintRegime, ModelParams
from .regimes import PolicyNetworks
from .trainer import TrainerConfig, default_bounds

CONFIG_FILE = "run_config.cfg"


def _optional_float(text: str) -> Optional[float]:
    return None if text.lower() == "none" else float(text)


def _strings(text: str) -> Tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in _strings(text))


def _format(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class NetSettings:
    hidden_layers: int = DEFAULT_HIDDEN_LAYERS
    width: int = DEFAULT_WIDTH
    activation: str = DEFAULT_ACTIVATION


@dataclass(frozen=True)
class TrainSettings:
    iterations: int = 1000
    batch_size: int = 64
    max_sims: int = MAX_FORWARD_SIMS
    learning_rate: Optional[float] = None
    tol0: float = 0.0
    tol1: float = 1e-3
    tol2: int = 100
    resample_every: int = 1
    reset_on: Tuple[str, ...] = ()
    max_nan_iterations: int = 50
    idio_mode: str = "clip"
    init_scale: float = INIT_SCALE
    checkpoint_every: int = 0
    penalty_weight: float = DEFAULT_PENALTY_WEIGHT


@dataclass(frozen=True)
class AnalyzeSettings:
    """Parameters of the analysis jobs; ``states`` initial states are drawn from an ergodic run."""

    shock: str = "tfp"
    size: float = 1.0
    horizons: int = 40
    states: int = 16
    draws: int = 8
    burn_in: int = 200
    stride: int = 10
    norm_periods: int = NORM_PERIODS
    periods: int = 200
    bbar_min: float = -0.5
    bbar_max: float = -0.01
    points: int = 10
    weights: Tuple[float, ...] = (1.0, 1e2, 1e4)


_PARSERS: Dict[str, Callable[[str], Any]] = {
    "learning_rate": _optional_float,
    "reset_on": _strings,
    "weights": _floats,
}
_SECTIONS = {"net": NetSettings, "train": TrainSettings, "analyze": AnalyzeSettings}


def _parser_for(settings_cls, name: str) -> Callable[[str], Any]:
    if name in _PARSERS:
        return _PARSERS[name]
    default = next(f.default for f in fields(settings_cls) if f.name == name)
    return type(default)


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI run needs.

    Attributes:
        bounds: Training range per structural parameter; equal ends fix it.
    """

    regime: ConstraintRegime = ConstraintRegime.HARD
    seed: int = 0
    n_agents: int = DEFAULT_N_AGENTS
    bounds: Dict[str, Tuple[float, float]] = field(default_factory=default_bounds)
    net: NetSettings = field(default_factory=NetSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    analyze: AnalyzeSettings = field(default_factory=AnalyzeSettings)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        """Parse config text.

        Raises:
            ConfigError: Malformed line, unknown key or unparsable value; names the key.
        """
        top: Dict[str, Any] = {}
        bounds = default_bounds()
        sections: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTIONS}

        for number, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or not key:
                raise ConfigError(f"line {number}: expected 'key = value', got '{line}'")
            try:
                if key == "regime":
                    top["regime"] = ConstraintRegime.parse(raw)
                elif key == "seed":
                    top["seed"] = int(raw)
                elif key == "model.n_agents":
                    top["n_agents"] = int(raw)
                elif key.startswith("model."):
                    name = key[len("model."):]
                    if name not in CALIBRATION:
                        raise ConfigError(f"unknown config key '{key}'", key)
                    ends = _floats(raw)
                    if len(ends) not in (1, 2):
                        raise ConfigError(f"'{key}' takes one value or 'min, max'", key)
                    low, high = ends[0], ends[-1]
                    if low > high:
                        raise ConfigError(f"'{key}' has min {low} above max {high}", key)
                    bounds[name] = (low, high)
                else:
                    section, _, name = key.partition(".")
                    settings_cls = _SECTIONS.get(section)
                    if settings_cls is None or name not in {f.name for f in fields(settings_cls)}:
                        raise ConfigError(f"unknown config key '{key}'", key)
                    sections[section][name] = _parser_for(settings_cls, name)(raw)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"invalid value for '{key}': {exc}", key) from exc

        return cls(
            bounds=bounds,
            net=NetSettings(**sections["net"]),
            train=TrainSettings(**sections["train"]),
            analyze=AnalyzeSettings(**sections["analyze"]),
            **top,
        )

    @classmethod
    def read(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.parse(path.read_text(encoding="utf-8"))

    def to_text(self) -> str:
        lines = [f"regime = {self.regime.value}", f"seed = {self.seed}", f"model.n_agents = {self.n_agents}"]
        for name in PARAM_NAMES:
            low, high = self.bounds[name]
            lines.append(f"model.{name} = {_format(low) if low == high else _format((low, high))}")
        for section, settings_cls in _SECTIONS.items():
            settings = getattr(self, section)
            lines.extend(f"{section}.{f.name} = {_format(getattr(settings, f.name))}" for f in fields(settings_cls))
        return "\n".join(lines) + "\n"

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text(), encoding="utf-8")
        logger.info("Run configuration written to %s", path)
        return path

    def with_overrides(self, **overrides) -> "RunConfig":
        """Replace top-level, ``train.*`` or ``analyze.*`` values; ``None`` leaves a value unchanged."""
        overrides = {key: val for key, val in overrides.items() if val is not None}
        top = {key: overrides.pop(key) for key in ("regime", "seed", "n_agents") if key in overrides}
        if "regime" in top:
            top["regime"] = ConstraintRegime.parse(top["regime"])
        section_values: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTIONS}
        for key, val in overrides.items():
            for name, settings_cls in _SECTIONS.items():
                if key in {f.name for f in fields(settings_cls)}:
                    section_values[name][key] = val
                    break
            else:
                raise ConfigError(f"unknown override '{key}'", key)
        return replace(
            self,
            net=replace(self.net, **section_values["net"]),
            train=replace(self.train, **section_values["train"]),
            analyze=replace(self.analyze, **section_values["analyze"]),
            **top,
        )

    def networks(self) -> PolicyNetworks:
        return PolicyNetworks.build(self.n_agents, self.net.hidden_layers, self.net.width, self.net.activation, self.bounds)

    def trainer_config(self, checkpoint_path: Optional[Path] = None) -> TrainerConfig:
        train = self.train
        return TrainerConfig(
            iterations=train.iterations,
            batch_size=train.batch_size,
            max_sims=train.max_sims,
            learning_rate=train.learning_rate,
            tol0=train.tol0,
            tol1=train.tol1,
            tol2=train.tol2,
            seed=self.seed,
            regime=self.regime,
            weights=self.regime.default_weights(train.penalty_weight),
            resample_every=train.resample_every,
            reset_on=train.reset_on,
            max_nan_iterations=train.max_nan_iterations,
            n_agents=self.n_agents,
            bounds=dict(self.bounds),
            idio_mode=train.idio_mode,
            init_scale=train.init_scale,
            checkpoint_every=train.checkpoint_every,
            checkpoint_path=checkpoint_path,
        )

    def analysis_params(self) -> ModelParams:
        """Baseline calibration clipped into the configured bounds."""
        values = {
            name: float(np.clip(CALIBRATION[name][0], *self.bounds[name])) for name in PARAM_NAMES
        }
        return ModelParams.baseline(self.n_agents, **values)

    def bbar_grid(self) -> np.ndarray:
        return np.linspace(self.analyze.bbar_min, self.analyze.bbar_max, self.analyze.points)


__all__ = [
    "AnalyzeSettings",
    "CONFIG_FILE",
    "NetSettings",
    "RunConfig",
    "TrainSettings",
]
