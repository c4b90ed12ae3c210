"""Run configuration: a flat, typed key-value format with sections.

Files are INI-style ([run] / [network] / [agent] sections); command-line
flags override file values and the resolved merge is snapshotted into the
output directory so any run is reconstructible from its snapshot plus seed.
Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields

from . import neuron
from .env import ENVIRONMENTS, make_env
from .encoding import ENCODERS
from .network import ARCHITECTURES, SpikingNetwork, build_network, init_params
from .neuron import NeuronModelKind, SurrogateSpec
from .rl import AgentConfig
from .tensor import Rng

MODELS = ("dsqn", "dtsqn", "datsqn")


class ConfigError(ValueError):
    """Bad configuration file, key, or value."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_opt_bool(text: str):
    if text.strip().lower() in ("", "none", "auto"):
        return None
    return _parse_bool(text)


# section -> key -> (field name, parser)
SCHEMA = {
    "run": {
        "env": ("env", str),
        "model": ("model", str),
        "seed": ("seed", int),
        "out_dir": ("out_dir", str),
    },
    "network": {
        "arch": ("arch", str),
        "window": ("window", int),
        "beta": ("beta", float),
        "v_reset": ("v_reset", float),
        "v_th_p": ("v_th_p", float),
        "v_th_n_init": ("v_th_n_init", float),
        "trainable_v_th_p": ("trainable_v_th_p", _parse_opt_bool),
        "trainable_v_th_n": ("trainable_v_th_n", _parse_opt_bool),
        "surrogate": ("surrogate", str),
        "surrogate_alpha": ("surrogate_alpha", float),
        "surrogate_k": ("surrogate_k", float),
    },
    "agent": {
        "discount": ("discount", float),
        "epsilon": ("epsilon", float),
        "eval_epsilon": ("eval_epsilon", float),
        "learning_rate": ("learning_rate", float),
        "batch_size": ("batch_size", int),
        "buffer_capacity": ("buffer_capacity", int),
        "target_sync_period": ("target_sync_period", int),
        "total_steps": ("total_steps", int),
        "warmup_steps": ("warmup_steps", int),
        "train_every": ("train_every", int),
        "checkpoint_window": ("checkpoint_window", int),
        "encoder": ("encoder", str),
    },
}

_FIELD_SECTION = {
    field: (section, key)
    for section, keys in SCHEMA.items()
    for key, (field, _) in keys.items()
}


@dataclass
class RunConfig:
    # run
    env: str = "catch"
    model: str = "datsqn"
    seed: int = 0
    out_dir: str = ""
    # network
    arch: str = "desk"
    window: int = 20
    beta: float = 0.9
    v_reset: float = 0.0
    v_th_p: float = 1.0
    v_th_n_init: float = 2.0
    trainable_v_th_p: bool | None = None  # None = model default
    trainable_v_th_n: bool | None = None
    surrogate: str = "atan"
    surrogate_alpha: float = 2.0
    surrogate_k: float = 25.0
    # agent
    discount: float = 0.99
    epsilon: float = 0.1
    eval_epsilon: float = 0.05
    learning_rate: float = 5e-5
    batch_size: int = 32
    buffer_capacity: int = 100_000
    target_sync_period: int = 1000
    total_steps: int = 1_000_000
    warmup_steps: int = 1000
    train_every: int = 1
    checkpoint_window: int = 20
    encoder: str = "bernoulli"

    def validate(self) -> "RunConfig":
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"unknown env {self.env!r}; valid: {sorted(ENVIRONMENTS)}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; valid: {', '.join(MODELS)}")
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown arch {self.arch!r}; valid: {sorted(ARCHITECTURES)}")
        if self.surrogate not in neuron.SURROGATE_KINDS:
            raise ConfigError(f"unknown surrogate {self.surrogate!r}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"unknown encoder {self.encoder!r}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        return self

    # --- model wiring ---------------------------------------------------

    def resolved_trainable_flags(self) -> tuple[bool, bool]:
        """Trainable-threshold flags with model-specific defaults applied."""
        if self.model == "dsqn":
            default = (False, False)
        elif self.model == "dtsqn":
            default = (False, False)
        else:  # datsqn: fixed positive threshold, learnable negative one
            default = (False, True)
        pos = default[0] if self.trainable_v_th_p is None else self.trainable_v_th_p
        neg = default[1] if self.trainable_v_th_n is None else self.trainable_v_th_n
        if self.model == "dtsqn":
            # one shared symmetric threshold: the flags move together
            flag = pos or neg
            return flag, flag
        return pos, neg

    def model_kind(self) -> NeuronModelKind:
        pos, neg = self.resolved_trainable_flags()
        if self.model == "dsqn":
            return NeuronModelKind(neuron.BINARY, pos, False)
        if self.model == "dtsqn":
            return NeuronModelKind(neuron.TERNARY_SYMMETRIC, pos, neg)
        return NeuronModelKind(neuron.TERNARY_ASYMMETRIC, pos, neg)

    def surrogate_spec(self) -> SurrogateSpec:
        return SurrogateSpec(self.surrogate, self.surrogate_alpha, self.surrogate_k)

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            discount=self.discount,
            epsilon=self.epsilon,
            eval_epsilon=self.eval_epsilon,
            learning_rate=self.learning_rate,
            window=self.window,
            batch_size=self.batch_size,
            buffer_capacity=self.buffer_capacity,
            target_sync_period=self.target_sync_period,
            total_steps=self.total_steps,
            warmup_steps=self.warmup_steps,
            train_every=self.train_every,
            checkpoint_window=self.checkpoint_window,
            encoder=self.encoder,
            surrogate=self.surrogate_spec(),
        )

    def make_env(self):
        return make_env(self.env)

    def build_network(self, rng: Rng | None = None) -> SpikingNetwork:
        env = self.make_env()
        specs = ARCHITECTURES[self.arch](env.action_count)
        net = build_network(
            env.observation_shape,
            specs,
            self.model_kind(),
            beta=self.beta,
            v_reset=self.v_reset,
            v_th_p=self.v_th_p,
            v_th_n_init=self.v_th_n_init,
        )
        if rng is not None:
            init_params(net, rng)
        return net


def _apply(cfg: RunConfig, section: str, key: str, raw: str) -> None:
    try:
        field_name, parser = SCHEMA[section][key]
    except KeyError:
        raise ConfigError(f"unknown config key [{section}] {key}") from None
    try:
        value = parser(raw)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r} ({exc})") from exc
    setattr(cfg, field_name, value)


def load_config(path: str | None, overrides: list[str] = ()) -> RunConfig:
    """Read an INI file (optional), apply 'section.key=value' overrides."""
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                _apply(cfg, section, key, raw)
    for item in overrides:
        key_part, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        section, sep, key = key_part.strip().partition(".")
        if not sep:
            raise ConfigError(f"override key must be section.key, got {key_part!r}")
        _apply(cfg, section.strip(), key.strip(), raw.strip())
    return cfg.validate()


def snapshot(cfg: RunConfig) -> str:
    """Serialize the resolved configuration (defaults filled in) as INI text."""
    pos, neg = cfg.resolved_trainable_flags()
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    values["trainable_v_th_p"] = pos
    values["trainable_v_th_n"] = neg
    parser = configparser.ConfigParser()
    for section, keys in SCHEMA.items():
        parser[section] = {}
        for key, (field_name, _) in keys.items():
            value = values[field_name]
            parser[section][key] = str(value).lower() if isinstance(value, bool) else str(value)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
