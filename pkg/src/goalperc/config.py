"""Run configuration: defaults, flat ``key = value`` files and the config echo.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment. Keys are the ``RunConfig`` field names (dashes and underscores
are interchangeable). Command-line flags override file values.
"""

from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import neuromod

FORMAT_TAG = "# goalperc config v1"
ALL_MODES = "all"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data_dir: str = "data/mnist"
    out: str = "runs"
    checkpoint: str = ""          # empty: <out>/checkpoint.bin
    # training
    steps: int = 4400
    batch: int = 256
    eval_interval: int = 200
    eval_size: int = 2000
    learning_rate: float = 0.001
    # evaluation and the neuromod pair pool
    pairs: int = 10000
    # neuromodulation
    runs: int = 10
    switches: int = 10
    validity: str = ALL_MODES     # 0.99, 0.85, 0.70, random or all
    beta: float = 1.0
    max_ach: float = 4.0
    ne_reset: float = 0.25
    ach_correct: float = 1.04
    ach_incorrect: float = 0.99
    ne_correct: float = 0.97
    ne_incorrect: float = 1.02
    trial_interval: int = 400
    trial_range: int = 30
    # saliency
    pair_index: int = 0
    digits: str = ""              # e.g. "4,5": first generated pair with these labels
    goal: str = ALL_MODES         # even, odd, low, high or all

    def checkpoint_path(self):
        return Path(self.checkpoint) if self.checkpoint else Path(self.out) / "checkpoint.bin"

    def validity_modes(self):
        if self.validity == ALL_MODES:
            return [*neuromod.VALIDITY_OPTIONS, neuromod.RANDOM]
        return [neuromod.parse_validity(self.validity)]

    def neuromod_config(self, mode):
        return neuromod.NeuromodConfig(
            beta=self.beta, ne_reset=self.ne_reset, max_ach=self.max_ach,
            ach_correct=self.ach_correct, ach_incorrect=self.ach_incorrect,
            ne_correct=self.ne_correct, ne_incorrect=self.ne_incorrect,
            num_switches=self.switches, trial_interval=self.trial_interval,
            trial_range=self.trial_range, validity_mode=mode)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str, int: int, float: float, str: str}


def _cast(key, raw):
    kind = _CASTS[FIELD_TYPES[key]]
    try:
        value = kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
    if kind is int and key != "seed" and value < 0:
        raise ConfigError(f"{key} must be non-negative")
    if key == "seed" and not 0 <= value < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return value


def _normalise_key(key):
    key = key.strip().replace("-", "_")
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def parse_config_text(text, base=None):
    """Apply the ``key = value`` lines of ``text`` on top of ``base``."""
    updates = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        key, raw = line.split("=", 1)
        key = _normalise_key(key)
        updates[key] = _cast(key, raw.strip())
    return replace(base or RunConfig(), **updates)


def with_overrides(cfg, overrides):
    """Apply a dict of already-typed or string values (None means unset)."""
    updates = {}
    for key, value in overrides.items():
        if value is None:
            continue
        key = _normalise_key(key)
        updates[key] = _cast(key, value) if isinstance(value, str) else value
    return replace(cfg, **updates)


def validate(cfg):
    if cfg.validity != ALL_MODES:
        try:
            mode = neuromod.parse_validity(cfg.validity)
        except ValueError:
            raise ConfigError(f"bad validity {cfg.validity!r}") from None
        if mode != neuromod.RANDOM and mode not in neuromod.VALIDITY_OPTIONS:
            raise ConfigError("validity must be one of 0.99, 0.85, 0.70, random, all")
    if cfg.goal not in (ALL_MODES, "even", "odd", "low", "high"):
        raise ConfigError(f"bad goal {cfg.goal!r}")
    if cfg.batch < 1 or cfg.pairs < 1 or cfg.runs < 1 or cfg.switches < 1:
        raise ConfigError("batch, pairs, runs and switches must be positive")
    try:
        cfg.neuromod_config(neuromod.RANDOM)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return cfg


def echo_text(cfg, command):
    """Frozen, reloadable copy of the effective config."""
    lines = [FORMAT_TAG, f"# command = {command}"]
    lines += [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"
