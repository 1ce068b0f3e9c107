"""Run configuration files.

A config file is a flat list of ``key = value`` lines; ``#`` starts a
comment. Every key is optional, unknown or repeated keys are errors::

    rows = 32
    cols = 32
    g_on = 100e-6
    variation_sigma = 0.05
    seed = 7
"""

import os
import typing as t
from dataclasses import dataclass, field, fields
from pathlib import Path

from dotenv import find_dotenv, load_dotenv

from tpu_imac_sim.defaults import DEFAULT_AUX_COST_PER_ELEM, DEFAULT_SEED, ENV_CONFIG
from tpu_imac_sim.exceptions import ConfigError
from tpu_imac_sim.imac import CrossbarConfig
from tpu_imac_sim.logger import logger
from tpu_imac_sim.sched import Mode
from tpu_imac_sim.systolic import SystolicConfig

_SYSTOLIC_KEYS = {f.name: f.type for f in fields(SystolicConfig)}
_IMAC_KEYS = {f.name: f.type for f in fields(CrossbarConfig)}
_RUN_KEYS = {"aux_cost_per_elem": int, "seed": int}
KNOWN_KEYS = tuple(_SYSTOLIC_KEYS) + tuple(_IMAC_KEYS) + tuple(_RUN_KEYS)


@dataclass(frozen=True)
class RunConfig:
    systolic: SystolicConfig = field(default_factory=SystolicConfig)
    imac: CrossbarConfig = field(default_factory=CrossbarConfig)
    aux_cost_per_elem: int = DEFAULT_AUX_COST_PER_ELEM
    mode: Mode = Mode.HYBRID
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.aux_cost_per_elem < 0:
            raise ConfigError("aux_cost_per_elem must be >= 0")


def _convert(key: str, raw: str, kind) -> t.Union[int, float]:
    kind = {"int": int, "float": float}.get(kind, kind)
    try:
        if kind is int:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: {raw!r} is not a valid {kind.__name__}") from None


def parse_config(text: str, mode: t.Union[Mode, str] = Mode.HYBRID) -> RunConfig:
    """Parse config file contents into a RunConfig.

    Raises:
        ConfigError: On malformed lines, unknown or duplicate keys, bad values
            or values that break a configuration invariant.
    """
    values: t.Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in KNOWN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value

    def pick(table):
        return {k: _convert(k, values[k], table[k]) for k in table if k in values}

    run_values = pick(_RUN_KEYS)
    return RunConfig(
        systolic=SystolicConfig(**pick(_SYSTOLIC_KEYS)),
        imac=CrossbarConfig(**pick(_IMAC_KEYS)),
        mode=Mode.from_cli(mode) if isinstance(mode, str) else mode,
        **run_values,
    )


def config_path_from_env() -> t.Optional[Path]:
    load_dotenv(find_dotenv(usecwd=True))
    value = os.getenv(ENV_CONFIG)
    return Path(value) if value else None


def load_run_config(
    path: t.Optional[t.Union[str, Path]], mode: t.Union[Mode, str] = Mode.HYBRID
) -> RunConfig:
    """Read a config file, falling back to ``$TPUIMAC_CONFIG`` and then defaults."""
    if path is None:
        path = config_path_from_env()
        if path is None:
            logger.debug("No config file given, using built-in defaults")
            return parse_config("", mode)
        logger.info(f"Using config file {path} from {ENV_CONFIG}")
    return parse_config(Path(path).read_text(encoding="utf-8"), mode)
