import dataclasses
import types
from pathlib import Path
from typing import Any, Union, get_args, get_origin, get_type_hints

import yaml
from errors import ConfigError
from logging_config import get_logger
from schemas import RunConfig

logger = get_logger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent / "config.yaml"


def _coerce(value: Any, hint: Any, key: str) -> Any:  # noqa: C901, PLR0911
    origin = get_origin(hint)
    if origin in (Union, types.UnionType):
        options = get_args(hint)
        if value is None and type(None) in options:
            return None
        inner = next(option for option in options if option is not type(None))
        return _coerce(value, inner, key)
    if origin is tuple:
        args = get_args(hint)
        if not isinstance(value, list | tuple) or len(value) != len(args):
            raise ConfigError(key, f"expected a list of {len(args)} values, got {value!r}")
        return tuple(_coerce(item, arg, key) for item, arg in zip(value, args, strict=True))
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, int | float):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if hint is Path:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a path string, got {value!r}")
        return Path(value)
    return value


def _build_section(section_cls: type[Any], data: Any, section: str) -> Any:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(section, "expected a mapping")
    hints = get_type_hints(section_cls)
    known = {f.name for f in dataclasses.fields(section_cls)}
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}", f"unknown key; expected one of {sorted(known)}")
        kwargs[key] = _coerce(value, hints[key], f"{section}.{key}")
    try:
        return section_cls(**kwargs)
    except ConfigError as err:
        raise ConfigError(f"{section}.{err.key_path}", err.reason) from err


def parse_config(config_data: Any) -> RunConfig:
    """Build and validate a `RunConfig` from a parsed YAML/JSON document.

    Raises:
        ConfigError: On unknown sections or keys, wrong types, or invalid values.
    """
    if config_data is None:
        config_data = {}
    if not isinstance(config_data, dict):
        raise ConfigError("", "configuration document must be a mapping")

    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    hints = get_type_hints(RunConfig)
    built: dict[str, Any] = {}
    for name, data in config_data.items():
        if name not in sections:
            raise ConfigError(str(name), f"unknown section; expected one of {sorted(sections)}")
        built[name] = _build_section(hints[name], data, name)
    return RunConfig(**built)


def load_config(config_path: Path | None = None) -> RunConfig:
    """Load configuration from YAML file.

    JSON documents are accepted as well, being valid YAML.

    Args:
        config_path: Path to configuration file. If None, uses default path.

    Returns:
        RunConfig: Loaded and validated configuration object.

    Raises:
        FileNotFoundError: If config file doesn't exist.
        ConfigError: If config contains unknown keys or invalid values.
    """
    if config_path is None:
        config_path = DEFAULT_CONFIG_PATH

    if not config_path.exists():
        msg = f"Configuration file not found: {config_path}"
        logger.error(msg)
        raise FileNotFoundError(msg)

    with config_path.open() as f:
        try:
            config_data = yaml.safe_load(f)
        except yaml.YAMLError as err:
            msg = f"Cannot parse {config_path}: {err}"
            logger.exception(msg)
            raise ConfigError("", msg) from err

    try:
        config = parse_config(config_data)
    except ConfigError as err:
        logger.error("Invalid configuration %s: %s", config_path, err)  # noqa: TRY400
        raise
    logger.debug("Loaded configuration from %s", config_path)
    return config


def with_overrides(config: RunConfig, section: str, **values: Any) -> RunConfig:
    """Return `config` with `section` fields replaced by the non-None `values` (flags win)."""
    overrides = {key: value for key, value in values.items() if value is not None}
    if not overrides:
        return config
    current = getattr(config, section)
    try:
        updated = dataclasses.replace(current, **overrides)
    except ConfigError as err:
        raise ConfigError(f"{section}.{err.key_path}", err.reason) from err
    return dataclasses.replace(config, **{section: updated})
