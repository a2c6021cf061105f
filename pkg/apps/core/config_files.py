"""
Flat `key = value` configuration files.

Files are parsed with python-dotenv (comments with `#`, optional spaces
around `=`) and typed against a dataclass.
"""
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Type, get_type_hints
import logging

from dotenv import dotenv_values

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

TRUE_VALUES = {'1', 'true', 'yes', 'on'}
FALSE_VALUES = {'0', 'false', 'no', 'off'}


def read_flat_config(path) -> Dict[str, str]:
    """Read a flat config file into a dict of raw strings."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", field='config')
    values = dotenv_values(path, interpolate=False)
    empty = [key for key, value in values.items() if value is None]
    if empty:
        raise ConfigError(f"missing value for {', '.join(empty)}", field=empty[0])
    return {key.strip(): value.strip() for key, value in values.items()}


def parse_overrides(items: Optional[Iterable[str]]) -> Dict[str, str]:
    """Turn `--set key=value` arguments into a dict."""
    overrides = {}
    for item in items or []:
        if '=' not in item:
            raise ConfigError(f"override must look like key=value, got '{item}'", field=item)
        key, value = item.split('=', 1)
        overrides[key.strip()] = value.strip()
    return overrides


def coerce_value(raw: Any, target_type: type, field: str) -> Any:
    """Convert a raw string to the annotated field type."""
    if not isinstance(raw, str):
        return raw
    try:
        if target_type is bool:
            lowered = raw.lower()
            if lowered in TRUE_VALUES:
                return True
            if lowered in FALSE_VALUES:
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"expected {target_type.__name__}, got '{raw}'", field=field
        ) from None


def typed_values(cls: Type, raw: Mapping[str, Any]) -> Dict[str, Any]:
    """Coerce every key of `raw` that names a field of dataclass `cls`."""
    hints = get_type_hints(cls)
    result = {}
    for f in fields(cls):
        if f.name in raw:
            result[f.name] = coerce_value(raw[f.name], hints.get(f.name, str), f.name)
    return result


def unknown_keys(raw: Mapping[str, Any], classes: Iterable[Type], extra: Iterable[str] = ()) -> List[str]:
    """Keys that no dataclass in `classes` declares."""
    known = set(extra)
    for cls in classes:
        known.update(f.name for f in fields(cls))
    return sorted(key for key in raw if key not in known)


def format_value(value: Any) -> str:
    """Render a value so that reading it back yields the same value."""
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_flat_config(path, values: Mapping[str, Any], header: str = '') -> Path:
    """Write `key = value` lines, one per entry, in the given order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {line}" for line in header.splitlines()] if header else []
    lines.extend(f"{key} = {format_value(value)}" for key, value in values.items())
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    logger.debug(f"Wrote {len(values)} config entries to {path}")
    return path
