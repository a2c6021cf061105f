"""
Run configuration.

A run is resolved from, in order: settings defaults, a flat `key = value`
file, `--set key=value` overrides, then explicit flags. The result is fully
typed and validated before anything runs and is echoed as `resolved.cfg`.
"""
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Optional
import logging

from django.conf import settings

from apps.core.config_files import (
    coerce_value,
    parse_overrides,
    read_flat_config,
    typed_values,
    unknown_keys,
    write_flat_config,
)
from apps.core.exceptions import ConfigError
from apps.modeling.config import ModelConfig
from apps.training.services import TaskSpec, TrainConfig

logger = logging.getLogger(__name__)

RESOLVED_NAME = 'resolved.cfg'
SECTIONS = (ModelConfig, TrainConfig, TaskSpec)


@dataclass
class RunConfig:
    """Model, training and task settings for one run, plus where it writes."""
    model: ModelConfig
    train: TrainConfig
    task: TaskSpec
    out: Path
    seed: int

    def validate(self) -> 'RunConfig':
        self.model.validate()
        self.train.validate()
        self.task.validate()
        if self.model.vocab_size != self.task.vocab_size:
            raise ConfigError(
                f"{self.model.vocab_size} does not match the {self.task.task} vocabulary {self.task.vocab_size}",
                field='vocab_size',
            )
        return self

    def to_flat(self) -> Dict[str, Any]:
        """Every field once, model first; `seed` is shared by training and task."""
        values: Dict[str, Any] = {}
        for section in (self.model, self.train, self.task):
            for f in fields(section):
                values.setdefault(f.name, getattr(section, f.name))
        values['out'] = str(self.out)
        return values

    def write(self, path: Optional[Path] = None) -> Path:
        path = Path(path) if path else self.out / RESOLVED_NAME
        return write_flat_config(path, self.to_flat(), header='resolved run configuration')


def _section(cls, raw: Dict[str, str], **fixed):
    """Settings defaults for `cls`, overridden by the keys of `raw` it declares."""
    values = typed_values(cls, raw)
    values.update(fixed)
    return replace(cls.from_settings(), **values)


def resolve_run_config(
    config_path=None,
    overrides: Optional[Iterable[str]] = None,
    seed: Optional[int] = None,
    out=None,
) -> RunConfig:
    """
    Build a validated RunConfig.

    The seed comes from `seed`, else a `seed` key, else settings (the SEED
    environment variable).

    Raises:
        ConfigError: missing file, unknown key, bad value or failed validation
    """
    raw: Dict[str, str] = read_flat_config(config_path) if config_path else {}
    raw.update(parse_overrides(overrides))
    unknown = unknown_keys(raw, SECTIONS, extra=('out',))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}", field=unknown[0])

    if seed is None:
        seed = coerce_value(raw['seed'], int, 'seed') if 'seed' in raw else getattr(settings, 'RESS_SEED', 0)
    task = _section(TaskSpec, raw, seed=int(seed))
    train = _section(TrainConfig, raw, seed=int(seed))
    model = _section(ModelConfig, raw)
    task.validate()
    if model.vocab_size == 0:
        model = replace(model, vocab_size=task.vocab_size)

    if out is None:
        out = raw.get('out') or Path(getattr(settings, 'RESS_RUNS_DIR', 'runs')) / f"{task.task}-{seed}"
    run = RunConfig(model=model, train=train, task=task, out=Path(out), seed=int(seed)).validate()
    logger.debug(f"Resolved run {run.task.task} seed {run.seed} into {run.out}")
    return run
