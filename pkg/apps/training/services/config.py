"""Training configuration."""
from dataclasses import asdict, dataclass
from typing import Any, Dict
import logging

from django.conf import settings

from apps.core.exceptions import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """
    Optimizer, schedule and loop settings.

    The defaults are desk values, not numbers from any published run:
    lr_peak 3e-4, batch 32, warmup 200, cosine horizon 10000, clip 1.0,
    betas (0.9, 0.95), weight decay 0.01.
    """
    steps: int = 5000
    batch_size: int = 32
    lr_peak: float = 3e-4
    warmup_steps: int = 200
    total_steps: int = 10000
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    grad_clip_norm: float = 1.0
    early_stop_patience: int = 5
    eval_interval: int = 250
    seed: int = 0

    @classmethod
    def from_settings(cls) -> 'TrainConfig':
        """Create config from Django settings."""
        return cls(
            steps=getattr(settings, 'RESS_STEPS', 5000),
            batch_size=getattr(settings, 'RESS_BATCH_SIZE', 32),
            lr_peak=getattr(settings, 'RESS_LR_PEAK', 3e-4),
            warmup_steps=getattr(settings, 'RESS_WARMUP_STEPS', 200),
            total_steps=getattr(settings, 'RESS_TOTAL_STEPS', 10000),
            weight_decay=getattr(settings, 'RESS_WEIGHT_DECAY', 0.01),
            grad_clip_norm=getattr(settings, 'RESS_GRAD_CLIP_NORM', 1.0),
            early_stop_patience=getattr(settings, 'RESS_EARLY_STOP_PATIENCE', 5),
            eval_interval=getattr(settings, 'RESS_EVAL_INTERVAL', 250),
            seed=getattr(settings, 'RESS_SEED', 0),
        )

    def validate(self) -> 'TrainConfig':
        for name in ('steps', 'warmup_steps'):
            if getattr(self, name) < 0:
                raise ConfigError(f"must be >= 0, got {getattr(self, name)}", field=name)
        for name in ('batch_size', 'total_steps', 'early_stop_patience', 'eval_interval'):
            if getattr(self, name) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, name)}", field=name)
        if self.warmup_steps > self.total_steps:
            raise ConfigError(
                f"warmup_steps {self.warmup_steps} exceeds total_steps {self.total_steps}", field='warmup_steps'
            )
        for name in ('lr_peak', 'adam_eps', 'grad_clip_norm'):
            if getattr(self, name) <= 0:
                raise ConfigError(f"must be positive, got {getattr(self, name)}", field=name)
        if self.weight_decay < 0:
            raise ConfigError(f"must be >= 0, got {self.weight_decay}", field='weight_decay')
        for name in ('beta1', 'beta2'):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"must be in [0, 1), got {getattr(self, name)}", field=name)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
