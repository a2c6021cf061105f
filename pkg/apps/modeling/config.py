"""
Model hyperparameters.

Desk defaults come from settings (RESS_*). `reference_preset()` carries the
full-size settings (K=4, k_top=32, m=128, e=2 of E=8).
"""
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict
import logging

from django.conf import settings

from apps.attention.attention import AttentionConfig
from apps.core.exceptions import ConfigError
from apps.sparse.activations import PHI_CHOICES

logger = logging.getLogger(__name__)

ABLATION_TARGETS = ('r2mu', 'asam', 'soes')


@dataclass
class ModelConfig:
    """All architecture hyperparameters. vocab_size 0 means "take it from the task"."""
    vocab_size: int = 0
    d_model: int = 64
    n_heads: int = 4
    K: int = 4
    k_top: int = 32
    m: int = 16
    E: int = 8
    e: int = 2
    phi: str = 'entmax15'
    lambda_struct: float = 0.1
    lambda_bias: float = 1.0
    load_balance_coeff: float = 0.0
    dropout_rate: float = 0.0
    disable_r2mu: bool = False
    disable_asam: bool = False
    disable_soes: bool = False
    router_temp: float = 1.0
    d_struct: int = 16
    max_positions: int = 2048
    bucket_size: int = 64

    @classmethod
    def from_settings(cls) -> 'ModelConfig':
        """Create config from Django settings."""
        return cls(
            d_model=getattr(settings, 'RESS_D_MODEL', 64),
            n_heads=getattr(settings, 'RESS_N_HEADS', 4),
            K=getattr(settings, 'RESS_K', 4),
            k_top=getattr(settings, 'RESS_K_TOP', 32),
            m=getattr(settings, 'RESS_MEMORY_SLOTS', 16),
            E=getattr(settings, 'RESS_EXPERTS', 8),
            e=getattr(settings, 'RESS_ACTIVE_EXPERTS', 2),
            phi=getattr(settings, 'RESS_PHI', 'entmax15'),
            lambda_struct=getattr(settings, 'RESS_LAMBDA_STRUCT', 0.1),
            lambda_bias=getattr(settings, 'RESS_LAMBDA_BIAS', 1.0),
            load_balance_coeff=getattr(settings, 'RESS_LOAD_BALANCE_COEFF', 0.0),
        )

    @classmethod
    def reference_preset(cls, **overrides) -> 'ModelConfig':
        values = dict(K=4, k_top=32, m=128, e=2, E=8)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def gradcheck_preset(cls, **overrides) -> 'ModelConfig':
        """Tiny model for finite-difference checks: d=8, two iterations, no top-k truncation."""
        values = dict(
            vocab_size=10, d_model=8, n_heads=2, K=2, k_top=32, m=4, E=4, e=2,
            phi='softmax', d_struct=4, load_balance_coeff=0.01, max_positions=16, bucket_size=32,
        )
        values.update(overrides)
        return cls(**values)

    def validate(self) -> 'ModelConfig':
        positive = ('d_model', 'n_heads', 'K', 'k_top', 'm', 'E', 'e', 'd_struct', 'max_positions')
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, name)}", field=name)
        if self.vocab_size < 0:
            raise ConfigError(f"must be >= 0, got {self.vocab_size}", field='vocab_size')
        if self.d_model % self.n_heads:
            raise ConfigError(f"{self.d_model} is not divisible by n_heads={self.n_heads}", field='d_model')
        if self.e > self.E:
            raise ConfigError(f"e={self.e} exceeds E={self.E}", field='e')
        if self.phi not in PHI_CHOICES:
            raise ConfigError(f"expected one of {', '.join(PHI_CHOICES)}, got '{self.phi}'", field='phi')
        for name in ('lambda_struct', 'lambda_bias', 'load_balance_coeff'):
            if getattr(self, name) < 0:
                raise ConfigError(f"must be >= 0, got {getattr(self, name)}", field=name)
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"must be in [0, 1), got {self.dropout_rate}", field='dropout_rate')
        if self.router_temp <= 0:
            raise ConfigError(f"must be positive, got {self.router_temp}", field='router_temp')
        if self.bucket_size < self.k_top:
            raise ConfigError(f"must be >= k_top={self.k_top}, got {self.bucket_size}", field='bucket_size')
        return self

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(
            d_model=self.d_model,
            n_heads=self.n_heads,
            k_top=self.k_top,
            phi=self.phi,
            E=self.E,
            e=self.e,
            router_temp=self.router_temp,
            restrict=not self.disable_asam,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'ModelConfig':
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model keys: {', '.join(sorted(unknown))}", field=sorted(unknown)[0])
        return cls(**values)


def ablate(config: ModelConfig, which: str) -> ModelConfig:
    """
    Switch off one mechanism ('r2mu', 'asam', 'soes') or all of them ('all').

    r2mu: no memory rows, no gates.
    asam: softmax over all keys, every expert active.
    soes: no structure bias or drift loss; learned absolute positions are added instead.
    """
    if which == 'all':
        for target in ABLATION_TARGETS:
            config = ablate(config, target)
        return config
    if which == 'r2mu':
        return replace(config, disable_r2mu=True)
    if which == 'asam':
        return replace(config, disable_asam=True, phi='softmax', e=config.E)
    if which == 'soes':
        return replace(config, disable_soes=True, lambda_bias=0.0, lambda_struct=0.0)
    raise ConfigError(f"unknown module '{which}', expected one of {', '.join(ABLATION_TARGETS + ('all',))}", field='disable')
