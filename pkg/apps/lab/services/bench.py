"""
Attention timing benchmark.

Times one attention forward (projections plus attention, no tape) per mode
and sequence length:

    dense     every key, full score matrix
    exact     full score matrix, top-k_top keys per query
    bucketed  scores only for a learned-order bucket neighbourhood, then top-k_top

Reports the median over `trials` runs after `warmups` discarded runs, and
the least-squares log-log exponent of time against n per mode.
"""
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import median
from typing import Dict, List, Optional, Tuple
import logging
import time

from django.conf import settings

from apps.attention.attention import AttentionConfig, init_attention_params, multi_head_attention
from apps.autodiff.tensor import Tensor
from apps.core.exceptions import ConfigError
from apps.core.utils import fit_loglog_exponent, make_rng
from apps.structure.graph import bucket_candidates, init_structure_params
from apps.training.services import write_csv

logger = logging.getLogger(__name__)

BENCH_MODES = ('dense', 'exact', 'bucketed')
CSV_COLUMNS = ('mode', 'n', 'k_top', 'median_ms', 'trials')
EXPONENT_COLUMNS = ('mode', 'exponent', 'min_n', 'max_n')


@dataclass
class BenchConfig:
    """Benchmark grid and repetition counts."""
    lengths: Tuple[int, ...] = (256, 512, 1024, 2048)
    k_top: int = 32
    modes: Tuple[str, ...] = BENCH_MODES
    trials: int = 5
    warmups: int = 2
    d_model: int = 64
    n_heads: int = 4
    bucket_size: int = 64
    phi: str = 'softmax'
    seed: int = 0

    @classmethod
    def from_settings(cls) -> 'BenchConfig':
        """Create config from Django settings."""
        return cls(
            k_top=getattr(settings, 'RESS_K_TOP', 32),
            d_model=getattr(settings, 'RESS_D_MODEL', 64),
            n_heads=getattr(settings, 'RESS_N_HEADS', 4),
            seed=getattr(settings, 'RESS_SEED', 0),
        )

    def validate(self) -> 'BenchConfig':
        unknown = [mode for mode in self.modes if mode not in BENCH_MODES]
        if unknown:
            raise ConfigError(f"unknown modes {', '.join(unknown)}, expected {', '.join(BENCH_MODES)}", field='mode')
        if not self.lengths or min(self.lengths) < 1:
            raise ConfigError(f"need positive lengths, got {list(self.lengths)}", field='lengths')
        if self.trials < 5:
            raise ConfigError(f"median needs at least 5 trials, got {self.trials}", field='trials')
        if self.k_top < 1:
            raise ConfigError(f"must be >= 1, got {self.k_top}", field='k_top')
        if self.bucket_size < self.k_top:
            raise ConfigError(f"must be >= k_top={self.k_top}, got {self.bucket_size}", field='bucket_size')
        AttentionConfig(d_model=self.d_model, n_heads=self.n_heads, k_top=self.k_top, phi=self.phi).validate()
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class BenchReport:
    rows: List[Dict[str, object]] = field(default_factory=list)
    exponents: Dict[str, float] = field(default_factory=dict)
    exponents_path: Optional[Path] = None


def exponents_path(csv_path) -> Path:
    """Sibling of the timing CSV holding one fitted exponent per mode."""
    path = Path(csv_path)
    return path.with_name(f'{path.stem}_exponents.csv')


class BenchService:
    """
    Measures attention forward time over a length grid.

    Usage:
        report = BenchService(BenchConfig(lengths=(256, 512))).run()
    """

    def __init__(self, config: Optional[BenchConfig] = None):
        self.config = (config or BenchConfig.from_settings()).validate()
        rng = make_rng(self.config.seed)
        self.params = init_attention_params(rng, self.config.d_model)
        self.params.update(init_structure_params(rng, self.config.d_model, 16))
        self.rng = rng

    def attention_config(self, mode: str) -> AttentionConfig:
        cfg = self.config
        return AttentionConfig(d_model=cfg.d_model, n_heads=cfg.n_heads, k_top=cfg.k_top, phi=cfg.phi, restrict=mode != 'dense')

    def forward(self, h: Tensor, mode: str) -> Tensor:
        candidates = mask = None
        if mode == 'bucketed':
            candidates, mask = bucket_candidates(h, self.params, self.config.bucket_size, self.config.k_top)
        attn_config = self.attention_config(mode)
        return multi_head_attention(h, self.params, attn_config, candidates=candidates, candidate_mask=mask).output

    def time_mode(self, mode: str, n: int) -> float:
        """Median wall-clock milliseconds of one forward."""
        h = Tensor(self.rng.normal(size=(n, self.config.d_model)))
        for _ in range(self.config.warmups):
            self.forward(h, mode)
        samples = []
        for _ in range(self.config.trials):
            started = time.perf_counter()
            self.forward(h, mode)
            samples.append((time.perf_counter() - started) * 1000.0)
        return float(median(samples))

    def run(self, csv_path=None) -> BenchReport:
        cfg = self.config
        report = BenchReport()
        for mode in cfg.modes:
            times = []
            for n in cfg.lengths:
                elapsed = self.time_mode(mode, n)
                times.append(elapsed)
                report.rows.append({'mode': mode, 'n': n, 'k_top': cfg.k_top, 'median_ms': round(elapsed, 4), 'trials': cfg.trials})
                logger.debug(f"bench {mode} n={n}: {elapsed:.3f} ms")
            if len(cfg.lengths) > 1:
                report.exponents[mode] = fit_loglog_exponent(cfg.lengths, times)
                logger.info(f"bench {mode}: exponent {report.exponents[mode]:.2f} over n={list(cfg.lengths)}")
        if csv_path is not None:
            write_csv(Path(csv_path), report.rows, CSV_COLUMNS)
            if report.exponents:
                rows = [
                    {'mode': mode, 'exponent': round(exponent, 4), 'min_n': min(cfg.lengths), 'max_n': max(cfg.lengths)}
                    for mode, exponent in report.exponents.items()
                ]
                report.exponents_path = write_csv(exponents_path(csv_path), rows, EXPONENT_COLUMNS)
        return report
