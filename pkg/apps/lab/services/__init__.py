"""Lab services package."""
from .ablation import AblationReport, AblationService, variants_for
from .bench import BENCH_MODES, BenchConfig, BenchReport, BenchService
from .gradcheck import GradCheckReport, GradCheckService, OPERATION_CASES
from .run_config import RESOLVED_NAME, RunConfig, resolve_run_config

__all__ = [
    'AblationReport',
    'AblationService',
    'variants_for',
    'BENCH_MODES',
    'BenchConfig',
    'BenchReport',
    'BenchService',
    'GradCheckReport',
    'GradCheckService',
    'OPERATION_CASES',
    'RESOLVED_NAME',
    'RunConfig',
    'resolve_run_config',
]
