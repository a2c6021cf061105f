"""
Paired ablation runs.

The full model and each ablated variant train on the same task with the
same seeds; test metrics are averaged over seeds and every variant is
compared to the full model as (ablated - full) / full.
"""
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence
import logging

from apps.core.exceptions import ConfigError
from apps.core.utils import mean_or_nan, relative_change
from apps.modeling.config import ABLATION_TARGETS, ablate
from apps.training.services import evaluate, gen_task, get_training_service, write_csv

from .run_config import RunConfig

logger = logging.getLogger(__name__)

VARIANT_LABELS = {'r2mu': 'w/o R2MU', 'asam': 'w/o ASAM', 'soes': 'w/o SOES'}
ABLATION_METRICS = ('token_accuracy', 'exact_match', 'perplexity', 'bits_per_char')


def variants_for(disable: str) -> List[str]:
    """Modules to ablate one at a time; 'all' expands to every module."""
    if disable == 'all':
        return list(ABLATION_TARGETS)
    if disable not in ABLATION_TARGETS:
        raise ConfigError(
            f"unknown module '{disable}', expected one of {', '.join(ABLATION_TARGETS + ('all',))}", field='disable'
        )
    return [disable]


@dataclass
class AblationReport:
    seeds: List[int]
    rows: List[Dict[str, object]] = field(default_factory=list)

    def columns(self) -> List[str]:
        return ['variant'] + [name for metric in ABLATION_METRICS for name in (metric, f'{metric}_change')]


class AblationService:
    """
    Trains the full model and ablated variants under identical seeds.

    Usage:
        report = AblationService(run_config).run('all', seeds=[0, 1, 2])
    """

    def __init__(self, run: RunConfig):
        self.run_config = run

    def _train_and_score(self, label: str, model_config, seed: int) -> Dict[str, float]:
        run = self.run_config
        task = replace(run.task, seed=seed)
        train = replace(run.train, seed=seed)
        out = run.out / label.replace('/', '').replace(' ', '_').lower() / f'seed{seed}'
        result = get_training_service(train).train_loop(model_config, gen_task(task), out)
        metrics = evaluate(result.checkpoint_path, task, 'test')
        return {name: getattr(metrics, name) for name in ABLATION_METRICS}

    def run(self, disable: str, seeds: Optional[Sequence[int]] = None) -> AblationReport:
        targets = variants_for(disable)
        seeds = list(seeds) if seeds else [self.run_config.seed]
        variants = [('Full', self.run_config.model)]
        variants += [(VARIANT_LABELS[t], ablate(self.run_config.model, t)) for t in targets]

        report = AblationReport(seeds)
        baseline: Dict[str, float] = {}
        for label, model_config in variants:
            logger.info(f"Ablation variant {label} over seeds {seeds}")
            scores = [self._train_and_score(label, model_config, seed) for seed in seeds]
            row: Dict[str, object] = {'variant': label}
            for metric in ABLATION_METRICS:
                value = mean_or_nan(s[metric] for s in scores)
                row[metric] = value
                if label == 'Full':
                    baseline[metric] = value
                row[f'{metric}_change'] = relative_change(value, baseline[metric])
            report.rows.append(row)
        write_csv(self.run_config.out / 'ablation.csv', report.rows, report.columns())
        return report
