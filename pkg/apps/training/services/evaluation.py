"""Checkpoint evaluation and the length/noise sweeps."""
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
import csv
import logging

from apps.core.exceptions import ContractError
from apps.modeling.checkpoint import Checkpoint, load_checkpoint

from .metrics import EvalMetrics, evaluate_examples
from .tasks import TaskSpec, gen_task

logger = logging.getLogger(__name__)

SWEEP_METRICS = ('token_accuracy', 'exact_match', 'perplexity')


def _as_checkpoint(checkpoint: Union[Checkpoint, str, Path]) -> Checkpoint:
    return checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)


def eval_spec(spec: TaskSpec, split: str) -> TaskSpec:
    """Spec that generates only the requested split."""
    sizes = {name: 0 for name in ('train_size', 'dev_size', 'test_size')}
    sizes[f'{split}_size'] = getattr(spec, f'{split}_size')
    return replace(spec, **sizes)


def evaluate(
    checkpoint: Union[Checkpoint, str, Path],
    spec: TaskSpec,
    split: str = 'test',
    workers: int = 1,
) -> EvalMetrics:
    """
    Metrics of a checkpoint on one split of a task.

    Raises:
        ContractError: the checkpoint vocabulary does not match the task
    """
    checkpoint = _as_checkpoint(checkpoint)
    if split not in ('train', 'dev', 'test'):
        raise ContractError(f"unknown split '{split}'")
    if checkpoint.config.vocab_size != spec.vocab_size:
        raise ContractError(
            f"checkpoint vocabulary {checkpoint.config.vocab_size} does not match "
            f"{spec.task} vocabulary {spec.vocab_size}"
        )
    data = gen_task(eval_spec(spec, split))
    metrics = evaluate_examples(checkpoint.params, checkpoint.config, data.split(split), data.vocab_size, workers)
    logger.info(f"{spec.task}/{split} (len {spec.seq_len}): accuracy {metrics.token_accuracy:.4f}, EM {metrics.exact_match:.4f}")
    return metrics


def write_csv(path, rows: List[Dict[str, object]], columns: Sequence[str]) -> Path:
    """Header plus one row per entry; floats use '.' and repr precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), extrasaction='ignore')
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def length_sweep(
    checkpoint: Union[Checkpoint, str, Path],
    spec: TaskSpec,
    lengths: Sequence[int],
    csv_path=None,
    split: str = 'test',
) -> List[Dict[str, float]]:
    """Evaluate the same task at several sequence lengths; one row per length."""
    checkpoint = _as_checkpoint(checkpoint)
    rows = []
    for length in lengths:
        metrics = evaluate(checkpoint, replace(spec, seq_len=int(length)), split)
        rows.append(dict({'length': int(length)}, **{name: getattr(metrics, name) for name in SWEEP_METRICS}))
    if csv_path is not None:
        write_csv(csv_path, rows, ('length',) + SWEEP_METRICS)
    return rows


def noise_sweep(
    checkpoint: Union[Checkpoint, str, Path],
    spec: TaskSpec,
    noise_ratios: Sequence[float],
    csv_path=None,
    split: str = 'test',
) -> List[Dict[str, float]]:
    """distractor_qa accuracy as the distractor ratio grows; one row per ratio."""
    if spec.task != 'distractor_qa':
        raise ContractError(f"noise sweep needs the distractor_qa task, got {spec.task}")
    checkpoint = _as_checkpoint(checkpoint)
    rows = []
    for noise in noise_ratios:
        metrics = evaluate(checkpoint, replace(spec, noise=float(noise)), split)
        rows.append(dict({'noise': float(noise)}, **{name: getattr(metrics, name) for name in SWEEP_METRICS}))
    if csv_path is not None:
        write_csv(csv_path, rows, ('noise',) + SWEEP_METRICS)
    return rows


def relative_drop(rows: List[Dict[str, float]], key: str = 'token_accuracy') -> Optional[float]:
    """(first - last) / first over a sweep table; None when the first value is 0."""
    if not rows or not rows[0][key]:
        return None
    return (rows[0][key] - rows[-1][key]) / rows[0][key]
