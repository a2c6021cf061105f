"""
Training loop.

Per step: a batch of examples, one tape per example, gradients summed into
the parameters, one AdamW update. Every `eval_interval` steps (and at the
last step) the dev split is scored, a record goes to metrics.jsonl, and the
checkpoint is rewritten when dev token accuracy improves.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional
import json
import logging
import math
import time

import numpy as np

from apps.autodiff.tensor import Tape, backward
from apps.core.exceptions import NumericError, TrainingAborted
from apps.core.utils import make_rng
from apps.modeling.checkpoint import save_checkpoint
from apps.modeling.config import ModelConfig
from apps.modeling.model import Params, count_parameters, forward, init_params, loss

from .config import TrainConfig
from .metrics import EvalMetrics, evaluate_examples
from .optimizer import OptimizerState, optimizer_step
from .tasks import TaskData

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = 'checkpoint.bin'
LAST_GOOD_NAME = 'last_good.bin'
METRICS_NAME = 'metrics.jsonl'


@dataclass
class TrainResult:
    """Outcome of a training run."""
    checkpoint_path: Path
    metrics_path: Path
    params: Params
    config: ModelConfig
    steps_run: int = 0
    evaluations: int = 0
    best_dev_accuracy: float = -math.inf
    best_step: int = 0
    stopped_early: bool = False
    losses: List[float] = field(default_factory=list)
    history: List[Dict] = field(default_factory=list)


class MetricsLog:
    """Append-only JSON-lines log, one record per evaluation."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text('', encoding='utf-8')
        self._started = time.perf_counter()

    def append(self, step: int, split: str, metrics: Dict[str, float]) -> Dict:
        record = {
            'step': step,
            'split': split,
            'metrics': metrics,
            'wall_clock': round(time.perf_counter() - self._started, 6),
        }
        with self.path.open('a', encoding='utf-8') as handle:
            handle.write(json.dumps(record, sort_keys=True) + '\n')
        return record


def snapshot(params: Params) -> Dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


class TrainingService:
    """
    Runs `train_loop` for one model/task/config triple.

    Usage:
        service = TrainingService(train_config)
        result = service.train_loop(model_config, task_data, out_dir)
    """

    def __init__(self, config: Optional[TrainConfig] = None):
        self.config = (config or TrainConfig.from_settings()).validate()

    def _sample_loss(self, example, params: Params, model_config: ModelConfig, rng):
        result = forward(example.ids, params, model_config, rng=rng if model_config.dropout_rate else None)
        return loss(result.logits, example.targets, result.aux_losses, model_config)

    def train_step(self, batch, params: Params, model_config: ModelConfig, state: OptimizerState, rng) -> float:
        """One optimizer update over `batch`; returns the mean loss before the update."""
        for param in params.values():
            param.grad = None
        weight = 1.0 / len(batch)
        total = 0.0
        for example in batch:
            with Tape():
                value = self._sample_loss(example, params, model_config, rng)
                if not np.isfinite(value.data):
                    raise NumericError(f"non-finite loss {float(value.data)} at update {state.step + 1}")
                backward(value * weight, params=params.values())
            total += float(value.data)
        optimizer_step(params, None, state, self.config)
        return total / len(batch)

    def evaluate(self, params: Params, model_config: ModelConfig, data: TaskData, split: str = 'dev') -> EvalMetrics:
        return evaluate_examples(params, model_config, data.split(split), data.vocab_size)

    def train_loop(self, model_config: ModelConfig, data: TaskData, out_dir, meta: Optional[Dict] = None) -> TrainResult:
        """
        Train from a seeded initialisation.

        Writes `checkpoint.bin` (best dev accuracy) and `metrics.jsonl` under
        `out_dir`. With steps = 0 the initial parameters are saved and the
        metrics log stays empty.

        Raises:
            TrainingAborted: the loss went non-finite; `last_good.bin` holds
                the parameters of the last finite step
        """
        cfg = self.config
        out_dir = Path(out_dir)
        model_config = replace(model_config, vocab_size=data.vocab_size).validate()
        params = init_params(model_config, seed=cfg.seed)
        rng = make_rng(cfg.seed)
        log = MetricsLog(out_dir / METRICS_NAME)
        meta = dict(meta or {}, task=data.spec.to_dict(), train=cfg.to_dict())
        result = TrainResult(out_dir / CHECKPOINT_NAME, log.path, params, model_config)
        logger.info(
            f"Training {data.spec.task} for {cfg.steps} steps: {count_parameters(params)} parameters, "
            f"K={model_config.K}, k_top={model_config.k_top}, phi={model_config.phi}"
        )

        if cfg.steps == 0:
            save_checkpoint(result.checkpoint_path, model_config, params, dict(meta, step=0))
            return result

        train = data.split('train')
        if not train:
            raise TrainingAborted("training split is empty")
        state = OptimizerState()
        last_good = snapshot(params)
        stale = 0

        for step in range(1, cfg.steps + 1):
            batch = [train[i] for i in rng.integers(0, len(train), size=cfg.batch_size)]
            try:
                mean_loss = self.train_step(batch, params, model_config, state, rng)
            except NumericError as exc:
                for name, array in last_good.items():
                    params[name].data = array
                path = save_checkpoint(out_dir / LAST_GOOD_NAME, model_config, params, dict(meta, step=step - 1))
                logger.error(f"Aborting at step {step}: {exc}; last good parameters in {path}")
                raise TrainingAborted(f"step {step}: {exc}", checkpoint_path=path) from exc
            last_good = snapshot(params)
            result.losses.append(mean_loss)
            result.steps_run = step

            if step % cfg.eval_interval and step != cfg.steps:
                continue
            metrics = self.evaluate(params, model_config, data, 'dev')
            record = log.append(step, 'dev', dict(metrics.to_dict(), train_loss=mean_loss, lr=state.last_lr))
            result.history.append(record)
            result.evaluations += 1
            logger.info(
                f"step {step}: train loss {mean_loss:.4f}, dev accuracy {metrics.token_accuracy:.4f}, "
                f"dev ppl {metrics.perplexity:.3f}"
            )
            if metrics.token_accuracy > result.best_dev_accuracy:
                result.best_dev_accuracy = metrics.token_accuracy
                result.best_step = step
                stale = 0
                save_checkpoint(result.checkpoint_path, model_config, params, dict(meta, step=step))
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    result.stopped_early = True
                    logger.info(f"Early stop at step {step}: no dev improvement in {stale} evaluations")
                    break

        logger.info(f"Finished after {result.steps_run} steps; best dev accuracy {result.best_dev_accuracy:.4f} at step {result.best_step}")
        return result


_training_service = None


def get_training_service(config: Optional[TrainConfig] = None) -> TrainingService:
    """Service for `config`; without one, the shared settings-configured service."""
    global _training_service
    if config is not None:
        return TrainingService(config)
    if _training_service is None:
        _training_service = TrainingService()
    return _training_service
