"""Training services package."""
from .config import TrainConfig
from .evaluation import evaluate, length_sweep, noise_sweep, relative_drop, write_csv
from .metrics import EvalMetrics, evaluate_examples, score_predictions
from .optimizer import OptimizerState, lr_at, optimizer_step
from .tasks import TASK_KINDS, TaskData, TaskSpec, gen_task, scan_oracle, unigram_bits_per_char
from .trainer import TrainingService, TrainResult, get_training_service

__all__ = [
    'TrainConfig',
    'TaskSpec',
    'TaskData',
    'TASK_KINDS',
    'gen_task',
    'scan_oracle',
    'unigram_bits_per_char',
    'OptimizerState',
    'lr_at',
    'optimizer_step',
    'EvalMetrics',
    'evaluate_examples',
    'score_predictions',
    'evaluate',
    'length_sweep',
    'noise_sweep',
    'relative_drop',
    'write_csv',
    'TrainingService',
    'TrainResult',
    'get_training_service',
]
