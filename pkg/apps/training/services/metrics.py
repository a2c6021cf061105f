"""
Evaluation metrics.

All metrics are computed over positions with a target (ignore index -1):
token accuracy, exact match per example, perplexity exp(mean CE) and bits
per character mean CE / ln 2.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence
import logging
import math

import numpy as np

from apps.autodiff.ops import softmax_array
from apps.core.exceptions import ContractError
from apps.modeling.config import ModelConfig
from apps.modeling.model import Params, forward

from .tasks import IGNORE, Example

logger = logging.getLogger(__name__)


@dataclass
class EvalMetrics:
    token_accuracy: float
    exact_match: float
    perplexity: float
    bits_per_char: float
    mean_loss: float
    tokens: int
    examples: int

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def example_scores(logits: np.ndarray, targets: np.ndarray):
    """(correct tokens, scored tokens, summed CE, all correct) for one example."""
    targets = np.asarray(targets)
    valid = targets != IGNORE
    if not valid.any():
        return 0, 0, 0.0, True
    rows = logits[valid]
    gold = targets[valid]
    probs = softmax_array(rows)
    nll = -np.log(np.maximum(probs[np.arange(gold.size), gold], np.finfo(np.float64).tiny))
    correct = rows.argmax(axis=-1) == gold
    return int(correct.sum()), int(gold.size), float(nll.sum()), bool(correct.all())


def score_predictions(logits: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> EvalMetrics:
    """Aggregate metrics from per-example logits and targets."""
    correct = scored = matched = 0
    nll = 0.0
    for row_logits, row_targets in zip(logits, targets):
        c, s, loss_sum, exact = example_scores(np.asarray(row_logits), row_targets)
        correct, scored, nll, matched = correct + c, scored + s, nll + loss_sum, matched + int(exact)
    examples = len(logits)
    mean_loss = nll / scored if scored else math.nan
    return EvalMetrics(
        token_accuracy=correct / scored if scored else math.nan,
        exact_match=matched / examples if examples else math.nan,
        perplexity=math.exp(mean_loss) if scored else math.nan,
        bits_per_char=mean_loss / math.log(2.0) if scored else math.nan,
        mean_loss=mean_loss,
        tokens=scored,
        examples=examples,
    )


def evaluate_examples(
    params: Params,
    config: ModelConfig,
    examples: List[Example],
    vocab_size: int,
    workers: int = 1,
) -> EvalMetrics:
    """
    Forward every example without a tape and score it.

    `workers` > 1 spreads examples over threads; parameters are only read.

    Raises:
        ContractError: the model vocabulary does not match the task
    """
    model_vocab = params['embed.tokens'].shape[0]
    if model_vocab != vocab_size:
        raise ContractError(f"model vocabulary {model_vocab} does not match task vocabulary {vocab_size}")

    def run(example: Example) -> np.ndarray:
        return forward(example.ids, params, config).logits.data

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            logits = list(pool.map(run, examples))
    else:
        logits = [run(example) for example in examples]
    return score_predictions(logits, [example.targets for example in examples])
