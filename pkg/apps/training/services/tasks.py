"""
Synthetic desk tasks.

Every task is token labelling: each example is an id sequence plus one
target per position, -1 where nothing is scored. None of the tasks needs
token positions to be solvable, since the model has none.
"""
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional
import logging

import numpy as np
from django.conf import settings

from apps.autodiff.ops import IGNORE_INDEX
from apps.core.exceptions import ConfigError, ContractError

logger = logging.getLogger(__name__)

TASK_KINDS = ('copy', 'shuffled_cls', 'char_lm', 'distractor_qa')
SPLITS = ('train', 'dev', 'test')
IGNORE = IGNORE_INDEX

BUNDLED_CORPUS_PATH = Path(__file__).resolve().parent.parent / 'data' / 'alice_ch1.txt'
CORPUS_SPLITS = {'train': (0.0, 0.8), 'dev': (0.8, 0.9), 'test': (0.9, 1.0)}


@dataclass
class TaskSpec:
    """What to generate; equal specs give identical datasets."""
    task: str = 'copy'
    seq_len: int = 32
    task_vocab: int = 16
    noise: float = 0.0
    train_size: int = 2000
    dev_size: int = 200
    test_size: int = 200
    seed: int = 0

    @classmethod
    def from_settings(cls) -> 'TaskSpec':
        """Create spec from Django settings."""
        return cls(
            task=getattr(settings, 'RESS_TASK', 'copy'),
            seq_len=getattr(settings, 'RESS_SEQ_LEN', 32),
            task_vocab=getattr(settings, 'RESS_TASK_VOCAB', 16),
            seed=getattr(settings, 'RESS_SEED', 0),
        )

    def validate(self) -> 'TaskSpec':
        if self.task not in TASK_KINDS:
            raise ConfigError(f"expected one of {', '.join(TASK_KINDS)}, got '{self.task}'", field='task')
        minimum_len = {'copy': 1, 'shuffled_cls': 2, 'char_lm': 1, 'distractor_qa': 3}[self.task]
        if self.seq_len < minimum_len:
            raise ConfigError(f"{self.task} needs seq_len >= {minimum_len}, got {self.seq_len}", field='seq_len')
        minimum_vocab = {'copy': 1, 'shuffled_cls': 3, 'char_lm': 0, 'distractor_qa': 2}[self.task]
        if self.task_vocab < minimum_vocab:
            raise ConfigError(f"{self.task} needs task_vocab >= {minimum_vocab}, got {self.task_vocab}", field='task_vocab')
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError(f"must be in [0, 1], got {self.noise}", field='noise')
        for name in ('train_size', 'dev_size', 'test_size'):
            if getattr(self, name) < 0:
                raise ConfigError(f"must be >= 0, got {getattr(self, name)}", field=name)
        if self.task == 'char_lm':
            shortest = min(int(len(load_corpus()) * (hi - lo)) for lo, hi in CORPUS_SPLITS.values())
            if self.seq_len + 1 > shortest:
                raise ConfigError(f"char_lm windows of {self.seq_len} do not fit the corpus splits", field='seq_len')
        return self

    @property
    def vocab_size(self) -> int:
        """Model vocabulary the task needs, special tokens included."""
        if self.task == 'char_lm':
            return len(corpus_alphabet()) + 1
        if self.task == 'distractor_qa':
            return 2 * self.task_vocab + 2
        return self.task_vocab + 1

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class Example:
    ids: np.ndarray
    targets: np.ndarray


@dataclass
class TaskData:
    """Generated splits for one TaskSpec."""
    spec: TaskSpec
    splits: Dict[str, List[Example]] = field(default_factory=dict)

    @property
    def vocab_size(self) -> int:
        return self.spec.vocab_size

    def split(self, name: str) -> List[Example]:
        if name not in self.splits:
            raise ContractError(f"unknown split '{name}', expected one of {', '.join(SPLITS)}")
        return self.splits[name]


def corpus_path() -> Path:
    """The fetched corpus at RESS_CORPUS_PATH when present, else the bundled excerpt."""
    fetched = Path(getattr(settings, 'RESS_CORPUS_PATH', BUNDLED_CORPUS_PATH))
    return fetched if fetched.is_file() else BUNDLED_CORPUS_PATH


@lru_cache(maxsize=4)
def _read_corpus(path: Path) -> str:
    text = ' '.join(path.read_text(encoding='utf-8').split())
    if path == BUNDLED_CORPUS_PATH:
        logger.warning(f"char_lm uses the {len(text)} character bundled excerpt; run fetch_corpus for the full corpus")
    return text


def load_corpus() -> str:
    """Active corpus with runs of whitespace collapsed to single spaces."""
    return _read_corpus(corpus_path())


def corpus_alphabet() -> str:
    return _alphabet(load_corpus())


@lru_cache(maxsize=4)
def _alphabet(text: str) -> str:
    return ''.join(sorted(set(text)))


def reset_corpus_cache() -> None:
    """Forget cached corpus text, after the file at RESS_CORPUS_PATH changes."""
    _read_corpus.cache_clear()
    _alphabet.cache_clear()


def encode_text(text: str) -> np.ndarray:
    alphabet = corpus_alphabet()
    index = {ch: i for i, ch in enumerate(alphabet)}
    missing = sorted(set(text) - set(index))
    if missing:
        raise ContractError(f"characters outside the corpus alphabet: {''.join(missing)!r}")
    return np.array([index[ch] for ch in text], dtype=np.int64)


def corpus_split(split: str) -> str:
    text = load_corpus()
    lo, hi = CORPUS_SPLITS[split]
    return text[int(len(text) * lo):int(len(text) * hi)]


def split_rng(seed: int, split: str) -> np.random.Generator:
    """Independent stream per split, so split sizes do not shift each other."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(SPLITS.index(split),)))


def sorted_successors(tokens: np.ndarray, sep: int) -> np.ndarray:
    """
    Targets that chain the distinct tokens in ascending order.

    Each token points to the next larger value present in `tokens`; the
    largest points to SEP. Following the chain from SEP reproduces the
    input's values, so no position needs to be known to score it.
    """
    values = np.unique(tokens)
    following = np.append(values[1:], sep)
    return following[np.searchsorted(values, tokens)]


def _copy_example(spec: TaskSpec, rng: np.random.Generator) -> Example:
    """a_1..a_L SEP; SEP -> smallest token, every token -> its sorted successor."""
    sep = spec.task_vocab
    tokens = rng.integers(0, spec.task_vocab, size=spec.seq_len)
    ids = np.concatenate([tokens, [sep]])
    targets = np.concatenate([sorted_successors(tokens, sep), [tokens.min()]])
    return Example(ids.astype(np.int64), targets.astype(np.int64))


def _shuffled_cls_example(spec: TaskSpec, rng: np.random.Generator, label: int) -> Example:
    """CLS plus L tokens; the CLS target is 1 iff token 0 outnumbers token 1."""
    cls_token = spec.task_vocab
    while True:
        tokens = rng.integers(0, spec.task_vocab, size=spec.seq_len)
        count_a, count_b = int(np.sum(tokens == 0)), int(np.sum(tokens == 1))
        if count_a != count_b and int(count_a > count_b) == label:
            break
    ids = np.concatenate([[cls_token], tokens])
    targets = np.full(ids.shape, IGNORE)
    targets[0] = label
    return Example(ids, targets)


def _char_lm_example(spec: TaskSpec, encoded: np.ndarray, rng: np.random.Generator) -> Example:
    """A window of L characters plus a PREDICT token whose target is the next character."""
    predict = len(corpus_alphabet())
    start = int(rng.integers(0, encoded.size - spec.seq_len))
    window = encoded[start:start + spec.seq_len + 1]
    ids = np.concatenate([window[:-1], [predict]])
    targets = np.full(ids.shape, IGNORE)
    targets[-1] = window[-1]
    return Example(ids, targets)


def _distractor_qa_example(spec: TaskSpec, rng: np.random.Generator) -> Example:
    """
    Filler, one (NEEDLE, a) pair, distractor pairs (v, v), then QUERY -> a.

    Answer-range tokens are 0..V-1 and fillers V..2V-1. Each pair slot holds
    a distractor with probability `noise`; the answer is the only
    answer-range token that occurs exactly once.
    """
    v = spec.task_vocab
    needle, query = 2 * v, 2 * v + 1
    answer = int(rng.integers(0, v))
    body = spec.seq_len - 3
    spans = [[needle, answer]]
    for _ in range(body // 2):
        if rng.random() < spec.noise:
            distractor = int(rng.integers(0, v - 1))
            distractor += distractor >= answer
            spans.append([distractor, distractor])
        else:
            spans.append(list(rng.integers(v, 2 * v, size=2)))
    if body % 2:
        spans.append([int(rng.integers(v, 2 * v))])
    order = rng.permutation(len(spans))
    ids = np.array([token for i in order for token in spans[i]] + [query], dtype=np.int64)
    targets = np.full(ids.shape, IGNORE)
    targets[-1] = answer
    return Example(ids, targets)


def generate_split(spec: TaskSpec, split: str, size: int) -> List[Example]:
    rng = split_rng(spec.seed, split)
    if spec.task == 'copy':
        return [_copy_example(spec, rng) for _ in range(size)]
    if spec.task == 'shuffled_cls':
        return [_shuffled_cls_example(spec, rng, label=i % 2) for i in range(size)]
    if spec.task == 'char_lm':
        encoded = encode_text(corpus_split(split))
        return [_char_lm_example(spec, encoded, rng) for _ in range(size)]
    return [_distractor_qa_example(spec, rng) for _ in range(size)]


def gen_task(spec: TaskSpec) -> TaskData:
    """Generate train/dev/test splits for a spec."""
    spec.validate()
    sizes = {'train': spec.train_size, 'dev': spec.dev_size, 'test': spec.test_size}
    data = TaskData(spec, {name: generate_split(spec, name, size) for name, size in sizes.items()})
    logger.debug(f"Generated {spec.task} (len {spec.seq_len}, vocab {spec.vocab_size}): {sizes}")
    return data


def scan_oracle(ids: np.ndarray, spec: TaskSpec) -> Optional[int]:
    """distractor_qa answer by counting: the one answer-range token seen exactly once."""
    ids = np.asarray(ids)
    in_range = ids[ids < spec.task_vocab]
    values, counts = np.unique(in_range, return_counts=True)
    singles = values[counts == 1]
    return int(singles[0]) if singles.size == 1 else None


def unigram_bits_per_char(train_text: Optional[str] = None, eval_text: Optional[str] = None) -> float:
    """
    Bits per character of a unigram model counted on `train_text` and scored on `eval_text`.

    Defaults to the corpus train and test splits. Add-one smoothing over the
    corpus alphabet keeps unseen characters finite.
    """
    train_text = corpus_split('train') if train_text is None else train_text
    eval_text = corpus_split('test') if eval_text is None else eval_text
    alphabet = corpus_alphabet()
    counts = np.ones(len(alphabet))
    np.add.at(counts, encode_text(train_text), 1.0)
    probs = counts / counts.sum()
    return float(-np.mean(np.log2(probs[encode_text(eval_text)])))
