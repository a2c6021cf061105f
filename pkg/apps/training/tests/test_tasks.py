"""
Tests for the task generators.
"""
from collections import Counter
import math

import numpy as np
from numpy.testing import assert_array_equal
from django.test import SimpleTestCase

from apps.core.exceptions import ConfigError
from apps.training.services.tasks import (
    IGNORE,
    TASK_KINDS,
    TaskSpec,
    corpus_alphabet,
    corpus_split,
    gen_task,
    scan_oracle,
    sorted_successors,
    unigram_bits_per_char,
)


def small_spec(task, **overrides):
    values = dict(task=task, seq_len=8, task_vocab=4, train_size=20, dev_size=6, test_size=6, seed=3)
    values.update(overrides)
    return TaskSpec(**values)


class TestGenTask(SimpleTestCase):
    """Tests for gen_task."""

    def test_same_seed_same_data(self):
        for task in TASK_KINDS:
            first, second = gen_task(small_spec(task)), gen_task(small_spec(task))
            for split in ('train', 'dev', 'test'):
                for a, b in zip(first.split(split), second.split(split)):
                    assert_array_equal(a.ids, b.ids)
                    assert_array_equal(a.targets, b.targets)

    def test_other_seed_other_data(self):
        first = gen_task(small_spec('copy', seed=1)).split('train')
        second = gen_task(small_spec('copy', seed=2)).split('train')
        self.assertFalse(all(np.array_equal(a.ids, b.ids) for a, b in zip(first, second)))

    def test_split_sizes_do_not_shift_other_splits(self):
        small = gen_task(small_spec('copy', train_size=5)).split('test')
        large = gen_task(small_spec('copy', train_size=50)).split('test')
        for a, b in zip(small, large):
            assert_array_equal(a.ids, b.ids)

    def test_ids_within_vocabulary(self):
        for task in TASK_KINDS:
            data = gen_task(small_spec(task))
            for example in data.split('train'):
                self.assertLess(example.ids.max(), data.vocab_size)
                self.assertGreaterEqual(example.ids.min(), 0)
                self.assertEqual(example.ids.shape, example.targets.shape)

    def test_copy_layout(self):
        data = gen_task(small_spec('copy'))
        self.assertEqual(data.vocab_size, 5)
        for example in data.split('train'):
            self.assertEqual(example.ids.size, 9)
            self.assertEqual(example.ids[-1], 4)
            self.assertEqual(example.targets[-1], example.ids[:-1].min())
            self.assertFalse(np.any(example.targets == IGNORE))

    def test_copy_needs_the_rest_of_the_sequence(self):
        """The same token gets different targets depending on what else is present."""
        sep = 4
        assert_array_equal(sorted_successors(np.array([2, 0, 2, 3]), sep), [3, 2, 3, 4])
        assert_array_equal(sorted_successors(np.array([2, 1, 2]), sep), [4, 2, 4])
        assert_array_equal(sorted_successors(np.array([1, 1]), sep), [4, 4])

    def test_copy_chain_reproduces_the_values(self):
        data = gen_task(small_spec('copy', train_size=30))
        for example in data.split('train'):
            sep = example.ids[-1]
            successor = dict(zip(example.ids.tolist(), example.targets.tolist()))
            chain, token = [], successor[sep]
            while token != sep:
                chain.append(token)
                token = successor[token]
            self.assertEqual(chain, sorted(set(example.ids[:-1].tolist())))

    def test_copy_is_not_the_identity(self):
        examples = gen_task(small_spec('copy', train_size=30)).split('train')
        same = sum(int(np.sum(e.ids[:-1] == e.targets[:-1])) for e in examples)
        self.assertEqual(same, 0)

    def test_shuffled_cls_balanced_and_order_free(self):
        rng = np.random.default_rng(0)
        examples = gen_task(small_spec('shuffled_cls', train_size=40)).split('train')
        labels = [int(e.targets[0]) for e in examples]
        self.assertEqual(sum(labels), 20)
        for example in examples:
            body = rng.permutation(example.ids[1:])
            label = int(np.sum(body == 0) > np.sum(body == 1))
            self.assertEqual(label, example.targets[0])
            self.assertTrue(np.all(example.targets[1:] == IGNORE))

    def test_char_lm_targets_next_character(self):
        spec = small_spec('char_lm', seq_len=12)
        alphabet = corpus_alphabet()
        text = corpus_split('dev')
        for example in gen_task(spec).split('dev'):
            self.assertEqual(example.ids[-1], len(alphabet))
            self.assertTrue(np.all(example.targets[:-1] == IGNORE))
            window = ''.join(alphabet[i] for i in example.ids[:-1]) + alphabet[example.targets[-1]]
            self.assertIn(window, text)

    def test_distractor_qa_scan_oracle_is_exact(self):
        for noise in (0.0, 0.5, 1.0):
            spec = small_spec('distractor_qa', seq_len=17, task_vocab=5, noise=noise)
            for example in gen_task(spec).split('train'):
                self.assertEqual(example.ids.size, 17)
                self.assertEqual(scan_oracle(example.ids, spec), example.targets[-1])
                self.assertEqual(int(np.sum(example.targets != IGNORE)), 1)

    def test_distractor_qa_noise_adds_answer_range_tokens(self):
        quiet = gen_task(small_spec('distractor_qa', seq_len=21, noise=0.0)).split('train')
        noisy = gen_task(small_spec('distractor_qa', seq_len=21, noise=1.0)).split('train')
        self.assertTrue(all(int(np.sum(e.ids < 4)) == 1 for e in quiet))
        self.assertTrue(all(int(np.sum(e.ids < 4)) == 19 for e in noisy))

    def test_invalid_specs(self):
        cases = {
            'task': small_spec('sorting'),
            'seq_len': small_spec('distractor_qa', seq_len=2),
            'task_vocab': small_spec('shuffled_cls', task_vocab=2),
            'noise': small_spec('distractor_qa', noise=1.5),
        }
        for field_name, spec in cases.items():
            with self.assertRaises(ConfigError) as ctx:
                spec.validate()
            self.assertEqual(ctx.exception.field, field_name)


class TestUnigramBaseline(SimpleTestCase):
    """Tests for unigram_bits_per_char."""

    def test_matches_counting(self):
        train, test = 'abracadabra', 'cabbad'
        alphabet = corpus_alphabet()
        counts = Counter(train)
        total = len(train) + len(alphabet)
        expected = -sum(math.log2((counts[ch] + 1) / total) for ch in test) / len(test)
        self.assertAlmostEqual(unigram_bits_per_char(train, test), expected, places=12)

    def test_corpus_baseline_is_informative(self):
        bpc = unigram_bits_per_char()
        self.assertGreater(bpc, 3.0)
        self.assertLess(bpc, math.log2(len(corpus_alphabet())))
