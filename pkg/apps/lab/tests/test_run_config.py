"""
Tests for run configuration resolution.
"""
import tempfile
from pathlib import Path

from django.test import SimpleTestCase, override_settings

from apps.core.exceptions import ConfigError
from apps.lab.services import RESOLVED_NAME, resolve_run_config


class TestResolveRunConfig(SimpleTestCase):
    """Tests for resolve_run_config."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.config_path = self.root / 'run.cfg'
        self.config_path.write_text('# desk run\ntask = copy\nseq_len = 6\nK = 2\nseed = 4\n', encoding='utf-8')

    def tearDown(self):
        self.tmp.cleanup()

    def test_file_values_are_typed(self):
        run = resolve_run_config(self.config_path, out=self.root / 'out')
        self.assertEqual(run.task.seq_len, 6)
        self.assertEqual(run.model.K, 2)
        self.assertEqual(run.model.vocab_size, run.task.vocab_size)

    def test_overrides_beat_the_file(self):
        run = resolve_run_config(self.config_path, ['K=3', 'phi=sparsemax'], out=self.root / 'out')
        self.assertEqual(run.model.K, 3)
        self.assertEqual(run.model.phi, 'sparsemax')

    @override_settings(RESS_SEED=7)
    def test_seed_precedence(self):
        self.assertEqual(resolve_run_config(out=self.root).seed, 7)
        self.assertEqual(resolve_run_config(self.config_path, out=self.root).seed, 4)
        run = resolve_run_config(self.config_path, seed=9, out=self.root)
        self.assertEqual((run.seed, run.task.seed, run.train.seed), (9, 9, 9))

    @override_settings(RESS_RUNS_DIR='/tmp/lab-runs')
    def test_default_out_names_task_and_seed(self):
        run = resolve_run_config(self.config_path)
        self.assertEqual(run.out, Path('/tmp/lab-runs') / 'copy-4')

    def test_unknown_key_is_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            resolve_run_config(overrides=['learning_rate=0.1'])
        self.assertEqual(ctx.exception.field, 'learning_rate')

    def test_bad_value_names_the_field(self):
        with self.assertRaises(ConfigError) as ctx:
            resolve_run_config(overrides=['K=two'])
        self.assertEqual(ctx.exception.field, 'K')

    def test_vocabulary_mismatch_is_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            resolve_run_config(overrides=['vocab_size=5', 'task_vocab=16'])
        self.assertEqual(ctx.exception.field, 'vocab_size')

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            resolve_run_config(self.root / 'missing.cfg')

    def test_resolved_file_reproduces_the_run(self):
        run = resolve_run_config(self.config_path, ['lr_peak=0.001', 'disable_asam=true'], out=self.root / 'out')
        written = run.write()
        self.assertEqual(written.name, RESOLVED_NAME)
        self.assertEqual(resolve_run_config(written), run)
