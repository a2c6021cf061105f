"""
Management command to evaluate a checkpoint.

Usage:
    python manage.py eval --checkpoint runs/c1/checkpoint.bin --split test
    python manage.py eval --checkpoint runs/qa/checkpoint.bin --lengths 128,256,512
    python manage.py eval --checkpoint runs/qa/checkpoint.bin --noise 0,0.25,0.5
"""
from dataclasses import replace
from pathlib import Path
import json

from django.core.management.base import CommandError

from apps.core.config_files import parse_overrides, typed_values, unknown_keys
from apps.core.exceptions import ContractError
from apps.core.utils import parse_float_list
from apps.lab.management.base import EXIT_USAGE, LabCommand
from apps.modeling.checkpoint import load_checkpoint
from apps.training.services import TASK_KINDS, TaskSpec, evaluate, length_sweep, noise_sweep


def checkpoint_task(checkpoint, task_name=None, overrides=None) -> TaskSpec:
    """Task recorded in the checkpoint, with the requested kind and field overrides applied."""
    recorded = checkpoint.meta.get('task')
    spec = TaskSpec(**recorded) if recorded else TaskSpec.from_settings()
    if task_name:
        spec = replace(spec, task=task_name)
    raw = parse_overrides(overrides)
    unknown = unknown_keys(raw, [TaskSpec])
    if unknown:
        raise ContractError(f"unknown task keys: {', '.join(unknown)}")
    spec = replace(spec, **typed_values(TaskSpec, raw)).validate()
    if checkpoint.config.vocab_size != spec.vocab_size:
        raise ContractError(
            f"checkpoint vocabulary {checkpoint.config.vocab_size} does not match {spec.task} vocabulary {spec.vocab_size}"
        )
    return spec


def sweep_path(csv_option, folder: Path, kind: str, both: bool) -> Path:
    """
    CSV path for one sweep.

    Without --csv the sweep lands next to the checkpoint as <kind>_sweep.csv.
    When both sweeps share one --csv path, each gets a suffixed sibling
    (<stem>_lengths.csv, <stem>_noise.csv).
    """
    if not csv_option:
        return folder / f'{kind}_sweep.csv'
    path = Path(csv_option)
    if not both:
        return path
    suffix = {'length': 'lengths', 'noise': 'noise'}[kind]
    return path.with_name(f'{path.stem}_{suffix}{path.suffix or ".csv"}')


class Command(LabCommand):
    help = 'Evaluate a checkpoint; prints metrics JSON, optionally writes length or noise sweep CSVs'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', type=str, required=True, help='checkpoint.bin to evaluate')
        parser.add_argument('--task', type=str, choices=TASK_KINDS, help='Task (default: the one it was trained on)')
        parser.add_argument('--split', type=str, default='test', choices=('train', 'dev', 'test'))
        parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', help='Override a task field')
        parser.add_argument('--lengths', type=str, help='Comma separated lengths for a length sweep')
        parser.add_argument('--noise', type=str, help='Comma separated distractor ratios for a noise sweep')
        parser.add_argument('--csv', type=str, help='Sweep CSV path (default: next to the checkpoint)')
        parser.add_argument('--workers', type=int, default=1, help='Evaluation threads')

    def handle(self, *args, **options):
        checkpoint = self.resolve(load_checkpoint, options['checkpoint'])
        spec = self.resolve(checkpoint_task, checkpoint, options['task'], options['set'])
        lengths = self.parse_ints(options['lengths'], 'lengths') if options['lengths'] else []
        try:
            ratios = parse_float_list(options['noise']) if options['noise'] else []
        except ValueError:
            raise CommandError(f"--noise expects comma separated numbers, got '{options['noise']}'", returncode=EXIT_USAGE)
        if ratios and spec.task != 'distractor_qa':
            raise CommandError(f"--noise needs the distractor_qa task, got {spec.task}", returncode=EXIT_USAGE)
        folder = Path(options['checkpoint']).parent

        metrics = self.perform(evaluate, checkpoint, spec, options['split'], options['workers'])
        output = {'task': spec.task, 'split': options['split'], 'seq_len': spec.seq_len, **metrics.to_dict()}

        if lengths:
            path = sweep_path(options['csv'], folder, 'length', both=bool(ratios))
            output['length_sweep'] = self.perform(length_sweep, checkpoint, spec, lengths, path, options['split'])
            output['length_sweep_csv'] = str(path)
        if ratios:
            path = sweep_path(options['csv'], folder, 'noise', both=bool(lengths))
            output['noise_sweep'] = self.perform(noise_sweep, checkpoint, spec, ratios, path, options['split'])
            output['noise_sweep_csv'] = str(path)

        self.stdout.write(json.dumps(output, sort_keys=True))
