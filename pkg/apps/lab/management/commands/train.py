"""
Management command to train a model on a desk task.

Usage:
    python manage.py train --config copy.cfg --out runs/c1
    python manage.py train --set task=distractor_qa --set K=2 --seed 3
"""
import json

from apps.lab.management.base import LabCommand
from apps.lab.services import resolve_run_config
from apps.training.services import gen_task, get_training_service


class Command(LabCommand):
    help = 'Train a model; writes checkpoint.bin, metrics.jsonl and resolved.cfg to the output directory'

    def add_arguments(self, parser):
        self.add_run_arguments(parser)

    def handle(self, *args, **options):
        run = self.resolve(resolve_run_config, options['config'], options['set'], options['seed'], options['out'])
        data = self.resolve(gen_task, run.task)
        self.perform(run.out.mkdir, parents=True, exist_ok=True)
        resolved = self.perform(run.write)
        self.stdout.write(f"Resolved configuration written to {resolved}")

        service = get_training_service(run.train)
        result = self.perform(service.train_loop, run.model, data, run.out, meta={'seed': run.seed})

        summary = {
            'checkpoint': str(result.checkpoint_path),
            'metrics': str(result.metrics_path),
            'steps': result.steps_run,
            'evaluations': result.evaluations,
            'best_dev_accuracy': result.best_dev_accuracy if result.evaluations else None,
            'best_step': result.best_step,
            'stopped_early': result.stopped_early,
        }
        self.stdout.write(json.dumps(summary, sort_keys=True))
        self.stdout.write(self.style.SUCCESS(f"Training finished: {result.steps_run} steps"))
