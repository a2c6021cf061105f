"""
Management command to compare the full model with ablated variants.

Usage:
    python manage.py ablate --disable all --config copy.cfg --seeds 0,1,2
    python manage.py ablate --disable asam --set task=distractor_qa
"""
from tabulate import tabulate

from apps.core.utils import format_percent
from apps.lab.management.base import LabCommand
from apps.lab.services import AblationService, resolve_run_config, variants_for
from apps.lab.services.ablation import ABLATION_METRICS


class Command(LabCommand):
    help = 'Train full and ablated models on the same seeds and tabulate metrics with relative change'

    def add_arguments(self, parser):
        parser.add_argument('--disable', type=str, required=True, help='r2mu, asam, soes or all')
        parser.add_argument('--seeds', type=str, help='Comma separated seeds (default: the run seed)')
        self.add_run_arguments(parser)

    def handle(self, *args, **options):
        self.resolve(variants_for, options['disable'])
        run = self.resolve(resolve_run_config, options['config'], options['set'], options['seed'], options['out'])
        seeds = self.parse_ints(options['seeds'], 'seeds') if options['seeds'] else [run.seed]
        self.perform(run.out.mkdir, parents=True, exist_ok=True)
        self.perform(run.write)

        report = self.perform(AblationService(run).run, options['disable'], seeds)
        headers = ['Variant']
        table = [[row['variant']] for row in report.rows]
        for metric in ABLATION_METRICS:
            headers += [metric, 'change']
            for line, row in zip(table, report.rows):
                line += [f"{row[metric]:.4f}", format_percent(row[f'{metric}_change'])]
        self.stdout.write(tabulate(table, headers=headers))
        self.stdout.write(self.style.SUCCESS(f"Wrote {run.out / 'ablation.csv'} (seeds {seeds})"))
