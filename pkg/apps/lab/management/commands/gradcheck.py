"""
Management command to check every gradient rule against finite differences.

Usage:
    python manage.py gradcheck
    python manage.py gradcheck --preset ops
    python manage.py gradcheck --only matmul,layer_norm
"""
from django.core.management.base import CommandError
from tabulate import tabulate

from apps.lab.management.base import EXIT_RUNTIME, LabCommand
from apps.lab.services import GradCheckService
from apps.lab.services.gradcheck import PRESETS


class Command(LabCommand):
    help = 'Compare tape gradients with central differences; exit 1 if any case exceeds the tolerance'

    def add_arguments(self, parser):
        parser.add_argument('--preset', type=str, default='full', choices=PRESETS, help='Operations, model, or both')
        parser.add_argument('--only', type=str, help='Comma separated case names')
        parser.add_argument('--tolerance', type=float, help='Maximum relative error (default: RESS_GRADCHECK_TOLERANCE)')
        parser.add_argument('--seed', type=int, default=0)

    def handle(self, *args, **options):
        service = GradCheckService(options['tolerance'], options['seed'])
        only = [name.strip() for name in options['only'].split(',') if name.strip()] if options['only'] else None
        self.resolve(service.cases, options['preset'], only)

        report = self.perform(service.run, options['preset'], only)
        table = [(name, values, f'{error:.3e}', status) for name, values, error, status in report.rows()]
        self.stdout.write(tabulate(table, headers=['case', 'values', 'max rel err', 'status']))
        self.stdout.write(f"{len(report.results)} cases checked, tolerance {service.tolerance:g}")

        if not report.passed:
            names = ', '.join(r.name for r in report.failures)
            raise CommandError(f"gradient check failed for: {names}", returncode=EXIT_RUNTIME)
        self.stdout.write(self.style.SUCCESS('All gradients match'))
