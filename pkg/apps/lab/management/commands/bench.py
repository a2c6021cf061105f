"""
Management command to time attention over sequence lengths.

Usage:
    python manage.py bench
    python manage.py bench --lengths 256,512,1024,2048 --k-top 32 --mode dense,bucketed
"""
from pathlib import Path

from django.conf import settings
from tabulate import tabulate

from apps.lab.management.base import LabCommand
from apps.lab.services import BENCH_MODES, BenchConfig, BenchService


class Command(LabCommand):
    help = 'Median attention forward time per mode and length, with fitted log-log exponents'

    def add_arguments(self, parser):
        parser.add_argument('--lengths', type=str, default='256,512,1024,2048')
        parser.add_argument('--k-top', type=int, dest='k_top', help='Keys kept per query (default: RESS_K_TOP)')
        parser.add_argument('--mode', type=str, default='all', help=f"Comma separated subset of {', '.join(BENCH_MODES)}, or all")
        parser.add_argument('--trials', type=int, default=5)
        parser.add_argument('--warmups', type=int, default=2)
        parser.add_argument('--bucket-size', type=int, dest='bucket_size', default=64)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--out', type=str, help='CSV path (default: <RESS_RUNS_DIR>/bench.csv)')

    def handle(self, *args, **options):
        base = BenchConfig.from_settings()
        modes = BENCH_MODES if options['mode'] == 'all' else tuple(m.strip() for m in options['mode'].split(',') if m.strip())
        config = BenchConfig(
            lengths=tuple(self.parse_ints(options['lengths'], 'lengths')),
            k_top=options['k_top'] or base.k_top,
            modes=modes,
            trials=options['trials'],
            warmups=options['warmups'],
            d_model=base.d_model,
            n_heads=base.n_heads,
            bucket_size=options['bucket_size'],
            seed=base.seed if options['seed'] is None else options['seed'],
        )
        service = self.resolve(BenchService, config)
        path = Path(options['out']) if options['out'] else Path(settings.RESS_RUNS_DIR) / 'bench.csv'

        report = self.perform(service.run, path)
        self.stdout.write(tabulate(report.rows, headers='keys'))
        for mode, exponent in report.exponents.items():
            self.stdout.write(f"{mode}: time ~ n^{exponent:.2f}")
        self.stdout.write(self.style.SUCCESS(f"Wrote {path}"))
        if report.exponents_path is not None:
            self.stdout.write(self.style.SUCCESS(f"Wrote {report.exponents_path}"))
