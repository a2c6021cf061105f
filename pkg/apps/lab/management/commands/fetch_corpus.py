"""
Management command to assemble the char_lm corpus from Project Gutenberg.

Usage:
    python manage.py fetch_corpus
    python manage.py fetch_corpus --ebooks 11,12,1342 --out data/corpus.txt --force
"""
from dataclasses import replace
from pathlib import Path

from tabulate import tabulate

from apps.lab.management.base import LabCommand
from apps.training.services.corpus import CORPUS_TARGET_BYTES, CorpusConfig, CorpusService, parse_ebooks


class Command(LabCommand):
    help = 'Download public-domain ebooks and write the char_lm corpus (about 1 MB)'

    def add_arguments(self, parser):
        parser.add_argument('--ebooks', type=str, help='Comma separated Gutenberg ebook numbers (default: RESS_CORPUS_EBOOKS)')
        parser.add_argument('--out', type=str, help='Corpus file (default: RESS_CORPUS_PATH)')
        parser.add_argument('--force', action='store_true', help='Replace an existing corpus file')

    def handle(self, *args, **options):
        config = CorpusConfig.from_settings()
        if options['ebooks']:
            config = replace(config, ebooks=self.resolve(parse_ebooks, options['ebooks']))
        if options['out']:
            config = replace(config, path=Path(options['out']))
        service = self.resolve(CorpusService, config)

        try:
            report = self.perform(service.fetch, options['force'])
        finally:
            service.close()
        if report.sources:
            self.stdout.write(tabulate(report.sources, headers='keys'))
        self.stdout.write(f"{report.size_bytes} bytes (target {CORPUS_TARGET_BYTES})")
        if report.short:
            self.stdout.write(self.style.WARNING('Corpus is short of the target; add ebooks with --ebooks'))
        if report.sources:
            self.stdout.write(self.style.SUCCESS(f"Wrote {report.path}"))
        else:
            self.stdout.write(f"Kept existing corpus at {report.path}; pass --force to download again")
