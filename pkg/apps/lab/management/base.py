"""
Shared plumbing for the lab commands.

Exit codes: 0 success, 1 failure while running, 2 bad usage or configuration.
"""
import logging

from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import LabError
from apps.core.utils import parse_int_list

logger = logging.getLogger(__name__)

EXIT_RUNTIME = 1
EXIT_USAGE = 2


class LabCommand(BaseCommand):
    """BaseCommand with the lab's two-phase error mapping."""

    def add_run_arguments(self, parser):
        parser.add_argument('--config', type=str, help='Flat key = value config file')
        parser.add_argument(
            '--set', action='append', default=[], metavar='KEY=VALUE', help='Override one config key (repeatable)',
        )
        parser.add_argument('--seed', type=int, help='Seed for data, initialisation and batching (default: SEED env)')
        parser.add_argument('--out', type=str, help='Output directory')

    def resolve(self, fn, *args, **kwargs):
        """Call `fn` while inputs are being resolved; lab and I/O errors exit 2."""
        try:
            return fn(*args, **kwargs)
        except (LabError, OSError) as exc:
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc

    def perform(self, fn, *args, **kwargs):
        """Call `fn` as the run itself; lab and I/O errors exit 1."""
        try:
            return fn(*args, **kwargs)
        except (LabError, OSError) as exc:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed: {exc}")
            raise CommandError(str(exc), returncode=EXIT_RUNTIME) from exc

    def parse_ints(self, value: str, name: str):
        try:
            return parse_int_list(value)
        except ValueError:
            raise CommandError(f"--{name} expects comma separated integers, got '{value}'", returncode=EXIT_USAGE)
